from __future__ import annotations

import numpy as np
import pytest

from helpers import box_coords, box_sdf, map_fingerprint, sphere_sdf, tsdf_fields, volume_from_field
from tsdfpp.geometry import PinholeCamera, RigidTransform
from tsdfpp.mapping import (
    IntegrationConfig,
    MapView,
    extract_mesh,
    integrate_frame,
    raycast,
    simulate_removal,
    transport_volume,
    update_confidence,
    update_object_pose,
)
from tsdfpp.simulator import Box, Plane, Primitive, Scene, ScriptedTrajectory, Sphere
from tsdfpp.voxel_core import (
    BACKGROUND_ID,
    EMPTY,
    GlobalMap,
    GridParams,
    MapMode,
    MultiObjectVoxel,
    ObjectVolume,
)

P = GridParams(voxel_size=0.01, truncation_distance=0.1)
# odd-sized image with an integral principal point: the center pixel's ray is the optical axis
AXIS_CAM = PinholeCamera(60.0, 60.0, 32.0, 24.0, 65, 49)


def _top_down(height, x=0.005, y=0.005):
    return RigidTransform.look_at([x, y, height], [x, y, 0.0], up=(0, 1, 0))


def _render(prims, pose, cam=AXIS_CAM, sigma=0.0, seed=0):
    return Scene(cam, ScriptedTrajectory.static(pose), prims, 1, sigma, seed).render(0)


def _static(shape, instance, pose=RigidTransform.identity(), semantic=False):
    return Primitive(shape, instance, ScriptedTrajectory.static(pose), semantic)


PLANE = _static(Plane((1.0, 1.0)), BACKGROUND_ID, RigidTransform.from_translation([0, 0, 0.005]))


# Integration


def test_single_observation_gives_projective_distance():
    gmap = GlobalMap(P)
    pose = _top_down(2.005)
    fr = _render([PLANE], pose)
    assert fr.depth[24, 32] == pytest.approx(2.0, abs=1e-12)
    integrate_frame(gmap, fr.depth, fr.labels, AXIS_CAM, pose)
    v = gmap.volume(BACKGROUND_ID).voxel((0, 0, 5))  # center z = 0.055, range 1.95
    assert v.distance == pytest.approx(0.05, abs=1e-12)
    assert v.weight == 1.0
    rec = gmap.get_or_allocate_voxel((0, 0, 5)).load()
    assert (rec.active, rec.active_conf) == (BACKGROUND_ID, 1)


def test_two_observations_average():
    gmap = GlobalMap(P)
    pose = _top_down(2.005)
    labels = np.zeros(AXIS_CAM.shape, dtype=np.int32)
    for r in (1.99, 2.01):  # distances 0.04 then 0.06 at the voxel with range 1.95
        integrate_frame(gmap, np.full(AXIS_CAM.shape, r), labels, AXIS_CAM, pose)
    v = gmap.volume(BACKGROUND_ID).voxel((0, 0, 5))
    assert v.distance == pytest.approx(0.05, abs=1e-12)
    assert v.weight == 2.0
    assert gmap.get_or_allocate_voxel((0, 0, 5)).active_conf == 2


def test_weight_clamps_and_distances_stay_truncated():
    gmap = GlobalMap(P)
    pose = _top_down(1.0)
    fr = _render([PLANE], pose)
    cfg = IntegrationConfig(max_integration_weight=3.0)
    for _ in range(5):
        integrate_frame(gmap, fr.depth, fr.labels, AXIS_CAM, pose, cfg)
    _, d, w = gmap.volume(BACKGROUND_ID).observed()
    assert w.max() == 3.0
    assert np.abs(d).max() <= P.truncation_distance


def test_unlabeled_pixels_are_ignored_and_unknown_ids_rejected():
    gmap = GlobalMap(P)
    pose = _top_down(1.0)
    fr = _render([PLANE], pose)
    stats = integrate_frame(gmap, fr.depth, np.full(AXIS_CAM.shape, -1), AXIS_CAM, pose)
    assert stats.updated_voxels == 0 and gmap.global_volume.num_blocks == 0
    with pytest.raises(ValueError):
        integrate_frame(gmap, fr.depth, np.full(AXIS_CAM.shape, 9), AXIS_CAM, pose)
    with pytest.raises(ValueError):
        integrate_frame(gmap, fr.depth[:5], fr.labels, AXIS_CAM, pose)


def test_integration_config_validation():
    with pytest.raises(ValueError):
        IntegrationConfig(truncation_distance=0.0)
    with pytest.raises(ValueError):
        IntegrationConfig(max_integration_weight=-1.0)


# Confidence votes


def test_confidence_agreement_increments():
    v = MultiObjectVoxel(1, 2)
    update_confidence(v, 1)
    assert v == MultiObjectVoxel(1, 3)


def test_confidence_disagreement_decrements():
    v = MultiObjectVoxel(1, 2)
    update_confidence(v, 2)
    assert v == MultiObjectVoxel(1, 1)


def test_confidence_zero_swaps_and_reinitializes():
    v = MultiObjectVoxel(1, 1)
    update_confidence(v, 2)
    assert (v.active, v.active_conf, v.inactive) == (2, 1, 1)
    assert v.inactive_conf >= 1


def test_first_vote_claims_empty_voxel():
    v = MultiObjectVoxel()
    update_confidence(v, 4)
    assert v == MultiObjectVoxel(4, 1)


def test_single_layer_swap_drops_old_surface():
    v = MultiObjectVoxel(1, 1)
    assert update_confidence(v, 2, max_layers=1) == 1
    assert v == MultiObjectVoxel(2, 1)


# Transport


def _object_map(fn, lo=(0, 0, 0), hi=(12, 12, 12), mode=MapMode.TSDF_PLUS_PLUS):
    gmap = GlobalMap(P, mode)
    gmap.ensure_background()
    oid = gmap.new_object(True)
    vol = volume_from_field(fn, lo, hi, P, oid)
    gmap.object_volumes[oid] = vol
    coords, _, _ = vol.observed()
    gidx = gmap.global_volume.get_or_allocate(coords)
    gmap.global_volume.field("active_id")[gidx] = oid
    gmap.global_volume.field("active_conf")[gidx] = 3
    return gmap, oid


def test_identity_transport_is_a_fixed_point():
    gmap, oid = _object_map(lambda p: p[:, 0] - 0.05)
    before = tsdf_fields(gmap)
    ids_before = gmap.global_volume.field("active_id").copy()
    update_object_pose(gmap, oid, RigidTransform.identity())
    after = tsdf_fields(gmap)
    for a, b in zip(before[oid], after[oid]):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(gmap.global_volume.field("active_id"), ids_before)
    gmap.check_invariants()


def test_one_voxel_shift_is_an_index_shift():
    rng = np.random.default_rng(0)
    vals = rng.uniform(-0.1, 0.1, 12**3)
    vol = ObjectVolume(1, P)
    g = box_coords((0, 0, 0), (12, 12, 12))
    vol.set_voxels(g, vals, np.full(len(g), 2.0))
    out = transport_volume(vol, RigidTransform.from_translation([P.voxel_size, 0, 0]))
    d, w = out.lookup(g + [1, 0, 0])
    np.testing.assert_array_equal(d, vals)
    np.testing.assert_array_equal(w, 2.0)
    assert len(out.observed()[0]) == len(g)


def test_half_voxel_shift_of_affine_field():
    vol = volume_from_field(lambda p: 2.0 * p[:, 0] - p[:, 1] + 0.5 * p[:, 2], (0, 0, 0), (12, 12, 12), P)
    T = RigidTransform.from_translation([0.5 * P.voxel_size, 0, 0])
    out = transport_volume(vol, T)
    g, d, _ = out.observed()
    interior = np.all((g >= 1) & (g <= 10), axis=1)
    p = (g[interior] + 0.5) * P.voxel_size
    q = T.inverse().apply(p)
    expect = 2.0 * q[:, 0] - q[:, 1] + 0.5 * q[:, 2]
    np.testing.assert_allclose(d[interior], expect, rtol=0, atol=1e-12)


def test_rotation_keeps_the_surface_in_place():
    h = (0.06, 0.04, 0.03)
    sdf = box_sdf(h)
    vol = volume_from_field(lambda p: np.clip(sdf(p), -0.1, 0.1), (-12, -12, -12), (12, 12, 12), P)
    T = RigidTransform.from_axis_angle([0, 0, np.radians(25.0)], [0.013, -0.004, 0.0])
    mesh = extract_mesh(transport_volume(vol, T))
    assert len(mesh.vertices) > 500
    err = np.abs(sdf(T.inverse().apply(mesh.vertices)))
    assert err.max() <= 0.5 * P.voxel_size


def test_unobserved_neighbors_are_not_transported():
    vol = volume_from_field(lambda p: p[:, 0], (0, 0, 0), (4, 4, 4), P)
    out = transport_volume(vol, RigidTransform.from_translation([0.5 * P.voxel_size, 0, 0]))
    g, _, _ = out.observed()
    # only destinations whose two x-neighbors both exist survive
    assert g[:, 0].min() == 1 and g[:, 0].max() == 3


def test_background_cannot_be_moved():
    gmap, _ = _object_map(lambda p: p[:, 0])
    with pytest.raises(ValueError):
        update_object_pose(gmap, BACKGROUND_ID, RigidTransform.identity())
    with pytest.raises(ValueError):
        update_object_pose(gmap, 42, RigidTransform.identity())


def _occlusion_maps(mode):
    """Table seen once, then covered by a box that is moved away again."""
    cam = PinholeCamera(120.0, 120.0, 63.5, 47.5, 128, 96)
    pose = _top_down(0.8, 0.0, 0.0)
    gmap = GlobalMap(P, mode)
    fr = _render([PLANE], pose, cam)
    integrate_frame(gmap, fr.depth, fr.labels, cam, pose)
    snapshot = gmap.volume(BACKGROUND_ID).copy()
    oid = gmap.new_object(True)
    box_pose = RigidTransform.from_translation([0.0, 0.0, 0.045])
    fr = _render([PLANE, _static(Box((0.06, 0.06, 0.04)), 1, box_pose, True)], pose, cam)
    labels = np.where(fr.labels == 1, oid, fr.labels).astype(np.int32)
    for _ in range(3):
        integrate_frame(gmap, fr.depth, labels, cam, pose)
    update_object_pose(gmap, oid, RigidTransform.from_translation([0.3, 0.0, 0.0]))
    # the footprint of the box and the band above and below the table
    region = box_coords((-5, -5, -9), (5, 5, 10))
    return gmap, snapshot, region


def test_moved_occluder_reveals_intact_background():
    gmap, snapshot, region = _occlusion_maps(MapMode.TSDF_PLUS_PLUS)
    had = snapshot.lookup(region)[1] > 0
    assert had.sum() > 1000
    ids = MapView(gmap).active_ids(region[had])
    assert (ids == BACKGROUND_ID).all()
    d0, w0 = snapshot.lookup(region[had])
    d1, w1 = gmap.volume(BACKGROUND_ID).lookup(region[had])
    np.testing.assert_array_equal(d1, d0)
    np.testing.assert_array_equal(w1, w0)
    gmap.check_invariants()


def test_single_layer_map_loses_covered_background():
    gmap, snapshot, region = _occlusion_maps(MapMode.STANDARD_TSDF)
    had = snapshot.lookup(region)[1] > 0
    _, w1 = gmap.volume(BACKGROUND_ID).lookup(region[had])
    assert np.count_nonzero(w1 == 0) > 100
    gmap.check_invariants()


# Raycasting


def test_raycast_on_empty_map_hits_nothing():
    img = raycast(GlobalMap(P), AXIS_CAM, _top_down(1.0))
    assert not img.hit_mask.any()
    assert img.hit(24, 32) is None


def test_raycast_finds_fused_plane():
    gmap = GlobalMap(P)
    pose = _top_down(2.005)
    fr = _render([PLANE], pose)
    integrate_frame(gmap, fr.depth, fr.labels, AXIS_CAM, pose)
    img = raycast(gmap, AXIS_CAM, pose)
    hit = img.hit(24, 32)
    assert hit is not None and hit.object_id == BACKGROUND_ID
    assert abs(hit.depth - 2.0) <= 0.5 * P.voxel_size


def test_raycast_sees_object_in_front_and_background_after_removal():
    gmap = GlobalMap(P)
    pose = _top_down(0.6, 0.0, 0.0)
    cam = PinholeCamera(80.0, 80.0, 39.5, 29.5, 80, 60)
    oid = gmap.new_object(True)
    ball = _static(Sphere(0.05), 1, RigidTransform.from_translation([0, 0, 0.06]))
    fr = _render([PLANE], pose, cam)
    integrate_frame(gmap, fr.depth, fr.labels, cam, pose)
    fr = _render([PLANE, ball], pose, cam)
    labels = np.where(fr.labels == 1, oid, fr.labels).astype(np.int32)
    integrate_frame(gmap, fr.depth, labels, cam, pose)
    img = raycast(gmap, cam, pose)
    assert img.object_id[29, 39] == oid
    assert img.depth[29, 39] == pytest.approx(0.6 - 0.11, abs=P.voxel_size)
    revealed = raycast(simulate_removal(gmap, oid), cam, pose)
    assert revealed.object_id[29, 39] == BACKGROUND_ID
    assert revealed.depth[29, 39] == pytest.approx(0.595, abs=P.voxel_size)


# Meshing


def test_no_crossing_gives_empty_mesh():
    vol = volume_from_field(lambda p: np.full(len(p), 0.1), (0, 0, 0), (8, 8, 8), P)
    assert extract_mesh(vol).is_empty
    assert extract_mesh(ObjectVolume(1, P)).is_empty


def test_plane_normals_point_up():
    vol = volume_from_field(lambda p: p[:, 2] - 0.053, (0, 0, 0), (20, 20, 12), P)
    mesh = extract_mesh(vol)
    v = mesh.vertices
    inner = np.all((v[:, :2] > 0.03) & (v[:, :2] < 0.17), axis=1)
    ang = np.degrees(np.arccos(np.clip(mesh.normals[inner] @ [0, 0, 1.0], -1, 1)))
    assert inner.sum() > 100 and ang.max() <= 1.0
    np.testing.assert_allclose(v[:, 2], 0.053, atol=1e-12)


def test_sphere_normals_point_outward():
    c = np.array([0.1, 0.1, 0.1])
    vol = volume_from_field(sphere_sdf(0.06, c), (0, 0, 0), (20, 20, 20), P)
    mesh = extract_mesh(vol)
    radial = (mesh.vertices - c) / np.linalg.norm(mesh.vertices - c, axis=1, keepdims=True)
    assert np.einsum("ij,ij->i", mesh.normals, radial).min() > 0.9
    assert mesh.euler_characteristic() == 2


# Removal views


def test_removing_an_object_that_hides_nothing_keeps_other_meshes():
    gmap, oid = _object_map(sphere_sdf(0.04, (0.06, 0.06, 0.06)))
    other = gmap.new_object()
    far = volume_from_field(sphere_sdf(0.04, (0.46, 0.06, 0.06)), (40, 0, 0), (52, 12, 12), P, other)
    gmap.object_volumes[other] = far
    g, _, _ = far.observed()
    gidx = gmap.global_volume.get_or_allocate(g)
    gmap.global_volume.field("active_id")[gidx] = other
    gmap.global_volume.field("active_conf")[gidx] = 1
    before = MapView(gmap).mesh(oid)
    after = simulate_removal(gmap, other).mesh(oid)
    np.testing.assert_array_equal(before.vertices, after.vertices)
    np.testing.assert_array_equal(before.faces, after.faces)


def test_removal_view_leaves_the_map_untouched():
    gmap, snapshot, _ = _occlusion_maps(MapMode.TSDF_PLUS_PLUS)
    before = map_fingerprint(gmap)
    meshes = {k: m.vertices.copy() for k, m in MapView(gmap).meshes().items()}
    view = simulate_removal(gmap, 1)
    view.meshes()
    raycast(view, AXIS_CAM, _top_down(1.0, 0.0, 0.0))
    assert map_fingerprint(gmap) == before
    again = MapView(gmap).meshes()
    for k, v in meshes.items():
        np.testing.assert_array_equal(again[k].vertices, v)
    with pytest.raises(ValueError):
        simulate_removal(gmap, 99)
