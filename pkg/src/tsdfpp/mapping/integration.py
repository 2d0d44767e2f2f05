"""Depth fusion into the layered map with per-voxel confidence voting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..geometry import PinholeCamera, RigidTransform
from ..voxel_core import (
    BACKGROUND_ID,
    EMPTY,
    GlobalMap,
    LayerArrays,
    MultiObjectVoxel,
    activate_layers,
    assign_layer,
    pack_block_keys,
    unpack_block_keys,
)


@dataclass(frozen=True)
class IntegrationConfig:
    """Fusion settings. ``truncation_distance=None`` uses the map's grid value."""

    truncation_distance: float | None = None
    max_integration_weight: float = 1e4
    observation_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.truncation_distance is not None and not self.truncation_distance > 0:
            raise ValueError("truncation_distance must be positive")
        if not self.max_integration_weight > 0:
            raise ValueError("max_integration_weight must be positive")
        if not self.observation_weight > 0:
            raise ValueError("observation_weight must be positive")


def update_confidence(
    voxel: MultiObjectVoxel,
    incoming: int,
    *,
    max_layers: int = 2,
    protected: Iterable[int] = (),
) -> int:
    """Apply one segmentation vote to a voxel, in place.

    Agreement with the active object raises its confidence by one, any other
    id lowers it by one. At zero the incoming object becomes active with
    confidence 1 and the former active object is demoted (with confidence 1)
    into the inactive slot, subject to the eviction rule of
    :func:`~tsdfpp.voxel_core.assign_layer`. Returns the id that lost its
    place at this voxel, or EMPTY.
    """
    if voxel.active == EMPTY:
        voxel.active, voxel.active_conf = incoming, 1
        return EMPTY
    if voxel.active == incoming:
        voxel.active_conf += 1
        return EMPTY
    voxel.active_conf -= 1
    if voxel.active_conf > 0:
        return EMPTY
    voxel.active_conf = 1
    return assign_layer(
        voxel, incoming, activate=True, max_layers=max_layers, protected=protected
    ).dropped


def update_confidence_layers(
    layers: LayerArrays, incoming: np.ndarray, max_layers: int, background_protected: np.ndarray
) -> np.ndarray:
    """Vectorized :func:`update_confidence`; mutates ``layers`` and returns dropped ids."""
    a, ac = layers.active, layers.active_conf
    incoming = np.asarray(incoming, dtype=a.dtype)
    dropped = np.full(a.shape, EMPTY, dtype=a.dtype)

    empty = a == EMPTY
    same = a == incoming
    other = ~empty & ~same
    a[empty] = incoming[empty]
    ac[empty] = 1
    ac[same] += 1
    ac[other] -= 1
    flip = np.flatnonzero(other & (ac == 0))
    if flip.size:
        ac[flip] = 1
        sub = LayerArrays(a[flip], ac[flip], layers.inactive[flip], layers.inactive_conf[flip])
        dropped[flip] = activate_layers(sub, incoming[flip], max_layers, background_protected[flip])
        a[flip], ac[flip] = sub.active, sub.active_conf
        layers.inactive[flip], layers.inactive_conf[flip] = sub.inactive, sub.inactive_conf
    return dropped


def _band_blocks(
    origin: np.ndarray, dirs: np.ndarray, ranges: np.ndarray, trunc: float, gmap: GlobalMap
) -> np.ndarray:
    """Block indices touched by every ray's ±truncation band."""
    step = min(gmap.params.block_size / 4.0, 2.0 * gmap.params.voxel_size)
    offsets = np.arange(-trunc, trunc + 0.5 * step, step)
    offsets[-1] = min(offsets[-1], trunc)
    blocks = []
    chunk = max(1, 400_000 // len(offsets))
    for s in range(0, len(ranges), chunk):
        r = ranges[s : s + chunk, None] + offsets[None, :]
        p = origin + dirs[s : s + chunk, None, :] * r[..., None]
        b = np.floor(p.reshape(-1, 3) / gmap.params.block_size).astype(np.int64)
        blocks.append(np.unique(pack_block_keys(b)))
    if not blocks:
        return np.empty((0, 3), dtype=np.int64)
    return unpack_block_keys(np.unique(np.concatenate(blocks)))


@dataclass
class IntegrationStats:
    updated_voxels: int = 0
    flipped_voxels: int = 0
    dropped_surfaces: int = 0


def integrate_frame(
    gmap: GlobalMap,
    depth: np.ndarray,
    labels: np.ndarray,
    cam: PinholeCamera,
    camera_pose: RigidTransform,
    cfg: IntegrationConfig | None = None,
) -> IntegrationStats:
    """Fuse one range image with per-pixel ObjectIds into ``gmap`` (in place).

    Pixels with label < 0 or no depth are ignored. Every voxel whose center
    projects onto a used pixel and lies within ±truncation of the measured
    range along that ray first votes on the global voxel's confidence, then
    its projective signed distance is averaged into the voxel's active
    object volume.
    """
    cfg = cfg or IntegrationConfig()
    depth = np.asarray(depth, dtype=np.float64)
    labels = np.asarray(labels)
    if depth.shape != cam.shape or labels.shape != cam.shape:
        raise ValueError(
            f"image shape mismatch: depth {depth.shape}, labels {labels.shape}, camera {cam.shape}"
        )
    trunc = cfg.truncation_distance or gmap.params.truncation_distance
    stats = IntegrationStats()

    used = (depth > 0) & np.isfinite(depth) & (labels >= 0)
    if not used.any():
        return stats
    ids = set(np.unique(labels[used]).tolist())
    if BACKGROUND_ID in ids:
        gmap.ensure_background()
    unknown = ids - set(gmap.object_volumes)
    if unknown:
        raise ValueError(f"labels reference unknown object ids {sorted(unknown)}")

    rows, cols = np.nonzero(used)
    R, origin = camera_pose.rotation, camera_pose.translation
    dirs = cam.ray_directions()[rows, cols] @ R.T
    blocks = _band_blocks(origin, dirs, depth[rows, cols], trunc, gmap)
    gmap.global_volume.allocate_blocks(blocks)

    vs = gmap.params.voxel_size
    coords = gmap.global_volume.block_coords(blocks)
    p_cam = ((coords + 0.5) * vs - origin) @ R
    uv, in_view = cam.project(p_cam)
    coords, p_cam, uv = coords[in_view], p_cam[in_view], uv[in_view]
    r, c = cam.pixel_index(uv)
    meas = depth[r, c]
    lab = labels[r, c]
    ok = used[r, c]
    sdf = meas - np.linalg.norm(p_cam, axis=1)
    ok &= np.abs(sdf) <= trunc
    coords, sdf, lab = coords[ok], sdf[ok], lab[ok].astype(np.int32)
    if not len(coords):
        return stats

    gidx = gmap.global_volume.find(coords)
    layers = gmap.layers_at(gidx)
    before = layers.active.copy()
    protected = gmap.background_weight(coords) > 0
    dropped = update_confidence_layers(layers, lab, gmap.max_layers, protected)
    gmap.store_layers(gidx, layers)
    gmap.drop_surfaces(coords, dropped)
    stats.updated_voxels = len(coords)
    stats.flipped_voxels = int(np.count_nonzero((before != layers.active) & (before != EMPTY)))
    stats.dropped_surfaces = int(np.count_nonzero(dropped != EMPTY))

    w_new = cfg.observation_weight
    for oid in np.unique(layers.active):
        sel = layers.active == oid
        vol = gmap.volume(int(oid))
        vidx = vol.grid.get_or_allocate(coords[sel])
        dist, weight = vol.distance, vol.weight
        w = weight[vidx]
        d_new = sdf[sel]
        fused = np.where(w > 0, (w * dist[vidx] + w_new * d_new) / (w + w_new), d_new)
        dist[vidx] = fused
        weight[vidx] = np.minimum(w + w_new, cfg.max_integration_weight)
    return stats
