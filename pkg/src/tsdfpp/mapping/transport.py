"""Rigid pose update of one object inside the shared grid."""
from __future__ import annotations

import itertools

import numpy as np

from ..geometry import RigidTransform, sample_volume
from ..voxel_core import (
    BACKGROUND_ID,
    EMPTY,
    GlobalMap,
    ObjectVolume,
    activate_layers,
    pack_block_keys,
    unpack_block_keys,
)


def deactivate_object(gmap: GlobalMap, object_id: int) -> int:
    """Remove ``object_id`` from every global voxel, promoting inactive occupants.

    Returns the number of voxels where the object was active.
    """
    gv = gmap.global_volume
    a, ac = gv.field("active_id"), gv.field("active_conf")
    i, ic = gv.field("inactive_id"), gv.field("inactive_conf")
    act = a == object_id
    a[act], ac[act] = i[act], ic[act]
    i[act], ic[act] = EMPTY, 0
    stale = i == object_id
    i[stale], ic[stale] = EMPTY, 0
    return int(np.count_nonzero(act))


def transport_volume(volume: ObjectVolume, T_O: RigidTransform) -> ObjectVolume:
    """Resample ``volume`` moved by ``T_O`` onto the grid.

    Each destination voxel center pulls distance and weight from the source
    location ``T_O^-1 p`` by trilinear interpolation; destinations without
    valid source neighbors are left unobserved.
    """
    params = volume.params
    out = ObjectVolume(volume.object_id, params, volume.grid.max_blocks)
    blocks = volume.grid.block_indices()
    if not len(blocks):
        return out
    R = T_O.rotation
    vs = params.voxel_size
    t_grid = T_O.translation / vs
    snapped = np.round(t_grid)
    if np.array_equal(R, np.eye(3)) and np.allclose(t_grid, snapped, rtol=0.0, atol=1e-9):
        # whole-voxel shift: every sample lands on a source voxel center, so
        # interpolation reduces to copying the observed voxels
        coords, d, w = volume.observed()
        if len(coords):
            out.set_voxels(coords + snapped.astype(np.int64), d, w)
        return out
    # a moved block's voxels (plus the interpolation stencil) stay within one
    # block of where its center lands
    centers = (blocks + 0.5) * params.block_size
    landed = np.floor(T_O.apply(centers) / params.block_size).astype(np.int64)
    offsets = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)
    near = (landed[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    dst_blocks = unpack_block_keys(np.unique(pack_block_keys(near)))

    # in grid units: q_src = R^T (q_dst - t / voxel_size)
    for chunk in np.array_split(dst_blocks, max(1, len(dst_blocks) // 64)):
        coords = volume.grid.block_coords(chunk)
        q_src = (coords + 0.5 - t_grid) @ R
        d, w, ok = sample_volume(volume, q_src, in_grid_units=True)
        if ok.any():
            out.set_voxels(coords[ok], d[ok], w[ok])
    return out


def update_object_pose(gmap: GlobalMap, object_id: int, T_O: RigidTransform) -> ObjectVolume:
    """Move an object by ``T_O`` inside the map (in place).

    The object is deactivated everywhere, its TSDF is transported, and it is
    activated (confidence 1) at every destination voxel that received data,
    demoting the incumbent there. Returns the new object volume.
    """
    if object_id == BACKGROUND_ID:
        raise ValueError("the background model cannot be moved")
    if object_id not in gmap.object_volumes:
        raise ValueError(f"unknown object id {object_id}")
    deactivate_object(gmap, object_id)
    new = transport_volume(gmap.object_volumes[object_id], T_O)
    gmap.object_volumes[object_id] = new
    coords, _, _ = new.observed()
    if len(coords):
        gidx = gmap.global_volume.get_or_allocate(coords)
        layers = gmap.layers_at(gidx)
        protected = gmap.background_weight(coords) > 0
        dropped = activate_layers(
            layers, np.full(len(coords), object_id, dtype=np.int32), gmap.max_layers, protected
        )
        gmap.store_layers(gidx, layers)
        gmap.drop_surfaces(coords, dropped)
    return new
