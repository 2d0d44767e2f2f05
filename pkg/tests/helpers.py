"""Shared builders for tests."""
from __future__ import annotations

import numpy as np

from tsdfpp.voxel_core import GridParams, ObjectVolume


def box_coords(lo, hi) -> np.ndarray:
    """All integer grid coordinates g with lo <= g < hi."""
    axes = [np.arange(a, b) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def volume_from_field(fn, lo, hi, params: GridParams | None = None, object_id: int = 1, weight=1.0):
    """Object volume whose voxels in [lo, hi) hold ``fn`` at their centers."""
    params = params or GridParams()
    vol = ObjectVolume(object_id, params)
    g = box_coords(lo, hi)
    centers = (g + 0.5) * params.voxel_size
    vol.set_voxels(g, fn(centers), np.broadcast_to(weight, len(g)))
    return vol


def brute_force_trilinear(values: dict, observed: set, q):
    """Reference trilinear interpolation written out corner by corner.

    ``values`` maps grid tuples to distances, ``q`` is a point in grid units
    (voxel centers at integer + 0.5). Returns (value, valid).
    """
    x, y, z = (c - 0.5 for c in q)
    i, j, k = int(np.floor(x)), int(np.floor(y)), int(np.floor(z))
    fx, fy, fz = x - i, y - j, z - k
    total = 0.0
    valid = True
    for di, wx in ((0, 1.0 - fx), (1, fx)):
        for dj, wy in ((0, 1.0 - fy), (1, fy)):
            for dk, wz in ((0, 1.0 - fz), (1, fz)):
                w = wx * wy * wz
                key = (i + di, j + dj, k + dk)
                if w == 0.0:
                    continue
                if key not in observed:
                    valid = False
                    continue
                total += w * values[key]
    return total, valid


def box_sdf(half_extents):
    """Exact signed distance of an axis-aligned box centered at the origin."""
    h = np.asarray(half_extents, dtype=np.float64)

    def sdf(p):
        q = np.abs(p) - h
        return np.linalg.norm(np.maximum(q, 0.0), axis=1) + np.minimum(q.max(axis=1), 0.0)

    return sdf


def sphere_sdf(radius, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)
    return lambda p: np.linalg.norm(p - c, axis=1) - radius


def map_fingerprint(gmap) -> tuple:
    """Bytes of every stored field of a map, for bitwise comparisons."""
    gv = gmap.global_volume
    glob = tuple(gv.field(n).tobytes() for n in gv.field_names) + (gv.block_indices().tobytes(),)
    objs = tuple(
        (oid, vol.grid.block_indices().tobytes(), vol.distance.tobytes(), vol.weight.tobytes())
        for oid, vol in sorted(gmap.object_volumes.items())
    )
    return glob, objs


def tsdf_fields(gmap) -> dict:
    """Observed voxels of every object volume, keyed by object id and sorted by coordinate."""
    out = {}
    for oid, vol in sorted(gmap.object_volumes.items()):
        g, d, w = vol.observed()
        order = np.lexsort(g.T[::-1])
        out[oid] = (g[order], d[order], w[order])
    return out


def same_tsdf_fields(a, b) -> bool:
    """True when two maps hold bitwise-identical TSDF fields for the same objects."""
    fa, fb = tsdf_fields(a), tsdf_fields(b)
    if fa.keys() != fb.keys():
        return False
    return all(
        all(x.dtype == y.dtype and x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(fa[k], fb[k]))
        for k in fa
    )
