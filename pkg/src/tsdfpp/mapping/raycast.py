"""Single-pass raycasting through the layered global volume."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import PinholeCamera, RigidTransform, sample_volume
from ..voxel_core import EMPTY, GlobalMap
from .view import MapView


@dataclass(frozen=True)
class RaycastHit:
    pixel: tuple[int, int]
    point: np.ndarray
    object_id: int
    depth: float


@dataclass
class RaycastImage:
    depth: np.ndarray  # range along the pixel ray, 0 where nothing was hit
    object_id: np.ndarray  # EMPTY where nothing was hit
    points: np.ndarray

    @property
    def hit_mask(self) -> np.ndarray:
        return self.object_id != EMPTY

    def hit(self, row: int, col: int) -> RaycastHit | None:
        if self.object_id[row, col] == EMPTY:
            return None
        return RaycastHit(
            (row, col), self.points[row, col].copy(), int(self.object_id[row, col]),
            float(self.depth[row, col]),
        )


_PROBES = tuple(k / 8.0 for k in range(1, 8))  # sub-step positions used to bracket thin bands


def _ray_box(origin, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (lo - origin) * inv
        tb = (hi - origin) * inv
    tmin = np.nanmax(np.minimum(ta, tb), axis=1)
    tmax = np.nanmin(np.maximum(ta, tb), axis=1)
    return np.maximum(tmin, 0.0), tmax


def sample_active(view: MapView, points: np.ndarray, ids: np.ndarray | None = None):
    """Distance of the visible (or given) object at each point.

    Uses trilinear interpolation of that object's volume. Returns
    ``(distance, object_id)``; distance is NaN where any of the eight
    neighbors is unobserved.
    """
    vs = view.params.voxel_size
    g = np.floor(points / vs).astype(np.int64)
    if ids is None:
        ids = view.active_ids(g)
    dist = np.full(len(points), np.nan)
    for oid in np.unique(ids):
        if oid == EMPTY:
            continue
        sel = np.flatnonzero(ids == oid)
        d, _, ok = sample_volume(view.volume(int(oid)), points[sel])
        dist[sel] = np.where(ok, d, np.nan)
    return dist, ids


def raycast(
    gmap: GlobalMap | MapView,
    cam: PinholeCamera,
    camera_pose: RigidTransform,
    *,
    max_steps: int = 4000,
) -> RaycastImage:
    """March every pixel ray once through the global volume.

    At each step only the visible layer's TSDF is sampled. The first
    positive-to-negative zero crossing is refined by linear interpolation;
    its object is the visible id at the crossing. Steps are half the
    truncation distance through unobserved space and half a voxel inside
    observed bands.
    """
    view = gmap if isinstance(gmap, MapView) else MapView(gmap)
    params = view.params
    H, W = cam.shape
    depth = np.zeros(H * W)
    obj = np.full(H * W, EMPTY, dtype=np.int32)
    pts = np.full((H * W, 3), np.nan)
    blocks = view.map.global_volume.block_indices()
    if not len(blocks):
        return RaycastImage(depth.reshape(H, W), obj.reshape(H, W), pts.reshape(H, W, 3))

    origin = camera_pose.translation
    dirs = cam.ray_directions().reshape(-1, 3) @ camera_pose.rotation.T
    lo = blocks.min(axis=0) * params.block_size
    hi = (blocks.max(axis=0) + 1) * params.block_size
    t_near, t_far = _ray_box(origin, dirs, lo, hi)
    live = np.flatnonzero(t_near <= t_far)
    t = t_near[live]
    prev_t = np.full(len(live), np.nan)
    prev_d = np.full(len(live), np.nan)
    prev_id = np.full(len(live), EMPTY, dtype=np.int32)
    coarse = 0.5 * params.truncation_distance
    fine = 0.5 * params.voxel_size

    creep = np.zeros(len(live), dtype=bool)  # fine steps until observed space is reached
    last_coarse = np.zeros(len(live), dtype=bool)

    for _ in range(max_steps):
        if not len(live):
            break
        p = origin + dirs[live] * t[:, None]
        d, ids = sample_active(view, p)
        valid = ~np.isnan(d)
        # a coarse step that lands in observed space may have skipped the
        # positive side of a surface: go back and approach it finely
        back = valid & last_coarse
        if back.any():
            t[back] = t[back] - coarse + fine
            creep[back] = True
            last_coarse[back] = False
            keep_going = ~back
            valid &= keep_going
            d = np.where(keep_going, d, np.nan)
        # entering observed space already behind a thin surface band: look
        # for a positive sample within the last step to bracket the crossing
        thin = np.flatnonzero(valid & (d <= 0) & np.isnan(prev_d) & ~np.isnan(prev_t))
        for frac in _PROBES:
            if not thin.size:
                break
            tb = t[thin] - frac * (t[thin] - prev_t[thin])
            db, ib = sample_active(view, origin + dirs[live[thin]] * tb[:, None])
            ok = ~np.isnan(db) & (db > 0)
            sel = thin[ok]
            prev_t[sel], prev_d[sel], prev_id[sel] = tb[ok], db[ok], ib[ok]
            thin = thin[~ok]
        # leaving observed space right after a positive sample: the surface
        # may lie in a band thinner than the step
        exit_ = np.flatnonzero(~valid & (prev_d > 0) & ~back)
        for frac in _PROBES:
            if not exit_.size:
                break
            tb = prev_t[exit_] + frac * (t[exit_] - prev_t[exit_])
            db, ib = sample_active(view, origin + dirs[live[exit_]] * tb[:, None])
            ok = ~np.isnan(db) & (db <= 0)
            sel = exit_[ok]
            t[sel], d[sel], ids[sel] = tb[ok], db[ok], ib[ok]
            valid[sel] = True
            exit_ = exit_[~ok]
        cand = valid & (d <= 0) & (prev_d > 0)
        # crossing into a region owned by another object: re-evaluate the
        # previous sample in the new object's field
        switch = np.flatnonzero(cand & (ids != prev_id))
        if switch.size:
            p_prev = origin + dirs[live[switch]] * prev_t[switch, None]
            d_prev, _ = sample_active(view, p_prev, ids[switch])
            good = ~np.isnan(d_prev) & (d_prev > 0)
            prev_d[switch] = np.where(good, d_prev, prev_d[switch])
            cand[switch] = good
        hit = np.flatnonzero(cand)
        if hit.size:
            d0, d1 = prev_d[hit], d[hit]
            th = prev_t[hit] + d0 / (d0 - d1) * (t[hit] - prev_t[hit])
            rays = live[hit]
            depth[rays] = th
            obj[rays] = ids[hit]
            pts[rays] = origin + dirs[rays] * th[:, None]
        stepped = ~back
        prev_t = np.where(stepped, t, prev_t)
        prev_d = np.where(stepped, np.where(valid, d, np.nan), prev_d)
        prev_id = np.where(stepped, ids, prev_id)
        creep &= ~valid
        # skip space only where no object claims the voxel
        use_coarse = stepped & ~valid & ~creep & (ids == EMPTY)
        t = np.where(stepped, t + np.where(use_coarse, coarse, fine), t)
        last_coarse = use_coarse
        keep = ~cand & (t <= t_far[live])
        live, t = live[keep], t[keep]
        prev_t, prev_d, prev_id = prev_t[keep], prev_d[keep], prev_id[keep]
        creep, last_coarse = creep[keep], last_coarse[keep]

    return RaycastImage(depth.reshape(H, W), obj.reshape(H, W), pts.reshape(H, W, 3))
