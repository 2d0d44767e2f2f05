"""Surface-coverage metrics against the simulator's analytic geometry."""
from __future__ import annotations

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.sparse import coo_matrix

from .geometry import RigidTransform
from .simulator import Box, Plane, Primitive, Scene, Sphere, inside, intersect_rays
from .voxel_core import BACKGROUND_ID


def sample_surface(prim: Primitive, frame: int, n: int, rng: np.random.Generator):
    """Area-uniform samples and outward normals on a primitive at a frame."""
    pose = prim.pose_at(frame)
    s = prim.shape
    if isinstance(s, Sphere):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        p, nrm = v * s.radius, v
    elif isinstance(s, Plane):
        a, b = s.half_extents
        p = np.stack([rng.uniform(-a, a, n), rng.uniform(-b, b, n), np.zeros(n)], axis=1)
        nrm = np.tile([0.0, 0.0, 1.0], (n, 1))
    elif isinstance(s, Box):
        h = np.asarray(s.half_extents)
        areas = np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        u[np.arange(n), axis] = sign * h[axis]
        p = u
        nrm = np.zeros((n, 3))
        nrm[np.arange(n), axis] = sign
    else:
        raise TypeError(f"unsupported shape {s!r}")
    return pose.apply(p), nrm @ pose.rotation.T


def visible_from(scene: Scene, frame: int, points: np.ndarray, normals: np.ndarray, tol: float) -> np.ndarray:
    """Which points the camera sees at ``frame`` (in view, front-facing, unoccluded)."""
    pose = scene.camera_pose(frame)
    _, in_view = scene.camera.project(pose.inverse().apply(points))
    to_pt = points - pose.translation
    dist = np.linalg.norm(to_pt, axis=1)
    dirs = to_pt / dist[:, None]
    facing = np.einsum("ij,ij->i", normals, dirs) < 0
    best = np.full(len(points), np.inf)
    for prim in scene.primitives:
        best = np.minimum(best, intersect_rays(prim.shape, prim.pose_at(frame), pose.translation, dirs))
    return in_view & facing & (best >= dist - tol)


def observable_surface(
    scene: Scene, instance: int, n: int = 10_000, seed: int = 0, tol: float = 1e-3
) -> np.ndarray:
    """Samples on an instance's surface (static, at its last pose) that the
    camera saw in at least one frame."""
    rng = np.random.default_rng(seed)
    prims = [p for p in scene.primitives if p.instance == instance]
    last = max(scene.num_frames - 1, 0)
    out: list[np.ndarray] = []
    total = 0
    for _ in range(50):
        for prim in prims:
            p, nrm = sample_surface(prim, last, 4 * n, rng)
            seen = np.zeros(len(p), dtype=bool)
            for f in range(scene.num_frames):
                seen |= visible_from(scene, f, p, nrm, tol)
            out.append(p[seen])
            total += int(seen.sum())
        if total >= n:
            break
    pts = np.concatenate(out) if out else np.zeros((0, 3))
    return pts[:n]


def revealed_region(
    scene: Scene,
    removed_instances: list[int],
    frame: int | None = None,
    n: int = 10_000,
    seed: int = 0,
    offset: float = 0.005,
) -> np.ndarray:
    """Background surface samples covered by the removed objects at ``frame``
    (default: the last frame), i.e. what their removal reveals."""
    rng = np.random.default_rng(seed)
    frame = max(scene.num_frames - 1, 0) if frame is None else frame
    backgrounds = [p for p in scene.primitives if p.instance == BACKGROUND_ID]
    removed = [p for p in scene.primitives if p.instance in set(removed_instances)]
    if not backgrounds or not removed:
        return np.zeros((0, 3))
    out, total = [], 0
    for _ in range(200):
        for bg in backgrounds:
            p, nrm = sample_surface(bg, frame, 200_000, rng)
            covered = np.zeros(len(p), dtype=bool)
            for prim in removed:
                covered |= inside(prim.shape, prim.pose_at(frame), p + offset * nrm)
            out.append(p[covered])
            total += int(covered.sum())
        if total >= n:
            break
    pts = np.concatenate(out) if out else np.zeros((0, 3))
    return pts[:n]


def completeness(samples: np.ndarray, vertices: np.ndarray, radius: float) -> tuple[float, np.ndarray]:
    """Fraction of samples with a mesh vertex within ``radius``; also the covered mask."""
    if len(samples) == 0:
        return float("nan"), np.zeros(0, dtype=bool)
    if len(vertices) == 0:
        return 0.0, np.zeros(len(samples), dtype=bool)
    d, _ = cKDTree(vertices).query(samples, distance_upper_bound=radius)
    covered = d <= radius
    return float(covered.mean()), covered


def count_holes(samples: np.ndarray, covered: np.ndarray, link: float, min_size: int = 5) -> int:
    """Connected groups (linked within ``link``) of at least ``min_size`` uncovered samples."""
    miss = samples[~covered]
    if len(miss) < min_size:
        return 0
    pairs = cKDTree(miss).query_pairs(link, output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(miss), len(miss)))
    _, lab = connected_components(g, directed=False)
    sizes = np.bincount(lab)
    return int(np.count_nonzero(sizes >= min_size))


def sample_spacing(samples: np.ndarray) -> float:
    if len(samples) < 2:
        return 0.0
    d, _ = cKDTree(samples).query(samples, k=2)
    return float(np.median(d[:, 1]))


def pose_error(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """Rotation error (degrees) and translation error (meters)."""
    rel = truth.inverse() @ estimate
    return float(np.degrees(rel.angle)), float(np.linalg.norm(estimate.translation - truth.translation))
