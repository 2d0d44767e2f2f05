"""Object tracking: point-to-plane ICP against the object's mesh, minimized with
Levenberg-Marquardt on a 6-dof axis-angle increment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import RigidTransform, rotation_from_rotvec
from .mapping.meshing import Mesh


class TrackingSkipped(Exception):
    """Too few segment points to track; the object's pose is held."""


@dataclass(frozen=True)
class TrackingConfig:
    max_correspondence_distance: float = 0.05
    max_iterations: int = 30
    rel_tol: float = 1e-6
    min_tracking_points: int = 100
    initial_damping: float = 1e-4
    max_damping_tries: int = 10
    # pairs whose source and target normals differ by more than this are
    # rejected (only for source points that carry a normal)
    max_normal_angle_deg: float = 45.0
    # motion directions whose normalized point-to-plane information falls
    # below this are not updated (0 disables the check)
    degeneracy_threshold: float = 0.01

    @classmethod
    def for_voxel_size(cls, voxel_size: float, **kw) -> "TrackingConfig":
        return cls(max_correspondence_distance=5.0 * voxel_size, **kw)


@dataclass
class CorrespondenceSet:
    source: np.ndarray  # segment points s_k
    target: np.ndarray  # mesh vertices o_k
    normals: np.ndarray  # unit normals at o_k

    def __len__(self) -> int:
        return len(self.source)

    @property
    def N(self) -> int:
        return len(self.source)


@dataclass
class TrackResult:
    T_O: RigidTransform
    final_error: float
    iterations: int
    converged: bool
    inlier_count: int


class MeshIndex:
    """Nearest-vertex lookup on a mesh with usable normals."""

    def __init__(self, mesh: Mesh) -> None:
        keep = np.linalg.norm(mesh.normals, axis=1) > 0.5
        if not keep.any():
            raise ValueError("target mesh is empty")
        self.vertices = mesh.vertices[keep]
        self.normals = mesh.normals[keep]
        self.tree = cKDTree(self.vertices)


def find_correspondences(
    points: np.ndarray,
    mesh: Mesh | MeshIndex,
    T_current: RigidTransform,
    max_dist: float,
    point_normals: np.ndarray | None = None,
    max_normal_angle_deg: float = 180.0,
) -> CorrespondenceSet:
    """Pair each point, moved by ``T_current``, with its nearest mesh vertex
    within ``max_dist``. The pairs keep the untransformed source points.

    With ``point_normals`` (zero rows = unknown), pairs whose rotated source
    normal and vertex normal disagree by more than ``max_normal_angle_deg``
    are dropped.
    """
    index = mesh if isinstance(mesh, MeshIndex) else MeshIndex(mesh)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    moved = T_current.apply(pts)
    dist, nn = index.tree.query(moved, distance_upper_bound=max_dist)
    ok = np.isfinite(dist) & (dist <= max_dist)
    if point_normals is not None and max_normal_angle_deg < 180.0:
        n = np.asarray(point_normals, dtype=np.float64).reshape(-1, 3) @ T_current.rotation.T
        known = np.linalg.norm(n, axis=1) > 0.5
        cos = np.einsum("ij,ij->i", n[ok], index.normals[nn[ok]])
        keep = ~known[ok] | (cos >= np.cos(np.radians(max_normal_angle_deg)))
        ok[np.flatnonzero(ok)[~keep]] = False
    return CorrespondenceSet(pts[ok], index.vertices[nn[ok]], index.normals[nn[ok]])


def residuals(T: RigidTransform, C: CorrespondenceSet) -> np.ndarray:
    return np.einsum("ij,ij->i", T.apply(C.source) - C.target, C.normals)


def point_to_plane_error(T: RigidTransform, C: CorrespondenceSet) -> float:
    """Sum of squared point-to-plane distances of the moved source points."""
    r = residuals(T, C)
    return float(r @ r)


def increment(T: RigidTransform, delta: np.ndarray) -> RigidTransform:
    """Left-compose the increment ``delta = (omega, v)``:
    R' = exp(omega) R, t' = exp(omega) t + v."""
    dR = rotation_from_rotvec(delta[:3])
    return RigidTransform(dR @ T.rotation, dR @ T.translation + delta[3:])


def residual_jacobian(T: RigidTransform, C: CorrespondenceSet) -> np.ndarray:
    """d r_k / d delta at delta = 0: rows [(T s_k) x n_k, n_k]."""
    p = T.apply(C.source)
    return np.hstack([np.cross(p, C.normals), C.normals])


def _constrained_basis(J: np.ndarray, threshold: float) -> np.ndarray:
    """Eigenvectors of the normalized information ``J^T J / N`` whose
    eigenvalue reaches ``threshold``; the motion is only updated in their span."""
    w, V = np.linalg.eigh(J.T @ J / len(J))
    return V[:, w >= threshold]


def _lm_step(T: RigidTransform, C: CorrespondenceSet, lam: float, cfg: TrackingConfig):
    """One damped step; returns (T_new, E_new, lam) with E_new <= E or T unchanged.

    The step is solved for a rotation about the centroid of the moved points,
    scaled by their RMS radius so that all six parameters are in meters.
    """
    r = residuals(T, C)
    E = float(r @ r)
    p = T.apply(C.source)
    c = p.mean(axis=0)
    rho = max(float(np.sqrt(np.mean(np.sum((p - c) ** 2, axis=1)))), 1e-9)
    J = np.hstack([np.cross(p - c, C.normals) / rho, C.normals])
    basis = _constrained_basis(J, cfg.degeneracy_threshold) if cfg.degeneracy_threshold > 0 else None
    A = J.T @ J
    g = J.T @ r
    diag = np.diag(A).copy()
    diag[diag <= 0] = 1.0
    for _ in range(cfg.max_damping_tries):
        try:
            step = -np.linalg.solve(A + lam * np.diag(diag), g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        if basis is not None:
            step = basis @ (basis.T @ step)
        omega = step[:3] / rho
        dR = rotation_from_rotvec(omega)
        T_new = RigidTransform(dR @ T.rotation, dR @ (T.translation - c) + c + step[3:])
        E_new = point_to_plane_error(T_new, C)
        if E_new <= E:
            return T_new, E_new, max(lam / 10.0, 1e-12), E
        lam *= 10.0
    return T, E, lam, E


def register(
    points: np.ndarray,
    mesh: Mesh | MeshIndex,
    initial: RigidTransform | None = None,
    cfg: TrackingConfig = TrackingConfig(),
    point_normals: np.ndarray | None = None,
) -> TrackResult:
    """Minimize the point-to-plane error of ``T`` applied to ``points``.

    Alternates nearest-vertex correspondence search with one LM step until the
    relative error decrease drops below ``rel_tol``. ``T_O`` in the result is
    the registration transform (segment -> model).
    """
    index = mesh if isinstance(mesh, MeshIndex) else MeshIndex(mesh)
    T = initial or RigidTransform.identity()
    lam = cfg.initial_damping
    E = np.inf

    def match(T):
        return find_correspondences(
            points, index, T, cfg.max_correspondence_distance, point_normals, cfg.max_normal_angle_deg
        )

    C = match(T)
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if len(C) < 6:
            break
        T_new, E_new, lam, E_old = _lm_step(T, C, lam, cfg)
        T, E = T_new, E_new
        if E_old <= 1e-30 or (E_old - E_new) <= cfg.rel_tol * E_old:
            converged = True
            break
        C = match(T)
    C = match(T)
    if len(C):
        E = point_to_plane_error(T, C)
    return TrackResult(T, float(E), it, converged and np.isfinite(E), len(C))


def track_object(
    segment,
    mesh: Mesh | MeshIndex,
    initial_guess: RigidTransform | None = None,
    cfg: TrackingConfig = TrackingConfig(),
) -> TrackResult:
    """Estimate the object motion that brings the mapped model onto ``segment``.

    ``segment`` is a FrameSegment or an (N, 3) array in the global frame and
    ``initial_guess`` a guess of that motion (identity by default). The
    registration minimizes the point-to-plane error of the segment against
    the model mesh; the returned ``T_O`` is its inverse, i.e. the rigid motion
    to apply to the model. Raises :class:`TrackingSkipped` when the segment
    has fewer than ``min_tracking_points`` points.
    """
    points = np.asarray(getattr(segment, "points", segment), dtype=np.float64).reshape(-1, 3)
    normals = getattr(segment, "normals", None)
    if len(points) < cfg.min_tracking_points:
        raise TrackingSkipped(
            f"{len(points)} points, at least {cfg.min_tracking_points} needed for tracking"
        )
    guess = initial_guess.inverse() if initial_guess is not None else None
    res = register(points, mesh, guess, cfg, normals)
    return TrackResult(res.T_O.inverse(), res.final_error, res.iterations, res.converged, res.inlier_count)
