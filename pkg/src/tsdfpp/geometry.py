"""Rigid transforms, pinhole projection and trilinear sampling of sparse TSDF volumes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .voxel_core import ObjectVolume


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element acting as ``p -> R p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.allclose(R @ R.T, np.eye(3), atol=1e-6) and np.linalg.det(R) > 0):
            raise ValueError("rotation must be a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_axis_angle(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotation_from_rotvec(rotvec), translation)

    @classmethod
    def from_quaternion(cls, translation, quat_xyzw) -> "RigidTransform":
        q = np.asarray(quat_xyzw, dtype=np.float64)
        if np.array_equal(q, [0.0, 0.0, 0.0, 1.0]):
            return cls(np.eye(3), translation)
        return cls(Rotation.from_quat(q).as_matrix(), translation)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "RigidTransform":
        """Camera-to-world pose of a camera at ``eye`` looking at ``target``
        (camera z forward, x right, y down)."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-12:
            raise ValueError("up vector is parallel to the viewing direction")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.stack([x, y, z], axis=1), eye)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def as_quaternion(self) -> np.ndarray:
        """Rotation as (qx, qy, qz, qw) with qw >= 0."""
        if np.array_equal(self.rotation, np.eye(3)):
            return np.array([0.0, 0.0, 0.0, 1.0])
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    @property
    def angle(self) -> float:
        """Rotation angle in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def __call__(self, points) -> np.ndarray:
        return self.apply(points)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, RigidTransform)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self) -> int:
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self) -> str:
        return (
            f"RigidTransform(rotvec={np.round(self.rotvec(), 6).tolist()}, "
            f"t={np.round(self.translation, 6).tolist()})"
        )


def transform_point(T: RigidTransform, p) -> np.ndarray:
    return T.apply(p)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_rotvec(rotvec) -> np.ndarray:
    """Rodrigues formula; exact identity for a zero vector."""
    w = np.asarray(rotvec, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    if theta == 0.0:
        return np.eye(3)
    K = skew(w / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def slerp_transform(a: RigidTransform, b: RigidTransform, s: float) -> RigidTransform:
    """Linear translation and spherical-linear rotation between two poses."""
    if s <= 0.0:
        return a
    if s >= 1.0:
        return b
    rel = a.rotation.T @ b.rotation
    rv = Rotation.from_matrix(rel).as_rotvec() if not np.array_equal(rel, np.eye(3)) else np.zeros(3)
    R = a.rotation @ rotation_from_rotvec(s * rv)
    t = (1.0 - s) * a.translation + s * b.translation
    return RigidTransform(R, t)


# ---------------------------------------------------------------------------
# Camera


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_dict(cls, d: dict) -> "PinholeCamera":
        try:
            return cls(
                float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                int(d["width"]), int(d["height"]),
            )
        except KeyError as exc:
            raise ValueError(f"camera intrinsics missing field {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def project(self, p_cam) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (..., 2) of camera-frame points and an in-view mask.

        A point is in view when it lies in front of the camera and rounds to
        a pixel inside the image.
        """
        p = np.asarray(p_cam, dtype=np.float64)
        z = p[..., 2]
        front = z > 0
        safe_z = np.where(front, z, 1.0)
        u = self.fx * p[..., 0] / safe_z + self.cx
        v = self.fy * p[..., 1] / safe_z + self.cy
        inside = (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)
        return np.stack([u, v], axis=-1), front & inside

    def pixel_index(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest pixel (row, col) of pixel coordinates; caller checks the in-view mask."""
        col = np.clip(np.floor(uv[..., 0] + 0.5).astype(np.int64), 0, self.width - 1)
        row = np.clip(np.floor(uv[..., 1] + 0.5).astype(np.int64), 0, self.height - 1)
        return row, col

    def unproject(self, uv, z=1.0) -> np.ndarray:
        """Camera-frame point with depth ``z`` along the optical axis."""
        uv = np.asarray(uv, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        x = (uv[..., 0] - self.cx) / self.fx
        y = (uv[..., 1] - self.cy) / self.fy
        return np.stack([x * z, y * z, np.broadcast_to(z, x.shape)], axis=-1)

    def ray_directions(self) -> np.ndarray:
        """Unit camera-frame ray through every pixel center, shape (H, W, 3)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        d = self.unproject(np.stack([u, v], axis=-1))
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Trilinear interpolation

_CORNERS = np.array(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64
)


@dataclass(frozen=True)
class InterpolationResult:
    value: float
    valid: bool
    weight: float = 0.0


def sample_volume(volume: ObjectVolume, points, *, in_grid_units: bool = False):
    """Trilinearly interpolate distance and weight of ``volume`` at many points.

    Corners are the 8 voxel centers around each point. A sample is valid
    only when every corner carrying a nonzero interpolation weight has been
    observed; a point exactly on a voxel center therefore only needs that
    voxel. With ``in_grid_units`` the points are given as continuous grid
    coordinates (voxel centers at integer + 0.5).

    Returns ``(distance, weight, valid)`` arrays.
    """
    q = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not in_grid_units:
        q = q / volume.params.voxel_size
    q = q - 0.5
    # points that are voxel centers up to rounding error sample that voxel alone
    snapped = np.round(q)
    near = np.abs(q - snapped) <= 64 * np.finfo(np.float64).eps * np.maximum(1.0, np.abs(q))
    q = np.where(near, snapped, q)
    base = np.floor(q)
    frac = q - base
    base = base.astype(np.int64)
    n = len(q)
    dist = np.zeros(n)
    wsum = np.zeros(n)
    valid = np.ones(n, dtype=bool)
    d8, w8 = volume.lookup((base[None, :, :] + _CORNERS[:, None, :]).reshape(-1, 3))
    d8, w8 = d8.reshape(8, n), w8.reshape(8, n)
    for k, c in enumerate(_CORNERS):
        cw = np.where(c[0], frac[:, 0], 1.0 - frac[:, 0])
        cw = cw * np.where(c[1], frac[:, 1], 1.0 - frac[:, 1])
        cw = cw * np.where(c[2], frac[:, 2], 1.0 - frac[:, 2])
        needed = cw != 0.0
        valid &= ~needed | (w8[k] > 0)
        dist += cw * d8[k]
        wsum += cw * w8[k]
    return dist, wsum, valid


def trilinear_interpolate(volume: ObjectVolume, p) -> InterpolationResult:
    d, w, ok = sample_volume(volume, np.asarray(p, dtype=np.float64).reshape(1, 3))
    if not ok[0]:
        return InterpolationResult(float("nan"), False)
    return InterpolationResult(float(d[0]), True, float(w[0]))
