"""Deterministic synthetic RGB-D source.

Analytic planes, boxes and spheres move along scripted trajectories and are
ray cast into range images with ground-truth instance labels. Depth values
are ranges along each pixel ray (not z-depth).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import yaml
from scipy import ndimage

from .geometry import PinholeCamera, RigidTransform, slerp_transform
from .voxel_core import BACKGROUND_ID


# ---------------------------------------------------------------------------
# Shapes (defined in their local frame, centered at the origin)


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class Box:
    half_extents: tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.half_extents) != 3 or min(self.half_extents) <= 0:
            raise ValueError("box half extents must be three positive lengths")


@dataclass(frozen=True)
class Plane:
    """Bounded rectangle in the local z = 0 plane with normal +z."""

    half_extents: tuple[float, float]

    def __post_init__(self) -> None:
        if len(self.half_extents) != 2 or min(self.half_extents) <= 0:
            raise ValueError("plane half extents must be two positive lengths")


Shape = Sphere | Box | Plane


def _intersect_local(shape: Shape, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    n = len(o)
    if isinstance(shape, Sphere):
        b = np.einsum("ij,ij->i", o, d)
        c = np.einsum("ij,ij->i", o, o) - shape.radius**2
        disc = b * b - c
        hit = disc >= 0
        s = np.sqrt(np.where(hit, disc, 0.0))
        t0, t1 = -b - s, -b + s
        t = np.where(t0 > 0, t0, np.where(t1 > 0, t1, np.inf))
        return np.where(hit, t, np.inf)
    if isinstance(shape, Plane):
        a, b = shape.half_extents
        dz = d[:, 2]
        ok = dz != 0
        t = np.where(ok, -o[:, 2] / np.where(ok, dz, 1.0), np.inf)
        x = o[:, 0] + t * d[:, 0]
        y = o[:, 1] + t * d[:, 1]
        hit = ok & (t > 0) & (np.abs(x) <= a) & (np.abs(y) <= b)
        return np.where(hit, t, np.inf)
    if isinstance(shape, Box):
        h = np.asarray(shape.half_extents, dtype=np.float64)
        tmin = np.full(n, -np.inf)
        tmax = np.full(n, np.inf)
        for k in range(3):
            dk, ok_ = d[:, k], o[:, k]
            par = dk == 0
            safe = np.where(par, 1.0, dk)
            ta = (-h[k] - ok_) / safe
            tb = (h[k] - ok_) / safe
            lo = np.where(par, np.where(np.abs(ok_) <= h[k], -np.inf, np.inf), np.minimum(ta, tb))
            hi = np.where(par, np.where(np.abs(ok_) <= h[k], np.inf, -np.inf), np.maximum(ta, tb))
            tmin = np.maximum(tmin, lo)
            tmax = np.minimum(tmax, hi)
        hit = tmax >= np.maximum(tmin, 0.0)
        t = np.where(tmin > 0, tmin, tmax)
        return np.where(hit & (t > 0), t, np.inf)
    raise TypeError(f"unsupported shape {shape!r}")


def intersect_rays(shape: Shape, pose: RigidTransform, origins, directions) -> np.ndarray:
    """Nearest positive hit distance per ray (inf on miss); directions are unit."""
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    o = np.broadcast_to(o, d.shape)
    Rt = pose.rotation.T
    o_local = (o - pose.translation) @ Rt.T
    d_local = d @ Rt.T
    return _intersect_local(shape, o_local, d_local)


def ray_intersect(shape: Shape, pose: RigidTransform, origin, direction) -> float | None:
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("ray direction must be normalized")
    t = float(intersect_rays(shape, pose, origin, d)[0])
    return None if np.isinf(t) else t


def inside(shape: Shape, pose: RigidTransform, points) -> np.ndarray:
    """Point-membership of the solid (plane: never)."""
    p = pose.inverse().apply(np.atleast_2d(points))
    if isinstance(shape, Sphere):
        return np.einsum("ij,ij->i", p, p) <= shape.radius**2
    if isinstance(shape, Box):
        return np.all(np.abs(p) <= np.asarray(shape.half_extents), axis=1)
    return np.zeros(len(p), dtype=bool)


# ---------------------------------------------------------------------------
# Trajectories and scene


@dataclass(frozen=True)
class ScriptedTrajectory:
    keyframes: tuple[tuple[int, RigidTransform], ...]

    def __post_init__(self) -> None:
        frames = [f for f, _ in self.keyframes]
        if not frames:
            raise ValueError("trajectory needs at least one keyframe")
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("keyframe indices must be strictly increasing")

    @classmethod
    def static(cls, pose: RigidTransform) -> "ScriptedTrajectory":
        return cls(((0, pose),))

    def pose_at(self, frame: int) -> RigidTransform:
        kf = self.keyframes
        if frame <= kf[0][0]:
            return kf[0][1]
        for (f0, p0), (f1, p1) in zip(kf, kf[1:]):
            if frame <= f1:
                return slerp_transform(p0, p1, (frame - f0) / (f1 - f0))
        return kf[-1][1]


@dataclass(frozen=True)
class Primitive:
    shape: Shape
    instance: int
    trajectory: ScriptedTrajectory
    is_semantic_object: bool = False

    def pose_at(self, frame: int) -> RigidTransform:
        return self.trajectory.pose_at(frame)


@dataclass
class Scene:
    camera: PinholeCamera
    camera_trajectory: ScriptedTrajectory
    primitives: list[Primitive] = field(default_factory=list)
    num_frames: int = 0
    depth_noise_sigma: float = 0.0
    seed: int = 0
    mask_degrade_px: int = 0

    def __post_init__(self) -> None:
        ids = [p.instance for p in self.primitives if p.instance != BACKGROUND_ID]
        if len(ids) != len(set(ids)):
            raise ValueError("foreground primitives need distinct instance ids")
        if self.num_frames < 0:
            raise ValueError("num_frames must be non-negative")
        if self.depth_noise_sigma < 0:
            raise ValueError("depth_noise_sigma must be non-negative")

    @property
    def semantic_instances(self) -> set[int]:
        return {p.instance for p in self.primitives if p.is_semantic_object}

    def camera_pose(self, frame: int) -> RigidTransform:
        return self.camera_trajectory.pose_at(frame)

    def render(self, frame: int) -> "RenderedFrame":
        return render_frame(
            self, self.camera, self.camera_pose(frame), frame, self.depth_noise_sigma
        )

    def frames(self) -> Iterator["RenderedFrame"]:
        for i in range(self.num_frames):
            yield self.render(i)

    def detector_masks(self, frame: "RenderedFrame") -> list[tuple[int, np.ndarray]]:
        """Instance masks of the semantically recognized primitives, optionally
        dilated (k > 0) or eroded (k < 0) by ``mask_degrade_px`` pixels."""
        return detector_masks(frame.labels, self.semantic_instances, self.mask_degrade_px)


@dataclass
class RenderedFrame:
    depth: np.ndarray
    labels: np.ndarray
    camera_pose: RigidTransform
    frame_index: int


def detector_masks(
    labels: np.ndarray, semantic_ids: set[int], degrade_px: int = 0
) -> list[tuple[int, np.ndarray]]:
    out = []
    for inst in sorted(semantic_ids):
        m = labels == inst
        if not m.any():
            continue
        if degrade_px > 0:
            m = ndimage.binary_dilation(m, iterations=degrade_px)
        elif degrade_px < 0:
            m = ndimage.binary_erosion(m, iterations=-degrade_px)
        out.append((inst, m))
    return out


def render_frame(
    scene: Scene,
    cam: PinholeCamera,
    camera_pose: RigidTransform,
    frame_index: int,
    depth_noise_sigma: float = 0.0,
) -> RenderedFrame:
    dirs_cam = cam.ray_directions().reshape(-1, 3)
    dirs = dirs_cam @ camera_pose.rotation.T
    origin = camera_pose.translation
    best = np.full(len(dirs), np.inf)
    labels = np.zeros(len(dirs), dtype=np.int32)
    for prim in scene.primitives:
        t = intersect_rays(prim.shape, prim.pose_at(frame_index), origin, dirs)
        closer = t < best
        best = np.where(closer, t, best)
        labels = np.where(closer, prim.instance, labels)
    hit = np.isfinite(best)
    depth = np.where(hit, best, 0.0)
    if depth_noise_sigma > 0:
        rng = np.random.default_rng([scene.seed, frame_index])
        noise = rng.normal(0.0, depth_noise_sigma, size=depth.shape)
        depth = np.where(hit, np.maximum(depth + noise, 0.0), 0.0)
    labels = np.where(depth > 0, labels, 0)
    return RenderedFrame(
        depth.reshape(cam.shape), labels.reshape(cam.shape).astype(np.int32), camera_pose, frame_index
    )


# ---------------------------------------------------------------------------
# Scene files


def _vec(v, n: int, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (n,):
        raise ValueError(f"{name}: expected {n} numbers, got {v!r}")
    return a


def _rotation_to_normal(normal) -> np.ndarray:
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = ref - n * (ref @ n)
    x /= np.linalg.norm(x)
    y = np.cross(n, x)
    return np.stack([x, y, n], axis=1)


def _pose_from_dict(d: dict, where: str) -> RigidTransform:
    if "look_at" in d:
        la = d["look_at"]
        return RigidTransform.look_at(
            _vec(la["eye"], 3, f"{where}.eye"),
            _vec(la["target"], 3, f"{where}.target"),
            _vec(la.get("up", [0, 0, 1]), 3, f"{where}.up"),
        )
    t = _vec(d.get("translation", [0, 0, 0]), 3, f"{where}.translation")
    rv = _vec(d.get("rotation", [0, 0, 0]), 3, f"{where}.rotation")
    return RigidTransform.from_axis_angle(rv, t)


def _pose_to_dict(T: RigidTransform) -> dict:
    return {"translation": T.translation.tolist(), "rotation": T.rotvec().tolist()}


def _trajectory_from_dict(d: dict, where: str) -> ScriptedTrajectory:
    kfs = d.get("keyframes")
    if not kfs:
        raise ValueError(f"{where}: trajectory needs keyframes")
    return ScriptedTrajectory(
        tuple((int(k["frame"]), _pose_from_dict(k, f"{where}.keyframes[{i}]")) for i, k in enumerate(kfs))
    )


def _trajectory_to_dict(tr: ScriptedTrajectory) -> dict:
    return {"keyframes": [{"frame": f, **_pose_to_dict(p)} for f, p in tr.keyframes]}


def _primitive_from_dict(d: dict, i: int) -> Primitive:
    where = f"primitives[{i}]"
    kind = d.get("type")
    if kind == "sphere":
        shape: Shape = Sphere(float(d["radius"]))
        base = RigidTransform.from_translation(_vec(d.get("center", [0, 0, 0]), 3, f"{where}.center"))
    elif kind == "box":
        shape = Box(tuple(_vec(d["half_extents"], 3, f"{where}.half_extents").tolist()))
        base = RigidTransform.from_axis_angle(
            _vec(d.get("rotation", [0, 0, 0]), 3, f"{where}.rotation"),
            _vec(d.get("center", [0, 0, 0]), 3, f"{where}.center"),
        )
    elif kind == "plane":
        shape = Plane(tuple(_vec(d["half_extents"], 2, f"{where}.half_extents").tolist()))
        base = RigidTransform(
            _rotation_to_normal(_vec(d.get("normal", [0, 0, 1]), 3, f"{where}.normal")),
            _vec(d.get("point", [0, 0, 0]), 3, f"{where}.point"),
        )
    else:
        raise ValueError(f"{where}.type: unknown primitive type {kind!r}")
    traj = (
        _trajectory_from_dict(d["trajectory"], f"{where}.trajectory")
        if "trajectory" in d
        else ScriptedTrajectory.static(base)
    )
    return Primitive(shape, int(d.get("instance", 0)), traj, bool(d.get("semantic", False)))


def _primitive_to_dict(p: Primitive) -> dict:
    s = p.shape
    if isinstance(s, Sphere):
        d: dict = {"type": "sphere", "radius": float(s.radius)}
    elif isinstance(s, Box):
        d = {"type": "box", "half_extents": [float(x) for x in s.half_extents]}
    else:
        d = {"type": "plane", "half_extents": [float(x) for x in s.half_extents]}
    d.update(instance=p.instance, semantic=p.is_semantic_object)
    d["trajectory"] = _trajectory_to_dict(p.trajectory)
    return d


def scene_from_dict(d: dict) -> Scene:
    if "camera" not in d:
        raise ValueError("scene: missing 'camera' block")
    if "camera_trajectory" not in d:
        raise ValueError("scene: missing 'camera_trajectory' block")
    return Scene(
        camera=PinholeCamera.from_dict(d["camera"]),
        camera_trajectory=_trajectory_from_dict(d["camera_trajectory"], "camera_trajectory"),
        primitives=[_primitive_from_dict(p, i) for i, p in enumerate(d.get("primitives", []))],
        num_frames=int(d.get("frames", 0)),
        depth_noise_sigma=float(d.get("depth_noise_sigma", 0.0)),
        seed=int(d.get("seed", 0)),
        mask_degrade_px=int(d.get("mask_degrade_px", 0)),
    )


def scene_to_dict(scene: Scene) -> dict:
    return {
        "camera": scene.camera.to_dict(),
        "frames": scene.num_frames,
        "depth_noise_sigma": scene.depth_noise_sigma,
        "seed": scene.seed,
        "mask_degrade_px": scene.mask_degrade_px,
        "camera_trajectory": _trajectory_to_dict(scene.camera_trajectory),
        "primitives": [_primitive_to_dict(p) for p in scene.primitives],
    }


def load_scene(path: str | Path) -> Scene:
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: scene file must be a mapping")
    return scene_from_dict(data)


def save_scene(scene: Scene, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(scene_to_dict(scene), f, sort_keys=False)


# ---------------------------------------------------------------------------
# Scenario generators


def orbit_trajectory(
    target: Sequence[float],
    radius: float,
    height: float,
    azimuth_start_deg: float,
    azimuth_end_deg: float,
    num_frames: int,
    keyframe_every: int = 5,
) -> ScriptedTrajectory:
    """Camera keyframes on a horizontal arc around ``target``, looking at it."""
    target = np.asarray(target, dtype=np.float64)
    last = max(num_frames - 1, 0)
    frames = sorted(set(list(range(0, last + 1, keyframe_every)) + [last]))
    kfs = []
    for f in frames:
        s = f / last if last else 0.0
        az = np.deg2rad(azimuth_start_deg + s * (azimuth_end_deg - azimuth_start_deg))
        eye = target + np.array([radius * np.cos(az), radius * np.sin(az), height])
        kfs.append((f, RigidTransform.look_at(eye, target)))
    return ScriptedTrajectory(tuple(kfs))


def occlusion_scenario(
    *,
    static_frames: int = 30,
    slide_frames: int = 40,
    table_half: tuple[float, float] = (0.3, 0.3),
    box_half: tuple[float, float, float] = (0.06, 0.06, 0.05),
    box_start: tuple[float, float] = (-0.15, 0.0),
    box_end: tuple[float, float] = (0.10, 0.0),
    width: int = 320,
    height: int = 240,
    depth_noise_sigma: float = 0.0,
    seed: int = 0,
    orbit_deg: tuple[float, float] = (30.0, 60.0),
    camera_radius: float = 0.55,
    camera_height: float = 0.6,
) -> Scene:
    """A bounded tabletop, observed while a box rests on it, then slides across.

    The box rests at ``box_start`` for ``static_frames`` frames, then slides
    to ``box_end`` over ``slide_frames`` frames. The camera orbits slowly above
    the +x/+y quadrant, looking down at the table center, so the box slides
    toward it while the wall facing the camera hides the table behind.
    """
    n = static_frames + slide_frames
    f = 300.0 * width / 320.0
    cam = PinholeCamera(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    table = Primitive(
        Plane(table_half), BACKGROUND_ID, ScriptedTrajectory.static(RigidTransform.identity())
    )
    z = box_half[2]
    start = RigidTransform.from_translation([box_start[0], box_start[1], z])
    end = RigidTransform.from_translation([box_end[0], box_end[1], z])
    keys = [(0, start)]
    if static_frames > 0:
        keys.append((static_frames - 1, start))
    keys.append((max(n - 1, keys[-1][0] + 1), end))
    box = Primitive(Box(box_half), 1, ScriptedTrajectory(tuple(keys)), True)
    return Scene(
        camera=cam,
        camera_trajectory=orbit_trajectory(
            (0.0, 0.0, 0.0), camera_radius, camera_height, orbit_deg[0], orbit_deg[1], n
        ),
        primitives=[table, box],
        num_frames=n,
        depth_noise_sigma=depth_noise_sigma,
        seed=seed,
    )


def static_scene(
    *,
    frames: int = 20,
    width: int = 160,
    height: int = 120,
    objects: str = "box",
    table: bool = True,
    depth_noise_sigma: float = 0.0,
    seed: int = 0,
) -> Scene:
    """One static foreground object (optionally on a table), seen from a
    camera that sweeps a quarter orbit so every visible face is viewed at a
    moderate angle."""
    f = 300.0 * width / 320.0
    cam = PinholeCamera(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    prims = []
    if table:
        prims.append(
            Primitive(Plane((0.3, 0.3)), BACKGROUND_ID, ScriptedTrajectory.static(RigidTransform.identity()))
        )
    if objects == "box":
        prims.append(
            Primitive(Box((0.06, 0.05, 0.04)), 1,
                      ScriptedTrajectory.static(RigidTransform.from_translation([0, 0, 0.04])), True)
        )
    elif objects == "sphere":
        prims.append(
            Primitive(Sphere(0.06), 1,
                      ScriptedTrajectory.static(RigidTransform.from_translation([0, 0, 0.06])), True)
        )
    elif objects != "none":
        raise ValueError(f"unknown object kind {objects!r}")
    return Scene(
        camera=cam,
        camera_trajectory=orbit_trajectory((0, 0, 0.03), 0.55, 0.58, 20.0, 70.0, frames),
        primitives=prims,
        num_frames=frames,
        depth_noise_sigma=depth_noise_sigma,
        seed=seed,
    )
