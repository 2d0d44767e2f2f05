"""Per-frame mapping pipeline, dataset I/O and the mode-comparison experiment.

Each frame runs four stages in order: segmentation (segments fused with
detector masks), association (voxel voting), tracking (ICP per semantic
object) and map update (pose updates, then fusion of the frame).
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import yaml

from . import formats, metrics
from .frontend import FrontendConfig, associate_segments, extract_segments, fuse_masks, label_image
from .geometry import PinholeCamera, RigidTransform
from .mapping import IntegrationConfig, MapView, extract_mesh, integrate_frame, merge_meshes, update_object_pose
from .mapping.meshing import Mesh
from .simulator import Scene, load_scene
from .tracking import TrackingConfig, TrackingSkipped, track_object
from .voxel_core import BACKGROUND_ID, EMPTY, GlobalMap, GridParams, MapMode

log = logging.getLogger("tsdfpp")

STAGES = ("segmentation", "association", "tracking", "map_update")
REPORT_VERSION = 1


class DataError(Exception):
    """Input data is missing, malformed or inconsistent."""


class ConfigError(ValueError):
    """The pipeline configuration is invalid."""


# ---------------------------------------------------------------------------
# Frames


@dataclass
class SensorFrame:
    """One input frame as the pipeline consumes it.

    ``depth`` holds float32 ranges along pixel rays (0 = no return),
    ``labels`` the per-frame segment ids (0 = background) and ``masks`` the
    detector instance ids (0 = no detection).
    """

    index: int
    depth: np.ndarray
    labels: np.ndarray
    masks: np.ndarray
    camera_pose: RigidTransform

    def detector_masks(self) -> list[tuple[int, np.ndarray]]:
        return [(int(m), self.masks == m) for m in np.unique(self.masks) if m > 0]


@dataclass
class FrameStream:
    camera: PinholeCamera
    num_frames: int
    frames: Iterator[SensorFrame]
    scene: Scene | None = None  # ground truth, when the frames are simulated

    def __iter__(self) -> Iterator[SensorFrame]:
        return self.frames


def sensor_frame(scene: Scene, index: int) -> SensorFrame:
    """Render frame ``index`` in the exact form it takes after export and re-ingest."""
    r = scene.render(index)
    masks = np.zeros(r.labels.shape, dtype=np.int32)
    for mid, m in scene.detector_masks(r):
        masks[m] = mid
    return SensorFrame(
        index,
        r.depth.astype(np.float32),
        r.labels.astype(np.int32),
        masks,
        formats.canonical_pose(r.camera_pose),
    )


def scene_stream(scene: Scene) -> FrameStream:
    frames = (sensor_frame(scene, i) for i in range(scene.num_frames))
    return FrameStream(scene.camera, scene.num_frames, frames, scene)


def _frame_name(i: int) -> str:
    return f"{i:06d}"


def export_dataset(scene: Scene, directory: str | Path) -> Path:
    """Write a simulated sequence in the dataset layout read by :func:`ingest_dataset`.

    Layout: ``camera.yaml`` (fx, fy, cx, cy, width, height),
    ``trajectory.txt`` (one "timestamp tx ty tz qx qy qz qw" line per frame),
    ``depth/NNNNNN.pfm``, ``labels/NNNNNN.pgm`` and ``masks/NNNNNN.pgm``.
    """
    root = Path(directory)
    for sub in ("depth", "labels", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    with open(root / "camera.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(scene.camera.to_dict(), f, sort_keys=False)
    poses = []
    for i in range(scene.num_frames):
        fr = sensor_frame(scene, i)
        name = _frame_name(i)
        formats.write_pfm(root / "depth" / f"{name}.pfm", fr.depth)
        formats.write_pgm16(root / "labels" / f"{name}.pgm", fr.labels)
        formats.write_pgm16(root / "masks" / f"{name}.pgm", fr.masks)
        # the raw pose parses back to exactly the canonical pose in ``fr``
        poses.append((float(i), scene.camera_pose(i)))
    formats.write_trajectory(root / "trajectory.txt", poses)
    return root


def ingest_dataset(directory: str | Path) -> FrameStream:
    """Open a recorded sequence; frames are loaded lazily in timestamp order.

    Missing files are detected up front; undecodable ones abort when reached.
    Both raise :class:`DataError` naming the frame index.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    depth_files = sorted((root / "depth").glob("*.pfm")) if (root / "depth").is_dir() else []
    traj_path = root / "trajectory.txt"
    if not depth_files and not traj_path.exists():
        raise DataError(f"{root}: no frames found")
    if not traj_path.exists():
        raise DataError(f"{root}: missing trajectory.txt")
    try:
        poses = formats.read_trajectory(traj_path)
    except (formats.FormatError, OSError) as exc:
        raise DataError(str(exc)) from None
    if not poses:
        raise DataError(f"{root}: no frames found")
    order = sorted(range(len(poses)), key=lambda i: poses[i][0])
    if order != list(range(len(poses))):
        raise DataError(f"{traj_path}: timestamps are not increasing")

    cam_path = root / "camera.yaml"
    try:
        with open(cam_path, encoding="utf-8") as f:
            cam = PinholeCamera.from_dict(yaml.safe_load(f) or {})
    except FileNotFoundError:
        raise DataError(f"{root}: missing camera.yaml") from None
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{cam_path}: bad camera config ({exc})") from None

    for i in range(len(poses)):
        for sub, ext in (("depth", "pfm"), ("labels", "pgm")):
            if not (root / sub / f"{_frame_name(i)}.{ext}").exists():
                raise DataError(f"frame {i}: missing {sub}/{_frame_name(i)}.{ext}")
    if len(depth_files) != len(poses):
        raise DataError(
            f"{root}: trajectory has {len(poses)} poses but there are {len(depth_files)} depth frames"
        )

    def frames() -> Iterator[SensorFrame]:
        for i, (_, pose) in enumerate(poses):
            name = _frame_name(i)
            try:
                depth = formats.read_pfm(root / "depth" / f"{name}.pfm")
                labels = formats.read_pgm16(root / "labels" / f"{name}.pgm")
                mpath = root / "masks" / f"{name}.pgm"
                masks = formats.read_pgm16(mpath) if mpath.exists() else np.zeros_like(labels)
            except (formats.FormatError, OSError) as exc:
                raise DataError(f"frame {i}: {exc}") from None
            if depth.shape != cam.shape or labels.shape != cam.shape or masks.shape != cam.shape:
                raise DataError(f"frame {i}: image size does not match the camera")
            yield SensorFrame(i, depth, labels, masks, pose)

    return FrameStream(cam, len(poses), frames())


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class PipelineConfig:
    mode: MapMode = MapMode.TSDF_PLUS_PLUS
    grid: GridParams = field(default_factory=GridParams)
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    tracking: TrackingConfig | None = None  # default scales with the voxel size
    min_rotation_deg: float = 1.0  # smaller tracked motions are not applied
    min_translation: float = 0.003
    min_inlier_fraction: float = 0.6  # tracking results below these are not applied
    max_residual_rms: float | None = None  # default: half a voxel
    snap_translations: bool = True  # near-pure translations move in whole voxels
    scene: Scene | None = None
    scene_path: Path | None = None
    dataset: Path | None = None
    out: Path | None = None
    seed: int | None = None
    save_map: Path | None = None
    load_map: Path | None = None
    evaluation_samples: int = 10_000

    def __post_init__(self) -> None:
        self.mode = MapMode(self.mode)
        for name in ("scene_path", "dataset", "out", "save_map", "load_map"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, Path(v))

    def validate(self) -> None:
        sources = [s for s in (self.scene, self.scene_path, self.dataset) if s is not None]
        if len(sources) != 1:
            raise ConfigError("exactly one input source is needed: a scene or a dataset")
        if self.scene_path is not None and not self.scene_path.is_file():
            raise ConfigError(f"scene: {self.scene_path} does not exist")
        if self.dataset is not None and not self.dataset.is_dir():
            raise ConfigError(f"dataset: {self.dataset} is not a directory")
        if self.load_map is not None and not self.load_map.is_file():
            raise ConfigError(f"load_map: {self.load_map} does not exist")
        if self.min_rotation_deg < 0 or self.min_translation < 0:
            raise ConfigError("motion thresholds must be non-negative")
        if not 0.0 <= self.min_inlier_fraction <= 1.0:
            raise ConfigError("min_inlier_fraction must lie in [0, 1]")
        if self.evaluation_samples < 1:
            raise ConfigError("evaluation_samples must be >= 1")

    @property
    def tracking_config(self) -> TrackingConfig:
        # objects move little between frames, so the gate is tighter than
        # the standalone default
        return self.tracking or TrackingConfig(max_correspondence_distance=2.0 * self.grid.voxel_size)

    def open_stream(self) -> FrameStream:
        if self.dataset is not None:
            return ingest_dataset(self.dataset)
        scene = self.scene
        if scene is None:
            try:
                scene = load_scene(self.scene_path)
            except (OSError, ValueError, KeyError, TypeError, yaml.YAMLError) as exc:
                raise DataError(f"{self.scene_path}: {exc}") from None
        if self.seed is not None:
            scene = replace(scene, seed=self.seed)
        return scene_stream(scene)


# ---------------------------------------------------------------------------
# Reports


def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if np.isnan(x) else x


@dataclass
class RevealedRegion:
    """Background surface uncovered by removing every foreground object."""

    samples: int
    completeness: float | None
    holes: int
    compared_voxels: int
    changed_voxels: int

    @property
    def background_unchanged(self) -> bool:
        return self.changed_voxels == 0


@dataclass
class ObjectSummary:
    object_id: int
    semantic: bool
    observed_voxels: int
    mesh_vertices: int
    instance: int | None = None
    completeness: float | None = None


@dataclass
class FrameRecord:
    frame: int
    segments: int
    pose_updates: int
    updated_voxels: int
    flipped_voxels: int
    dropped_surfaces: int
    global_blocks: int
    object_blocks: int


@dataclass
class ExperimentReport:
    mode: str
    frames: int
    stage_order: list[str] = field(default_factory=lambda: list(STAGES))
    objects: list[ObjectSummary] = field(default_factory=list)
    revealed: RevealedRegion | None = None
    peak_blocks: int = 0
    peak_global_blocks: int = 0
    per_frame: list[FrameRecord] = field(default_factory=list)
    # seconds per stage per frame; kept out of the deterministic report file
    timing: dict[str, list[float]] = field(default_factory=lambda: {s: [] for s in STAGES})

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "version": REPORT_VERSION,
            "mode": self.mode,
            "frames": self.frames,
            "stage_order": list(self.stage_order),
            "peak_blocks": self.peak_blocks,
            "peak_global_blocks": self.peak_global_blocks,
            "objects": [asdict(o) for o in self.objects],
            "revealed": None if self.revealed is None else asdict(self.revealed),
            "per_frame": [asdict(r) for r in self.per_frame],
        }
        if include_timing:
            d["timing"] = {k: list(v) for k, v in self.timing.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        if d.get("version") != REPORT_VERSION:
            raise DataError(f"unsupported report version {d.get('version')!r}")
        rev = d.get("revealed")
        return cls(
            mode=d["mode"],
            frames=d["frames"],
            stage_order=list(d["stage_order"]),
            objects=[ObjectSummary(**o) for o in d["objects"]],
            revealed=None if rev is None else RevealedRegion(**rev),
            peak_blocks=d["peak_blocks"],
            peak_global_blocks=d["peak_global_blocks"],
            per_frame=[FrameRecord(**r) for r in d["per_frame"]],
            timing={k: list(v) for k, v in d.get("timing", {s: [] for s in STAGES}).items()},
        )

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def mean_timing(self) -> dict[str, float]:
        return {k: float(np.mean(v)) if v else 0.0 for k, v in self.timing.items()}


@dataclass
class ComparisonReport:
    tsdfpp: ExperimentReport
    standard: ExperimentReport

    def delta(self) -> dict:
        a, b = self.tsdfpp.revealed, self.standard.revealed
        out = {
            "peak_blocks_ratio": (
                self.tsdfpp.peak_blocks / self.standard.peak_blocks if self.standard.peak_blocks else None
            ),
        }
        if a is not None and b is not None:
            out["revealed_completeness"] = (
                None if a.completeness is None or b.completeness is None else a.completeness - b.completeness
            )
            out["revealed_holes"] = a.holes - b.holes
            out["changed_voxels"] = a.changed_voxels - b.changed_voxels
        return out

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "modes": {"tsdfpp": self.tsdfpp.to_dict(), "standard": self.standard.to_dict()},
            "delta": self.delta(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ComparisonReport":
        d = json.loads(text)
        return cls(
            ExperimentReport.from_dict(d["modes"]["tsdfpp"]),
            ExperimentReport.from_dict(d["modes"]["standard"]),
        )


# ---------------------------------------------------------------------------
# Mapping


class PreservationMonitor:
    """Remembers background voxels of a region as they were while last visible.

    After every frame, voxels where the background is the active object have
    their (distance, weight) recorded; :meth:`changed` counts voxels whose
    current background data differs bitwise from that record.
    """

    def __init__(self, gmap: GlobalMap, coords: np.ndarray) -> None:
        self.map = gmap
        self.coords = np.unique(np.asarray(coords, dtype=np.int64).reshape(-1, 3), axis=0)
        n = len(self.coords)
        self.d = np.zeros(n)
        self.w = np.zeros(n)
        self.seen = np.zeros(n, dtype=bool)

    def _background(self):
        if BACKGROUND_ID not in self.map.object_volumes:
            n = len(self.coords)
            return np.zeros(n), np.zeros(n)
        return self.map.volume(BACKGROUND_ID).lookup(self.coords)

    def record(self) -> None:
        active = MapView(self.map).active_ids(self.coords)
        d, w = self._background()
        take = (active == BACKGROUND_ID) & (w > 0)
        self.d[take], self.w[take] = d[take], w[take]
        self.seen |= take

    def changed(self) -> tuple[int, int]:
        d, w = self._background()
        s = self.seen
        same = (d[s].tobytes() == self.d[s].tobytes()) and (w[s].tobytes() == self.w[s].tobytes())
        if same:
            return int(s.sum()), 0
        diff = (d[s] != self.d[s]) | (w[s] != self.w[s])
        return int(s.sum()), int(np.count_nonzero(diff))


def _band_coords(samples: np.ndarray, params: GridParams) -> np.ndarray:
    """Voxels within the truncation band of sampled surface points (z-up surfaces)."""
    vs = params.voxel_size
    k = int(np.ceil(params.truncation_distance / vs))
    base = np.unique(np.floor(samples / vs).astype(np.int64), axis=0)
    offs = np.zeros((2 * k + 1, 3), dtype=np.int64)
    offs[:, 2] = np.arange(-k, k + 1)
    return (base[:, None, :] + offs[None]).reshape(-1, 3)


@dataclass
class PipelineResult:
    report: ExperimentReport
    map: GlobalMap
    trajectories: dict[int, list[tuple[int, RigidTransform]]]
    meshes: dict[int, Mesh]
    revealed_view: MapView | None = None


class Mapper:
    """Runs the four per-frame stages on a map."""

    def __init__(self, cfg: PipelineConfig, camera: PinholeCamera, gmap: GlobalMap | None = None):
        self.cfg = cfg
        self.camera = camera
        self.map = gmap if gmap is not None else GlobalMap(cfg.grid, cfg.mode)
        self.map.ensure_background()
        self.poses: dict[int, RigidTransform] = {}
        self.velocity: dict[int, RigidTransform] = {}  # motion applied in the previous frame
        self.trajectories: dict[int, list[tuple[int, RigidTransform]]] = {}
        self.label_votes: dict[int, dict[int, int]] = {}
        self.timing: dict[str, list[float]] = {s: [] for s in STAGES}

    def _motion_is_small(self, T: RigidTransform) -> bool:
        return (
            np.degrees(T.angle) < self.cfg.min_rotation_deg
            and np.linalg.norm(T.translation) < self.cfg.min_translation
        )

    def _pose_step(self, T: RigidTransform) -> RigidTransform | None:
        """The update actually applied for a tracked motion ``T`` (None: hold).

        Below the rotation threshold the motion is applied as a translation
        in whole voxels, which transports the volume without resampling; the
        remainder is picked up by the next frame's tracking.
        """
        if np.degrees(T.angle) < self.cfg.min_rotation_deg and self.cfg.snap_translations:
            vs = self.map.params.voxel_size
            k = np.round(T.translation / vs)
            if not k.any():
                return None
            return RigidTransform.from_translation(k * vs)
        return None if self._motion_is_small(T) else T

    def _accept(self, res, n_points: int) -> bool:
        max_rms = self.cfg.max_residual_rms
        if max_rms is None:
            max_rms = 0.5 * self.map.params.voxel_size
        return (
            res.inlier_count >= self.cfg.tracking_config.min_tracking_points
            and res.inlier_count >= self.cfg.min_inlier_fraction * n_points
            and np.sqrt(res.final_error / max(res.inlier_count, 1)) <= max_rms
        )

    def process(self, frame: SensorFrame) -> FrameRecord:
        cfg, gmap, cam = self.cfg, self.map, self.camera
        depth = frame.depth.astype(np.float64)
        clock = [time.perf_counter()]

        # (i) segmentation
        segments = extract_segments(
            depth, frame.labels, cam, frame.camera_pose, cfg.frontend.min_segment_points
        )
        segments = fuse_masks(segments, frame.detector_masks(), cfg.frontend.tau_overlap)
        clock.append(time.perf_counter())

        # (ii) association
        first_new = gmap._next_id
        segments = associate_segments(gmap, segments, cfg.frontend.vote_fraction_min)
        clock.append(time.perf_counter())

        # (iii) tracking
        motions: dict[int, RigidTransform] = {}
        velocity: dict[int, RigidTransform] = {}
        tcfg = cfg.tracking_config
        for seg in segments:
            oid = seg.matched_object
            votes = self.label_votes.setdefault(oid, {})
            votes[seg.label] = votes.get(seg.label, 0) + 1
            if oid >= first_new or not gmap.objects[oid].is_semantic_object:
                continue
            mesh = extract_mesh(gmap.volume(oid))
            if not len(mesh.vertices):
                continue
            try:
                res = track_object(seg, mesh, self.velocity.get(oid), tcfg)
            except TrackingSkipped as exc:
                log.debug("frame %d object %d: %s", frame.index, oid, exc)
                continue
            if not self._accept(res, len(seg)):
                log.debug("frame %d object %d: tracking result rejected", frame.index, oid)
                continue
            step = self._pose_step(res.T_O)
            if step is not None:
                # held (sub-threshold) estimates are not evidence of motion,
                # so only applied ones seed the next frame's guess
                motions[oid] = step
                velocity[oid] = res.T_O
        self.velocity = velocity
        clock.append(time.perf_counter())

        # (iv) map update: move tracked objects, then fuse the frame
        for oid in sorted(motions):
            update_object_pose(gmap, oid, motions[oid])
            self.poses[oid] = motions[oid] @ self.poses.get(oid, RigidTransform.identity())
        background = (frame.labels == 0) & (depth > 0)
        labels = label_image(cam.shape, segments, background)
        stats = integrate_frame(gmap, depth, labels, cam, frame.camera_pose, cfg.integration)
        clock.append(time.perf_counter())

        for seg in segments:
            oid = seg.matched_object
            self.trajectories.setdefault(oid, []).append(
                (frame.index, self.poses.get(oid, RigidTransform.identity()))
            )
        for s, t0, t1 in zip(STAGES, clock, clock[1:]):
            self.timing[s].append(t1 - t0)
        return FrameRecord(
            frame=frame.index,
            segments=len(segments),
            pose_updates=len(motions),
            updated_voxels=stats.updated_voxels,
            flipped_voxels=stats.flipped_voxels,
            dropped_surfaces=stats.dropped_surfaces,
            global_blocks=gmap.global_volume.num_blocks,
            object_blocks=sum(v.grid.num_blocks for v in gmap.object_volumes.values()),
        )

    def instance_of(self, oid: int) -> int | None:
        votes = self.label_votes.get(oid)
        if not votes:
            return None
        return min(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Process every frame of the configured source, then evaluate and export."""
    cfg.validate()
    stream = cfg.open_stream()
    gmap = None
    if cfg.load_map is not None:
        try:
            gmap = formats.load_map(cfg.load_map)
        except (formats.FormatError, OSError) as exc:
            raise DataError(f"{cfg.load_map}: {exc}") from None
        if gmap.mode != cfg.mode:
            raise ConfigError(f"load_map: map was built in mode {gmap.mode.value}, not {cfg.mode.value}")
    mapper = Mapper(cfg, stream.camera, gmap)
    gmap = mapper.map

    scene = stream.scene
    fg_instances = sorted({p.instance for p in scene.primitives if p.instance != BACKGROUND_ID}) if scene else []
    revealed_samples = None
    monitor = None
    if scene is not None and fg_instances and scene.num_frames > 0:
        revealed_samples = metrics.revealed_region(scene, fg_instances, n=cfg.evaluation_samples)
        if len(revealed_samples):
            monitor = PreservationMonitor(gmap, _band_coords(revealed_samples, gmap.params))

    report = ExperimentReport(mode=cfg.mode.value, frames=0)
    for frame in stream:
        rec = mapper.process(frame)
        if monitor is not None:
            monitor.record()
        report.per_frame.append(rec)
        report.frames += 1
        report.peak_blocks = max(report.peak_blocks, rec.global_blocks + rec.object_blocks)
        report.peak_global_blocks = max(report.peak_global_blocks, rec.global_blocks)
        log.info(
            "frame %d: %d segments, %d pose updates, %d voxels",
            rec.frame, rec.segments, rec.pose_updates, rec.updated_voxels,
        )
    report.timing = mapper.timing

    # evaluation
    view = MapView(gmap)
    meshes = {oid: extract_mesh(gmap.volume(oid)) for oid in sorted(gmap.object_volumes)}
    for oid in sorted(gmap.object_volumes):
        if oid == BACKGROUND_ID:
            continue
        coords, _, _ = gmap.volume(oid).observed()
        summary = ObjectSummary(
            oid, gmap.objects[oid].is_semantic_object, len(coords), len(meshes[oid].vertices),
            mapper.instance_of(oid),
        )
        if scene is not None and summary.instance is not None and summary.instance != BACKGROUND_ID:
            gt = metrics.observable_surface(scene, summary.instance, n=cfg.evaluation_samples)
            c, _ = metrics.completeness(gt, meshes[oid].vertices, gmap.params.voxel_size)
            summary.completeness = _num(c)
        report.objects.append(summary)

    revealed_view = None
    if revealed_samples is not None and len(revealed_samples):
        revealed_view = view
        for oid in sorted(gmap.object_volumes):
            if oid != BACKGROUND_ID:
                revealed_view = revealed_view.without(oid)
        verts = np.concatenate(
            [m.vertices for m in revealed_view.meshes().values()] + [np.zeros((0, 3))]
        )
        c, covered = metrics.completeness(revealed_samples, verts, gmap.params.voxel_size)
        link = 4.0 * metrics.sample_spacing(revealed_samples)
        compared, changed = monitor.changed()
        report.revealed = RevealedRegion(
            samples=len(revealed_samples),
            completeness=_num(c),
            holes=metrics.count_holes(revealed_samples, covered, link),
            compared_voxels=compared,
            changed_voxels=changed,
        )

    result = PipelineResult(report, gmap, mapper.trajectories, meshes, revealed_view)
    if cfg.out is not None:
        write_artifacts(result, cfg.out)
    if cfg.save_map is not None:
        cfg.save_map.parent.mkdir(parents=True, exist_ok=True)
        formats.save_map(gmap, cfg.save_map)
    return result


def _write_mesh(path: Path, mesh: Mesh, ids: np.ndarray | None = None, oid: int = 0) -> None:
    if ids is None:
        colors = np.tile(formats.object_color(oid), (len(mesh.vertices), 1))
    else:
        palette = {int(i): formats.object_color(int(i)) for i in np.unique(ids)}
        colors = np.array([palette[int(i)] for i in ids], dtype=np.uint8).reshape(-1, 3)
    formats.write_ply(path, mesh.vertices, mesh.faces, mesh.normals, colors)


def _merged(meshes: dict[int, Mesh]) -> tuple[Mesh, np.ndarray]:
    items = sorted(meshes.items())
    merged, owner = merge_meshes([m for _, m in items])
    ids = np.array([items[k][0] for k in owner], dtype=np.int64) if len(owner) else np.zeros(0, np.int64)
    return merged, ids


def write_artifacts(result: PipelineResult, out: Path) -> None:
    """Meshes (PLY), per-object trajectories, report and column files."""
    out = Path(out)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    for oid, mesh in result.meshes.items():
        _write_mesh(out / "meshes" / f"object_{oid:03d}.ply", mesh, oid=oid)
    scene_mesh, ids = _merged(MapView(result.map).meshes())
    _write_mesh(out / "meshes" / "scene.ply", scene_mesh, ids)
    if result.revealed_view is not None:
        rmesh, rids = _merged(result.revealed_view.meshes())
        _write_mesh(out / "meshes" / "revealed.ply", rmesh, rids)
    for oid, traj in sorted(result.trajectories.items()):
        if oid == BACKGROUND_ID:
            continue
        formats.write_trajectory(
            out / "trajectories" / f"object_{oid:03d}.txt", [(float(f), T) for f, T in traj]
        )
    rep = result.report
    (out / "report.json").write_text(rep.to_json(), encoding="utf-8")
    (out / "timing.json").write_text(
        json.dumps({"stage_order": list(STAGES), "timing": rep.timing,
                    "mean": rep.mean_timing()}, indent=2) + "\n",
        encoding="utf-8",
    )
    cols = ["frame", "segments", "pose_updates", "updated_voxels", "flipped_voxels",
            "dropped_surfaces", "global_blocks", "object_blocks"]
    lines = ["# " + " ".join(cols)]
    lines += [" ".join(str(getattr(r, c)) for c in cols) for r in rep.per_frame]
    (out / "frames.dat").write_text("\n".join(lines) + "\n", encoding="utf-8")
    tl = ["# frame " + " ".join(STAGES)]
    for k, r in enumerate(rep.per_frame):
        tl.append(f"{r.frame} " + " ".join(f"{rep.timing[s][k]:.6f}" for s in STAGES))
    (out / "timing.dat").write_text("\n".join(tl) + "\n", encoding="utf-8")


def compare_modes(cfg: PipelineConfig) -> tuple[ComparisonReport, dict[str, PipelineResult]]:
    """Run the same frames through both map modes and report side by side."""
    results = {}
    for mode in (MapMode.TSDF_PLUS_PLUS, MapMode.STANDARD_TSDF):
        sub = replace(
            cfg,
            mode=mode,
            out=None if cfg.out is None else cfg.out / mode.value,
            save_map=None if cfg.save_map is None else cfg.save_map.with_name(
                f"{cfg.save_map.stem}_{mode.value}{cfg.save_map.suffix}"
            ),
        )
        results[mode.value] = run_pipeline(sub)
    comp = ComparisonReport(results["tsdfpp"].report, results["standard"].report)
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "comparison.json").write_text(comp.to_json(), encoding="utf-8")
    return comp, results
