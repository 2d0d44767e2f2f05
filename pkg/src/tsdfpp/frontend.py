"""Per-frame segments, segment/mask fusion and voxel-voting data association."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import PinholeCamera, RigidTransform
from .voxel_core import BACKGROUND_ID, EMPTY, GlobalMap, world_to_grid

NEW_OBJECT = EMPTY


@dataclass
class FrontendConfig:
    tau_overlap: float = 0.8
    vote_fraction_min: float = 0.3
    min_segment_points: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_overlap <= 1.0:
            raise ValueError("tau_overlap must lie in (0, 1]")
        if not 0.0 < self.vote_fraction_min <= 1.0:
            raise ValueError("vote_fraction_min must lie in (0, 1]")
        if self.min_segment_points < 1:
            raise ValueError("min_segment_points must be >= 1")


@dataclass
class FrameSegment:
    points: np.ndarray  # (N, 3) in the global frame
    pixels: np.ndarray  # (N, 2) as (row, col)
    label: int
    matched_object: int | None = None
    is_semantic_object: bool = False
    instance: int | None = None  # detector instance it was fused with
    normals: np.ndarray | None = None  # (N, 3) toward the camera, zero where unknown

    def __post_init__(self) -> None:
        if len(self.points) == 0:
            raise ValueError("a segment needs at least one point")
        if len(self.points) != len(self.pixels):
            raise ValueError("pixel support and point count differ")
        if self.normals is not None and len(self.normals) != len(self.points):
            raise ValueError("normal and point count differ")

    def __len__(self) -> int:
        return len(self.points)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class MaskOverlap:
    segment: int
    mask: int
    overlap: float


def back_project(
    depth: np.ndarray, rows: np.ndarray, cols: np.ndarray, cam: PinholeCamera, pose: RigidTransform
) -> np.ndarray:
    """Global-frame points of pixels whose depth is a range along the pixel ray."""
    dirs = cam.ray_directions()[rows, cols]
    return pose.apply(dirs * depth[rows, cols][:, None])


def normal_map(
    depth: np.ndarray,
    labels: np.ndarray,
    cam: PinholeCamera,
    pose: RigidTransform,
    max_jump: float = 0.05,
) -> np.ndarray:
    """Global-frame surface normals from central differences of the range image.

    Normals face the camera. Pixels whose four neighbors are missing, carry
    another label or differ in range by more than ``max_jump`` (relative)
    get a zero normal.
    """
    H, W = depth.shape
    pts = cam.ray_directions() * depth[..., None]
    out = np.zeros((H, W, 3))
    if H < 3 or W < 3:
        return out
    c = (slice(1, -1), slice(1, -1))
    d0, l0 = depth[c], labels[c]
    ok = d0 > 0
    for sl in ((slice(1, -1), slice(2, None)), (slice(1, -1), slice(None, -2)),
               (slice(2, None), slice(1, -1)), (slice(None, -2), slice(1, -1))):
        ok &= (labels[sl] == l0) & (depth[sl] > 0) & (np.abs(depth[sl] - d0) <= max_jump * d0)
    dx = pts[1:-1, 2:] - pts[1:-1, :-2]
    dy = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(dx, dy)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    ok &= norm[..., 0] > 0
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    # face the camera (which sits at the origin of this frame)
    flip = np.einsum("ijk,ijk->ij", n, pts[c]) > 0
    n[flip] *= -1.0
    n[~ok] = 0.0
    out[c] = n
    return out @ pose.rotation.T


def extract_segments(
    depth: np.ndarray,
    labels: np.ndarray,
    cam: PinholeCamera,
    camera_pose: RigidTransform,
    min_segment_points: int = 50,
) -> list[FrameSegment]:
    """One segment per nonzero label with enough pixels carrying valid depth."""
    depth = np.asarray(depth)
    labels = np.asarray(labels)
    if depth.shape != cam.shape or labels.shape != cam.shape:
        raise ValueError(
            f"image shape mismatch: depth {depth.shape}, labels {labels.shape}, camera {cam.shape}"
        )
    good = (labels != 0) & (depth > 0) & np.isfinite(depth)
    out = []
    depth = depth.astype(np.float64)
    normals = None
    for lab in np.unique(labels[good]):
        rows, cols = np.nonzero(good & (labels == lab))
        if len(rows) < min_segment_points:
            continue
        if normals is None:
            normals = normal_map(np.where(good | (labels == 0), depth, 0.0), labels, cam, camera_pose)
        pts = back_project(depth, rows, cols, cam, camera_pose)
        out.append(
            FrameSegment(pts, np.stack([rows, cols], axis=1), int(lab), normals=normals[rows, cols])
        )
    return out


def mask_overlaps(segments: list[FrameSegment], masks: list[tuple[int, np.ndarray]]) -> list[MaskOverlap]:
    """Pairwise overlap normalized by each segment's pixel count."""
    out = []
    for si, seg in enumerate(segments):
        r, c = seg.pixels[:, 0], seg.pixels[:, 1]
        for mid, m in masks:
            inside = np.count_nonzero(m[r, c])
            out.append(MaskOverlap(si, mid, inside / len(seg)))
    return out


def merge_segments(segs: list[FrameSegment], **overrides) -> FrameSegment:
    base = segs[0]
    merged = FrameSegment(
        np.concatenate([s.points for s in segs]),
        np.concatenate([s.pixels for s in segs]),
        base.label,
        base.matched_object,
        any(s.is_semantic_object for s in segs),
        base.instance,
        np.concatenate([s.normals for s in segs]) if all(s.normals is not None for s in segs) else None,
    )
    return replace(merged, **overrides) if overrides else merged


def fuse_masks(
    segments: list[FrameSegment], detector_masks: list[tuple[int, np.ndarray]], tau_overlap: float = 0.8
) -> list[FrameSegment]:
    """Attach segments to detector instances and merge segments of one instance.

    A segment joins the mask with the highest normalized overlap (ties: the
    smaller mask id) when that overlap reaches ``tau_overlap``. Unmatched
    segments pass through unchanged, after the merged ones.
    """
    if not 0.0 < tau_overlap <= 1.0:
        raise ValueError("tau_overlap must lie in (0, 1]")
    best: dict[int, tuple[float, int]] = {}
    for ov in mask_overlaps(segments, detector_masks):
        cur = best.get(ov.segment)
        if ov.overlap >= tau_overlap and (
            cur is None or ov.overlap > cur[0] or (ov.overlap == cur[0] and ov.mask < cur[1])
        ):
            best[ov.segment] = (ov.overlap, ov.mask)
    groups: dict[int, list[FrameSegment]] = {}
    passthrough = []
    for si, seg in enumerate(segments):
        if si in best:
            groups.setdefault(best[si][1], []).append(seg)
        else:
            passthrough.append(seg)
    fused = [
        merge_segments(groups[mid], is_semantic_object=True, instance=mid) for mid in sorted(groups)
    ]
    return fused + passthrough


@dataclass
class Association:
    object_id: int
    votes: dict[int, int] = field(default_factory=dict)
    novel_votes: int = 0
    is_new: bool = False


def count_votes(gmap: GlobalMap, points: np.ndarray) -> tuple[dict[int, int], int]:
    """Votes per active object id over the voxels holding ``points``.

    Voxels that are unallocated, empty or held by the background count as
    evidence for a new object.
    """
    g, _ = world_to_grid(points, gmap.params)
    idx = gmap.global_volume.find(g)
    ids = np.full(len(points), EMPTY, dtype=np.int64)
    ok = idx >= 0
    ids[ok] = gmap.global_volume.field("active_id")[idx[ok]]
    real = ids[(ids != EMPTY) & (ids != BACKGROUND_ID)]
    uniq, counts = np.unique(real, return_counts=True)
    votes = {int(u): int(c) for u, c in zip(uniq, counts)}
    return votes, int(len(points) - len(real))


def vote(gmap: GlobalMap, points: np.ndarray, vote_fraction_min: float) -> Association:
    votes, novel = count_votes(gmap, points)
    if votes:
        # most votes, then smallest id
        oid, n = min(votes.items(), key=lambda kv: (-kv[1], kv[0]))
        if n / len(points) >= vote_fraction_min:
            return Association(oid, votes, novel)
    return Association(NEW_OBJECT, votes, novel, is_new=True)


def associate_segments(
    gmap: GlobalMap, segments: list[FrameSegment], vote_fraction_min: float = 0.3
) -> list[FrameSegment]:
    """Match segments to mapped objects by voxel voting; allocate new ids otherwise.

    Segments matched to the same object are merged into one. The returned
    segments carry ``matched_object`` and are ordered by object id.
    """
    gmap.ensure_background()
    by_object: dict[int, list[FrameSegment]] = {}
    for seg in segments:
        assoc = vote(gmap, seg.points, vote_fraction_min)
        oid = assoc.object_id
        if assoc.is_new:
            oid = gmap.new_object(seg.is_semantic_object)
        elif seg.is_semantic_object:
            gmap.objects[oid].is_semantic_object = True
        by_object.setdefault(oid, []).append(replace(seg, matched_object=oid))
    return [merge_segments(by_object[oid], matched_object=oid) for oid in sorted(by_object)]


def label_image(
    shape: tuple[int, int],
    segments: list[FrameSegment],
    background: np.ndarray | None = None,
) -> np.ndarray:
    """Per-pixel ObjectIds for integration: associated segments, background
    pixels as id 0 and everything else -1."""
    out = np.full(shape, EMPTY, dtype=np.int32)
    if background is not None:
        out[background] = BACKGROUND_ID
    for seg in segments:
        if seg.matched_object is None:
            continue
        out[seg.pixels[:, 0], seg.pixels[:, 1]] = seg.matched_object
    return out
