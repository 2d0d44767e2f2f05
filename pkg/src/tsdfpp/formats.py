"""File formats: PFM depth, 16-bit PGM labels, trajectory text, binary PLY meshes
and the versioned binary map container."""
from __future__ import annotations

import re
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .geometry import RigidTransform
from .voxel_core import GLOBAL_FIELDS, GlobalMap, GridParams, MapMode, ObjectInfo, ObjectVolume

MAP_MAGIC = b"TSDF++\0"
MAP_VERSION = 1


class FormatError(ValueError):
    """Raised on malformed or unsupported files."""


# ---------------------------------------------------------------------------
# Images


def write_pfm(path: str | Path, image: np.ndarray) -> None:
    """Single-channel little-endian PFM (rows stored bottom to top)."""
    img = np.asarray(image, dtype="<f4")
    if img.ndim != 2:
        raise ValueError("PFM writer expects a 2-D image")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        f.write(np.flipud(img).tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    m = re.match(rb"(Pf|PF)\s+(\d+)\s+(\d+)\s+(\S+)\s", data)
    if not m:
        raise FormatError(f"{path}: not a PFM file")
    if m.group(1) != b"Pf":
        raise FormatError(f"{path}: only single-channel PFM is supported")
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    dt = "<f4" if scale < 0 else ">f4"
    body = data[m.end():]
    if len(body) != w * h * 4:
        raise FormatError(f"{path}: truncated PFM payload")
    return np.flipud(np.frombuffer(body, dtype=dt).reshape(h, w)).astype(np.float32)


def write_pgm16(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.min(initial=0) < 0 or img.max(initial=0) > 65535:
        raise ValueError("labels must fit in 16 bits")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(img.astype(">u2").tobytes())


def read_pgm16(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise FormatError(f"{path}: not a binary PGM file")
    w, h, maxval = (int(x) for x in m.groups())
    dt = ">u2" if maxval > 255 else "u1"
    body = data[m.end():]
    if len(body) != w * h * np.dtype(dt).itemsize:
        raise FormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(body, dtype=dt).reshape(h, w).astype(np.int32)


# ---------------------------------------------------------------------------
# Trajectories: "timestamp tx ty tz qx qy qz qw" per line


def format_pose_line(timestamp: float, T: RigidTransform) -> str:
    vals = [float(timestamp), *T.translation.tolist(), *T.as_quaternion().tolist()]
    return " ".join(repr(v) for v in vals)


def parse_pose_line(line: str) -> tuple[float, RigidTransform]:
    parts = line.split()
    if len(parts) != 8:
        raise FormatError(f"expected 8 fields, got {len(parts)}: {line!r}")
    v = [float(x) for x in parts]
    return v[0], RigidTransform.from_quaternion(v[1:4], v[4:8])


def write_trajectory(path: str | Path, poses: list[tuple[float, RigidTransform]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n")
        for ts, T in poses:
            f.write(format_pose_line(ts, T) + "\n")


def read_trajectory(path: str | Path) -> list[tuple[float, RigidTransform]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(parse_pose_line(line))
            except (FormatError, ValueError) as exc:
                raise FormatError(f"{path}:{n}: {exc}") from None
    return out


def canonical_pose(T: RigidTransform) -> RigidTransform:
    """The pose as it reads back from the trajectory text format."""
    return parse_pose_line(format_pose_line(0.0, T))[1]


# ---------------------------------------------------------------------------
# PLY


def object_color(object_id: int) -> tuple[int, int, int]:
    """Deterministic display color for an object id (background is grey)."""
    if object_id == 0:
        return (160, 160, 160)
    h = (object_id * 0.618033988749895) % 1.0
    i = int(h * 6)
    f = h * 6 - i
    q, t = int(255 * (1 - f)), int(255 * f)
    return [(255, t, 0), (q, 255, 0), (0, 255, t), (0, q, 255), (t, 0, 255), (255, 0, q)][i % 6]


def write_ply(path: str | Path, vertices, faces, normals=None, colors=None) -> None:
    """Binary little-endian PLY with position, normal and color per vertex."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    fc = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    n = np.zeros_like(v) if normals is None else np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    c = (
        np.full((len(v), 3), 200, dtype=np.uint8)
        if colors is None
        else np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    )
    vdt = np.dtype(
        [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
         ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    )
    vert = np.empty(len(v), dtype=vdt)
    for k, name in enumerate("xyz"):
        vert[name] = v[:, k]
        vert["n" + name] = n[:, k]
    vert["red"], vert["green"], vert["blue"] = c[:, 0], c[:, 1], c[:, 2]
    fdt = np.dtype([("n", "u1"), ("i", "<i4", (3,))])
    face = np.empty(len(fc), dtype=fdt)
    face["n"] = 3
    face["i"] = fc
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(v)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        f"element face {len(fc)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(vert.tobytes())
        f.write(face.tobytes())


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Reader for files produced by :func:`write_ply`."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii")
    nv = int(re.search(r"element vertex (\d+)", header).group(1))
    nf = int(re.search(r"element face (\d+)", header).group(1))
    vdt = np.dtype(
        [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
         ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    )
    fdt = np.dtype([("n", "u1"), ("i", "<i4", (3,))])
    vert = np.frombuffer(data, dtype=vdt, count=nv, offset=end)
    face = np.frombuffer(data, dtype=fdt, count=nf, offset=end + nv * vdt.itemsize)
    v = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
    n = np.stack([vert["nx"], vert["ny"], vert["nz"]], axis=1).astype(np.float64)
    c = np.stack([vert["red"], vert["green"], vert["blue"]], axis=1)
    return v, face["i"].astype(np.int64), n, c


# ---------------------------------------------------------------------------
# Map container
#
# header : magic "TSDF++\0", u32 version, f64 voxel_size, u32 block side,
#          f64 truncation, u8 mode (0 tsdfpp, 1 standard), i64 next id
# global : u32 block count, then per block i32[3] index + 4 fields
#          (i32 active, i32 active conf, i32 inactive, i32 inactive conf)
# objects: u32 object count, then per object i64 id, u8 semantic flag,
#          u32 block count, per block i32[3] index + f64 distance + f64 weight
# All little-endian.


def _write_grid(f: BinaryIO, grid, fields: list[tuple[str, str]]) -> None:
    blocks = grid.block_indices().astype("<i4")
    bv = grid.block_volume
    f.write(struct.pack("<I", len(blocks)))
    arrays = [grid.field(name).astype(dt) for name, dt in fields]
    for s, b in enumerate(blocks):
        f.write(b.tobytes())
        for a in arrays:
            f.write(a[s * bv : (s + 1) * bv].tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError("unexpected end of map file")
    return b


def _read_grid(f: BinaryIO, grid, fields: list[tuple[str, str]]) -> None:
    (nb,) = struct.unpack("<I", _read_exact(f, 4))
    bv = grid.block_volume
    blocks = np.empty((nb, 3), dtype=np.int64)
    values: dict[str, list[np.ndarray]] = {name: [] for name, _ in fields}
    for k in range(nb):
        blocks[k] = np.frombuffer(_read_exact(f, 12), dtype="<i4")
        for name, dt in fields:
            size = np.dtype(dt).itemsize * bv
            values[name].append(np.frombuffer(_read_exact(f, size), dtype=dt))
    if len(np.unique(blocks, axis=0)) != nb:
        raise FormatError("duplicate block in map file")
    slots = grid.allocate_blocks(blocks)
    for name, chunks in values.items():
        dest = grid.field(name)
        for slot, vals in zip(slots, chunks):
            dest[slot * bv : (slot + 1) * bv] = vals


_GLOBAL_IO = [(name, "<i4") for name in GLOBAL_FIELDS]
_TSDF_IO = [("distance", "<f8"), ("weight", "<f8")]


def save_map(gmap: GlobalMap, path: str | Path) -> None:
    p = gmap.params
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(struct.pack("<I", MAP_VERSION))
        f.write(struct.pack("<dId", p.voxel_size, p.voxels_per_block_side, p.truncation_distance))
        f.write(struct.pack("<Bq", 0 if gmap.mode is MapMode.TSDF_PLUS_PLUS else 1, gmap._next_id))
        _write_grid(f, gmap.global_volume, _GLOBAL_IO)
        f.write(struct.pack("<I", len(gmap.object_volumes)))
        for oid in sorted(gmap.object_volumes):
            f.write(struct.pack("<qB", oid, int(gmap.objects[oid].is_semantic_object)))
            _write_grid(f, gmap.object_volumes[oid].grid, _TSDF_IO)


def load_map(path: str | Path) -> GlobalMap:
    with open(path, "rb") as f:
        if _read_exact(f, len(MAP_MAGIC)) != MAP_MAGIC:
            raise FormatError(f"{path}: bad magic, not a map file")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != MAP_VERSION:
            raise FormatError(f"{path}: unsupported map format version {version}")
        vs, bs, tr = struct.unpack("<dId", _read_exact(f, 20))
        mode, next_id = struct.unpack("<Bq", _read_exact(f, 9))
        gmap = GlobalMap(
            GridParams(vs, bs, tr), MapMode.TSDF_PLUS_PLUS if mode == 0 else MapMode.STANDARD_TSDF
        )
        _read_grid(f, gmap.global_volume, _GLOBAL_IO)
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        for _ in range(count):
            oid, sem = struct.unpack("<qB", _read_exact(f, 9))
            vol = ObjectVolume(oid, gmap.params)
            _read_grid(f, vol.grid, _TSDF_IO)
            gmap.object_volumes[oid] = vol
            gmap.objects[oid] = ObjectInfo(oid, bool(sem))
        gmap._next_id = next_id
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after map payload")
    return gmap
