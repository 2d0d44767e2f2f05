"""Zero-isosurface extraction from sparse object volumes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from skimage.measure import marching_cubes

from ..voxel_core import ObjectVolume


@dataclass
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    def euler_characteristic(self) -> int:
        f = self.faces
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        return len(self.vertices) - n_edges + len(f)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident triangle normals, normalized."""
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    fn = np.cross(v1 - v0, v2 - v0)  # length = 2 * area
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, faces[:, k], fn)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)


def extract_mesh(volume: ObjectVolume) -> Mesh:
    """Marching cubes over the observed part of ``volume``.

    Cells with any unobserved corner are skipped. Vertices sit on linearly
    interpolated edge crossings; faces are wound so normals point toward
    positive distance (out of the surface).
    """
    coords, dist, _ = volume.observed()
    if len(coords) < 8 or dist.min() > 0 or dist.max() < 0:
        return Mesh.empty()
    lo = coords.min(axis=0)
    shape = coords.max(axis=0) - lo + 1
    if np.any(shape < 2):
        return Mesh.empty()
    local = coords - lo
    field = np.ones(shape, dtype=np.float64)
    seen = np.zeros(shape, dtype=bool)
    field[tuple(local.T)] = dist
    seen[tuple(local.T)] = True
    cells = (
        seen[:-1, :-1, :-1] & seen[1:, :-1, :-1] & seen[:-1, 1:, :-1] & seen[:-1, :-1, 1:]
        & seen[1:, 1:, :-1] & seen[1:, :-1, 1:] & seen[:-1, 1:, 1:] & seen[1:, 1:, 1:]
    )
    if not cells.any():
        return Mesh.empty()
    # skimage gates each cell by the mask value at its upper corner
    mask = np.zeros(shape, dtype=bool)
    mask[1:, 1:, 1:] = cells
    try:
        verts, faces, _, _ = marching_cubes(field, level=0.0, mask=mask, allow_degenerate=False)
    except RuntimeError:
        return Mesh.empty()
    vs = volume.params.voxel_size
    vertices = (verts.astype(np.float64) + lo + 0.5) * vs
    faces = faces.astype(np.int64)
    normals = vertex_normals(vertices, faces)
    # orient by probing the field a little way along the normals
    eps = 0.1 * normals
    rise = map_coordinates(field, (verts + eps).T, order=1) - map_coordinates(field, (verts - eps).T, order=1)
    if rise.sum() < 0:
        faces = faces[:, ::-1].copy()
        normals = -normals
    return Mesh(vertices, faces, normals)


def merge_meshes(meshes: list[Mesh]) -> tuple[Mesh, np.ndarray]:
    """Concatenate meshes; returns the merged mesh and each vertex's source index."""
    verts, faces, normals, owner = [], [], [], []
    offset = 0
    for k, m in enumerate(meshes):
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        normals.append(m.normals)
        owner.append(np.full(len(m.vertices), k))
        offset += len(m.vertices)
    if not verts:
        return Mesh.empty(), np.zeros(0, dtype=np.int64)
    return (
        Mesh(np.concatenate(verts), np.concatenate(faces), np.concatenate(normals)),
        np.concatenate(owner),
    )
