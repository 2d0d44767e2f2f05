"""Non-destructive views of the map with some objects hidden."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from ..voxel_core import EMPTY, GlobalMap, ObjectVolume
from .meshing import Mesh, extract_mesh


class MapView:
    """The map as it looks with ``removed`` objects taken out.

    Where a removed object is active, the inactive occupant (if any, and not
    itself removed) becomes visible instead. The underlying map is never
    modified.
    """

    def __init__(self, gmap: GlobalMap, removed: Iterable[int] = ()) -> None:
        self.map = gmap
        self.removed = frozenset(int(i) for i in removed)

    @property
    def params(self):
        return self.map.params

    def without(self, object_id: int) -> "MapView":
        if object_id not in self.map.object_volumes:
            raise ValueError(f"unknown object id {object_id}")
        return MapView(self.map, self.removed | {object_id})

    def _visible(self, active: np.ndarray, inactive: np.ndarray) -> np.ndarray:
        if not self.removed:
            return active
        rem = np.array(sorted(self.removed))
        a_gone = np.isin(active, rem)
        i_ok = ~np.isin(inactive, rem)
        return np.where(a_gone, np.where(i_ok, inactive, EMPTY), active)

    def active_ids(self, g: np.ndarray) -> np.ndarray:
        """Visible object id at grid coordinates (EMPTY where none)."""
        gv = self.map.global_volume
        idx = gv.find(g)
        ok = idx >= 0
        out = np.full(len(idx), EMPTY, dtype=np.int32)
        a = gv.field("active_id")[idx[ok]]
        i = gv.field("inactive_id")[idx[ok]]
        out[ok] = self._visible(a, i)
        return out

    def visible_ids(self) -> list[int]:
        return sorted(set(self.map.object_volumes) - self.removed)

    def volume(self, object_id: int) -> ObjectVolume:
        return self.map.volume(object_id)

    def visible_volume(self, object_id: int) -> ObjectVolume:
        """Copy of an object's volume keeping only voxels where it is visible."""
        vol = self.map.volume(object_id).copy()
        coords = vol.grid.voxel_coords()
        keep = self.active_ids(coords) == object_id
        vol.weight[~keep] = 0.0
        vol.distance[~keep] = 0.0
        return vol

    def mesh(self, object_id: int) -> Mesh:
        return extract_mesh(self.visible_volume(object_id))

    def meshes(self) -> dict[int, Mesh]:
        return {oid: self.mesh(oid) for oid in self.visible_ids()}


def simulate_removal(gmap: GlobalMap | MapView, object_id: int) -> MapView:
    """View of the map with ``object_id`` taken out, revealing what it occludes."""
    view = gmap if isinstance(gmap, MapView) else MapView(gmap)
    return view.without(object_id)
