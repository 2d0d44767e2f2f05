"""Sparse voxel-hashed storage: block pools, per-object TSDF volumes and the
layered global map volume."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

EMPTY = -1
BACKGROUND_ID = 0

_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


class AllocationError(MemoryError):
    """Raised when a block pool would grow past its configured limit."""


class MapMode(str, enum.Enum):
    TSDF_PLUS_PLUS = "tsdfpp"
    STANDARD_TSDF = "standard"

    @property
    def max_layers(self) -> int:
        return 2 if self is MapMode.TSDF_PLUS_PLUS else 1


@dataclass(frozen=True)
class GridParams:
    voxel_size: float = 0.01
    voxels_per_block_side: int = 16
    truncation_distance: float = 0.1

    def __post_init__(self) -> None:
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        if not self.truncation_distance > 0:
            raise ValueError(
                f"truncation_distance must be positive, got {self.truncation_distance}"
            )
        if int(self.voxels_per_block_side) < 1:
            raise ValueError("voxels_per_block_side must be >= 1")

    @classmethod
    def from_multiplier(
        cls, voxel_size: float = 0.01, truncation_mult: float = 10.0, block_side: int = 16
    ) -> "GridParams":
        return cls(voxel_size, block_side, truncation_mult * voxel_size)

    @property
    def block_size(self) -> float:
        return self.voxel_size * self.voxels_per_block_side


def world_to_grid(p, params: GridParams) -> tuple[np.ndarray, np.ndarray]:
    """Floor-bin points (..., 3) to integer grid coordinates and block indices."""
    p = np.asarray(p, dtype=np.float64)
    g = np.floor(p / params.voxel_size).astype(np.int64)
    return g, np.floor_divide(g, params.voxels_per_block_side)


def grid_to_world(g, params: GridParams) -> np.ndarray:
    """Voxel-center position of integer grid coordinates."""
    return (np.asarray(g, dtype=np.float64) + 0.5) * params.voxel_size


def pack_block_keys(blocks: np.ndarray) -> np.ndarray:
    b = np.asarray(blocks, dtype=np.int64).reshape(-1, 3)
    if b.size and (b.min() < -_KEY_OFFSET or b.max() > _KEY_MASK - _KEY_OFFSET):
        raise ValueError("block index out of addressable range")
    return ((b[:, 0] + _KEY_OFFSET) << (2 * _KEY_BITS)) | ((b[:, 1] + _KEY_OFFSET) << _KEY_BITS) | (
        b[:, 2] + _KEY_OFFSET
    )


def unpack_block_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.stack(
        [(keys >> (2 * _KEY_BITS)) & _KEY_MASK, (keys >> _KEY_BITS) & _KEY_MASK, keys & _KEY_MASK],
        axis=-1,
    )
    return out - _KEY_OFFSET


class BlockGrid:
    """Pool of fixed-size voxel blocks addressed by hashed block index.

    Every field lives in one flat array; voxel ``g`` of an allocated block is
    stored at ``slot * B**3 + (lx * B + ly) * B + lz``. Slots are handed out
    in allocation order, so iteration order is deterministic.
    """

    def __init__(
        self,
        block_side: int,
        fields: dict[str, tuple[np.dtype | type, float]],
        max_blocks: int | None = None,
    ) -> None:
        self.block_side = int(block_side)
        self.block_volume = self.block_side**3
        # power-of-two blocks split coordinates with shifts and masks
        bs = self.block_side
        self._shift = bs.bit_length() - 1 if bs & (bs - 1) == 0 else None
        self.max_blocks = max_blocks
        self._fields = {name: (np.dtype(dt), fill) for name, (dt, fill) in fields.items()}
        self._capacity = 0
        self._data: dict[str, np.ndarray] = {
            name: np.empty(0, dtype=dt) for name, (dt, _) in self._fields.items()
        }
        self._keys = np.empty(0, dtype=np.int64)
        self._slot_of: dict[int, int] = {}
        self._sorted: tuple[np.ndarray, np.ndarray] | None = None

    # Internal utilities -------------------------------------------------
    def _grow(self, needed: int) -> None:
        if self.max_blocks is not None and needed > self.max_blocks:
            raise AllocationError(
                f"block pool limit of {self.max_blocks} blocks exceeded ({needed} requested)"
            )
        if needed <= self._capacity:
            return
        cap = max(needed, 2 * self._capacity, 8)
        if self.max_blocks is not None:
            cap = min(cap, self.max_blocks)
        for name, (dt, fill) in self._fields.items():
            fresh = np.full(cap * self.block_volume, fill, dtype=dt)
            old = self._data[name]
            fresh[: old.size] = old
            self._data[name] = fresh
        keys = np.zeros(cap, dtype=np.int64)
        keys[: self.num_blocks] = self._keys[: self.num_blocks]
        self._keys = keys
        self._capacity = cap

    def _sorted_index(self) -> tuple[np.ndarray, np.ndarray]:
        if self._sorted is None:
            keys = self._keys[: self.num_blocks]
            order = np.argsort(keys, kind="stable")
            self._sorted = (keys[order], order.astype(np.int64))
        return self._sorted

    def split(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Block index and in-block linear offset of grid coordinates."""
        g = np.asarray(g, dtype=np.int64).reshape(-1, 3)
        B = self.block_side
        if self._shift is not None:
            b = g >> self._shift
            local = g & (B - 1)
        else:
            b = np.floor_divide(g, B)
            local = g - b * B
        lin = (local[:, 0] * B + local[:, 1]) * B + local[:, 2]
        return b, lin

    # API ----------------------------------------------------------------
    @property
    def num_blocks(self) -> int:
        return len(self._slot_of)

    def __len__(self) -> int:
        return self.num_blocks

    def field(self, name: str) -> np.ndarray:
        """Flat view over all allocated voxels of one field."""
        return self._data[name][: self.num_blocks * self.block_volume]

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(self._fields)

    def block_indices(self) -> np.ndarray:
        return unpack_block_keys(self._keys[: self.num_blocks]).reshape(-1, 3)

    def has_block(self, block_index: Iterable[int]) -> bool:
        return int(pack_block_keys(np.asarray(block_index))[0]) in self._slot_of

    def allocate_blocks(self, blocks: np.ndarray) -> np.ndarray:
        """Allocate (if needed) the given block indices; returns their slots."""
        keys = pack_block_keys(blocks)
        if keys.size == 0:
            return np.empty(0, dtype=np.int64)
        # new blocks take slots in order of first appearance
        uniq, first = np.unique(keys, return_index=True)
        uniq = uniq[np.argsort(first, kind="stable")]
        new = [int(k) for k in uniq if int(k) not in self._slot_of]
        if new:
            start = self.num_blocks
            self._grow(start + len(new))
            for i, k in enumerate(new):
                self._slot_of[k] = start + i
                self._keys[start + i] = k
            self._sorted = None
        return self._lookup_slots(keys)

    def _lookup_slots(self, keys: np.ndarray) -> np.ndarray:
        if self.num_blocks == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        sk, ss = self._sorted_index()
        pos = np.clip(np.searchsorted(sk, keys), 0, sk.size - 1)
        return np.where(sk[pos] == keys, ss[pos], -1)

    def find(self, g) -> np.ndarray:
        """Flat storage index of each grid coordinate, -1 where unallocated."""
        b, lin = self.split(g)
        slots = self._lookup_slots(pack_block_keys(b))
        return np.where(slots >= 0, slots * self.block_volume + lin, -1)

    def get_or_allocate(self, g) -> np.ndarray:
        b, lin = self.split(g)
        slots = self.allocate_blocks(b)
        return slots * self.block_volume + lin

    def voxel_coords(self) -> np.ndarray:
        """Grid coordinates of every allocated voxel, in flat storage order."""
        B = self.block_side
        r = np.arange(B)
        local = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        blocks = self.block_indices()
        return (blocks[:, None, :] * B + local[None, :, :]).reshape(-1, 3)

    def block_coords(self, blocks: np.ndarray) -> np.ndarray:
        B = self.block_side
        r = np.arange(B)
        local = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        blocks = np.asarray(blocks, dtype=np.int64).reshape(-1, 3)
        return (blocks[:, None, :] * B + local[None, :, :]).reshape(-1, 3)

    def copy(self) -> "BlockGrid":
        out = BlockGrid(self.block_side, dict(self._fields), self.max_blocks)
        out._capacity = self._capacity
        out._data = {k: v.copy() for k, v in self._data.items()}
        out._keys = self._keys.copy()
        out._slot_of = dict(self._slot_of)
        return out


# ---------------------------------------------------------------------------
# Per-object TSDF volumes


@dataclass(frozen=True)
class TsdfVoxel:
    distance: float
    weight: float

    @property
    def observed(self) -> bool:
        return self.weight > 0


TSDF_FIELDS = {"distance": (np.float64, 0.0), "weight": (np.float64, 0.0)}


class ObjectVolume:
    """Sparse TSDF of one object, stored in the global frame at map resolution."""

    def __init__(self, object_id: int, params: GridParams, max_blocks: int | None = None) -> None:
        self.object_id = int(object_id)
        self.params = params
        self.grid = BlockGrid(params.voxels_per_block_side, TSDF_FIELDS, max_blocks)

    @property
    def distance(self) -> np.ndarray:
        return self.grid.field("distance")

    @property
    def weight(self) -> np.ndarray:
        return self.grid.field("weight")

    def voxel(self, g) -> TsdfVoxel:
        idx = int(self.grid.find(np.asarray(g).reshape(1, 3))[0])
        if idx < 0:
            return TsdfVoxel(0.0, 0.0)
        return TsdfVoxel(float(self.distance[idx]), float(self.weight[idx]))

    def set_voxels(self, g, distance, weight) -> None:
        idx = self.grid.get_or_allocate(g)
        self.distance[idx] = distance
        self.weight[idx] = weight

    def lookup(self, g) -> tuple[np.ndarray, np.ndarray]:
        """Distance and weight at grid coordinates; unallocated voxels read (0, 0)."""
        idx = self.grid.find(g)
        ok = idx >= 0
        d = np.zeros(idx.shape, dtype=np.float64)
        w = np.zeros(idx.shape, dtype=np.float64)
        d[ok] = self.distance[idx[ok]]
        w[ok] = self.weight[idx[ok]]
        return d, w

    def observed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Grid coordinates, distances and weights of every voxel with weight > 0."""
        w = self.weight
        sel = np.flatnonzero(w > 0)
        coords = self.grid.voxel_coords()[sel]
        return coords, self.distance[sel].copy(), w[sel].copy()

    def clear(self, g) -> None:
        idx = self.grid.find(g)
        idx = idx[idx >= 0]
        self.distance[idx] = 0.0
        self.weight[idx] = 0.0

    def copy(self) -> "ObjectVolume":
        out = ObjectVolume.__new__(ObjectVolume)
        out.object_id = self.object_id
        out.params = self.params
        out.grid = self.grid.copy()
        return out

    def __repr__(self) -> str:
        return f"ObjectVolume(id={self.object_id}, blocks={self.grid.num_blocks})"


# ---------------------------------------------------------------------------
# Layered global voxel record


class SlotDecision(str, enum.Enum):
    ALREADY_ACTIVE = "already_active"
    ALREADY_INACTIVE = "already_inactive"
    ACTIVATED_FROM_INACTIVE = "activated_from_inactive"
    PLACED_IN_FREE_SLOT = "placed_in_free_slot"
    EVICTED_INACTIVE = "evicted_inactive"
    REJECTED = "rejected"


class LayerChange(NamedTuple):
    decision: SlotDecision
    dropped: int = EMPTY


@dataclass
class MultiObjectVoxel:
    """Active/inactive object references of one global voxel (EMPTY = free slot)."""

    active: int = EMPTY
    active_conf: int = 0
    inactive: int = EMPTY
    inactive_conf: int = 0

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(i for i in (self.active, self.inactive) if i != EMPTY)

    def check(self) -> None:
        assert self.active == EMPTY or self.active_conf >= 1
        assert self.inactive == EMPTY or self.inactive_conf >= 1
        assert self.inactive == EMPTY or self.active != EMPTY
        assert self.active == EMPTY or self.active != self.inactive


def _incumbent_loses(
    challenger: int, challenger_conf: int, incumbent: int, incumbent_conf: int, protected
) -> bool:
    if incumbent in protected:
        return False
    if challenger in protected:
        return True
    return incumbent_conf <= challenger_conf


def assign_layer(
    voxel: MultiObjectVoxel,
    object_id: int,
    *,
    activate: bool = False,
    max_layers: int = 2,
    protected: Iterable[int] = (),
) -> LayerChange:
    """Make room for ``object_id`` at one voxel, mutating ``voxel`` in place.

    Without ``activate`` a newcomer takes the active slot of an empty voxel,
    otherwise the inactive slot, contesting an occupied inactive slot with
    confidence 1. With ``activate`` the object always ends up active with
    confidence 1 and the incumbent is demoted, contesting the inactive slot
    with its current confidence. Ids in ``protected`` are never evicted by a
    contest; single-layer maps (``max_layers == 1``) overwrite regardless.
    """
    protected = frozenset(protected)
    if voxel.active == object_id:
        if activate:
            voxel.active_conf = 1
        return LayerChange(SlotDecision.ALREADY_ACTIVE)
    if voxel.inactive == object_id:
        if not activate:
            return LayerChange(SlotDecision.ALREADY_INACTIVE)
        voxel.inactive, voxel.inactive_conf = voxel.active, voxel.active_conf
        voxel.active, voxel.active_conf = object_id, 1
        return LayerChange(SlotDecision.ACTIVATED_FROM_INACTIVE)
    if voxel.active == EMPTY:
        voxel.active, voxel.active_conf = object_id, 1
        return LayerChange(SlotDecision.PLACED_IN_FREE_SLOT)

    if not activate:
        if max_layers < 2:
            return LayerChange(SlotDecision.REJECTED)
        if voxel.inactive == EMPTY:
            voxel.inactive, voxel.inactive_conf = object_id, 1
            return LayerChange(SlotDecision.PLACED_IN_FREE_SLOT)
        if _incumbent_loses(object_id, 1, voxel.inactive, voxel.inactive_conf, protected):
            dropped = voxel.inactive
            voxel.inactive, voxel.inactive_conf = object_id, 1
            return LayerChange(SlotDecision.EVICTED_INACTIVE, dropped)
        return LayerChange(SlotDecision.REJECTED)

    demoted, demoted_conf = voxel.active, voxel.active_conf
    voxel.active, voxel.active_conf = object_id, 1
    if max_layers < 2:
        return LayerChange(SlotDecision.EVICTED_INACTIVE, demoted)
    if voxel.inactive == EMPTY:
        voxel.inactive, voxel.inactive_conf = demoted, demoted_conf
        return LayerChange(SlotDecision.PLACED_IN_FREE_SLOT)
    if _incumbent_loses(demoted, demoted_conf, voxel.inactive, voxel.inactive_conf, protected):
        dropped = voxel.inactive
        voxel.inactive, voxel.inactive_conf = demoted, demoted_conf
        return LayerChange(SlotDecision.EVICTED_INACTIVE, dropped)
    return LayerChange(SlotDecision.EVICTED_INACTIVE, demoted)


@dataclass
class LayerArrays:
    """Column view of many MultiObjectVoxel records (used by vectorized updates)."""

    active: np.ndarray
    active_conf: np.ndarray
    inactive: np.ndarray
    inactive_conf: np.ndarray

    def copy(self) -> "LayerArrays":
        return LayerArrays(
            self.active.copy(), self.active_conf.copy(), self.inactive.copy(), self.inactive_conf.copy()
        )

    def record(self, i: int) -> MultiObjectVoxel:
        return MultiObjectVoxel(
            int(self.active[i]), int(self.active_conf[i]), int(self.inactive[i]), int(self.inactive_conf[i])
        )


def activate_layers(
    layers: LayerArrays, object_ids: np.ndarray, max_layers: int, background_protected: np.ndarray
) -> np.ndarray:
    """Vectorized ``assign_layer(..., activate=True)``; mutates ``layers``.

    ``background_protected`` marks voxels where the background id may not be
    evicted. Returns the dropped id per voxel (EMPTY where nothing was lost).
    """
    a, ac, i, ic = layers.active, layers.active_conf, layers.inactive, layers.inactive_conf
    oid = np.asarray(object_ids, dtype=a.dtype)
    dropped = np.full(a.shape, EMPTY, dtype=a.dtype)

    is_active = a == oid
    is_inactive = (i == oid) & ~is_active
    empty = (a == EMPTY) & ~is_active & ~is_inactive
    other = ~(is_active | is_inactive | empty)

    # swap with inactive
    i[is_inactive], ic[is_inactive] = a[is_inactive], ac[is_inactive]

    dem, dem_c = a[other].copy(), ac[other].copy()
    inc, inc_c = i[other].copy(), ic[other].copy()
    prot = background_protected[other]
    if max_layers < 2:
        new_i, new_ic = inc, inc_c
        lost = dem
    else:
        free = inc == EMPTY
        inc_prot = prot & (inc == BACKGROUND_ID)
        dem_prot = prot & (dem == BACKGROUND_ID)
        inc_loses = ~inc_prot & (dem_prot | (inc_c <= dem_c))
        take = free | inc_loses
        new_i = np.where(take, dem, inc)
        new_ic = np.where(take, dem_c, inc_c)
        lost = np.where(free, EMPTY, np.where(inc_loses, inc, dem))
    i[other], ic[other] = new_i, new_ic
    dropped[other] = lost

    a[:] = oid
    ac[:] = 1
    return dropped


# ---------------------------------------------------------------------------
# Global map

GLOBAL_FIELDS = {
    "active_id": (np.int32, EMPTY),
    "active_conf": (np.int32, 0),
    "inactive_id": (np.int32, EMPTY),
    "inactive_conf": (np.int32, 0),
}


class VoxelRef:
    """Reference to one voxel of the global volume; reads and writes go to the map."""

    __slots__ = ("_grid", "index")

    def __init__(self, grid: BlockGrid, index: int) -> None:
        self._grid = grid
        self.index = int(index)

    def _get(self, name: str) -> int:
        return int(self._grid.field(name)[self.index])

    @property
    def active(self) -> int:
        return self._get("active_id")

    @property
    def active_conf(self) -> int:
        return self._get("active_conf")

    @property
    def inactive(self) -> int:
        return self._get("inactive_id")

    @property
    def inactive_conf(self) -> int:
        return self._get("inactive_conf")

    def load(self) -> MultiObjectVoxel:
        return MultiObjectVoxel(self.active, self.active_conf, self.inactive, self.inactive_conf)

    def store(self, voxel: MultiObjectVoxel) -> None:
        for name, value in zip(
            ("active_id", "active_conf", "inactive_id", "inactive_conf"),
            (voxel.active, voxel.active_conf, voxel.inactive, voxel.inactive_conf),
        ):
            self._grid.field(name)[self.index] = value

    def __eq__(self, other: object) -> bool:
        return isinstance(other, VoxelRef) and other._grid is self._grid and other.index == self.index

    def __hash__(self) -> int:
        return hash((id(self._grid), self.index))

    def __repr__(self) -> str:
        return f"VoxelRef({self.load()})"


@dataclass
class ObjectInfo:
    object_id: int
    is_semantic_object: bool = False


@dataclass
class GlobalMap:
    """Scene container: layered global volume plus one TSDF volume per object."""

    params: GridParams = field(default_factory=GridParams)
    mode: MapMode = MapMode.TSDF_PLUS_PLUS
    max_blocks: int | None = None

    def __post_init__(self) -> None:
        self.mode = MapMode(self.mode)
        self.global_volume = BlockGrid(
            self.params.voxels_per_block_side, GLOBAL_FIELDS, self.max_blocks
        )
        self.object_volumes: dict[int, ObjectVolume] = {}
        self.objects: dict[int, ObjectInfo] = {}
        self._next_id = BACKGROUND_ID + 1

    @property
    def max_layers(self) -> int:
        return self.mode.max_layers

    def ensure_background(self) -> ObjectVolume:
        if BACKGROUND_ID not in self.object_volumes:
            self._add_object(BACKGROUND_ID, False)
        return self.object_volumes[BACKGROUND_ID]

    def _add_object(self, object_id: int, is_semantic: bool) -> ObjectVolume:
        vol = ObjectVolume(object_id, self.params, self.max_blocks)
        self.object_volumes[object_id] = vol
        self.objects[object_id] = ObjectInfo(object_id, is_semantic)
        return vol

    def new_object(self, is_semantic_object: bool = False) -> int:
        """Allocate a fresh ObjectId; ids are never reused."""
        oid = self._next_id
        self._next_id += 1
        self._add_object(oid, is_semantic_object)
        return oid

    def volume(self, object_id: int) -> ObjectVolume:
        try:
            return self.object_volumes[object_id]
        except KeyError:
            raise KeyError(f"unknown object id {object_id}") from None

    def get_or_allocate_voxel(self, g) -> VoxelRef:
        idx = self.global_volume.get_or_allocate(np.asarray(g).reshape(1, 3))
        return VoxelRef(self.global_volume, int(idx[0]))

    def layers_at(self, idx: np.ndarray) -> LayerArrays:
        gv = self.global_volume
        return LayerArrays(
            gv.field("active_id")[idx].copy(),
            gv.field("active_conf")[idx].copy(),
            gv.field("inactive_id")[idx].copy(),
            gv.field("inactive_conf")[idx].copy(),
        )

    def store_layers(self, idx: np.ndarray, layers: LayerArrays) -> None:
        gv = self.global_volume
        gv.field("active_id")[idx] = layers.active
        gv.field("active_conf")[idx] = layers.active_conf
        gv.field("inactive_id")[idx] = layers.inactive
        gv.field("inactive_conf")[idx] = layers.inactive_conf

    def background_weight(self, g: np.ndarray) -> np.ndarray:
        vol = self.object_volumes.get(BACKGROUND_ID)
        if vol is None:
            return np.zeros(len(g))
        return vol.lookup(g)[1]

    def drop_surfaces(self, g: np.ndarray, dropped: np.ndarray) -> None:
        """Erase TSDF voxels of objects that lost their slot at ``g``."""
        sel = dropped != EMPTY
        if not sel.any():
            return
        g, dropped = g[sel], dropped[sel]
        for oid in np.unique(dropped):
            self.volume(int(oid)).clear(g[dropped == oid])

    def referenced_ids(self) -> set[int]:
        gv = self.global_volume
        ids = np.union1d(gv.field("active_id"), gv.field("inactive_id"))
        return {int(i) for i in ids if i != EMPTY}

    def copy(self) -> "GlobalMap":
        out = GlobalMap.__new__(GlobalMap)
        out.params, out.mode, out.max_blocks = self.params, self.mode, self.max_blocks
        out.global_volume = self.global_volume.copy()
        out.object_volumes = {k: v.copy() for k, v in self.object_volumes.items()}
        out.objects = {k: ObjectInfo(v.object_id, v.is_semantic_object) for k, v in self.objects.items()}
        out._next_id = self._next_id
        return out

    def check_invariants(self) -> None:
        """Assert the structural invariants of the layered map (used by tests)."""
        gv = self.global_volume
        a, ac = gv.field("active_id"), gv.field("active_conf")
        i, ic = gv.field("inactive_id"), gv.field("inactive_conf")
        assert np.all((a == EMPTY) | (ac >= 1)), "occupied active slot with confidence < 1"
        assert np.all((i == EMPTY) | (ic >= 1)), "occupied inactive slot with confidence < 1"
        assert np.all((i == EMPTY) | (a != EMPTY)), "inactive occupant without active"
        assert np.all((a == EMPTY) | (a != i)), "same object in both slots"
        if self.max_layers < 2:
            assert np.all(i == EMPTY), "single-layer map holds an inactive slot"
        missing = self.referenced_ids() - set(self.object_volumes)
        assert not missing, f"referenced ids without volume: {sorted(missing)}"
        for oid, vol in self.object_volumes.items():
            coords, _, _ = vol.observed()
            if not len(coords):
                continue
            idx = gv.find(coords)
            assert np.all(idx >= 0), f"object {oid} stores voxels outside the global volume"
            held = (a[idx] == oid) | (i[idx] == oid)
            assert np.all(held), f"object {oid} stores surfaces not indexed by the global volume"
