"""Multi-object volumetric mapping where each voxel holds an active and an
inactive object layer, so surfaces survive being occluded by moving objects."""
from .geometry import PinholeCamera, RigidTransform
from .voxel_core import (
    BACKGROUND_ID,
    EMPTY,
    GlobalMap,
    GridParams,
    MapMode,
    MultiObjectVoxel,
    ObjectVolume,
)

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND_ID",
    "EMPTY",
    "GlobalMap",
    "GridParams",
    "MapMode",
    "MultiObjectVoxel",
    "ObjectVolume",
    "PinholeCamera",
    "RigidTransform",
]
