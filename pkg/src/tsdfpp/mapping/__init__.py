"""TSDF fusion, object pose update, raycasting and meshing on the layered map."""
from ..voxel_core import MapMode
from .integration import (
    IntegrationConfig,
    IntegrationStats,
    integrate_frame,
    update_confidence,
    update_confidence_layers,
)
from .meshing import Mesh, extract_mesh, merge_meshes, vertex_normals
from .raycast import RaycastHit, RaycastImage, raycast
from .transport import deactivate_object, transport_volume, update_object_pose
from .view import MapView, simulate_removal

__all__ = [
    "IntegrationConfig",
    "IntegrationStats",
    "MapMode",
    "MapView",
    "Mesh",
    "RaycastHit",
    "RaycastImage",
    "deactivate_object",
    "extract_mesh",
    "integrate_frame",
    "merge_meshes",
    "raycast",
    "simulate_removal",
    "transport_volume",
    "update_confidence",
    "update_confidence_layers",
    "update_object_pose",
    "vertex_normals",
]
