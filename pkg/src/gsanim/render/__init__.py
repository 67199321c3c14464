from .camera import Camera, four_view_rig
from .meshraster import rasterize_mesh_geometry
from .project import project_gaussian, project_gaussians
from .rasterize import (
    RenderOutput,
    normal_map_from_depth,
    rasterize,
    rasterize_backward,
)

__all__ = [
    "Camera",
    "four_view_rig",
    "project_gaussian",
    "project_gaussians",
    "rasterize",
    "rasterize_backward",
    "rasterize_mesh_geometry",
    "normal_map_from_depth",
    "RenderOutput",
]
