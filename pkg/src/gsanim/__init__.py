"""gsanim: desk-scale Gaussian avatar engine.

Canonical template construction from a posed scan, LBS-driven re-posing,
multi-view CPU splat rendering, a small learnable refinement stage, and the
matching evaluation metrics. Heavy kernels run through gsanim.backend,
which picks the compiled extension or the numpy fallback at first use.
"""

__version__ = "0.1.0"

from .avatar import GaussianSet, animate, build_template, canonicalize_scan, densify, prune
from .body import BodyModel, Pose, Shape, Skeleton
from .errors import AssetError, GsanimError, InvariantError, NumericError
from .mesh import Mesh
from .render import Camera, four_view_rig, rasterize, rasterize_mesh_geometry
from .skinning import SkinningWeights, bind_scan_to_model, dqs_deform, lbs_deform

__all__ = [
    "__version__",
    "GaussianSet", "animate", "build_template", "canonicalize_scan", "densify", "prune",
    "BodyModel", "Pose", "Shape", "Skeleton",
    "AssetError", "GsanimError", "InvariantError", "NumericError",
    "Mesh",
    "Camera", "four_view_rig", "rasterize", "rasterize_mesh_geometry",
    "SkinningWeights", "bind_scan_to_model", "dqs_deform", "lbs_deform",
]
