"""Z-buffered triangle rasterization of mesh normals and silhouette.

Supplies the target-body renderings consumed by the refinement encoder.
Normals are interpolated perspective-correct in camera space and encoded
viewer-facing: n_enc = ((n_x, -n_y, -n_z) + 1) / 2, so a camera-facing
surface reads (0.5, 0.5, 1.0). Uncovered pixels encode the zero normal.

Triangles with any vertex behind the near plane are skipped (no clipping);
rig cameras keep their subject inside the frustum.
"""

import numpy as np

from ..errors import InvariantError
from ..mesh import Mesh


def rasterize_mesh_geometry(mesh, cam):
    """Returns (normal_map (H,W,3) f32 encoded, silhouette (H,W) f32)."""
    if not isinstance(mesh, Mesh):
        raise InvariantError("rasterize_mesh_geometry expects a Mesh")
    h, w = cam.height, cam.width
    normal_map = np.full((h, w, 3), 0.5, dtype=np.float64)
    silhouette = np.zeros((h, w), dtype=np.float64)
    if len(mesh.faces) == 0:
        return normal_map.astype(np.float32), silhouette.astype(np.float32)

    uvpix, z = cam.project(mesh.vertices)
    n_cam = mesh.vertex_normals @ cam.rotation.T
    zbuf = np.full((h, w), np.inf)
    inv_z = 1.0 / np.where(z > cam.near, z, 1.0)

    for face in mesh.faces:
        fz = z[face]
        if np.any(fz <= cam.near):
            continue
        tri = uvpix[face]
        lo = np.floor(tri.min(axis=0) - 0.5).astype(int)
        hi = np.ceil(tri.max(axis=0) - 0.5).astype(int) + 1
        x0, y0 = np.maximum(lo, 0)
        x1 = min(hi[0], w)
        y1 = min(hi[1], h)
        if x1 <= x0 or y1 <= y0:
            continue
        e1 = tri[1] - tri[0]
        e2 = tri[2] - tri[0]
        det = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(det) < 1e-12:
            continue
        xs = np.arange(x0, x1) + 0.5
        ys = np.arange(y0, y1) + 0.5
        px, py = np.meshgrid(xs, ys)
        dx = px - tri[0, 0]
        dy = py - tri[0, 1]
        b1 = (dx * e2[1] - dy * e2[0]) / det
        b2 = (dy * e1[0] - dx * e1[1]) / det
        b0 = 1.0 - b1 - b2
        inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
        if not inside.any():
            continue
        # perspective-correct: blend attribute/z then divide by blended 1/z
        izf = inv_z[face]
        iz = b0 * izf[0] + b1 * izf[1] + b2 * izf[2]
        depth = 1.0 / iz
        closer = inside & (depth < zbuf[y0:y1, x0:x1])
        if not closer.any():
            continue
        nf = n_cam[face] * izf[:, None]
        ninterp = (
            b0[..., None] * nf[0] + b1[..., None] * nf[1] + b2[..., None] * nf[2]
        ) * depth[..., None]
        norm = np.linalg.norm(ninterp, axis=-1, keepdims=True)
        ninterp = np.where(norm > 1e-12, ninterp / np.maximum(norm, 1e-12), 0.0)
        flip = ninterp[..., 2] > 0.0  # orient toward the viewer
        ninterp[flip] *= -1.0
        enc = np.stack(
            [ninterp[..., 0], -ninterp[..., 1], -ninterp[..., 2]], axis=-1
        )
        enc = (enc + 1.0) / 2.0
        sub = zbuf[y0:y1, x0:x1]
        sub[closer] = depth[closer]
        normal_map[y0:y1, x0:x1][closer] = enc[closer]
        silhouette[y0:y1, x0:x1][closer] = 1.0
    return normal_map.astype(np.float32), silhouette.astype(np.float32)
