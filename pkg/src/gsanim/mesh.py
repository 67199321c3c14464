"""Triangle mesh value type.

Vertices are metres, float64. Faces index vertices (int32 triples).
Vertex normals are derived (area-weighted face normals) unless supplied.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError


def compute_vertex_normals(vertices, faces):
    """Area-weighted vertex normals. Isolated/degenerate vertices get +z."""
    normals = np.zeros_like(vertices)
    if len(faces):
        tri = vertices[faces]
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])  # 2*area-weighted
        for k in range(3):
            np.add.at(normals, faces[:, k], fn)
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    bad = norm[:, 0] < 1e-20
    normals[bad] = (0.0, 0.0, 1.0)
    norm[bad] = 1.0
    return normals / norm


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray                 # (V, 3) float64
    faces: np.ndarray                    # (F, 3) int32
    vertex_normals: np.ndarray = None    # (V, 3) unit, derived when omitted
    uv: np.ndarray = None                # (V, 2) in [0,1]^2, optional

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        try:
            f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int32).reshape(-1, 3))
        except (ValueError, OverflowError) as e:
            raise InvariantError(f"faces must be (F,3) index triples: {e}") from e
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvariantError(f"vertices must be (V,3), got {v.shape}")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise InvariantError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.vertex_normals is None:
            object.__setattr__(self, "vertex_normals", compute_vertex_normals(v, f))
        else:
            n = np.ascontiguousarray(np.asarray(self.vertex_normals, dtype=np.float64))
            if n.shape != v.shape:
                raise InvariantError("vertex_normals shape mismatch")
            err = np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) if len(n) else 0.0
            if err > 1e-6:
                raise InvariantError(f"vertex normal norm deviates by {err:.3e}")
            object.__setattr__(self, "vertex_normals", n)
        if self.uv is not None:
            uv = np.ascontiguousarray(np.asarray(self.uv, dtype=np.float64))
            if uv.shape != (len(v), 2):
                raise InvariantError("uv shape mismatch")
            object.__setattr__(self, "uv", uv)

    @property
    def vertex_count(self):
        return len(self.vertices)

    @property
    def face_count(self):
        return len(self.faces)

    def with_vertices(self, vertices):
        """Same topology/uv with moved vertices; normals recomputed."""
        return Mesh(vertices, self.faces, uv=self.uv)
