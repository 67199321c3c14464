"""Linear blend skinning and scan-to-model binding.

Re-posing composes per-joint "relative to rest" transforms: a vertex moves
by the weight-blended matrix sum_j w_j * G_j(target) * G_j(source)^-1. The
blend happens in matrix space; point-space blending gives identical results
for this form and the test suite checks the equivalence. Dual-quaternion
skinning is kept as a slower reference path; it agrees with LBS exactly
when a vertex is bound to a single joint.
"""

from dataclasses import dataclass

import numpy as np

from . import quat
from .body import BodyModel, JointTransforms
from .errors import InvariantError
from .mesh import Mesh
from .spatial import UniformGrid

K_MAX = 8
BIND_NEIGHBORS = 4
BIND_EPS = 1e-8
FAR_BIND_METERS = 0.10  # beyond this a scan vertex is flagged, never rejected


@dataclass(frozen=True)
class SkinningWeights:
    """Per-vertex sparse convex weights over joints.

    ``indices[i, k]`` names the joint receiving ``weights[i, k]``; unused
    slots carry weight 0.0 (their joint index is arbitrary but in range).
    """

    indices: np.ndarray
    weights: np.ndarray
    joint_count: int

    def __post_init__(self):
        indices = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int32))
        weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if indices.ndim != 2 or indices.shape != weights.shape:
            raise InvariantError("skinning indices and weights must share a (V,K) shape")
        if indices.shape[1] > K_MAX:
            raise InvariantError(f"at most {K_MAX} joints per vertex, got {indices.shape[1]}")
        if indices.size and (indices.min() < 0 or indices.max() >= self.joint_count):
            raise InvariantError("skinning index out of joint range")
        if np.any(weights < 0.0) or np.any(weights > 1.0):
            raise InvariantError("skinning weights must lie in [0,1]")
        row = weights.sum(axis=1)
        if weights.size and np.max(np.abs(row - 1.0)) > 1e-6:
            raise InvariantError("skinning weight rows must sum to 1")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "weights", weights)

    @property
    def vertex_count(self):
        return self.indices.shape[0]

    @classmethod
    def from_dense(cls, dense, k_max=K_MAX):
        """Keep the ``k_max`` largest entries of each row and renormalize."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise InvariantError("dense weights must be (V,J)")
        v, j = dense.shape
        k = min(k_max, j)
        # descending weight, ties broken toward the lower joint index
        order = np.lexsort((np.broadcast_to(np.arange(j), dense.shape), -dense), axis=1)
        idx = order[:, :k]
        w = np.take_along_axis(dense, idx, axis=1)
        total = w.sum(axis=1, keepdims=True)
        if np.any(total <= 0.0):
            raise InvariantError("dense weight row has no positive entries")
        return cls(indices=idx.astype(np.int32), weights=w / total, joint_count=j)

    def to_dense(self):
        dense = np.zeros((self.vertex_count, self.joint_count))
        np.add.at(dense, (np.arange(self.vertex_count)[:, None], self.indices), self.weights)
        return dense


@dataclass(frozen=True)
class VertexTransforms:
    """One 4x4 blend matrix per vertex (generally affine, not rigid)."""

    transforms: np.ndarray  # (V, 4, 4)

    def __post_init__(self):
        t = np.ascontiguousarray(np.asarray(self.transforms, dtype=np.float64).reshape(-1, 4, 4))
        if not np.all(np.isfinite(t)):
            raise InvariantError("vertex transforms must be finite")
        if len(t) and not np.allclose(t[:, 3, :], (0.0, 0.0, 0.0, 1.0), atol=1e-12):
            raise InvariantError("vertex transform last row must be (0,0,0,1)")
        object.__setattr__(self, "transforms", t)

    @property
    def vertex_count(self):
        return len(self.transforms)


def joint_delta_transforms(g_target, g_source):
    """Per-joint rigid deltas T_j = G_j(target) @ G_j(source)^-1."""
    if not isinstance(g_source, JointTransforms) or not isinstance(g_target, JointTransforms):
        raise InvariantError("expected JointTransforms for source and target")
    if g_source.globals.shape != g_target.globals.shape:
        raise InvariantError("source and target joint counts differ")
    rs = g_source.globals[:, :3, :3]
    ts = g_source.globals[:, :3, 3]
    inv = np.zeros_like(g_source.globals)
    inv[:, :3, :3] = np.swapaxes(rs, 1, 2)
    inv[:, :3, 3] = -np.einsum("jba,jb->ja", rs, ts)
    inv[:, 3, 3] = 1.0
    return JointTransforms(globals=g_target.globals @ inv)


def compose_repose_transform(weights, g_target, g_source):
    """Blend G_target * G_source^-1 per vertex into VertexTransforms."""
    delta = joint_delta_transforms(g_target, g_source)
    if weights.indices.size and weights.indices.max() >= delta.joint_count:
        raise InvariantError("weights reference joints missing from the transforms")
    gathered = delta.globals[weights.indices]  # (V, K, 4, 4)
    return VertexTransforms(np.einsum("vk,vkab->vab", weights.weights, gathered))


def transform_points(points, matrices):
    points = np.asarray(points, dtype=np.float64)
    return np.einsum("vab,vb->va", matrices[:, :3, :3], points) + matrices[:, :3, 3]


def apply_vertex_transforms(mesh, t):
    if t.vertex_count != mesh.vertex_count:
        raise InvariantError("vertex transform count != mesh vertex count")
    return mesh.with_vertices(transform_points(mesh.vertices, t.transforms))


def skin_points(points, weights, g):
    """Point-level LBS used for both mesh vertices and Gaussian centers.

    Dispatches to the compiled kernel when available.
    """
    points = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if points.shape != (weights.vertex_count, 3):
        raise InvariantError("point count does not match skinning weights")
    mats = g.globals if isinstance(g, JointTransforms) else np.asarray(g)
    from . import backend

    return backend.active().skin_points(
        points, weights.indices, weights.weights, np.ascontiguousarray(mats[:, :3, :])
    )


def lbs_deform(mesh, weights, g):
    """v'_i = sum_j w_ij (G_j v_i); faces and uv unchanged, normals recomputed."""
    if weights.vertex_count != mesh.vertex_count:
        raise InvariantError("weight row count != mesh vertex count")
    return mesh.with_vertices(skin_points(mesh.vertices, weights, g))


def bind_scan_to_model(scan, model, posed_template, k=BIND_NEIGHBORS, diagnostics=None):
    """Transfer skinning weights from the posed template to scan vertices.

    Each scan vertex blends the dense weight rows of its ``k`` nearest
    template vertices with inverse-distance coefficients 1 / (d + eps);
    exact hits (d == 0) take the whole coefficient mass, so a coincident
    vertex inherits that row exactly. Vertices farther than 10 cm from the
    template are still bound but counted in ``diagnostics`` when a dict is
    passed.
    """
    points = scan.vertices if isinstance(scan, Mesh) else np.asarray(scan, dtype=np.float64)
    if not isinstance(model, BodyModel):
        raise InvariantError("bind_scan_to_model needs a BodyModel")
    template_vertices = posed_template.vertices
    if len(template_vertices) == 0:
        raise InvariantError("empty template")
    if len(template_vertices) != len(model.weights):
        raise InvariantError("posed template does not match the model's weight rows")
    k = max(1, min(int(k), len(template_vertices)))
    grid = UniformGrid(template_vertices)
    dist, nbr = grid.query(points, k=k)
    exact = dist == 0.0
    coeff = 1.0 / (dist + BIND_EPS)
    hit_rows = exact.any(axis=1)
    coeff[hit_rows] = exact[hit_rows].astype(np.float64)
    coeff /= coeff.sum(axis=1, keepdims=True)
    dense = np.einsum("vk,vkj->vj", coeff, model.weights[nbr])
    if diagnostics is not None:
        far = dist[:, 0] > FAR_BIND_METERS
        diagnostics["far_vertex_count"] = int(far.sum())
        diagnostics["max_nn_distance_m"] = float(dist[:, 0].max()) if len(dist) else 0.0
    return SkinningWeights.from_dense(dense, k_max=K_MAX)


def _transforms_to_dual_quats(g):
    mats = g.globals if isinstance(g, JointTransforms) else np.asarray(g)
    qr = np.stack([quat.from_matrix(m[:3, :3]) for m in mats])
    t = mats[:, :3, 3]
    tq = np.concatenate([np.zeros((len(mats), 1)), t], axis=1)
    qd = 0.5 * quat.mul(tq, qr)
    return qr, qd


def dqs_deform(mesh, weights, g):
    """Dual-quaternion skinning reference path.

    Joint rotations are hemisphere-aligned against each vertex's
    highest-weight joint before blending; the blended dual quaternion is
    renormalized and applied. Avoids the candy-wrapper collapse of LBS at
    twisting joints.
    """
    if weights.vertex_count != mesh.vertex_count:
        raise InvariantError("weight row count != mesh vertex count")
    vertices = mesh.vertices
    qr, qd = _transforms_to_dual_quats(g)
    vr = qr[weights.indices]  # (V, K, 4)
    vd = qd[weights.indices]
    pivot = np.argmax(weights.weights, axis=1)
    anchor = vr[np.arange(len(vertices)), pivot]
    sign = np.where(np.einsum("vkc,vc->vk", vr, anchor) < 0.0, -1.0, 1.0)
    w = weights.weights * sign
    br = np.einsum("vk,vkc->vc", w, vr)
    bd = np.einsum("vk,vkc->vc", w, vd)
    norm = np.linalg.norm(br, axis=1, keepdims=True)
    if np.any(norm < 1e-12):
        raise InvariantError("degenerate dual-quaternion blend")
    br = br / norm
    bd = bd / norm
    rot = quat.to_matrix(br)
    conj = br * np.array([1.0, -1.0, -1.0, -1.0])
    trans = 2.0 * quat.mul(bd, conj)[:, 1:]  # translation of a unit dual quaternion
    return mesh.with_vertices(np.einsum("vab,vb->va", rot, vertices) + trans)
