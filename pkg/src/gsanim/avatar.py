"""3D Gaussian avatar: representation, template construction, animation,
pruning and densification.

A Gaussian stores raw (pre-activation) opacity and scale so optimizer
updates stay unconstrained: alpha = sigmoid(raw_opacity), axis lengths =
exp(raw_scale), covariance = R diag(exp(raw_scale))^2 R^T.

Animation moves only the centers by the blended canonical-to-target LBS
matrices; scale, rotation, opacity and color ride along unchanged (the
optional rotate_frames flag additionally rotates each Gaussian frame by the
polar factor of its blend matrix).
"""

from dataclasses import dataclass, replace

import numpy as np

from . import quat
from .body import BodyModel, Pose, Shape, forward_kinematics, regress_joints
from .errors import InvariantError
from .mesh import Mesh
from .skinning import (
    SkinningWeights,
    bind_scan_to_model,
    compose_repose_transform,
    apply_vertex_transforms,
    joint_delta_transforms,
    lbs_deform,
    skin_points,
)

STAGES = ("source", "canonical", "coarse_target", "refined_target")

DEFAULT_PRUNE_THRESHOLD = 0.005
DENSIFY_SCALE_SHRINK = np.log(1.6)
BASE_OPACITY_RAW = np.log(0.9 / 0.1)  # sigmoid^-1(0.9), coarse templates start opaque


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class GaussianSet:
    mu: np.ndarray           # (N, 3) meters
    raw_opacity: np.ndarray  # (N,) pre-sigmoid
    raw_scale: np.ndarray    # (N, 3) log-meters
    rot: np.ndarray          # (N, 4) unit quaternions (w,x,y,z)
    color: np.ndarray        # (N, 3) RGB in [0,1]

    def __post_init__(self):
        mu = np.ascontiguousarray(np.asarray(self.mu, dtype=np.float64).reshape(-1, 3))
        n = len(mu)
        op = np.ascontiguousarray(np.asarray(self.raw_opacity, dtype=np.float64).reshape(-1))
        sc = np.ascontiguousarray(np.asarray(self.raw_scale, dtype=np.float64).reshape(-1, 3))
        rot = np.ascontiguousarray(np.asarray(self.rot, dtype=np.float64).reshape(-1, 4))
        col = np.ascontiguousarray(np.asarray(self.color, dtype=np.float64).reshape(-1, 3))
        if not (len(op) == len(sc) == len(rot) == len(col) == n):
            raise InvariantError("GaussianSet field lengths disagree")
        for name, arr in (("mu", mu), ("raw_opacity", op), ("raw_scale", sc), ("rot", rot), ("color", col)):
            if not np.all(np.isfinite(arr)):
                raise InvariantError(f"non-finite values in {name}")
        if np.any(sc > 700.0):
            raise InvariantError("raw_scale overflows exp")
        quat.check_unit(rot, 1e-6, "gaussian rotation")
        if np.any(col < 0.0) or np.any(col > 1.0):
            raise InvariantError("colors must lie in [0,1]")
        for name, arr in (("mu", mu), ("raw_opacity", op), ("raw_scale", sc), ("rot", rot), ("color", col)):
            object.__setattr__(self, name, arr)

    @property
    def count(self):
        return len(self.mu)

    def take(self, index):
        """Subset/reorder by boolean mask or index array."""
        return GaussianSet(
            self.mu[index], self.raw_opacity[index], self.raw_scale[index],
            self.rot[index], self.color[index],
        )

    def opacity(self):
        return sigmoid(self.raw_opacity)

    def scales(self):
        return np.exp(self.raw_scale)


def covariances(g):
    """Per-Gaussian 3x3 covariance R diag(exp(s))^2 R^T."""
    r = quat.to_matrix(quat.normalize(g.rot))
    s2 = np.exp(g.raw_scale) ** 2
    return np.einsum("nab,nb,ncb->nac", r, s2, r)


@dataclass(frozen=True)
class AvatarState:
    """A GaussianSet tagged with its place in the pipeline."""

    gaussians: GaussianSet
    pose: Pose
    shape: Shape
    stage: str
    weights: SkinningWeights = None  # binding of mu, carried once computed

    def __post_init__(self):
        if self.stage not in STAGES:
            raise InvariantError(f"unknown stage {self.stage!r}")

    def advance(self, stage, **updates):
        """Move forward along source -> canonical -> coarse_target -> refined_target."""
        if STAGES.index(stage) <= STAGES.index(self.stage):
            raise InvariantError(f"stage {self.stage} cannot advance to {stage}")
        return replace(self, stage=stage, **updates)


def model_weights_sparse(model):
    return SkinningWeights.from_dense(model.weights)


def canonical_template_mesh(model, shape):
    """The model surface in the canonical pose (equals the stored template
    when the canonical pose is the rest pose)."""
    joints = regress_joints(model, shape)
    g = forward_kinematics(model.skeleton, joints, model.skeleton.canonical_pose)
    return lbs_deform(model.template_mesh, model_weights_sparse(model), g)


def canonicalize_scan(scan, model, source_pose, shape, diagnostics=None):
    """Deform a posed scan into the canonical A-pose.

    Binds the scan to the model template posed at source_pose, then applies
    the blended per-vertex source-to-canonical transforms.
    """
    joints = regress_joints(model, shape)
    g_source = forward_kinematics(model.skeleton, joints, source_pose)
    g_canon = forward_kinematics(model.skeleton, joints, model.skeleton.canonical_pose)
    sparse = model_weights_sparse(model)
    posed_template = lbs_deform(model.template_mesh, sparse, g_source)
    weights = bind_scan_to_model(scan, model, posed_template, diagnostics=diagnostics)
    t = compose_repose_transform(weights, g_canon, g_source)
    return apply_vertex_transforms(scan, t)


def bind_gaussians(g, model, shape):
    """Skinning weights for Gaussian centers against the canonical surface."""
    return bind_scan_to_model(g.mu, model, canonical_template_mesh(model, shape))


def animate(canonical, model, shape, target_pose, rotate_frames=False, weights=None):
    """Re-pose canonical Gaussians to target_pose (centers move; everything
    else is preserved unless rotate_frames is set).

    When the target pose equals the canonical pose exactly the input is
    returned unchanged: the blended G G^-1 identity holds only to rounding,
    and the identity case is contractually bitwise.
    """
    if not isinstance(canonical, GaussianSet):
        raise InvariantError("animate expects a GaussianSet")
    canon_pose = model.skeleton.canonical_pose
    if target_pose.allequal(canon_pose):
        return canonical
    if weights is None:
        weights = bind_gaussians(canonical, model, shape)
    if weights.vertex_count != canonical.count:
        raise InvariantError("binding does not cover the Gaussian set")
    joints = regress_joints(model, shape)
    g_target = forward_kinematics(model.skeleton, joints, target_pose)
    g_canon = forward_kinematics(model.skeleton, joints, canon_pose)
    delta = joint_delta_transforms(g_target, g_canon)
    mu = skin_points(canonical.mu, weights, delta)
    rot = canonical.rot
    if rotate_frames:
        gathered = delta.globals[weights.indices, :3, :3]
        blend = np.einsum("vk,vkab->vab", weights.weights, gathered)
        u, _, vt = np.linalg.svd(blend)
        det = np.linalg.det(u @ vt)
        u[det < 0, :, -1] *= -1.0
        polar = u @ vt
        frame_q = np.stack([quat.from_matrix(m) for m in polar])
        rot = quat.mul(frame_q, canonical.rot)
    return GaussianSet(mu, canonical.raw_opacity, canonical.raw_scale, rot, canonical.color)


def prune(g, opacity_threshold=DEFAULT_PRUNE_THRESHOLD):
    """Drop Gaussians whose opacity falls below the threshold; survivors
    keep their order."""
    if not 0.0 <= opacity_threshold < 1.0:
        raise InvariantError("opacity threshold must lie in [0,1)")
    if opacity_threshold == 0.0:
        return g
    keep = g.opacity() >= opacity_threshold
    if keep.all():
        return g
    return g.take(keep)


def densify(g, scores, top_k):
    """Split the top_k highest-scoring Gaussians in two along their major
    axis. The first child replaces the parent in place, the second is
    appended (parents in ascending index order), so N' = N + top_k.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(scores) != g.count:
        raise InvariantError("one densify score per Gaussian required")
    if top_k < 0 or top_k > g.count:
        raise InvariantError(f"top_k={top_k} outside [0, {g.count}]")
    if top_k == 0:
        return g
    sel = np.sort(np.lexsort((np.arange(len(scores)), -scores))[:top_k])
    major = np.argmax(g.raw_scale[sel], axis=1)
    r = quat.to_matrix(quat.normalize(g.rot[sel]))
    axis = r[np.arange(top_k), :, major]
    step = 0.5 * np.exp(g.raw_scale[sel, major])[:, None] * axis
    child_scale = g.raw_scale[sel] - DENSIFY_SCALE_SHRINK

    mu = np.concatenate([g.mu, g.mu[sel] + step])
    mu[sel] = g.mu[sel] - step
    raw_scale = np.concatenate([g.raw_scale, child_scale])
    raw_scale[sel] = child_scale
    return GaussianSet(
        mu,
        np.concatenate([g.raw_opacity, g.raw_opacity[sel]]),
        raw_scale,
        np.concatenate([g.rot, g.rot[sel]]),
        np.concatenate([g.color, g.color[sel]]),
    )


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _covered_texels(mesh, resolution):
    """Rasterize the UV layout: per covered texel the owning face and its
    barycentric coordinates, indexed [v_row, u_col]. The lowest face index
    claims a contested texel."""
    if mesh.uv is None:
        raise InvariantError("template construction needs per-vertex uv")
    res = int(resolution)
    owner = np.full((res, res), -1, dtype=np.int64)
    bary = np.zeros((res, res, 3))
    uv = mesh.uv * res  # texel units, texel centers at +0.5
    for fi, face in enumerate(mesh.faces):
        tri = uv[face]
        lo = np.maximum(np.floor(tri.min(axis=0) - 0.5).astype(int), 0)
        hi = np.minimum(np.ceil(tri.max(axis=0) - 0.5).astype(int) + 1, res)
        if np.any(hi <= lo):
            continue
        e1 = tri[1] - tri[0]
        e2 = tri[2] - tri[0]
        det = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(det) < 1e-12:
            continue
        us = np.arange(lo[0], hi[0]) + 0.5
        vs = np.arange(lo[1], hi[1]) + 0.5
        pu, pv = np.meshgrid(us, vs, indexing="ij")
        du = pu - tri[0, 0]
        dv = pv - tri[0, 1]
        b1 = (du * e2[1] - dv * e2[0]) / det
        b2 = (dv * e1[0] - du * e1[1]) / det
        b0 = 1.0 - b1 - b2
        inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
        gu, gv = np.nonzero(inside)
        ucol = gu + lo[0]
        vrow = gv + lo[1]
        free = owner[vrow, ucol] < 0
        ucol, vrow = ucol[free], vrow[free]
        owner[vrow, ucol] = fi
        bary[vrow, ucol] = np.stack(
            [b0[gu[free], gv[free]], b1[gu[free], gv[free]], b2[gu[free], gv[free]]], axis=1
        )
    return owner, bary


def _bilinear(image, xy):
    """Sample (H,W,C) float image at float pixel coords, clamped to edges."""
    h, w = image.shape[:2]
    x = np.clip(xy[:, 0], 0.0, w - 1.0)
    y = np.clip(xy[:, 1], 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, w - 2) if w > 1 else np.zeros(len(x), int)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 2) if h > 1 else np.zeros(len(y), int)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return (
        image[y0, x0] * (1 - fx) * (1 - fy)
        + image[y0, x1] * fx * (1 - fy)
        + image[y1, x0] * (1 - fx) * fy
        + image[y1, x1] * fx * fy
    )


def build_template(canonical_mesh, uv_texture, model, params, uv_resolution=64):
    """Generate the canonical Gaussian template from the UV layout.

    Every texel covered by the UV layout yields one Gaussian anchored at
    the interpolated surface point. A generator network (texture encoder +
    pose encoder + U-Net over the UV grid) predicts offsets and residual
    parameters per texel; with a zero-initialized output layer the result
    is the pure surface anchoring.
    """
    from .nnet.unet import run_template_generator

    texture = np.asarray(uv_texture, dtype=np.float64)
    if texture.ndim == 2:
        texture = texture[:, :, None].repeat(3, axis=2)
    if texture.size == 0:
        raise InvariantError("empty texture")
    owner, bary = _covered_texels(canonical_mesh, uv_resolution)
    vrow, ucol = np.nonzero(owner >= 0)
    if len(vrow) == 0:
        raise InvariantError("UV layout covers no texels")
    faces = canonical_mesh.faces[owner[vrow, ucol]]
    b = bary[vrow, ucol]
    anchors = np.einsum("nk,nkc->nc", b, canonical_mesh.vertices[faces])
    normals = np.einsum("nk,nkc->nc", b, canonical_mesh.vertex_normals[faces])
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)

    # per-texel world footprint from the owning face's 3D-to-UV area ratio
    tri3 = canonical_mesh.vertices[faces]
    area3 = 0.5 * np.linalg.norm(np.cross(tri3[:, 1] - tri3[:, 0], tri3[:, 2] - tri3[:, 0]), axis=1)
    triuv = canonical_mesh.uv[faces]
    e1 = triuv[:, 1] - triuv[:, 0]
    e2 = triuv[:, 2] - triuv[:, 0]
    areauv = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    texel_world = np.sqrt(area3 / np.maximum(areauv, 1e-12)) / uv_resolution
    base_scale = np.log(np.maximum(0.5 * texel_world, 1e-6))

    # position map normalized to the mesh bounding box for the pose encoder
    lo = canonical_mesh.vertices.min(axis=0)
    extent = max(float(np.max(canonical_mesh.vertices.max(axis=0) - lo)), 1e-9)
    res = int(uv_resolution)
    pose_map = np.zeros((res, res, 6), dtype=np.float64)
    pose_map[vrow, ucol, :3] = (anchors - lo) / extent
    pose_map[vrow, ucol, 3:] = normals
    rows, cols = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    grid_xy = np.stack(
        [
            (cols + 0.5) / res * texture.shape[1] - 0.5,
            (rows + 0.5) / res * texture.shape[0] - 0.5,
        ],
        axis=-1,
    )
    tex_small = _bilinear(texture, grid_xy.reshape(-1, 2)).reshape(res, res, 3)

    out = run_template_generator(params, tex_small, pose_map)  # (res, res, 14)
    head = out[vrow, ucol]
    d_pos, d_op, d_scale, d_rot, d_col = (
        head[:, 0:3], head[:, 3], head[:, 4:7], head[:, 7:11], head[:, 11:14],
    )

    tex_at = tex_small[vrow, ucol]
    color = 1.0 / (1.0 + np.exp(-(d_col + _logit(np.clip(tex_at, 1e-4, 1.0 - 1e-4)))))
    rot = quat.normalize(np.concatenate([1.0 + d_rot[:, :1], d_rot[:, 1:]], axis=1))
    return GaussianSet(
        mu=anchors + d_pos,
        raw_opacity=BASE_OPACITY_RAW + d_op,
        raw_scale=base_scale[:, None] + d_scale,
        rot=rot,
        color=color,
    )
