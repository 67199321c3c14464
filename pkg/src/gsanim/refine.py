"""Pose-space refinement of a coarse Gaussian avatar.

The coarse re-posed splats and the posed target body are both rendered
as geometry (encoded normals + silhouette) from a four-camera rig. A
shared geometry encoder maps each view to quarter-resolution features;
the per-view coarse/target pairs are stacked channel-wise and pushed
through the refinement U-Net, which emits one decoder slice per view.
Every Gaussian then samples the four slices at its projected center,
averages them, and a small MLP head turns the pooled feature into
bounded corrections: a tanh-limited position step (Euclidean norm never
exceeds delta_max), a log-scale shift clamped to +-log 2 (factor in
[1/2, 2]), an increment quaternion, and a residual opacity shift.
Opacity is corrected residually so zero-initialized heads make the whole
stage an exact identity. Refinement ends with an opacity prune and a
top-k densify; the trainer optimizes the differentiable portion (no
prune/densify) against ground-truth renders.
"""

from dataclasses import dataclass

import numpy as np

from . import quat
from .avatar import AvatarState, GaussianSet, densify, model_weights_sparse
from .body import forward_kinematics, regress_joints
from .errors import InvariantError, NumericError
from .mesh import Mesh
from .nnet import ops
from .nnet.loss import loss_terms, multiview_loss, splat_render
from .nnet.optim import Adam
from .nnet.params import GEO_CHANNELS
from .nnet.tensor import Tensor
from .nnet.unet import FeatureMap, geo_encode, heads_forward, unet_forward
from .render import rasterize, rasterize_mesh_geometry
from .render.rasterize import normal_map_from_depth
from .skinning import lbs_deform

MIN_VIEW_RESOLUTION = 64
SCALE_CLAMP = float(np.log(2.0))


@dataclass(frozen=True)
class RefineConfig:
    delta_max: float = 0.02          # meters, radius of the position correction ball
    opacity_threshold: float = 0.005
    top_k: int = 0
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.delta_max < 0.0:
            raise InvariantError("delta_max must be non-negative")
        if not 0.0 <= self.opacity_threshold < 1.0:
            raise InvariantError("opacity threshold must lie in [0,1)")
        if self.top_k < 0:
            raise InvariantError("top_k must be non-negative")


@dataclass(frozen=True)
class RefineInput:
    coarse: AvatarState
    target_body: Mesh
    rig: tuple

    def __post_init__(self):
        if not isinstance(self.coarse, AvatarState) or self.coarse.stage != "coarse_target":
            raise InvariantError("refine expects a coarse_target avatar state")
        if not isinstance(self.target_body, Mesh) or self.target_body.vertex_count == 0:
            raise InvariantError("refine requires a posed target body mesh")
        object.__setattr__(self, "rig", tuple(self.rig))
        if len(self.rig) != 4:
            raise InvariantError(f"refine expects a 4-camera rig, got {len(self.rig)}")
        sizes = {(c.height, c.width) for c in self.rig}
        if len(sizes) != 1:
            raise InvariantError("all rig views must share one resolution")
        h, w = next(iter(sizes))
        if h < MIN_VIEW_RESOLUTION or w < MIN_VIEW_RESOLUTION:
            raise InvariantError(f"view resolution {w}x{h} is below the {MIN_VIEW_RESOLUTION} minimum")


@dataclass(frozen=True)
class RefineOutput:
    refined: AvatarState
    corrections: dict          # d_mu, d_raw_scale, d_rot, d_raw_opacity; one row per input Gaussian
    densify_scores: np.ndarray


def _quat_mul_t(a, b):
    """Hamilton product of (N,4) tensors, (w,x,y,z) like gsanim.quat.mul."""
    aw, ax, ay, az = (ops.narrow(a, 1, i, 1) for i in range(4))
    bw, bx, by, bz = (ops.narrow(b, 1, i, 1) for i in range(4))
    m, s = ops.mul, ops.sub
    w = s(s(s(m(aw, bw), m(ax, bx)), m(ay, by)), m(az, bz))
    x = s(ops.add(ops.add(m(aw, bx), m(ax, bw)), m(ay, bz)), m(az, by))
    y = ops.add(ops.add(s(m(aw, by), m(ax, bz)), m(ay, bw)), m(az, bx))
    z = ops.add(s(ops.add(m(aw, bz), m(ax, by)), m(ay, bx)), m(az, bw))
    return ops.concat([w, x, y, z], axis=1)


def _refine_graph(rin, params, cfg, threads=None):
    """Differentiable core of the stage.

    Returns (fields, corrections, scores): fields are the refined Gaussian
    parameter tensors ready for splat_render; corrections are the applied
    per-Gaussian deltas re-derived in float64 so that zero head output
    reproduces the input fields bit for bit.
    """
    coarse = rin.coarse.gaussians
    pairs = []
    for cam in rin.rig:
        view = rasterize(coarse, cam, with_depth=True, threads=threads)
        nmap = normal_map_from_depth(view.depth, view.mask, cam)
        f_coarse = geo_encode(params, nmap, view.mask, tag="coarse_geometry")
        tgt_normals, tgt_sil = rasterize_mesh_geometry(rin.target_body, cam)
        f_target = geo_encode(params, tgt_normals, tgt_sil, tag="target_geometry")
        pairs.append(ops.concat([f_coarse.data, f_target.data], axis=0))
    stacked = FeatureMap(ops.concat(pairs, axis=0), "paired")
    decoded = unet_forward(params, "refine_unet", stacked).data

    mu_t = Tensor(coarse.mu)
    pooled = None
    for v, cam in enumerate(rin.rig):
        coords, valid = ops.project_points(mu_t, cam)
        # feature column j sits at pixel coordinate 4j + 0.5 after the two
        # stride-2 encoder levels, hence (u - 0.5) / 4 in index space
        fcoords = ops.mul(ops.add(coords, -0.5), 0.25)
        view_slice = ops.narrow(decoded, 0, v * GEO_CHANNELS, GEO_CHANNELS)
        sample = ops.bilinear_sample(view_slice, fcoords, valid)
        pooled = sample if pooled is None else ops.add(pooled, sample)
    pooled = ops.mul(pooled, 1.0 / len(rin.rig))
    raw = heads_forward(params, pooled)

    # bounded corrections; the tanh cube is shrunk so the Euclidean step
    # stays inside the delta_max ball
    d_mu = ops.mul(ops.tanh(ops.narrow(raw, 1, 0, 3)), cfg.delta_max / np.sqrt(3.0))
    d_scale = ops.clamp(ops.narrow(raw, 1, 3, 3), -SCALE_CLAMP, SCALE_CLAMP)
    d_rot = ops.narrow(raw, 1, 6, 4)
    d_op = ops.reshape(ops.narrow(raw, 1, 10, 1), (coarse.count,))
    scores = np.asarray(ops.narrow(raw, 1, 11, 1).data, dtype=np.float64).reshape(-1)

    qd = ops.concat([ops.add(ops.narrow(d_rot, 1, 0, 1), 1.0), ops.narrow(d_rot, 1, 1, 3)], axis=1)
    qn = ops.div(qd, ops.sqrt(ops.sum_(ops.mul(qd, qd), axis=1, keepdims=True)))
    fields = {
        "mu": ops.add(mu_t, d_mu),
        "raw_scale": ops.add(Tensor(coarse.raw_scale), d_scale),
        "rot": _quat_mul_t(qn, Tensor(coarse.rot)),
        "raw_opacity": ops.add(Tensor(coarse.raw_opacity), d_op),
        "color": Tensor(coarse.color),
    }
    corrections = {
        "d_mu": np.asarray(d_mu.data, dtype=np.float64),
        "d_raw_scale": np.asarray(d_scale.data, dtype=np.float64),
        "d_rot": np.asarray(d_rot.data, dtype=np.float64),
        "d_raw_opacity": np.asarray(d_op.data, dtype=np.float64),
    }
    return fields, corrections, scores


def apply_corrections(g, corrections):
    """Float64 application of refinement deltas to a GaussianSet."""
    d_rot = corrections["d_rot"]
    qd = np.concatenate([1.0 + d_rot[:, :1], d_rot[:, 1:]], axis=1)
    rot = quat.mul(quat.normalize(qd), g.rot)
    return GaussianSet(
        mu=g.mu + corrections["d_mu"],
        raw_opacity=g.raw_opacity + corrections["d_raw_opacity"],
        raw_scale=g.raw_scale + corrections["d_raw_scale"],
        rot=rot,
        color=g.color,
    )


def refine(rin, params, cfg=None, threads=None):
    """One full refinement pass: corrections, prune, densify.

    The survivor count obeys N' = N - pruned + top_k exactly; corrections
    and densify scores always have one row per input Gaussian.
    """
    if cfg is None:
        cfg = RefineConfig()
    _, corrections, scores = _refine_graph(rin, params, cfg, threads=threads)
    refined = apply_corrections(rin.coarse.gaussians, corrections)
    if cfg.opacity_threshold > 0.0:
        keep = refined.opacity() >= cfg.opacity_threshold
        survivors = refined if keep.all() else refined.take(keep)
        kept_scores = scores[keep]
    else:
        survivors, kept_scores = refined, scores
    final = densify(survivors, kept_scores, cfg.top_k)
    state = rin.coarse.advance("refined_target", gaussians=final, weights=None)
    return RefineOutput(refined=state, corrections=corrections, densify_scores=scores)


def pose_target_body(model, shape, pose):
    """Skin the body template into the given pose; at the canonical pose
    this reproduces the canonical surface to rounding."""
    joints = regress_joints(model, shape)
    g = forward_kinematics(model.skeleton, joints, pose)
    return lbs_deform(model.template_mesh, model_weights_sparse(model), g)


def train_refiner(dataset, params, epochs, lr, cfg=None, seed=0, threads=None):
    """Optimize the trainable parameters against ground-truth view sets.

    dataset is a sequence of (RefineInput, truth) where truth holds one
    rendered view per rig camera ((H,W,4) array or an object with color
    and mask). Items are visited in order, one Adam step per item, so a
    run is a pure function of (dataset, params, lr) and repeats bit for
    bit under a fixed seed. Returns (params, curve) with one
    (step, mask_loss, color_loss, total) row per step. A non-finite loss
    aborts with a per-view diagnostic.
    """
    if len(dataset) == 0:
        raise InvariantError("train_refiner needs a non-empty dataset")
    if epochs < 1:
        raise InvariantError("epochs must be at least 1")
    if cfg is None:
        cfg = RefineConfig()
    del seed  # ordering is fixed; kept so callers can pin one in manifests
    opt = Adam(params, lr=lr)
    curve = []
    step = 0
    for _ in range(int(epochs)):
        for item, (rin, truth) in enumerate(dataset):
            if len(truth) != len(rin.rig):
                raise InvariantError(f"dataset item {item}: {len(truth)} truth views for {len(rin.rig)} cameras")
            fields, _, _ = _refine_graph(rin, params, cfg, threads=threads)
            pred = [splat_render(fields, cam, background=cfg.background, threads=threads) for cam in rin.rig]
            loss = multiview_loss(pred, truth)
            total = loss.data.item()
            mask_loss, color_loss = loss_terms(pred, truth)
            if not np.isfinite(total):
                detail = ", ".join(
                    f"view{v}: mask={float(np.mean((p.data[..., 3] - np.asarray(_truth_mask(t))) ** 2)):.3e}"
                    for v, (p, t) in enumerate(zip(pred, truth))
                )
                raise NumericError(
                    f"non-finite training loss {total} at step {step + 1} (item {item}); {detail}"
                )
            params.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            curve.append((step, mask_loss, color_loss, total))
    return params, curve


def _truth_mask(t):
    arr = np.asarray(t.data if isinstance(t, Tensor) else getattr(t, "mask", t))
    return arr[..., 3] if arr.ndim == 3 and arr.shape[2] == 4 else arr
