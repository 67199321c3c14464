"""Network forwards: encoders, the shared-shape U-Nets, refinement heads.

Feature maps are (C, H, W) Tensors tagged with their provenance. Both
U-Nets are three-level encoder-decoders with skip connections at base
width 16; inputs whose sides are not multiples of 4 are zero-padded at
the bottom/right and the output is cropped back, so output spatial size
always equals input spatial size.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import InvariantError
from . import ops
from .tensor import Tensor

FEATURE_TAGS = ("texture", "pose", "coarse_geometry", "target_geometry", "paired")
UNET_NAMES = ("template_unet", "refine_unet")


@dataclass
class FeatureMap:
    data: object  # Tensor, (C, H, W)
    tag: str

    def __post_init__(self):
        if self.tag not in FEATURE_TAGS:
            raise InvariantError(f"unknown feature tag {self.tag!r}")
        if not isinstance(self.data, Tensor):
            self.data = Tensor(self.data)
        if self.data.ndim != 3:
            raise InvariantError(f"feature maps are (C,H,W), got {self.data.shape}")
        if not np.all(np.isfinite(self.data.data)):
            raise InvariantError("non-finite feature map")

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def spatial(self):
        return self.data.shape[1], self.data.shape[2]


def _conv(params, name, x, stride=1):
    return ops.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], stride=stride)


def unet_forward(params, which, feature):
    """Run one of the two U-Nets over a feature map; the provenance tag is
    carried through unchanged."""
    if which not in UNET_NAMES:
        raise InvariantError(f"unknown network {which!r}")
    if isinstance(feature, Tensor):
        feature = FeatureMap(feature, "paired")
    x = feature.data
    cin = params[f"{which}.c0a.w"].shape[1]
    if x.shape[0] != cin:
        raise InvariantError(f"{which} expects {cin} channels, got {x.shape[0]}")
    h, w = x.shape[1], x.shape[2]
    ph, pw = -h % 4, -w % 4
    if ph or pw:
        x = ops.pad_hw(x, h + ph, w + pw)

    e0 = ops.relu(_conv(params, f"{which}.c0a", x))
    e0 = ops.relu(_conv(params, f"{which}.c0b", e0))
    e1 = ops.relu(_conv(params, f"{which}.down1", e0, stride=2))
    e1 = ops.relu(_conv(params, f"{which}.c1b", e1))
    e2 = ops.relu(_conv(params, f"{which}.down2", e1, stride=2))
    e2 = ops.relu(_conv(params, f"{which}.c2b", e2))
    d1 = ops.conv_transpose2d(e2, params[f"{which}.up1.w"], params[f"{which}.up1.b"])
    d1 = ops.relu(_conv(params, f"{which}.m1", ops.concat([ops.relu(d1), e1], axis=0)))
    d0 = ops.conv_transpose2d(d1, params[f"{which}.up0.w"], params[f"{which}.up0.b"])
    d0 = ops.relu(_conv(params, f"{which}.m0", ops.concat([ops.relu(d0), e0], axis=0)))
    y = _conv(params, f"{which}.head", d0)
    if ph or pw:
        y = ops.crop_hw(y, h, w)
    return FeatureMap(y, feature.tag)


def geo_encode(params, normal_map, silhouette, tag="coarse_geometry"):
    """Encode a rendered geometry view (encoded normals + silhouette) into
    a feature map at quarter resolution, ceil(H/4) x ceil(W/4). The same
    encoder weights serve the coarse and the target branch."""
    nm = np.asarray(normal_map, dtype=np.float64)
    sil = np.asarray(silhouette, dtype=np.float64)
    if nm.ndim != 3 or nm.shape[2] != 3:
        raise InvariantError(f"normal map must be (H,W,3), got {nm.shape}")
    if sil.shape != nm.shape[:2]:
        raise InvariantError(f"silhouette {sil.shape} does not match normal map {nm.shape[:2]}")
    x = Tensor(np.concatenate([np.moveaxis(nm, 2, 0), sil[None]], axis=0))
    h = ops.relu(_conv(params, "geo_encoder.g0", x, stride=2))
    h = ops.relu(_conv(params, "geo_encoder.g1", h, stride=2))
    return FeatureMap(h, tag)


def heads_forward(params, feats):
    """Per-Gaussian refinement heads: (N, 16) features to (N, 12) raw
    corrections (d_mu 3, d_scale 3, d_rot 4, d_op 1, densify score 1)."""
    h = ops.relu(ops.add(ops.matmul(feats, params["refine_heads.l0.w"]), params["refine_heads.l0.b"]))
    h = ops.relu(ops.add(ops.matmul(h, params["refine_heads.l1.w"]), params["refine_heads.l1.b"]))
    return ops.add(ops.matmul(h, params["refine_heads.l2.w"]), params["refine_heads.l2.b"])


def run_template_generator(params, texture, pose_map):
    """Texture and position encoders feeding the template U-Net.

    texture is (res, res, 3), pose_map (res, res, 6); the result is a
    (res, res, 14) float64 array of per-texel template residuals. With a
    zero-initialized head this is exactly zero.
    """
    tex = np.asarray(texture, dtype=np.float64)
    pos = np.asarray(pose_map, dtype=np.float64)
    if tex.ndim != 3 or tex.shape[2] != 3 or pos.shape != tex.shape[:2] + (6,):
        raise InvariantError(f"bad generator inputs {tex.shape} / {pos.shape}")
    ft = ops.relu(_conv(params, "uv_encoder.conv", Tensor(np.moveaxis(tex, 2, 0))))
    fp = ops.relu(_conv(params, "pose_encoder.conv", Tensor(np.moveaxis(pos, 2, 0))))
    merged = FeatureMap(ops.concat([ft, fp], axis=0), "paired")
    out = unet_forward(params, "template_unet", merged)
    return np.ascontiguousarray(np.moveaxis(out.data.data, 0, 2), dtype=np.float64)
