"""Parameter registry for the template generator and refinement networks.

Six named groups: uv_encoder, pose_encoder and template_unet form the
forward transform (canonical template synthesis); geo_encoder,
refine_unet and refine_heads form the backward transform (pose-space
refinement). The two U-Nets agree on every interior layer shape, and
share_map records that correspondence so weights can be aliased
(transfer mode "shared") or copied then fine-tuned independently
(transfer mode "finetune_backward").
"""

import numpy as np

from ..errors import InvariantError
from .tensor import Tensor

FORWARD_GROUPS = ("uv_encoder", "pose_encoder", "template_unet")
BACKWARD_GROUPS = ("geo_encoder", "refine_unet", "refine_heads")

BASE_CHANNELS = 16
GEO_CHANNELS = 16
TEMPLATE_IN = 2 * BASE_CHANNELS          # texture features + position features
TEMPLATE_OUT = 14                        # d_pos 3, d_op 1, d_scale 3, d_rot 4, d_col 3
REFINE_IN = 4 * 2 * GEO_CHANNELS         # 4 views x (coarse, target) geometry features
REFINE_OUT = 4 * GEO_CHANNELS            # one decoder slice per view
HEAD_HIDDEN = 64
HEAD_OUT = 12                            # d_mu 3, d_scale 3, d_rot 4, d_op 1, score 1

# layer name -> (kind, in_ch, out_ch); interior layers have identical
# shapes in both U-Nets and are the share_map domain
_UNET_LAYERS = (
    ("c0a", "conv", None, BASE_CHANNELS),
    ("c0b", "conv", BASE_CHANNELS, BASE_CHANNELS),
    ("down1", "conv2", BASE_CHANNELS, 2 * BASE_CHANNELS),
    ("c1b", "conv", 2 * BASE_CHANNELS, 2 * BASE_CHANNELS),
    ("down2", "conv2", 2 * BASE_CHANNELS, 4 * BASE_CHANNELS),
    ("c2b", "conv", 4 * BASE_CHANNELS, 4 * BASE_CHANNELS),
    ("up1", "tconv", 4 * BASE_CHANNELS, 2 * BASE_CHANNELS),
    ("m1", "conv", 4 * BASE_CHANNELS, 2 * BASE_CHANNELS),
    ("up0", "tconv", 2 * BASE_CHANNELS, BASE_CHANNELS),
    ("m0", "conv", 2 * BASE_CHANNELS, BASE_CHANNELS),
    ("head", "conv", BASE_CHANNELS, None),
)
UNET_INTERIOR = tuple(n for n, _, ci, co in _UNET_LAYERS if ci is not None and co is not None)


def default_share_map():
    pairs = {}
    for layer in UNET_INTERIOR:
        for p in ("w", "b"):
            pairs[f"refine_unet.{layer}.{p}"] = f"template_unet.{layer}.{p}"
    return pairs


class NetworkParams:
    """Mapping of parameter names to leaf Tensors plus sharing metadata."""

    def __init__(self, tensors, version=1, share_map=None, mode="independent"):
        self.tensors = dict(tensors)
        self.version = int(version)
        self.share_map = dict(default_share_map() if share_map is None else share_map)
        self.mode = mode
        for back, fwd in self.share_map.items():
            if back not in self.tensors or fwd not in self.tensors:
                raise InvariantError(f"share_map references unknown parameter {back} -> {fwd}")

    def __getitem__(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise InvariantError(f"unknown parameter {name!r}") from None

    def __contains__(self, name):
        return name in self.tensors

    def named(self):
        return sorted(self.tensors.items())

    def unique_tensors(self):
        """Leaf tensors in sorted-name order, aliases listed once."""
        seen, out = set(), []
        for name, t in self.named():
            if id(t) not in seen:
                seen.add(id(t))
                out.append((name, t))
        return out

    def param_count(self):
        return sum(t.size for _, t in self.unique_tensors())

    def trainable(self):
        return [(n, t) for n, t in self.unique_tensors() if t.requires_grad]

    def zero_grad(self):
        for _, t in self.unique_tensors():
            if t.grad is not None:
                t.grad[:] = 0.0

    def group(self, prefix):
        return {n: t for n, t in self.tensors.items() if n.startswith(prefix + ".")}

    def copy(self):
        fresh, byid = {}, {}
        for name, t in self.tensors.items():
            if id(t) not in byid:
                byid[id(t)] = Tensor(t.data.copy(), requires_grad=t.requires_grad)
            fresh[name] = byid[id(t)]
        return NetworkParams(fresh, self.version, self.share_map, self.mode)


def _kaiming(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _conv_init(rng, tensors, name, cin, cout, k=3, zero=False):
    if zero:
        w = np.zeros((cout, cin, k, k))
    else:
        w = _kaiming(rng, (cout, cin, k, k), cin * k * k)
    tensors[f"{name}.w"] = Tensor(w, requires_grad=True)
    tensors[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)


def _tconv_init(rng, tensors, name, cin, cout):
    tensors[f"{name}.w"] = Tensor(_kaiming(rng, (cin, cout, 2, 2), cin), requires_grad=True)
    tensors[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)


def _dense_init(rng, tensors, name, fin, fout, zero=False):
    w = np.zeros((fin, fout)) if zero else _kaiming(rng, (fin, fout), fin)
    tensors[f"{name}.w"] = Tensor(w, requires_grad=True)
    tensors[f"{name}.b"] = Tensor(np.zeros(fout), requires_grad=True)


def _unet_init(rng, tensors, which, in_ch, out_ch, zero_head):
    for layer, kind, ci, co in _UNET_LAYERS:
        ci = in_ch if ci is None else ci
        co = out_ch if co is None else co
        if kind == "tconv":
            _tconv_init(rng, tensors, f"{which}.{layer}", ci, co)
        else:
            _conv_init(rng, tensors, f"{which}.{layer}", ci, co, zero=zero_head and layer == "head")


def init_network_params(seed=0):
    """Fresh parameter set: Kaiming-uniform convolutions, zero biases, and
    zero-initialized output layers for the template generator and the
    refinement heads so both start as the identity."""
    rng = np.random.default_rng(seed)
    tensors = {}
    _conv_init(rng, tensors, "uv_encoder.conv", 3, BASE_CHANNELS)
    _conv_init(rng, tensors, "pose_encoder.conv", 6, BASE_CHANNELS)
    _unet_init(rng, tensors, "template_unet", TEMPLATE_IN, TEMPLATE_OUT, zero_head=True)
    _conv_init(rng, tensors, "geo_encoder.g0", 4, GEO_CHANNELS)
    _conv_init(rng, tensors, "geo_encoder.g1", GEO_CHANNELS, GEO_CHANNELS)
    _unet_init(rng, tensors, "refine_unet", REFINE_IN, REFINE_OUT, zero_head=False)
    _dense_init(rng, tensors, "refine_heads.l0", GEO_CHANNELS, HEAD_HIDDEN)
    _dense_init(rng, tensors, "refine_heads.l1", HEAD_HIDDEN, HEAD_HIDDEN)
    _dense_init(rng, tensors, "refine_heads.l2", HEAD_HIDDEN, HEAD_OUT, zero=True)
    return NetworkParams(tensors)


def zero_refine_heads(params):
    """Reset the final head layer so refinement is the identity."""
    params["refine_heads.l2.w"].data[:] = 0.0
    params["refine_heads.l2.b"].data[:] = 0.0
    return params


def transfer_weights(params, mode):
    """Rebind backward-transform weights from the forward transform.

    "shared": every share_map pair resolves to the forward tensor object,
    so one optimizer update moves both transforms. "finetune_backward":
    backward weights are value-copied from the forward side and only
    backward-transform parameters stay trainable. Either way the result
    is a new NetworkParams; the input is untouched.
    """
    if mode == "shared":
        src = params.copy()
        tensors = dict(src.tensors)
        for back, fwd in src.share_map.items():
            tensors[back] = tensors[fwd]
        return NetworkParams(tensors, src.version, src.share_map, mode)
    if mode == "finetune_backward":
        tensors = {}
        for name, t in params.tensors.items():
            trainable = any(name.startswith(g + ".") for g in BACKWARD_GROUPS)
            tensors[name] = Tensor(t.data.copy(), requires_grad=trainable)
        for back, fwd in params.share_map.items():
            tensors[back].data[:] = params.tensors[fwd].data
        return NetworkParams(tensors, params.version, params.share_map, mode)
    raise InvariantError(f"unknown transfer mode {mode!r}")
