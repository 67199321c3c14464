from .loss import multiview_loss, splat_render
from .optim import Adam, optimizer_step
from .params import NetworkParams, init_network_params, transfer_weights, zero_refine_heads
from .tensor import Tensor, default_dtype, set_default_dtype
from .unet import FeatureMap, geo_encode, heads_forward, run_template_generator, unet_forward

__all__ = [
    "Adam",
    "FeatureMap",
    "NetworkParams",
    "Tensor",
    "default_dtype",
    "geo_encode",
    "heads_forward",
    "init_network_params",
    "multiview_loss",
    "optimizer_step",
    "run_template_generator",
    "set_default_dtype",
    "splat_render",
    "transfer_weights",
    "unet_forward",
    "zero_refine_heads",
]
