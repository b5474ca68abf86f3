"""MIL aggregators with a regression head and analytic gradients."""
from .attmil import attmil_backward, attmil_forward
from .params import Arch, ModelParams, init_params
from .transformer import spatial_decay_bias, transformer_backward, transformer_forward
from .types import Prediction


def forward(params: ModelParams, instance):
    if params.arch is Arch.ATTMIL:
        return attmil_forward(params, instance)
    return transformer_forward(params, instance)


def backward(params: ModelParams, cache, dy: float):
    if params.arch is Arch.ATTMIL:
        return attmil_backward(cache, dy)
    return transformer_backward(cache, dy)


__all__ = [
    "Arch", "ModelParams", "Prediction", "init_params", "forward", "backward",
    "attmil_forward", "attmil_backward", "transformer_forward", "transformer_backward",
    "spatial_decay_bias",
]
