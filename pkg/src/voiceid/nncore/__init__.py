from .layers import LayerSpec, Multiply, Network, Param, ShapeError
from .losses import cross_entropy, l2_loss
from .optim import NonFiniteGradientError, OptimState, Optimizer, clip_and_step, clip_grad_norm
from .receptive import layer_contexts, receptive_field

__all__ = [
    "LayerSpec",
    "Multiply",
    "Network",
    "NonFiniteGradientError",
    "OptimState",
    "Optimizer",
    "Param",
    "ShapeError",
    "clip_and_step",
    "clip_grad_norm",
    "cross_entropy",
    "l2_loss",
    "layer_contexts",
    "receptive_field",
]
