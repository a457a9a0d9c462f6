"""Cumulative receptive field of convolution stacks."""
from __future__ import annotations


def layer_contexts(specs):
    """Return ``[(spec, (ctx1, ctx2)), ...]`` after each context-growing layer.

    Context starts at 1x1 and grows by ``(kernel - 1) * dilation`` per
    dimension, scaled by the product of earlier strides. For conv1d the first
    kernel dimension spans input channels and adds nothing.
    """
    c1, c2 = 1, 1
    jump = 1
    out = []
    for spec in specs:
        if spec.kind == "conv2d_dilated":
            c1 += (spec.kernel[0] - 1) * spec.dilation[0]
            c2 += (spec.kernel[1] - 1) * spec.dilation[1]
        elif spec.kind == "conv1d":
            c2 += (spec.kernel[1] - 1) * spec.dilation[1] * jump
            jump *= spec.stride
        elif spec.kind == "tdnn_splice":
            c2 += (max(spec.offsets) - min(spec.offsets)) * jump
        else:
            continue
        out.append((spec, (c1, c2)))
    return out


def receptive_field(specs) -> tuple[int, int]:
    contexts = layer_contexts(specs)
    return contexts[-1][1] if contexts else (1, 1)
