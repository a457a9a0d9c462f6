"""SGD and Adam with global-norm gradient clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimState:
    kind: str = "sgd"
    step_size: float = 0.01
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm):
    """Scale grads in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_grad_norm(params)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= p.grad.dtype.type(scale)
    return norm


class Optimizer:
    """Applies ``OptimState`` updates to the trainable subset of ``params``."""

    def __init__(self, state: OptimState, params):
        self.state = state
        self.params = list(params)
        self.t = 0
        self.slots: dict[str, list[np.ndarray]] = {}
        for p in self.params:
            if state.kind == "adam":
                self.slots[p.name] = [np.zeros_like(p.value), np.zeros_like(p.value)]
            elif state.momentum:
                self.slots[p.name] = [np.zeros_like(p.value)]

    @property
    def step_size(self) -> float:
        return self.state.step_size

    @step_size.setter
    def step_size(self, value: float):
        if value <= 0:
            raise ValueError("step_size must be positive")
        self.state.step_size = value

    def step(self) -> float:
        """Clip and update; returns the pre-clip global gradient norm."""
        trainable = [p for p in self.params if p.trainable]
        for p in trainable:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in {p.name}; step aborted")
        norm = clip_grad_norm(trainable, self.state.clip_norm)
        self.t += 1
        s = self.state
        for p in trainable:
            g = p.grad
            if s.kind == "sgd":
                if s.momentum:
                    v = self.slots[p.name][0]
                    v *= s.momentum
                    v += g
                    g = v
                p.value -= p.value.dtype.type(s.step_size) * g
            else:
                m, v = self.slots[p.name]
                m *= s.beta1
                m += (1 - s.beta1) * g
                v *= s.beta2
                v += (1 - s.beta2) * g * g
                lr = s.step_size * math.sqrt(1 - s.beta2 ** self.t) / (1 - s.beta1 ** self.t)
                p.value -= (lr * m / (np.sqrt(v) + s.eps)).astype(p.value.dtype)
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"optim/t": np.array([self.t], dtype=np.int64)}
        for name, slots in self.slots.items():
            for k, arr in enumerate(slots):
                out[f"optim/{k}/{name}"] = arr
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.t = int(arrays["optim/t"][0])
        for name, slots in self.slots.items():
            for k in range(len(slots)):
                slots[k][...] = arrays[f"optim/{k}/{name}"]


def clip_and_step(opt: Optimizer) -> float:
    return opt.step()
