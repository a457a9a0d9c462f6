"""Dilated 2-D convolution with a compiled kernel and a numpy fallback.

The compiled extension is picked at import when it is importable; set
``VOICEID_BACKEND=numpy`` to force the fallback. Both paths take and return
the same arrays, so callers never need to know which one ran.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from . import _conv2d_ext
except ImportError:  # pragma: no cover - depends on the build
    _conv2d_ext = None

BACKENDS = ("compiled", "numpy")


def _initial_backend() -> str:
    requested = os.environ.get("VOICEID_BACKEND", "auto").lower()
    if requested == "numpy" or _conv2d_ext is None:
        return "numpy"
    if requested not in ("auto", "compiled"):
        raise ValueError(f"unknown VOICEID_BACKEND {requested!r}")
    return "compiled"


_backend = _initial_backend()


def compiled_available() -> bool:
    return _conv2d_ext is not None


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    if name == "compiled" and _conv2d_ext is None:
        raise RuntimeError("compiled conv2d kernels are not built")
    _backend = name


def _pad(x, padding):
    ph, pw = padding
    if ph == 0 and pw == 0:
        return np.ascontiguousarray(x)
    # np.pad keeps the input's memory order; the kernels need C order
    return np.ascontiguousarray(np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))))


def output_shape(in_hw, kernel, dilation, padding):
    h = in_hw[0] + 2 * padding[0] - dilation[0] * (kernel[0] - 1)
    w = in_hw[1] + 2 * padding[1] - dilation[1] * (kernel[1] - 1)
    return h, w


def _tap_major(w):
    """(Co, Ci, kh, kw) -> contiguous (kh, kw, Co, Ci) for the compiled kernels."""
    return np.ascontiguousarray(w.transpose(2, 3, 0, 1))


# numpy fallback ---------------------------------------------------------------

def _taps(xp, kernel, dilation, out_hw):
    """Stack shifted views of ``xp``: (B, Ci, kh*kw, Ho, Wo)."""
    kh, kw = kernel
    dh, dw = dilation
    ho, wo = out_hw
    b, ci = xp.shape[:2]
    cols = np.empty((b, ci, kh * kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i * kw + j] = xp[:, :, i * dh:i * dh + ho, j * dw:j * dw + wo]
    return cols


def _forward_numpy(xp, w, b, dilation, out_hw):
    co, ci, kh, kw = w.shape
    cols = _taps(xp, (kh, kw), dilation, out_hw)
    flat = cols.reshape(xp.shape[0], ci * kh * kw, out_hw[0] * out_hw[1])
    out = np.matmul(w.reshape(co, -1), flat)
    out += b[None, :, None]
    return out.reshape(xp.shape[0], co, *out_hw)


def _backward_numpy(g, xp, w, dilation):
    co, ci, kh, kw = w.shape
    nb, _, ho, wo = g.shape
    dh, dw = dilation
    gflat = g.reshape(nb, co, ho * wo)
    cols = _taps(xp, (kh, kw), dilation, (ho, wo)).reshape(nb, ci * kh * kw, ho * wo)
    gw = np.einsum("bok,bck->oc", gflat, cols, optimize=True).reshape(w.shape)
    dcols = np.matmul(w.reshape(co, -1).T, gflat).reshape(nb, ci, kh, kw, ho, wo)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i * dh:i * dh + ho, j * dw:j * dw + wo] += dcols[:, :, i, j]
    return gxp, gw


# public entry points ----------------------------------------------------------

def forward(x, w, b, dilation=(1, 1), padding=(0, 0)):
    """Return ``(out, xp)``; ``xp`` is the padded input kept for backward."""
    xp = _pad(x, padding)
    out_hw = output_shape(x.shape[2:], w.shape[2:], dilation, padding)
    if out_hw[0] < 1 or out_hw[1] < 1:
        raise ValueError(f"input {x.shape[2:]} too small for kernel {w.shape[2:]} with dilation {dilation}")
    if _backend == "compiled":
        nb, co = x.shape[0], w.shape[0]
        of = np.empty((nb, co, out_hw[0], xp.shape[3]), dtype=x.dtype)
        of[...] = b.astype(x.dtype)[None, :, None, None]
        _conv2d_ext.forward(xp, _tap_major(w), dilation[0], dilation[1], of)
        return np.ascontiguousarray(of[..., :out_hw[1]]), xp
    return _forward_numpy(xp, w, b, dilation, out_hw), xp


def backward(g, xp, w, dilation=(1, 1), padding=(0, 0)):
    """Return ``(grad_input, grad_weight, grad_bias)`` for upstream grad ``g``."""
    g = np.ascontiguousarray(g)
    if _backend == "compiled":
        nb, co, ho, wo = g.shape
        gf = np.zeros((nb, co, ho, xp.shape[3]), dtype=g.dtype)
        gf[..., :wo] = g
        gxp = np.zeros_like(xp)
        gwt = np.zeros((w.shape[2], w.shape[3], co, w.shape[1]), dtype=w.dtype)
        _conv2d_ext.backward_input(gf, _tap_major(w), dilation[0], dilation[1], gxp)
        _conv2d_ext.backward_weight(gf, xp, dilation[0], dilation[1], gwt)
        gw = np.ascontiguousarray(gwt.transpose(2, 3, 0, 1))
    else:
        gxp, gw = _backward_numpy(g, xp, w, dilation)
    gb = g.sum(axis=(0, 2, 3))
    ph, pw = padding
    gx = gxp[:, :, ph:gxp.shape[2] - ph, pw:gxp.shape[3] - pw]
    return np.ascontiguousarray(gx), gw, gb
