# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Dilated 2-D convolution as one GEMM per kernel tap.

Each (B, C, Hp, Wp) plane is read as a flat row of length Hp*Wp. Shifting that
row by ``i*dh*Wp + j*dw`` lines tap (i, j) up with the output grid when the
output is laid out with the padded row width Wp, so every tap is a single
matrix product on a strided view and no im2col buffer is needed. The extra
``Wp - Wo`` columns per output row are scratch and are dropped (forward) or
held at zero (backward) by the caller.

Weights arrive tap-major, shaped (kh, kw, Co, Ci).
"""
from scipy.linalg.cython_blas cimport sgemm, dgemm

ctypedef fused real:
    float
    double


cdef inline void gemm(char *ta, char *tb, int m, int n, int k, real *a, int lda,
                      real *b, int ldb, real *c, int ldc) noexcept nogil:
    cdef float sone = 1.0
    cdef double done = 1.0
    if real is float:
        sgemm(ta, tb, &m, &n, &k, &sone, a, &lda, b, &ldb, &sone, c, &ldc)
    else:
        dgemm(ta, tb, &m, &n, &k, &done, a, &lda, b, &ldb, &done, c, &ldc)


def forward(real[:, :, :, ::1] xp, real[:, :, :, ::1] wt, Py_ssize_t dh, Py_ssize_t dw,
            real[:, :, :, ::1] of):
    """Accumulate into ``of`` (B, Co, Ho, Wp), which holds the bias on entry."""
    cdef int nb = xp.shape[0], ci = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef int kh = wt.shape[0], kw = wt.shape[1], co = wt.shape[2]
    cdef int ho = of.shape[2], wo = wp - (kw - 1) * dw
    cdef int n = (ho - 1) * wp + wo
    cdef int b, i, j, off
    with nogil:
        for b in range(nb):
            for i in range(kh):
                for j in range(kw):
                    off = i * dh * wp + j * dw
                    # out^T (n x co) += x^T (n x ci) . w^T (ci x co), column-major
                    gemm(b"N", b"N", n, co, ci, &xp[b, 0, 0, 0] + off, hp * wp,
                         &wt[i, j, 0, 0], ci, &of[b, 0, 0, 0], ho * wp)


def backward_input(real[:, :, :, ::1] gf, real[:, :, :, ::1] wt, Py_ssize_t dh, Py_ssize_t dw,
                   real[:, :, :, ::1] gxp):
    """Accumulate the padded-input gradient into zeroed ``gxp``.

    ``gf`` is the output gradient laid out as (B, Co, Ho, Wp) with zeros in
    the scratch columns.
    """
    cdef int nb = gxp.shape[0], ci = gxp.shape[1], hp = gxp.shape[2], wp = gxp.shape[3]
    cdef int kh = wt.shape[0], kw = wt.shape[1], co = wt.shape[2]
    cdef int ho = gf.shape[2], wo = wp - (kw - 1) * dw
    cdef int n = (ho - 1) * wp + wo
    cdef int b, i, j, off
    with nogil:
        for b in range(nb):
            for i in range(kh):
                for j in range(kw):
                    off = i * dh * wp + j * dw
                    gemm(b"N", b"T", n, ci, co, &gf[b, 0, 0, 0], ho * wp,
                         &wt[i, j, 0, 0], ci, &gxp[b, 0, 0, 0] + off, hp * wp)


def backward_weight(real[:, :, :, ::1] gf, real[:, :, :, ::1] xp, Py_ssize_t dh, Py_ssize_t dw,
                    real[:, :, :, ::1] gwt):
    """Accumulate the tap-major weight gradient into zeroed ``gwt``."""
    cdef int nb = xp.shape[0], ci = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef int kh = gwt.shape[0], kw = gwt.shape[1], co = gwt.shape[2]
    cdef int ho = gf.shape[2], wo = wp - (kw - 1) * dw
    cdef int n = (ho - 1) * wp + wo
    cdef int b, i, j, off
    with nogil:
        for b in range(nb):
            for i in range(kh):
                for j in range(kw):
                    off = i * dh * wp + j * dw
                    gemm(b"T", b"N", ci, co, n, &xp[b, 0, 0, 0] + off, hp * wp,
                         &gf[b, 0, 0, 0], ho * wp, &gwt[i, j, 0, 0], ci)
