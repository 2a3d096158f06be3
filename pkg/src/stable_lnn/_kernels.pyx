# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_fallback``.

Same signatures and semantics; results agree with the numpy reference to
rounding error.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp, fabs, log1p, sqrt, tanh, hypot

cnp.import_array()

NAME = "compiled"

GELU, SOFTPLUS, XTANHK, TANH = 0, 1, 2, 3

cdef double INV_SQRT_2PI = 0.3989422804014327
cdef double INV_SQRT_2 = 0.7071067811865476


cdef inline void _derivs(int kind, double x, double k, double* f) noexcept nogil:
    cdef double cdf, pdf, s, s1, t, e
    if kind == 0:
        cdf = 0.5 * erfc(-x * INV_SQRT_2)
        pdf = INV_SQRT_2PI * exp(-0.5 * x * x)
        f[0] = x * cdf
        f[1] = cdf + x * pdf
        f[2] = pdf * (2.0 - x * x)
        f[3] = pdf * (x * x * x - 4.0 * x)
    elif kind == 1:
        if x >= 0:
            e = exp(-x)
            s = 1.0 / (1.0 + e)
            f[0] = x + log1p(e)
        else:
            e = exp(x)
            s = e / (1.0 + e)
            f[0] = log1p(e)
        s1 = s * (1.0 - s)
        f[1] = s
        f[2] = s1
        f[3] = s1 * (1.0 - 2.0 * s)
    elif kind == 2:
        t = tanh(k * x)
        s = 1.0 - t * t
        f[0] = x * t
        f[1] = t + k * x * s
        f[2] = 2.0 * k * s - 2.0 * k * k * x * t * s
        f[3] = -6.0 * k * k * t * s - 2.0 * k * k * k * x * s * s + 4.0 * k * k * k * x * t * t * s
    else:
        t = tanh(x)
        s = 1.0 - t * t
        f[0] = t
        f[1] = s
        f[2] = -2.0 * t * s
        f[3] = s * (6.0 * t * t - 2.0)


def _check_kind(int kind):
    if kind < 0 or kind > 3:
        raise ValueError(f"unknown activation code {kind}")


def act_derivs(int kind, x, double k=0.5):
    """Value and first three derivatives of an activation, elementwise."""
    _check_kind(kind)
    xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] xv = xa.reshape(-1)
    cdef Py_ssize_t N = xv.shape[0], i
    out = np.empty((4, N))
    cdef double[:, ::1] o = out
    cdef double f[4]
    with nogil:
        for i in range(N):
            _derivs(kind, xv[i], k, f)
            o[0, i] = f[0]
            o[1, i] = f[1]
            o[2, i] = f[2]
            o[3, i] = f[3]
    shape = xa.shape
    return out[0].reshape(shape), out[1].reshape(shape), out[2].reshape(shape), out[3].reshape(shape)


def act_forward(int kind, double k, T, Py_ssize_t d):
    """Push a jet tensor ``T`` (B, K, m) through an activation."""
    _check_kind(kind)
    Ta = np.ascontiguousarray(T, dtype=np.float64)
    cdef double[:, :, ::1] t = Ta
    cdef Py_ssize_t B = t.shape[0], K = t.shape[1], m = t.shape[2]
    if K != 1 + d + d * (d + 1) // 2:
        raise ValueError("jet width does not match d")
    out = np.empty_like(Ta)
    F1 = np.empty((B, m))
    F2 = np.empty((B, m))
    F3 = np.empty((B, m))
    cdef double[:, :, ::1] o = out
    cdef double[:, ::1] f1 = F1, f2 = F2, f3 = F3
    cdef Py_ssize_t b, c, i, j, p
    cdef double f[4]
    with nogil:
        for b in range(B):
            for c in range(m):
                _derivs(kind, t[b, 0, c], k, f)
                o[b, 0, c] = f[0]
                f1[b, c] = f[1]
                f2[b, c] = f[2]
                f3[b, c] = f[3]
            for i in range(d):
                for c in range(m):
                    o[b, 1 + i, c] = f1[b, c] * t[b, 1 + i, c]
            p = 1 + d
            for i in range(d):
                for j in range(i, d):
                    for c in range(m):
                        o[b, p, c] = f1[b, c] * t[b, p, c] + f2[b, c] * t[b, 1 + i, c] * t[b, 1 + j, c]
                    p += 1
    return out, F1, F2, F3


def act_backward(T, F1, F2, F3, G, Py_ssize_t d):
    """Adjoint of :func:`act_forward` with respect to its input jet tensor."""
    Ta = np.ascontiguousarray(T, dtype=np.float64)
    Ga = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[:, :, ::1] t = Ta
    cdef double[:, :, ::1] g = Ga
    cdef double[:, ::1] f1 = np.ascontiguousarray(F1, dtype=np.float64)
    cdef double[:, ::1] f2 = np.ascontiguousarray(F2, dtype=np.float64)
    cdef double[:, ::1] f3 = np.ascontiguousarray(F3, dtype=np.float64)
    cdef Py_ssize_t B = t.shape[0], K = t.shape[1], m = t.shape[2]
    if K != 1 + d + d * (d + 1) // 2 or g.shape[0] != B or g.shape[1] != K or g.shape[2] != m:
        raise ValueError("jet tensor shapes disagree")
    out = np.zeros_like(Ta)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, c, i, j, p
    cdef double gh, a2, a3
    with nogil:
        for b in range(B):
            for c in range(m):
                o[b, 0, c] = f1[b, c] * g[b, 0, c]
            for i in range(d):
                for c in range(m):
                    o[b, 0, c] += f2[b, c] * g[b, 1 + i, c] * t[b, 1 + i, c]
                    o[b, 1 + i, c] = f1[b, c] * g[b, 1 + i, c]
            p = 1 + d
            for i in range(d):
                for j in range(i, d):
                    for c in range(m):
                        gh = g[b, p, c]
                        o[b, 0, c] += (f2[b, c] * t[b, p, c]
                                       + f3[b, c] * t[b, 1 + i, c] * t[b, 1 + j, c]) * gh
                        o[b, p, c] = f1[b, c] * gh
                        if i == j:
                            o[b, 1 + i, c] += 2.0 * f2[b, c] * gh * t[b, 1 + i, c]
                        else:
                            o[b, 1 + i, c] += f2[b, c] * gh * t[b, 1 + j, c]
                            o[b, 1 + j, c] += f2[b, c] * gh * t[b, 1 + i, c]
                    p += 1
    return out


cdef void _jacobi_one(double[:, ::1] A, double[:, ::1] V, double tol, int max_sweeps) noexcept nogil:
    cdef Py_ssize_t n = A.shape[0], p, q, r
    cdef double fro = 0.0, off, apq, theta, t, c, s, ap, aq
    cdef int sweep
    for p in range(n):
        for q in range(n):
            fro += A[p, q] * A[p, q]
            V[p, q] = 1.0 if p == q else 0.0
    fro = sqrt(fro)
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    off += A[p, q] * A[p, q]
        if sqrt(off) <= tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif theta > 0.0:
                    t = 1.0 / (theta + hypot(theta, 1.0))
                else:
                    t = -1.0 / (-theta + hypot(theta, 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    ap = A[r, p]
                    aq = A[r, q]
                    A[r, p] = c * ap - s * aq
                    A[r, q] = s * ap + c * aq
                for r in range(n):
                    ap = A[p, r]
                    aq = A[q, r]
                    A[p, r] = c * ap - s * aq
                    A[q, r] = s * ap + c * aq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for r in range(n):
                    ap = V[r, p]
                    aq = V[r, q]
                    V[r, p] = c * ap - s * aq
                    V[r, q] = s * ap + c * aq


def jacobi_eigh(A, double tol=1e-15, int max_sweeps=60):
    """Cyclic Jacobi eigen-solver on a stack (B, n, n) of symmetric matrices.

    Returns ascending eigenvalues (B, n) and eigenvectors (B, n, n).
    """
    W = np.array(A, dtype=np.float64, copy=True, order="C")
    cdef double[:, :, ::1] a = W
    cdef Py_ssize_t B = a.shape[0], n = a.shape[1], b, i
    Vout = np.empty_like(W)
    cdef double[:, :, ::1] v = Vout
    with nogil:
        for b in range(B):
            _jacobi_one(a[b], v[b], tol, max_sweeps)
    w = np.diagonal(W, axis1=1, axis2=2).copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    Vout = np.take_along_axis(Vout, order[:, None, :], axis=2)
    return w, Vout
