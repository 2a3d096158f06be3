"""Pure numpy implementations of the hot kernels.

These define the reference semantics; ``_kernels.pyx`` must agree with them to
rounding error.  Jet tensors use the slot layout ``[value, grad(d), hess(P)]``
along axis 1, with ``P = d (d + 1) / 2`` packed upper-triangle entries.
"""
import numpy as np
from scipy.special import expit, ndtr

from ._packing import triu

NAME = "python"

GELU, SOFTPLUS, XTANHK, TANH = 0, 1, 2, 3

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def act_derivs(kind, x, k=0.5):
    """Value and first three derivatives of an activation, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if kind == GELU:
        cdf = ndtr(x)
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return x * cdf, cdf + x * pdf, pdf * (2.0 - x * x), pdf * (x * x * x - 4.0 * x)
    if kind == SOFTPLUS:
        s = expit(x)
        s1 = s * (1.0 - s)
        return np.logaddexp(0.0, x), s, s1, s1 * (1.0 - 2.0 * s)
    if kind == XTANHK:
        t = np.tanh(k * x)
        s = 1.0 - t * t
        f1 = t + k * x * s
        f2 = 2.0 * k * s - 2.0 * k * k * x * t * s
        f3 = -6.0 * k * k * t * s - 2.0 * k ** 3 * x * s * s + 4.0 * k ** 3 * x * t * t * s
        return x * t, f1, f2, f3
    if kind == TANH:
        t = np.tanh(x)
        s = 1.0 - t * t
        return t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)
    raise ValueError(f"unknown activation code {kind}")


def act_forward(kind, k, T, d):
    """Push a jet tensor ``T`` of shape (B, K, m) through an activation.

    Returns the output jet tensor and the derivative arrays ``(f1, f2, f3)``
    of shape (B, m) needed by :func:`act_backward`.
    """
    I, J = triu(d)
    z = T[:, 0, :]
    Zg = T[:, 1:1 + d, :]
    Zh = T[:, 1 + d:, :]
    f0, f1, f2, f3 = act_derivs(kind, z, k)
    out = np.empty_like(T)
    out[:, 0, :] = f0
    out[:, 1:1 + d, :] = f1[:, None, :] * Zg
    out[:, 1 + d:, :] = f1[:, None, :] * Zh + f2[:, None, :] * (Zg[:, I, :] * Zg[:, J, :])
    return out, f1, f2, f3


def act_backward(T, f1, f2, f3, G, d):
    """Adjoint of :func:`act_forward` with respect to its input jet tensor."""
    I, J = triu(d)
    Zg = T[:, 1:1 + d, :]
    Zh = T[:, 1 + d:, :]
    G0 = G[:, 0, :]
    Gg = G[:, 1:1 + d, :]
    Gh = G[:, 1 + d:, :]
    out = np.empty_like(T)
    out[:, 0, :] = (
        f1 * G0
        + f2 * np.sum(Gg * Zg, axis=1)
        + f2 * np.sum(Gh * Zh, axis=1)
        + f3 * np.sum(Gh * Zg[:, I, :] * Zg[:, J, :], axis=1)
    )
    # symmetric matrix of hessian adjoints, diagonal doubled
    S = np.zeros((T.shape[0], d, d, T.shape[2]))
    S[:, I, J, :] = Gh
    S[:, J, I, :] = Gh
    idx = np.arange(d)
    S[:, idx, idx, :] *= 2.0
    out[:, 1:1 + d, :] = f1[:, None, :] * Gg + f2[:, None, :] * np.einsum("bijm,bjm->bim", S, Zg)
    out[:, 1 + d:, :] = f1[:, None, :] * Gh
    return out


def jacobi_eigh(A, tol=1e-15, max_sweeps=60):
    """Cyclic Jacobi eigen-solver on a stack (B, n, n) of symmetric matrices.

    Returns ascending eigenvalues (B, n) and eigenvectors (B, n, n).
    """
    A = np.array(A, dtype=np.float64, copy=True)
    B, n, _ = A.shape
    V = np.tile(np.eye(n), (B, 1, 1))
    if n == 1:
        return A[:, :, 0].copy(), V
    fro = np.sqrt(np.sum(A * A, axis=(1, 2)))
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[:, offmask] ** 2, axis=1))
        if np.all(off <= tol * fro):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                active = np.abs(apq) > 0.0
                if not np.any(active):
                    continue
                app = A[:, p, p]
                aqq = A[:, q, q]
                safe = np.where(active, apq, 1.0)
                theta = (aqq - app) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J, J the (p, q) Givens rotation
                Ap = A[:, :, p].copy()
                Aq = A[:, :, q].copy()
                A[:, :, p] = c[:, None] * Ap - s[:, None] * Aq
                A[:, :, q] = s[:, None] * Ap + c[:, None] * Aq
                Ap = A[:, p, :].copy()
                Aq = A[:, q, :].copy()
                A[:, p, :] = c[:, None] * Ap - s[:, None] * Aq
                A[:, q, :] = s[:, None] * Ap + c[:, None] * Aq
                A[:, p, q] = np.where(active, 0.0, A[:, p, q])
                A[:, q, p] = A[:, p, q]
                Vp = V[:, :, p].copy()
                Vq = V[:, :, q].copy()
                V[:, :, p] = c[:, None] * Vp - s[:, None] * Vq
                V[:, :, q] = s[:, None] * Vp + c[:, None] * Vq
    w = np.diagonal(A, axis1=1, axis2=2).copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w, V
