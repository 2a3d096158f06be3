"""Small dense matrix kernels with derivative rules.

Every function accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``.
The sizes in this package never exceed 4x4, so clarity wins over blocking;
the batched eigen-solver is routed through the compiled backend when present.
"""
from __future__ import annotations

import numpy as np

from . import _backend
from .errors import SingularMassMatrix

#: |det| threshold, applied after row equilibration.
DET_EPS = 1e-12
#: 1-norm condition number threshold.
COND_MAX = 1e12


def _as_stack(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"expected square matrix (..., n, n), got shape {M.shape}")
    return M


def _check_finite(M, what="matrix"):
    if not np.all(np.isfinite(M)):
        raise FloatingPointError(f"non-finite entries in {what}")


def sym_eig(M, tol=1e-10):
    """Eigen-decomposition of symmetric matrices by cyclic Jacobi rotations.

    Parameters
    ----------
    M : array_like, shape (..., n, n)
        Symmetric input; asymmetry above ``tol`` (relative) is rejected, smaller
        asymmetry is removed by symmetrizing.

    Returns
    -------
    w : ndarray, shape (..., n)
        Eigenvalues in ascending order.
    V : ndarray, shape (..., n, n)
        Orthonormal eigenvectors as columns, ``M @ V == V * w``.
    """
    M = _as_stack(M)
    _check_finite(M)
    scale = np.max(np.abs(M), axis=(-2, -1), keepdims=True)
    asym = np.max(np.abs(M - np.swapaxes(M, -1, -2)), axis=(-2, -1), keepdims=True)
    if np.any(asym > tol * np.maximum(scale, 1.0)):
        raise ValueError("sym_eig: matrix is not symmetric")
    S = 0.5 * (M + np.swapaxes(M, -1, -2))
    n = S.shape[-1]
    flat = np.ascontiguousarray(S.reshape(-1, n, n))
    w, V = _backend.kernels.jacobi_eigh(flat)
    return w.reshape(S.shape[:-1]), V.reshape(S.shape)


def eig_penalty_and_grad(M, lam, tol=1e-12):
    """Penalty ``lam * sum(|w_i| for w_i < 0)`` and its gradient w.r.t. ``M``.

    Uses ``dw_i/dM = v_i v_i^T``.  Eigenvalues in ``[-tol, 0)`` count as zero;
    for a repeated negative eigenvalue the summed projector is the subgradient.
    """
    w, V = sym_eig(M)
    neg = w < -tol
    penalty = lam * np.sum(np.where(neg, -w, 0.0), axis=-1)
    # -lam * sum_i [neg_i] v_i v_i^T
    Vn = V * neg[..., None, :]
    grad = -lam * (Vn @ np.swapaxes(V, -1, -2))
    return penalty, grad


def lu_factor(M):
    """Partial-pivot LU of a stack of matrices.

    Returns ``(LU, perm, sign)`` with unit-lower ``L`` and upper ``U`` packed in
    ``LU``; ``perm[..., i]`` is the source row of row ``i`` and ``sign`` the
    permutation parity.
    """
    A = _as_stack(M).copy()
    shape = A.shape
    n = shape[-1]
    A = A.reshape(-1, n, n)
    B = A.shape[0]
    perm = np.tile(np.arange(n), (B, 1))
    sign = np.ones(B)
    rows = np.arange(B)
    for k in range(n):
        p = k + np.argmax(np.abs(A[:, k:, k]), axis=1)
        swap = p != k
        if np.any(swap):
            r = rows[swap]
            pk = p[swap]
            tmp = A[r, k, :].copy()
            A[r, k, :] = A[r, pk, :]
            A[r, pk, :] = tmp
            tp = perm[r, k].copy()
            perm[r, k] = perm[r, pk]
            perm[r, pk] = tp
            sign[swap] *= -1.0
        piv = A[:, k, k]
        safe = np.where(piv == 0.0, 1.0, piv)
        f = np.where(piv[:, None] == 0.0, 0.0, A[:, k + 1:, k] / safe[:, None])
        A[:, k + 1:, k] = f
        A[:, k + 1:, k + 1:] -= f[:, :, None] * A[:, k, None, k + 1:]
    return A.reshape(shape), perm.reshape(shape[:-1]), sign.reshape(shape[:-2])


def det(M):
    """Determinant via :func:`lu_factor`."""
    LU, _, sign = lu_factor(M)
    return sign * np.prod(np.diagonal(LU, axis1=-2, axis2=-1), axis=-1)


def leading_minors(M):
    """Determinants of the top-left ``k x k`` blocks, ``k = 1..n``."""
    M = _as_stack(M)
    n = M.shape[-1]
    out = np.empty(M.shape[:-1])
    for k in range(1, n + 1):
        out[..., k - 1] = det(M[..., :k, :k])
    return out


def cofactor(M):
    """Cofactor matrix, i.e. ``d det(M) / dM``; valid for singular ``M``."""
    M = _as_stack(M)
    n = M.shape[-1]
    if n == 1:
        return np.ones_like(M)
    C = np.empty_like(M)
    idx = np.arange(n)
    for i in range(n):
        ri = idx[idx != i]
        for j in range(n):
            cj = idx[idx != j]
            sub = M[..., ri[:, None], cj[None, :]]
            C[..., i, j] = (-1.0) ** (i + j) * det(sub)
    return C


det_grad = cofactor


def singular_mask(M, det_eps=DET_EPS, cond_max=COND_MAX):
    """Boolean mask of matrices treated as singular.

    A matrix is singular when the determinant of its row-equilibrated form is
    below ``det_eps`` in magnitude, or its 1-norm condition number exceeds
    ``cond_max``, or it contains non-finite entries.
    """
    M = _as_stack(M)
    finite = np.all(np.isfinite(M), axis=(-2, -1))
    Mf = np.where(finite[..., None, None], M, 0.0)
    rmax = np.max(np.abs(Mf), axis=-1, keepdims=True)
    zero_row = np.any(rmax[..., 0] == 0.0, axis=-1)
    Me = Mf / np.where(rmax == 0.0, 1.0, rmax)
    d = det(Me)
    sing = ~finite | zero_row | (np.abs(d) < det_eps)
    ok = ~sing
    if np.any(ok):
        Mi = np.where(ok[..., None, None], Me, np.eye(M.shape[-1]))
        inv = _inverse_unchecked(Mi)
        cond = np.max(np.sum(np.abs(Mi), axis=-2), axis=-1) * np.max(
            np.sum(np.abs(inv), axis=-2), axis=-1
        )
        sing = sing | (ok & ~(cond <= cond_max))
    return sing


def _lu_solve(LU, perm, b):
    n = LU.shape[-1]
    x = np.take_along_axis(b, perm, axis=-1).copy()
    for i in range(n):
        x[..., i] -= np.sum(LU[..., i, :i] * x[..., :i], axis=-1)
    for i in range(n - 1, -1, -1):
        x[..., i] -= np.sum(LU[..., i, i + 1:] * x[..., i + 1:], axis=-1)
        x[..., i] /= LU[..., i, i]
    return x


def _inverse_unchecked(M):
    LU, perm, _ = lu_factor(M)
    n = M.shape[-1]
    cols = []
    eye = np.eye(n)
    for j in range(n):
        b = np.broadcast_to(eye[j], M.shape[:-1]).copy()
        cols.append(_lu_solve(LU, perm, b))
    return np.stack(cols, axis=-1)


def solve(M, b, check=True):
    """Solve ``M x = b`` by Gaussian elimination with partial pivoting.

    Raises
    ------
    SingularMassMatrix
        If any matrix in the stack fails :func:`singular_mask` (with ``check``).
    """
    M = _as_stack(M)
    b = np.asarray(b, dtype=np.float64)
    if check and np.any(singular_mask(M)):
        raise SingularMassMatrix("matrix is singular or ill-conditioned")
    LU, perm, _ = lu_factor(M)
    return _lu_solve(LU, perm, np.broadcast_to(b, M.shape[:-1]).copy())


def solve_masked(M, b):
    """Batched solve that never raises.

    Returns ``(x, singular)``; rows flagged singular get ``x = 0``.
    """
    M = _as_stack(M)
    sing = singular_mask(M)
    eye = np.eye(M.shape[-1])
    Ms = np.where(sing[..., None, None], eye, M)
    bs = np.where(sing[..., None], 0.0, np.nan_to_num(b))
    return solve(Ms, bs, check=False), sing


def inverse(M, check=True):
    """Matrix inverse; raises :class:`SingularMassMatrix` when singular."""
    M = _as_stack(M)
    if check and np.any(singular_mask(M)):
        raise SingularMassMatrix("matrix is singular or ill-conditioned")
    return _inverse_unchecked(M)
