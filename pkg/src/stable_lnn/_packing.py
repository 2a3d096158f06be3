"""Packed upper-triangle helpers for symmetric second-order coefficients."""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def triu(d):
    """Row-major upper-triangle index pair ``(I, J)`` for dimension ``d``."""
    I, J = np.triu_indices(d)
    I.setflags(write=False)
    J.setflags(write=False)
    return I, J


def n_packed(d):
    return d * (d + 1) // 2


def pack(H):
    """Packed upper triangle of ``H`` along the last two axes."""
    d = H.shape[-1]
    I, J = triu(d)
    return H[..., I, J]


def unpack(p, d):
    """Full symmetric matrix from packed coefficients (last axis)."""
    I, J = triu(d)
    out = np.zeros(p.shape[:-1] + (d, d))
    out[..., I, J] = p
    out[..., J, I] = p
    return out


def sym_outer(a, b):
    """Packed ``a_i b_j + a_j b_i`` over the last axis."""
    I, J = triu(a.shape[-1])
    return a[..., I] * b[..., J] + a[..., J] * b[..., I]


def sym_contract(w, b):
    """Gradient of ``sum_k w_k * sym_outer(a, b)_k`` with respect to ``a``."""
    d = b.shape[-1]
    S = unpack(w, d)
    idx = np.arange(d)
    S[..., idx, idx] *= 2.0
    return np.einsum("...ij,...j->...i", S, b)


def full_adjoint_to_packed(A):
    """Map an adjoint on the full symmetric matrix to its packed coefficients.

    Each off-diagonal packed entry feeds both ``(i, j)`` and ``(j, i)``.
    """
    d = A.shape[-1]
    I, J = triu(d)
    out = A[..., I, J] + A[..., J, I]
    diag = I == J
    out[..., diag] = A[..., I[diag], J[diag]]
    return out
