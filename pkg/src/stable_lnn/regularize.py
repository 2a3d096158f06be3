"""Hessian-signature penalties and the characteristic-scale tracker.

All penalties accept a single ``(n, n)`` matrix or a stack ``(B, n, n)`` and
return per-matrix penalties together with their gradient w.r.t. every entry
of ``H`` (entries treated as independent).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import linalg

MODES = ("none", "eigen", "sylvester", "lorentzian")
DEFAULT_EPS = 1e-8
DEFAULT_WINDOW = 50


@dataclass
class ScaleState:
    """Running characteristic scales ``c_i`` (median of ``|H_ii|``).

    ``c`` starts at one and becomes the median over the last ``window`` batch
    medians once :func:`update_scales` has been called.
    """

    n: int
    epsilon: float = DEFAULT_EPS
    window: int = DEFAULT_WINDOW
    c: np.ndarray = None
    history: deque = field(default=None, repr=False)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.c is None:
            self.c = np.ones(self.n)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.history is None:
            self.history = deque(maxlen=self.window)

    @property
    def s(self):
        """Cumulative products ``s_k = prod_{i<=k} c_i``."""
        return np.cumprod(self.c)

    @property
    def s_spatial(self):
        return np.cumprod(self.c[1:])

    def to_dict(self):
        return {"n": self.n, "epsilon": self.epsilon, "window": self.window,
                "c": self.c.tolist(), "history": [h.tolist() for h in self.history]}

    @classmethod
    def from_dict(cls, d):
        st = cls(d["n"], d["epsilon"], d["window"], np.asarray(d["c"]))
        for h in d["history"]:
            st.history.append(np.asarray(h))
        return st


def update_scales(state, batch_H):
    """Push the per-batch median of ``|H_ii|`` and refresh ``state.c``.

    Non-finite matrices are ignored.  Returns ``state`` (updated in place).
    """
    H = np.asarray(batch_H, dtype=np.float64)
    if H.ndim == 2:
        H = H[None]
    if H.shape[0] == 0:
        raise ValueError("empty batch")
    diag = np.abs(np.diagonal(H, axis1=-2, axis2=-1))
    diag = diag[np.all(np.isfinite(diag), axis=1)]
    if diag.shape[0] == 0:
        return state
    state.history.append(np.median(diag, axis=0))
    state.c = np.median(np.stack(state.history), axis=0)
    return state


def eigen_penalty(H, state, lam):
    """``lam * sum |w_i|`` over negative eigenvalues of ``H`` (scales unused)."""
    return linalg.eig_penalty_and_grad(H, lam)


def _minor_terms(H, weights):
    """``sum_k ReLU(-det M_k) * weights_k`` and its gradient.

    ``H`` has shape ``(B, m, m)``; ``weights`` has length ``m``.
    """
    B, m, _ = H.shape
    pen = np.zeros(B)
    grad = np.zeros_like(H)
    for k in range(1, m + 1):
        Mk = H[:, :k, :k]
        dk = linalg.det(Mk)
        viol = dk < 0.0
        if not np.any(viol):
            continue
        pen += np.where(viol, -dk, 0.0) * weights[k - 1]
        cof = linalg.cofactor(Mk[viol])
        grad[viol, :k, :k] -= weights[k - 1] * cof
    return pen, grad


def _stack(H):
    H = np.asarray(H, dtype=np.float64)
    return (H[None], True) if H.ndim == 2 else (H, False)


def sylvester_classical(H, state, lam):
    """Scale-invariant Sylvester penalty on the leading principal minors.

    ``lam * sum_k ReLU(-det M_k) / (s_k + eps)`` with ``s_k = prod c_i``.
    """
    Hs, single = _stack(H)
    w = lam / (state.s + state.epsilon)
    pen, grad = _minor_terms(Hs, w)
    return (pen[0], grad[0]) if single else (pen, grad)


def lorentzian_sylvester(H, state, lam):
    """Lorentzian-signature penalty with coordinate 0 timelike.

    ``lam * (ReLU(M_00) / (c_0 + eps) + sum_k ReLU(-det M^sp_k) / (s^sp_k + eps))``
    where ``M^sp`` is the spatial block ``H[1:, 1:]``.
    """
    Hs, single = _stack(H)
    if Hs.shape[-1] < 2:
        raise ValueError("Lorentzian penalty needs n >= 2")
    eps = state.epsilon
    m00 = Hs[:, 0, 0]
    w0 = lam / (state.c[0] + eps)
    pen = np.maximum(m00, 0.0) * w0
    grad = np.zeros_like(Hs)
    grad[:, 0, 0] = np.where(m00 > 0.0, w0, 0.0)
    psp, gsp = _minor_terms(Hs[:, 1:, 1:], lam / (state.s_spatial + eps))
    pen = pen + psp
    grad[:, 1:, 1:] += gsp
    return (pen[0], grad[0]) if single else (pen, grad)


_PENALTIES = {
    "eigen": eigen_penalty,
    "sylvester": sylvester_classical,
    "lorentzian": lorentzian_sylvester,
}


def penalty(H, mode, state, lam):
    """Dispatch to the penalty for ``mode``; ``none`` yields zeros."""
    if mode not in MODES:
        raise ValueError(f"unknown regularizer mode {mode!r}; choose from {MODES}")
    Hs, single = _stack(H)
    if mode == "none" or lam == 0.0:
        p, g = np.zeros(Hs.shape[0]), np.zeros_like(Hs)
    else:
        p, g = _PENALTIES[mode](Hs, state, lam)
    return (p[0], g[0]) if single else (p, g)


@dataclass
class LossTerms:
    """Batch loss with the adjoints needed for backpropagation."""

    loss: float
    mae: float
    reg: float
    d_pred: np.ndarray  # (B, n)
    d_H: np.ndarray  # (B, n, n)
    n_valid: int


def total_loss(pred, true, H, mode="none", lam=0.0, state=None, valid=None):
    """MAE over valid samples plus the batch-mean regularizer.

    Parameters
    ----------
    pred, true : (B, n) arrays
    H : (B, n, n) array
    valid : optional boolean mask; samples marked invalid (singular ``H``)
        contribute only the regularizer.  Matrices with non-finite entries
        contribute nothing.
    """
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if pred.shape != true.shape or H.shape[:1] != pred.shape[:1]:
        raise ValueError("batch shapes disagree")
    B, n = pred.shape
    if valid is None:
        valid = np.ones(B, dtype=bool)
    finite_H = np.all(np.isfinite(H), axis=(1, 2))
    valid = valid & finite_H & np.all(np.isfinite(pred), axis=1)
    nv = int(valid.sum())
    d_pred = np.zeros_like(pred)
    mae = 0.0
    if nv:
        r = pred[valid] - true[valid]
        mae = float(np.abs(r).sum() / (nv * n))
        d_pred[valid] = np.sign(r) / (nv * n)
    if state is None:
        state = ScaleState(n)
    d_H = np.zeros_like(H)
    reg = 0.0
    if mode != "none" and np.any(finite_H):
        p, g = penalty(H[finite_H], mode, state, lam)
        reg = float(p.sum() / B)
        d_H[finite_H] = g / B
    return LossTerms(mae + reg, mae, reg, d_pred, d_H, nv)
