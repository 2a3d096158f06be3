"""Physical scaling of coordinates and velocities, and the DyT layer.

Factors are stored as a length-``2n`` vector ``(s_q..., s_qdot...)``.  With
``q~ = q / s`` and ``qdot~ = qdot / r`` the consistent time rescaling gives
``qddot~ = qddot * s / r**2``.  The default ``shared`` mode uses one factor per
coordinate for both its position and velocity (``s = r``), so time units are
untouched and accelerations scale exactly as positions.
"""
from __future__ import annotations

import logging

import numpy as np

from . import jets
from .systems import Dataset

logger = logging.getLogger(__name__)

MODES = ("shared", "independent", "none")


def fit_scaling(dataset, mode="shared"):
    """Per-dimension factors from maximum absolute values in ``dataset``.

    ``shared``: ``s_i = max(max|q_i|, max|qdot_i|)`` used for both ``q_i`` and
    ``qdot_i``.  ``independent``: separate maxima.  ``none``: all ones.
    Dimensions whose maximum is zero get factor 1 with a warning.
    """
    if mode not in MODES:
        raise ValueError(f"unknown scaling mode {mode!r}")
    q = np.asarray(dataset.q)
    qd = np.asarray(dataset.qdot)
    if q.shape[0] == 0:
        raise ValueError("empty dataset")
    n = q.shape[1]
    if mode == "none":
        return np.ones(2 * n)
    mq = np.max(np.abs(q), axis=0)
    mv = np.max(np.abs(qd), axis=0)
    if mode == "shared":
        mq = mv = np.maximum(mq, mv)
    f = np.concatenate([mq, mv])
    zero = ~(f > 0.0) | ~np.isfinite(f)
    if np.any(zero):
        logger.warning("scaling: dimensions %s have zero range; using factor 1", np.flatnonzero(zero).tolist())
        f = np.where(zero, 1.0, f)
    return f


def _check(factors, dim):
    factors = np.asarray(factors, dtype=np.float64)
    if factors.shape != (dim,):
        raise ValueError(f"expected {dim} scaling factors, got shape {factors.shape}")
    if np.any(factors <= 0):
        raise ValueError("scaling factors must be positive")
    return factors


def apply(X, factors):
    """Scale states ``(..., 2n)`` (or coordinates ``(..., n)`` with ``n`` factors)."""
    X = np.asarray(X, dtype=np.float64)
    return X / _check(factors, X.shape[-1])


def invert(Xs, factors):
    Xs = np.asarray(Xs, dtype=np.float64)
    return Xs * _check(factors, Xs.shape[-1])


def accel_to_scaled(a, factors):
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[-1]
    f = _check(factors, 2 * n)
    return a * f[:n] / f[n:] ** 2


def accel_to_physical(a_scaled, factors):
    """Map a predicted scaled acceleration back to physical units."""
    a = np.asarray(a_scaled, dtype=np.float64)
    n = a.shape[-1]
    f = _check(factors, 2 * n)
    return a * f[n:] ** 2 / f[:n]


def scale_dataset(ds, factors):
    """Scaled copy of ``ds`` with ``factors`` recorded."""
    n = ds.q.shape[1]
    f = _check(factors, 2 * n)
    prov = dict(ds.provenance)
    return Dataset(ds.q / f[:n], ds.qdot / f[n:], accel_to_scaled(ds.qddot, f), f.copy(), prov)


def unscale_dataset(ds):
    if ds.factors is None:
        return ds
    n = ds.q.shape[1]
    f = ds.factors
    return Dataset(ds.q * f[:n], ds.qdot * f[n:], accel_to_physical(ds.qddot, f), None, dict(ds.provenance))


def dyt(x, alpha):
    """Dynamic tanh ``tanh(alpha * x)``; accepts floats, arrays or jets."""
    if isinstance(x, jets.Jet2):
        return jets.tanh(alpha * x)
    return np.tanh(np.asarray(alpha) * np.asarray(x))
