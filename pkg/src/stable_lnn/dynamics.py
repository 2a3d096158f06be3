"""Euler-Lagrange accelerations from jet-evaluated Lagrangians.

A :class:`Model` is anything that maps a batch of physical states
``X = (q, qdot)`` to Lagrangian jets ``(B, K)``.  Learned networks are wrapped
together with their input scaling so that every quantity leaving this module
(accelerations, mass matrices, metrics) is in physical units.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import jets, linalg
from ._packing import n_packed, triu, unpack
from .errors import SingularMassMatrix


@dataclass
class DerivativeBundle:
    """Pieces of the Euler-Lagrange equation at one or many states.

    ``C[i, j] = d^2 L / (d qdot_i d q_j)`` so that ``H qddot = g - C qdot``.
    All fields carry an optional leading batch axis.
    """

    g: np.ndarray
    H: np.ndarray
    C: np.ndarray
    L_value: np.ndarray


def bundle_from_jets(Ljet, n):
    """Slice Lagrangian jets ``(..., K)`` into a :class:`DerivativeBundle`."""
    Ljet = np.asarray(Ljet, dtype=np.float64)
    D = 2 * n
    if Ljet.shape[-1] != 1 + D + n_packed(D):
        raise ValueError("jet width does not match 2n inputs")
    full = unpack(Ljet[..., 1 + D:], D)
    return DerivativeBundle(
        g=Ljet[..., 1:1 + n].copy(),
        H=full[..., n:, n:].copy(),
        C=full[..., n:, :n].copy(),
        L_value=Ljet[..., 0].copy(),
    )


class Model:
    """Batch Lagrangian evaluator in physical units.

    Parameters
    ----------
    fn : callable
        ``fn(X) -> (B, K)`` jets for ``X`` of shape ``(B, 2n)``.
    n : int
        Number of generalized coordinates.
    """

    def __init__(self, fn, n, name="model"):
        self._fn = fn
        self.n = n
        self.name = name

    def jets(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self._fn(X)

    @classmethod
    def from_params(cls, params, factors=None):
        """Wrap a network trained on inputs divided by ``factors``."""
        from .net import forward_batch

        D = params.arch.input_dim
        s = np.ones(D) if factors is None else np.asarray(factors, dtype=np.float64)
        if s.shape != (D,):
            raise ValueError(f"expected {D} scaling factors")
        I, J = triu(D)
        gscale = 1.0 / s
        hscale = 1.0 / (s[I] * s[J])

        def fn(X):
            L, _ = forward_batch(params, X / s)
            L[:, 1:1 + D] *= gscale
            L[:, 1 + D:] *= hscale
            return L

        return cls(fn, params.arch.n, name="network")

    @classmethod
    def from_lagrangian(cls, lagrangian, n, name="analytic"):
        """Wrap a jet-compatible ``lagrangian(q, qdot)`` working on sequences."""

        def fn(X):
            D = 2 * n
            out = np.empty((X.shape[0], 1 + D + n_packed(D)))
            for b, x in enumerate(X):
                sj = jets.seed_vector(x)
                L = lagrangian(sj[:n], sj[n:])
                out[b, 0] = L.value
                out[b, 1:1 + D] = L.grad
                out[b, 1 + D:] = L.hess
            return out

        return cls(fn, n, name=name)

    def scaled(self, c, offset=0.0):
        """Model of ``c * L + offset`` (for invariance checks)."""
        base = self

        def fn(X):
            L = c * base.jets(X)
            L[:, 0] += offset
            return L

        return Model(fn, self.n, name=f"{self.name}*{c}")


def _as_model(model, n=None):
    if isinstance(model, Model):
        return model
    if hasattr(model, "arch"):
        return Model.from_params(model)
    raise TypeError("expected a Model or NetworkParams")


def derivative_bundle(model, q, qdot):
    """:class:`DerivativeBundle` at a single state or a batch of states."""
    model = _as_model(model)
    q = np.asarray(q, dtype=np.float64)
    qdot = np.asarray(qdot, dtype=np.float64)
    single = q.ndim == 1
    X = np.concatenate([np.atleast_2d(q), np.atleast_2d(qdot)], axis=1)
    b = bundle_from_jets(model.jets(X), model.n)
    if single:
        return DerivativeBundle(b.g[0], b.H[0], b.C[0], b.L_value[0])
    return b


def rhs(bundle, qdot):
    return bundle.g - np.einsum("...ij,...j->...i", bundle.C, qdot)


def accel(bundle, qdot):
    """``H^{-1} (g - C qdot)``; raises :class:`SingularMassMatrix`."""
    qdot = np.asarray(qdot, dtype=np.float64)
    return linalg.solve(bundle.H, rhs(bundle, qdot))


def accel_masked(bundle, qdot):
    """Batched :func:`accel` returning ``(qddot, singular_mask)``."""
    return linalg.solve_masked(bundle.H, rhs(bundle, np.asarray(qdot, dtype=np.float64)))


def model_accel(model, q, qdot):
    """Acceleration of a model at one state (raises when singular)."""
    return accel(derivative_bundle(model, q, qdot), qdot)


@dataclass
class MassMatrixField:
    points: np.ndarray  # (N, 2n)
    H: np.ndarray  # (N, n, n)
    det: np.ndarray  # (N,)
    finite: np.ndarray  # (N,) bool

    def to_csv(self, path, names=None):
        N, D = self.points.shape
        n = D // 2
        names = names or [f"q{i}" for i in range(n)] + [f"qdot{i}" for i in range(n)]
        header = list(names) + [f"H{i}{j}" for i in range(n) for j in range(n)] + ["det"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(N):
                w.writerow([repr(float(v)) for v in self.points[k]]
                           + [repr(float(v)) for v in self.H[k].ravel()]
                           + [repr(float(self.det[k]))])


def mass_matrix_field(model, grid):
    """Velocity Hessian and its determinant over a grid of states.

    Non-finite evaluations are recorded per point (``finite == False``) and
    never raise.
    """
    model = _as_model(model)
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    n = model.n
    H = np.full((grid.shape[0], n, n), np.nan)
    for k in range(grid.shape[0]):
        try:
            H[k] = bundle_from_jets(model.jets(grid[k:k + 1]), n).H[0]
        except FloatingPointError:
            pass
    finite = np.all(np.isfinite(H), axis=(1, 2))
    det = np.full(grid.shape[0], np.nan)
    if np.any(finite):
        det[finite] = linalg.det(H[finite])
    return MassMatrixField(grid, H, det, finite)


@dataclass
class MetricEstimate:
    metric: np.ndarray
    scale: float
    residual: float


def metric_from_lagrangian(model, x, scale=1.0, probes=None, seed=0, n_probes=8):
    """Metric components ``H(x, qdot) / scale`` at an event ``x``.

    For a purely kinetic Lagrangian the Hessian does not depend on the
    velocity; ``residual`` is the RMS spread of ``H`` over probe velocities
    relative to the Frobenius norm of their mean.
    """
    model = _as_model(model)
    x = np.asarray(x, dtype=np.float64)
    n = model.n
    if probes is None:
        probes = np.random.default_rng(seed).normal(size=(n_probes, n))
    probes = np.atleast_2d(probes)
    X = np.concatenate([np.broadcast_to(x, probes.shape), probes], axis=1)
    Hs = bundle_from_jets(model.jets(X), n).H
    mean = Hs.mean(axis=0)
    spread = np.sqrt(np.mean(np.sum((Hs - mean) ** 2, axis=(1, 2))))
    norm = np.linalg.norm(mean)
    return MetricEstimate(mean / scale, float(scale), float(spread / norm) if norm > 0 else float(spread))


def fit_scale(learned, reference):
    """Least-squares ``s`` minimizing ``||learned - s * reference||``.

    Returns ``(s, rms_residual)`` where the residual is taken after scaling.
    """
    A = np.asarray(learned, dtype=np.float64).ravel()
    R = np.asarray(reference, dtype=np.float64).ravel()
    denom = R @ R
    if denom == 0.0:
        raise ValueError("reference is identically zero")
    s = (A @ R) / denom
    res = np.sqrt(np.mean((A - s * R) ** 2))
    return float(s), float(res)


def check_invertible(H):
    if np.any(linalg.singular_mask(H)):
        raise SingularMassMatrix("mass matrix is singular")
