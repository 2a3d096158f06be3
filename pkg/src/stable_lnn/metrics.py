"""Evaluation metrics: training instability, energy error, field comparison."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from . import dynamics, systems

MIN_PHASE_POINTS = 5


def savgol(series, window=15, polyorder=2):
    """Savitzky-Golay smoothing; edges use a polynomial fitted to the edge window."""
    x = np.asarray(series, dtype=np.float64)
    if window % 2 != 1 or window < 1:
        raise ValueError("window must be a positive odd integer")
    if polyorder >= window:
        raise ValueError("polyorder must be less than window")
    if x.ndim != 1 or x.size < window:
        raise ValueError(f"series needs at least {window} points")
    return savgol_filter(x, window, polyorder, mode="interp")


def oscillation(series, window=15, polyorder=2):
    x = np.asarray(series, dtype=np.float64)
    return x - savgol(x, window, polyorder)


def phase_stds(series, phases, window=15, polyorder=2, min_points=MIN_PHASE_POINTS):
    """Standard deviation (ddof=1) of the oscillation within each phase.

    ``phases`` is a sequence of ``(start, stop)`` index ranges.  Phases with
    fewer than ``min_points`` points are dropped.
    """
    osc = oscillation(series, window, polyorder)
    out = []
    for a, b in phases:
        b = min(b, osc.size)
        if b - a >= min_points:
            out.append(float(np.std(osc[a:b], ddof=1)))
    return out


def instability(series, phases, window=15, polyorder=2, min_points=MIN_PHASE_POINTS):
    """Mean over learning-rate phases of the oscillation standard deviation.

    Parameters
    ----------
    series : per-epoch loss values
    phases : ``(start, stop)`` epoch ranges of decreasing and increasing
        learning rate, e.g. from :func:`stable_lnn.train.lr_phases`.
    """
    stds = phase_stds(series, phases, window, polyorder, min_points)
    if not stds:
        raise ValueError("no learning-rate phase has enough points")
    return float(np.mean(stds))


@dataclass
class EnergyError:
    series: np.ndarray
    summary_pct: float
    absolute: bool


def energy_error(traj, spec):
    """Relative energy error ``|E(t) - E(0)| / |E(0)|`` along a trajectory.

    For AdS4 the series is the constraint residual ``|g(xdot, xdot) + 1|``.
    When ``|E(0)| < 1e-12`` the absolute error is reported and flagged.
    """
    y = np.asarray(traj.y if hasattr(traj, "y") else traj, dtype=np.float64)
    n = spec.n
    E = systems.energy(spec, y[:, :n], y[:, n:])
    if spec.name == "ads4_geodesic":
        series = np.abs(E + 1.0)
        absolute = True
    elif abs(E[0]) < 1e-12:
        series = np.abs(E - E[0])
        absolute = True
    else:
        series = np.abs(E - E[0]) / abs(E[0])
        absolute = False
    return EnergyError(series, float(100.0 * np.mean(series)), absolute)


@dataclass
class FieldComparison:
    quantity: str
    points: np.ndarray
    learned: np.ndarray
    analytic: np.ndarray
    scale: float
    offset: float
    rms: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            D = self.points.shape[1]
            w.writerow([f"x{i}" for i in range(D)] + ["learned", "analytic", "fitted"])
            fitted = self.scale * self.analytic + self.offset
            for k in range(self.points.shape[0]):
                w.writerow([repr(float(v)) for v in self.points[k]]
                           + [repr(float(self.learned[k])), repr(float(self.analytic[k])),
                              repr(float(fitted[k]))])

    def summary(self):
        return {"quantity": self.quantity, "scale": self.scale, "offset": self.offset,
                "rms": self.rms, "n_points": int(self.points.shape[0])}


def fit_affine(learned, analytic, offset=True):
    """Least-squares ``learned ~ s * analytic (+ b)``; returns ``(s, b, rms)``."""
    y = np.asarray(learned, dtype=np.float64)
    x = np.asarray(analytic, dtype=np.float64)
    if offset:
        Amat = np.stack([x, np.ones_like(x)], axis=1)
        (s, b), *_ = np.linalg.lstsq(Amat, y, rcond=None)
    else:
        s, b = float(x @ y / (x @ x)), 0.0
    rms = float(np.sqrt(np.mean((y - s * x - b) ** 2)))
    return float(s), float(b), rms


def compare_fields(learned, spec, grid, quantity="lagrangian"):
    """Compare a learned model with the analytic system over ``grid``.

    ``quantity`` is ``"lagrangian"`` (affine fit, offset allowed) or ``"det"``
    (determinant of the velocity Hessian, pure scale fit).
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    ref = dynamics.Model.from_lagrangian(spec.lagrangian, spec.n)
    learned = dynamics._as_model(learned)
    if quantity == "lagrangian":
        a = learned.jets(grid)[:, 0]
        b = ref.jets(grid)[:, 0]
        s, off, rms = fit_affine(a, b, offset=True)
    elif quantity == "det":
        a = dynamics.mass_matrix_field(learned, grid).det
        b = dynamics.mass_matrix_field(ref, grid).det
        ok = np.isfinite(a) & np.isfinite(b)
        s, off, rms = fit_affine(a[ok], b[ok], offset=False)
    else:
        raise ValueError("quantity must be 'lagrangian' or 'det'")
    return FieldComparison(quantity, grid, a, b, s, off, rms)


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
