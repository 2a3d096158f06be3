"""Dormand-Prince 5(4) integration with PID step-size control.

The controller follows the digital-filter form used by common JAX/PyTorch
ODE libraries: with ``k`` the error-estimator order,

    factor = safety * e_n^(-b1) * e_{n-1}^(-b2) * e_{n-2}^(-b3)
    b1 = (p + i + d) / k,  b2 = -(p + 2 d) / k,  b3 = d / k

so ``(p, i, d) = (0, 1, 0)`` is the classical integral controller.  Pass
``convention="direct"`` for the plain exponents ``p/k, i/k, d/k``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainViolation, SingularMassMatrix

# Dormand-Prince tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th- and 4th-order weights
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension, y(t + th h) = y + h K^T P [th, th^2, th^3, th^4]
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])
ERROR_ORDER = 5

STATUSES = ("completed", "diverged", "singular_mass_matrix", "step_underflow", "max_steps")
DIVERGENCE_NORM = 1e8
UNDERFLOW_REL = 1e-12


@dataclass
class StepController:
    rtol: float = 1e-6
    atol: float = 1e-8
    p_coeff: float = 0.2
    i_coeff: float = 0.4
    d_coeff: float = 0.0
    safety: float = 0.9
    factor_min: float = 0.2
    factor_max: float = 10.0
    max_rejects: int = 100
    max_steps: int = 1_000_000
    convention: str = "filter"

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.factor_min <= 0 or self.factor_max <= 0 or self.safety <= 0:
            raise ValueError("growth factors must be positive")
        if self.convention not in ("filter", "direct"):
            raise ValueError("convention must be 'filter' or 'direct'")

    def exponents(self, k=ERROR_ORDER):
        p, i, d = self.p_coeff, self.i_coeff, self.d_coeff
        if self.convention == "direct":
            return p / k, i / k, d / k
        return (p + i + d) / k, -(p + 2 * d) / k, d / k

    @classmethod
    def ground_truth(cls):
        return cls(rtol=1e-12, atol=1e-12)


def pid_step(err_history, h, ctrl, accepted=True):
    """Next step size from the last three error norms ``(e_n, e_{n-1}, e_{n-2})``.

    Missing history entries count as 1.  On a rejected step only the fresh
    error term is used and the step is never enlarged.
    """
    errs = list(err_history)[:3] + [1.0] * (3 - len(list(err_history)[:3]))
    if any(e < 0 for e in errs):
        raise ValueError("error norms must be non-negative")
    b1, b2, b3 = ctrl.exponents()
    tiny = 1e-300

    def term(e, b):
        return 1.0 if b == 0.0 else max(e, tiny) ** (-b)

    if not accepted:
        factor = ctrl.safety * term(errs[0], b1)
        return h * min(1.0, max(ctrl.factor_min, factor))
    factor = ctrl.safety * term(errs[0], b1) * term(errs[1], b2) * term(errs[2], b3)
    return h * min(ctrl.factor_max, max(ctrl.factor_min, factor))


@dataclass
class Diagnostics:
    accepted: int = 0
    rejected: int = 0
    n_eval: int = 0
    h_min: float = math.inf
    h_max: float = 0.0
    error_norms: list = field(default_factory=list)


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    status: str
    diagnostics: Diagnostics
    message: str = ""

    @property
    def completed(self):
        return self.status == "completed"

    def to_files(self, csv_path, names=None, energy=None, extra=None):
        """Write ``t, q..., qdot..., energy`` CSV and a ``.json`` sidecar."""
        D = self.y.shape[1]
        n = D // 2
        names = names or [f"q{i}" for i in range(n)]
        head = ["t"] + [f"q_{c}" for c in names] + [f"qdot_{c}" for c in names]
        E = None
        if energy is not None:
            head.append("energy")
            E = energy(self.y[:, :n], self.y[:, n:]) if len(self.y) else np.zeros(0)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for k in range(len(self.t)):
                row = [repr(float(self.t[k]))] + [repr(float(v)) for v in self.y[k]]
                if E is not None:
                    row.append(repr(float(E[k])))
                w.writerow(row)
        side = {"status": self.status, "message": self.message, "n_points": int(len(self.t))}
        d = asdict(self.diagnostics)
        d["error_norms"] = {"count": len(d["error_norms"]),
                            "max": max(d["error_norms"], default=0.0)}
        d["h_min"] = None if math.isinf(d["h_min"]) else d["h_min"]
        side["diagnostics"] = d
        side.update(extra or {})
        with open(str(csv_path).rsplit(".", 1)[0] + ".json", "w") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)


def _rms(x):
    return math.sqrt(float(np.mean(x * x)))


def _initial_step(f, t0, y0, f0, span, rtol, atol):
    # Hairer, Norsett and Wanner, "Solving ODEs I", II.4
    scale = atol + np.abs(y0) * rtol
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / ERROR_ORDER)
    return min(100 * h0, h1, span)


class _Stop(Exception):
    def __init__(self, status, message):
        super().__init__(message)
        self.status = status


def integrate(deriv, y0, t_grid, ctrl=None, wrap=None, fixed_step=None):
    """Integrate ``y' = deriv(t, y)`` and sample the solution on ``t_grid``.

    Parameters
    ----------
    deriv : callable ``(t, y) -> dy``
        May raise :class:`SingularMassMatrix` or :class:`DomainViolation`.
    y0 : array
        State at ``t_grid[0]``.
    t_grid : increasing array of output times.
    ctrl : StepController
    wrap : optional callable applied to the state before each ``deriv`` call
        (angle wrapping); the integrated state itself stays unwrapped.
    fixed_step : float, optional
        Take fixed steps of this size (no error control), for order studies.

    Returns
    -------
    Trajectory
        Holds every output node reached before termination.
    """
    ctrl = ctrl or StepController()
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or t_grid.size < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    y = np.array(y0, dtype=np.float64)
    diag = Diagnostics()
    out_t, out_y = [t_grid[0]], [y.copy()]
    t0, t_end = float(t_grid[0]), float(t_grid[-1])
    span = t_end - t0
    if span == 0.0:
        return Trajectory(np.array(out_t), np.array(out_y), "completed", diag)

    def f(t, state):
        diag.n_eval += 1
        arg = wrap(state) if wrap is not None else state
        dy = np.asarray(deriv(t, arg), dtype=np.float64)
        if not np.all(np.isfinite(dy)):
            raise _Stop("diverged", f"non-finite derivative at t={t:.6g}")
        return dy

    status, message = "completed", ""
    next_out = 1
    t = t0
    try:
        fy = f(t, y)
        h = fixed_step if fixed_step else _initial_step(f, t, y, fy, span, ctrl.rtol, ctrl.atol)
        errs = [1.0, 1.0]
        rejects = 0
        K = np.empty((7, y.size))
        while t < t_end:
            if diag.accepted + diag.rejected >= ctrl.max_steps:
                raise _Stop("max_steps", f"exceeded {ctrl.max_steps} steps")
            if h < UNDERFLOW_REL * span and t_end - t > UNDERFLOW_REL * span:
                raise _Stop("step_underflow", f"step {h:.3g} below {UNDERFLOW_REL:g} * span at t={t:.6g}")
            h = min(h, t_end - t)
            K[0] = fy
            for s in range(1, 7):
                K[s] = f(t + C[s] * h, y + h * (np.asarray(A[s]) @ K[:s]))
            y_new = y + h * (B[:6] @ K[:6])
            # K[6] is f(t + h, y_new) because the last stage row equals B
            if fixed_step:
                err = 0.0
                accept = True
            else:
                scale = ctrl.atol + np.maximum(np.abs(y), np.abs(y_new)) * ctrl.rtol
                err = _rms(h * (E @ K) / scale)
                accept = err <= 1.0
            if not accept:
                diag.rejected += 1
                rejects += 1
                if rejects > ctrl.max_rejects:
                    raise _Stop("step_underflow", f"{rejects} consecutive rejections at t={t:.6g}")
                h = pid_step([err] + errs, h, ctrl, accepted=False)
                continue
            rejects = 0
            diag.accepted += 1
            diag.error_norms.append(err)
            diag.h_min = min(diag.h_min, h)
            diag.h_max = max(diag.h_max, h)
            t_new = t + h
            while next_out < t_grid.size and t_grid[next_out] <= t_new + 1e-12 * span:
                theta = (t_grid[next_out] - t) / h
                if theta >= 1.0:
                    out_y.append(y_new.copy())
                else:
                    powers = np.cumprod(np.full(4, theta))
                    out_y.append(y + h * (K.T @ (P @ powers)))
                out_t.append(t_grid[next_out])
                next_out += 1
            t, y, fy = t_new, y_new, K[6].copy()
            if np.linalg.norm(y) > DIVERGENCE_NORM:
                raise _Stop("diverged", f"state norm exceeded {DIVERGENCE_NORM:g} at t={t:.6g}")
            if not fixed_step:
                h = pid_step([err] + errs, h, ctrl, accepted=True)
                errs = [err, errs[0]]
    except _Stop as stop:
        status, message = stop.status, str(stop)
    except (SingularMassMatrix, DomainViolation) as exc:
        status, message = "singular_mass_matrix", str(exc)
    return Trajectory(np.array(out_t), np.array(out_y), status, diag, message)


# ---------------------------------------------------------------------------
# right-hand sides


def system_rhs(spec):
    """``(t, y) -> (qdot, qddot)`` from the analytic acceleration."""
    from .systems import analytic_accel

    n = spec.n

    def rhs(t, y):
        return np.concatenate([y[n:], analytic_accel(spec, y[:n], y[n:])])

    return rhs


def model_rhs(model):
    """``(t, y) -> (qdot, qddot)`` from a learned or analytic :class:`Model`."""
    from .dynamics import model_accel

    n = model.n

    def rhs(t, y):
        return np.concatenate([y[n:], model_accel(model, y[:n], y[n:])])

    return rhs


def wrapper_for(spec):
    from .systems import wrap_angles

    if not np.any(spec.angular_mask):
        return None
    return lambda y: wrap_angles(spec, y)
