"""The five analytic benchmark systems and dataset generation.

Each system exposes a jet-compatible Lagrangian (works on floats, numpy
arrays and :class:`~stable_lnn.jets.Jet2`), its closed-form acceleration,
its energy, and the sampling bounds used for training, validation and
trajectory tests.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import jets, linalg
from .errors import DomainViolation

PI = math.pi
TWO_PI = 2.0 * math.pi


@dataclass
class Bounds:
    q_low: np.ndarray
    q_high: np.ndarray
    qd_low: np.ndarray
    qd_high: np.ndarray

    def __post_init__(self):
        for name in ("q_low", "q_high", "qd_low", "qd_high"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.q_low > self.q_high) or np.any(self.qd_low > self.qd_high):
            raise ValueError("bounds must satisfy low <= high")

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("q_low", "q_high", "qd_low", "qd_high")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})

    def contains(self, Q, Qd):
        return (
            np.all(Q >= self.q_low, axis=-1)
            & np.all(Q <= self.q_high, axis=-1)
            & np.all(Qd >= self.qd_low, axis=-1)
            & np.all(Qd <= self.qd_high, axis=-1)
        )


@dataclass
class SystemSpec:
    """An analytic benchmark system.

    ``constrained_velocity`` (AdS4 only) marks a velocity index that is
    derived from the others instead of sampled.
    """

    name: str
    n: int
    constants: dict
    coord_names: list
    angular_mask: np.ndarray
    train_bounds: Bounds
    val_bounds: Bounds
    test_bounds: Bounds
    t_end: float
    dt: float
    relativistic: bool = False
    timelike_index: int | None = None
    constrained_velocity: int | None = None
    guards: dict = field(default_factory=dict)
    train_settings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.angular_mask = np.asarray(self.angular_mask, dtype=bool)
        if self.relativistic and self.timelike_index is None:
            raise ValueError("relativistic systems need a timelike index")

    # dispatch to the per-system functions -----------------------------------
    def lagrangian(self, q, qdot):
        return _LAGRANGIANS[self.name](self, q, qdot)

    def header(self):
        return {
            "system": self.name,
            "constants": self.constants,
            "coordinates": self.coord_names,
        }


# ---------------------------------------------------------------------------
# Lagrangians (jet compatible)


def _double_L(spec, q, qd):
    c = spec.constants
    m1, m2, l1, l2, g = c["m1"], c["m2"], c["l1"], c["l2"], c["g"]
    t1, t2 = q[0], q[1]
    w1, w2 = qd[0], qd[1]
    T = 0.5 * m1 * (l1 * w1) ** 2 + 0.5 * m2 * (
        (l1 * w1) ** 2 + (l2 * w2) ** 2 + 2.0 * l1 * l2 * w1 * w2 * jets.cos(t1 - t2)
    )
    V = -m1 * g * l1 * jets.cos(t1) - m2 * g * (l1 * jets.cos(t1) + l2 * jets.cos(t2))
    return T - V


def _spring_L(spec, q, qd):
    c = spec.constants
    m, k, g, l0 = c["m"], c["k"], c["g"], c["l0"]
    r, th = q[0], q[1]
    rd, thd = qd[0], qd[1]
    return 0.5 * m * (rd * rd + r * r * thd * thd) + m * g * r * jets.cos(th) - 0.5 * k * (r - l0) ** 2


def _triple_L(spec, q, qd):
    c = spec.constants
    m1, m2, m3 = c["m1"], c["m2"], c["m3"]
    l1, l2, l3 = c["l1"], c["l2"], c["l3"]
    g = c["g"]
    t1, t2, t3 = q[0], q[1], q[2]
    w1, w2, w3 = qd[0], qd[1], qd[2]
    T = (
        0.5 * (m1 + m2 + m3) * l1 ** 2 * w1 * w1
        + 0.5 * (m2 + m3) * l2 ** 2 * w2 * w2
        + 0.5 * m3 * l3 ** 2 * w3 * w3
        + (m2 + m3) * l1 * l2 * w1 * w2 * jets.cos(t1 - t2)
        + m3 * l1 * l3 * w1 * w3 * jets.cos(t1 - t3)
        + m3 * l2 * l3 * w2 * w3 * jets.cos(t2 - t3)
    )
    V = -g * ((m1 + m2 + m3) * l1 * jets.cos(t1) + (m2 + m3) * l2 * jets.cos(t2) + m3 * l3 * jets.cos(t3))
    return T - V


def _sphere_L(spec, q, qd):
    c = spec.constants
    m, R = c["m"], c["R"]
    s = jets.sin(q[0])
    return 0.5 * m * R * R * (qd[0] * qd[0] + s * s * qd[1] * qd[1])


def _ads4_L(spec, q, qd):
    Lr = spec.constants["L"]
    z = q[3]
    kin = -qd[0] * qd[0] + qd[1] * qd[1] + qd[2] * qd[2] + qd[3] * qd[3]
    return (0.5 * Lr * Lr) * kin / (z * z)


_LAGRANGIANS = {
    "double_pendulum": _double_L,
    "spring_pendulum": _spring_L,
    "triple_pendulum": _triple_L,
    "sphere_geodesic": _sphere_L,
    "ads4_geodesic": _ads4_L,
}


# ---------------------------------------------------------------------------
# closed-form accelerations (vectorized over leading axes)


def _check_domain(spec, Q):
    gd = spec.guards
    if spec.name == "spring_pendulum" and np.any(Q[..., 0] <= gd["r_min"]):
        raise DomainViolation(f"spring pendulum radius at or below {gd['r_min']}")
    if spec.name == "sphere_geodesic" and np.any(np.abs(np.sin(Q[..., 0])) <= gd["sin_min"]):
        raise DomainViolation("sphere state too close to a pole")
    if spec.name == "ads4_geodesic" and np.any(Q[..., 3] <= gd["z_min"]):
        raise DomainViolation(f"AdS4 state at or below z = {gd['z_min']}")


def in_domain(spec, Q):
    """Boolean mask of states away from coordinate singularities."""
    Q = np.asarray(Q, dtype=np.float64)
    gd = spec.guards
    ok = np.all(np.isfinite(Q), axis=-1)
    if spec.name == "spring_pendulum":
        ok &= Q[..., 0] > gd["r_min"]
    elif spec.name == "sphere_geodesic":
        ok &= np.abs(np.sin(Q[..., 0])) > gd["sin_min"]
    elif spec.name == "ads4_geodesic":
        ok &= Q[..., 3] > gd["z_min"]
    return ok


def _double_acc(spec, Q, Qd):
    c = spec.constants
    m1, m2, l1, l2, g = c["m1"], c["m2"], c["l1"], c["l2"], c["g"]
    t1, t2 = Q[..., 0], Q[..., 1]
    w1, w2 = Qd[..., 0], Qd[..., 1]
    d = t1 - t2
    a1 = (l2 / l1) * (m2 / (m1 + m2)) * np.cos(d)
    a2 = (l1 / l2) * np.cos(d)
    f1 = -(l2 / l1) * (m2 / (m1 + m2)) * w2 ** 2 * np.sin(d) - (g / l1) * np.sin(t1)
    f2 = (l1 / l2) * w1 ** 2 * np.sin(d) - (g / l2) * np.sin(t2)
    den = 1.0 - a1 * a2
    return np.stack([(f1 - a1 * f2) / den, (f2 - a2 * f1) / den], axis=-1)


def _spring_acc(spec, Q, Qd):
    c = spec.constants
    m, k, g, l0 = c["m"], c["k"], c["g"], c["l0"]
    r, th = Q[..., 0], Q[..., 1]
    rd, thd = Qd[..., 0], Qd[..., 1]
    rdd = r * thd ** 2 + g * np.cos(th) - (k / m) * (r - l0)
    thdd = (-g * np.sin(th) - 2.0 * rd * thd) / r
    return np.stack([rdd, thdd], axis=-1)


def triple_mass_matrix(spec, Q):
    c = spec.constants
    m1, m2, m3 = c["m1"], c["m2"], c["m3"]
    l1, l2, l3 = c["l1"], c["l2"], c["l3"]
    t1, t2, t3 = Q[..., 0], Q[..., 1], Q[..., 2]
    M = np.empty(Q.shape[:-1] + (3, 3))
    M[..., 0, 0] = (m1 + m2 + m3) * l1 ** 2
    M[..., 1, 1] = (m2 + m3) * l2 ** 2
    M[..., 2, 2] = m3 * l3 ** 2
    M[..., 0, 1] = M[..., 1, 0] = (m2 + m3) * l1 * l2 * np.cos(t1 - t2)
    M[..., 0, 2] = M[..., 2, 0] = m3 * l1 * l3 * np.cos(t1 - t3)
    M[..., 1, 2] = M[..., 2, 1] = m3 * l2 * l3 * np.cos(t2 - t3)
    return M


def _triple_acc(spec, Q, Qd):
    c = spec.constants
    m1, m2, m3 = c["m1"], c["m2"], c["m3"]
    l1, l2, l3 = c["l1"], c["l2"], c["l3"]
    g = c["g"]
    t1, t2, t3 = Q[..., 0], Q[..., 1], Q[..., 2]
    w1, w2, w3 = Qd[..., 0], Qd[..., 1], Qd[..., 2]
    F1 = (
        -(m2 + m3) * l1 * l2 * w2 ** 2 * np.sin(t1 - t2)
        - m3 * l1 * l3 * w3 ** 2 * np.sin(t1 - t3)
        - (m1 + m2 + m3) * g * l1 * np.sin(t1)
    )
    F2 = (
        (m2 + m3) * l1 * l2 * w1 ** 2 * np.sin(t1 - t2)
        - m3 * l2 * l3 * w3 ** 2 * np.sin(t2 - t3)
        - (m2 + m3) * g * l2 * np.sin(t2)
    )
    F3 = m3 * l1 * l3 * w1 ** 2 * np.sin(t1 - t3) + m3 * l2 * l3 * w2 ** 2 * np.sin(t2 - t3) - m3 * g * l3 * np.sin(t3)
    F = np.stack([F1, F2, F3], axis=-1)
    return linalg.solve(triple_mass_matrix(spec, Q), F)


def _sphere_acc(spec, Q, Qd):
    th = Q[..., 0]
    thd, phd = Qd[..., 0], Qd[..., 1]
    s, c = np.sin(th), np.cos(th)
    return np.stack([s * c * phd ** 2, -2.0 * (c / s) * thd * phd], axis=-1)


def _ads4_acc(spec, Q, Qd):
    z = Q[..., 3]
    td, xd, yd, zd = Qd[..., 0], Qd[..., 1], Qd[..., 2], Qd[..., 3]
    return np.stack(
        [2.0 * td * zd / z, 2.0 * xd * zd / z, 2.0 * yd * zd / z, (td ** 2 - xd ** 2 - yd ** 2 + zd ** 2) / z],
        axis=-1,
    )


_ACCELS = {
    "double_pendulum": _double_acc,
    "spring_pendulum": _spring_acc,
    "triple_pendulum": _triple_acc,
    "sphere_geodesic": _sphere_acc,
    "ads4_geodesic": _ads4_acc,
}


def analytic_accel(spec, q, qdot):
    """Closed-form acceleration; raises :class:`DomainViolation` near singularities."""
    Q = np.asarray(q, dtype=np.float64)
    Qd = np.asarray(qdot, dtype=np.float64)
    _check_domain(spec, Q)
    return _ACCELS[spec.name](spec, Q, Qd)


def energy(spec, q, qdot):
    """Total energy ``T + V``; for AdS4 the norm ``g_{mu nu} xdot^mu xdot^nu``."""
    Q = np.asarray(q, dtype=np.float64)
    Qd = np.asarray(qdot, dtype=np.float64)
    _check_domain(spec, Q)
    c = spec.constants
    if spec.name == "double_pendulum":
        L = _double_L(spec, np.moveaxis(Q, -1, 0), np.moveaxis(Qd, -1, 0))
        t1, t2 = Q[..., 0], Q[..., 1]
        V = -(c["m1"] + c["m2"]) * c["g"] * c["l1"] * np.cos(t1) - c["m2"] * c["g"] * c["l2"] * np.cos(t2)
        return (L + V) + V  # T = L + V, E = T + V
    if spec.name == "spring_pendulum":
        r, th = Q[..., 0], Q[..., 1]
        T = 0.5 * c["m"] * (Qd[..., 0] ** 2 + r ** 2 * Qd[..., 1] ** 2)
        V = -c["m"] * c["g"] * r * np.cos(th) + 0.5 * c["k"] * (r - c["l0"]) ** 2
        return T + V
    if spec.name == "triple_pendulum":
        M = triple_mass_matrix(spec, Q)
        T = 0.5 * np.einsum("...i,...ij,...j->...", Qd, M, Qd)
        m1, m2, m3 = c["m1"], c["m2"], c["m3"]
        V = -c["g"] * (
            (m1 + m2 + m3) * c["l1"] * np.cos(Q[..., 0])
            + (m2 + m3) * c["l2"] * np.cos(Q[..., 1])
            + m3 * c["l3"] * np.cos(Q[..., 2])
        )
        return T + V
    if spec.name == "sphere_geodesic":
        return 0.5 * c["m"] * c["R"] ** 2 * (Qd[..., 0] ** 2 + np.sin(Q[..., 0]) ** 2 * Qd[..., 1] ** 2)
    if spec.name == "ads4_geodesic":
        z = Q[..., 3]
        return (c["L"] ** 2 / z ** 2) * (-Qd[..., 0] ** 2 + Qd[..., 1] ** 2 + Qd[..., 2] ** 2 + Qd[..., 3] ** 2)
    raise KeyError(spec.name)


def wrap_angles(spec, state):
    """Map angular coordinates into ``[0, 2 pi)``; velocities are untouched.

    ``state`` may hold ``n`` coordinates or a full ``2n`` state along the
    last axis.
    """
    x = np.array(state, dtype=np.float64, copy=True)
    if x.shape[-1] not in (spec.n, 2 * spec.n):
        raise ValueError("state length must be n or 2n")
    mask = np.zeros(x.shape[-1], dtype=bool)
    mask[: spec.n] = spec.angular_mask
    x[..., mask] = np.mod(x[..., mask], TWO_PI)
    # np.mod can round up to exactly 2 pi for tiny negative inputs
    x[..., mask] = np.where(x[..., mask] >= TWO_PI, 0.0, x[..., mask])
    return x


def ads4_tdot(spec, q, qdot_spatial):
    """Timelike-normalized ``tdot`` from the spatial velocities."""
    Lr = spec.constants["L"]
    z = np.asarray(q)[..., 3]
    v = np.asarray(qdot_spatial)
    return np.sqrt(np.sum(v * v, axis=-1) + z ** 2 / Lr ** 2)


# ---------------------------------------------------------------------------
# registry


def _B(ql, qh, vl, vh):
    return Bounds(np.array(ql, float), np.array(qh, float), np.array(vl, float), np.array(vh, float))


def _pendulum_bounds(n, lo, hi, v):
    return _B([lo] * n, [hi] * n, [-v] * n, [v] * n)


def make_system(name, **overrides):
    """Build a :class:`SystemSpec` by name with default tables."""
    ext_lo, ext_hi = -PI / 2, TWO_PI + PI / 2
    if name == "double_pendulum":
        spec = SystemSpec(
            name, 2, dict(m1=1.0, m2=1.0, l1=1.0, l2=1.0, g=9.8), ["theta1", "theta2"],
            [True, True],
            train_bounds=_pendulum_bounds(2, ext_lo, ext_hi, 10.0),
            val_bounds=_pendulum_bounds(2, 0.0, TWO_PI, 10.0),
            test_bounds=_pendulum_bounds(2, 0.0, TWO_PI, 0.1),
            t_end=100.0, dt=0.1,
            train_settings=dict(lr=1e-3, eta_min=1e-6, T_max=30, batch_size=128),
        )
    elif name == "spring_pendulum":
        spec = SystemSpec(
            name, 2, dict(m=1.0, k=40.0, g=9.8, l0=1.0), ["r", "theta"], [False, True],
            train_bounds=_B([0.05, ext_lo], [5.0, ext_hi], [-5.0, -5.0], [5.0, 5.0]),
            val_bounds=_B([0.05, 0.0], [5.0, TWO_PI], [-5.0, -5.0], [5.0, 5.0]),
            test_bounds=_B([0.5, 0.0], [1.5, TWO_PI], [-1.0, -1.0], [1.0, 1.0]),
            t_end=50.0, dt=0.1,
            guards=dict(r_min=0.05),
            train_settings=dict(lr=5e-4, eta_min=1e-7, T_max=30, batch_size=128),
        )
    elif name == "triple_pendulum":
        spec = SystemSpec(
            name, 3, dict(m1=1.0, m2=1.0, m3=1.0, l1=1.0, l2=1.0, l3=1.0, g=9.8),
            ["theta1", "theta2", "theta3"], [True, True, True],
            train_bounds=_pendulum_bounds(3, ext_lo, ext_hi, 10.0),
            val_bounds=_pendulum_bounds(3, 0.0, TWO_PI, 10.0),
            test_bounds=_pendulum_bounds(3, 0.2, 3.0, 0.1),
            t_end=50.0, dt=0.1,
            train_settings=dict(lr=1e-3, eta_min=1e-7, T_max=30, batch_size=128),
        )
    elif name == "sphere_geodesic":
        spec = SystemSpec(
            name, 2, dict(m=1.0, R=1.0), ["theta", "phi"], [False, True],
            train_bounds=_B([PI / 10, ext_lo], [9 * PI / 10, ext_hi], [-5.0, -5.0], [5.0, 5.0]),
            val_bounds=_B([PI / 10, 0.0], [9 * PI / 10, TWO_PI], [-5.0, -5.0], [5.0, 5.0]),
            test_bounds=_B([PI / 4, 0.0], [3 * PI / 4, TWO_PI], [-2.0, -2.0], [2.0, 2.0]),
            t_end=20.0, dt=0.05,
            guards=dict(sin_min=1e-3),
            train_settings=dict(lr=1e-3, eta_min=1e-6, T_max=30, batch_size=128),
        )
    elif name == "ads4_geodesic":
        spec = SystemSpec(
            name, 4, dict(L=1.0), ["t", "x", "y", "z"], [False] * 4,
            # tdot bounds are placeholders: tdot is fixed by the timelike constraint
            train_bounds=_B([-5, -5, -5, 0.5], [5, 5, 5, 6.0], [0, -1, -1, -0.6], [0, 1, 1, 0.6]),
            val_bounds=_B([-5, -5, -5, 0.5], [5, 5, 5, 6.0], [0, -1, -1, -0.6], [0, 1, 1, 0.6]),
            test_bounds=_B([0, -1, -1, 0.5], [0, 1, 1, 3.0], [0, -0.25, -0.25, -0.25], [0, 0.25, 0.25, 0.25]),
            t_end=0.5, dt=0.01,
            relativistic=True, timelike_index=0, constrained_velocity=0,
            guards=dict(z_min=0.05),
            train_settings=dict(lr=1e-3, eta_min=1e-7, T_max=30, batch_size=128),
        )
    else:
        raise KeyError(f"unknown system {name!r}; choose from {SYSTEM_NAMES}")
    for key, value in overrides.items():
        if not hasattr(spec, key):
            raise KeyError(f"unknown system field {key!r}")
        setattr(spec, key, value)
    return spec


SYSTEM_NAMES = ("double_pendulum", "spring_pendulum", "triple_pendulum", "sphere_geodesic", "ads4_geodesic")

#: sampling guards applied on top of the bounds (rejection sampling)
SAMPLING_GUARDS = {
    "spring_pendulum": lambda Q: Q[..., 0] >= 0.05,
    "sphere_geodesic": lambda Q: (Q[..., 0] >= PI / 10) & (Q[..., 0] <= 9 * PI / 10),
    "ads4_geodesic": lambda Q: Q[..., 3] >= 0.5,
}


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray
    factors: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.q.shape[0]

    @property
    def X(self):
        return np.concatenate([self.q, self.qdot], axis=1)

    def subset(self, idx):
        return Dataset(self.q[idx], self.qdot[idx], self.qddot[idx], self.factors, dict(self.provenance))


_SHARD = 4096


def sample_states(spec, bounds, count, seed):
    """Uniform in-bounds, in-domain states ``(q, qdot)``; deterministic per seed.

    Samples are drawn in fixed-size shards, each from its own child stream of
    ``SeedSequence(seed)``, so the result does not depend on evaluation order.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    n = spec.n
    guard = SAMPLING_GUARDS.get(spec.name)
    children = np.random.SeedSequence(seed).spawn((count + _SHARD - 1) // _SHARD)
    Qs, Qds = [], []
    for shard, ss in enumerate(children):
        want = min(_SHARD, count - shard * _SHARD)
        rng = np.random.default_rng(ss)
        got_q, got_qd, have = [], [], 0
        while have < want:
            Q = rng.uniform(bounds.q_low, bounds.q_high, size=(want, n))
            Qd = rng.uniform(bounds.qd_low, bounds.qd_high, size=(want, n))
            if spec.constrained_velocity is not None:
                Qd[:, 0] = ads4_tdot(spec, Q, Qd[:, 1:])
            ok = in_domain(spec, Q)
            if guard is not None:
                ok &= guard(Q)
            got_q.append(Q[ok])
            got_qd.append(Qd[ok])
            have += int(ok.sum())
        Qs.append(np.concatenate(got_q)[:want])
        Qds.append(np.concatenate(got_qd)[:want])
    return np.concatenate(Qs), np.concatenate(Qds)


def sample_dataset(spec, bounds=None, count=1000, seed=0):
    """Sample states and label them with the analytic acceleration."""
    bounds = bounds or spec.train_bounds
    Q, Qd = sample_states(spec, bounds, count, seed)
    Qdd = analytic_accel(spec, Q, Qd)
    prov = {"system": spec.name, "constants": spec.constants, "bounds": bounds.to_dict(),
            "seed": seed, "count": count}
    return Dataset(Q, Qd, Qdd, None, prov)


def save_dataset(path, ds, spec):
    """CSV with a ``#``-prefixed JSON header line."""
    n = spec.n
    header = dict(spec.header())
    header.update(provenance=ds.provenance,
                  factors=None if ds.factors is None else ds.factors.tolist())
    cols = ([f"q_{c}" for c in spec.coord_names] + [f"qdot_{c}" for c in spec.coord_names]
            + [f"qddot_{c}" for c in spec.coord_names])
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(cols)
        data = np.concatenate([ds.q, ds.qdot, ds.qddot], axis=1)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
    return n


def load_dataset(path):
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing dataset header")
        header = json.loads(first[2:])
        reader = csv.reader(fh)
        next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    n = len(header["coordinates"])
    factors = header.get("factors")
    ds = Dataset(data[:, :n], data[:, n:2 * n], data[:, 2 * n:],
                 None if factors is None else np.asarray(factors), header.get("provenance", {}))
    return ds, header
