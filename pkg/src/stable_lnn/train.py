"""Training loop: Adam with decoupled weight decay, cosine schedule, clipping.

A training step runs the batch through the fused jet network, assembles the
Euler-Lagrange acceleration, evaluates the MAE plus signature penalty and
backpropagates through the linear solve into the Lagrangian jets and from
there into the parameters.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg, net, regularize, scale, systems
from ._packing import full_adjoint_to_packed, n_packed
from .dynamics import bundle_from_jets, rhs
from .errors import ConfigError, NonFiniteJetError, UnrecoverableDivergence

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
MAX_SKIPS = 50
EVAL_CHUNK = 2048


# ---------------------------------------------------------------------------
# optimizer pieces


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(theta, grads, state, lr, weight_decay=0.0, betas=ADAM_BETAS, eps=ADAM_EPS):
    """One Adam update with decoupled weight decay.

    Returns ``(theta_new, applied)``; non-finite gradients skip the step and
    leave both ``theta`` and ``state`` untouched.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if theta.shape != grads.shape:
        raise ValueError("parameter and gradient shapes differ")
    if not np.all(np.isfinite(grads)):
        logger.warning("non-finite gradient; step skipped")
        return theta, False
    b1, b2 = betas
    state.t += 1
    state.m = b1 * state.m + (1.0 - b1) * grads
    state.v = b2 * state.v + (1.0 - b2) * grads * grads
    mhat = state.m / (1.0 - b1 ** state.t)
    vhat = state.v / (1.0 - b2 ** state.t)
    new = theta - lr * weight_decay * theta - lr * mhat / (np.sqrt(vhat) + eps)
    return new, True


def clip_global_norm(grads, threshold=1.0):
    """Rescale ``grads`` to norm ``threshold`` if larger; returns ``(grads, norm, clipped)``."""
    g = np.asarray(grads, dtype=np.float64)
    norm = float(np.sqrt(np.sum(g * g)))
    if norm > threshold:
        return g * (threshold / norm), norm, True
    return g, norm, False


def cosine_lr(epoch, lr0, T_max, eta_min=0.0, warm_restarts=False):
    """Cosine-annealed learning rate.

    By default the cosine keeps running past ``T_max`` so the rate falls for
    ``T_max`` epochs and then rises again (period ``2 T_max``).  With
    ``warm_restarts`` the rate jumps back to ``lr0`` every ``T_max`` epochs.
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if T_max <= 0:
        raise ValueError("T_max must be positive")
    e = epoch % T_max if warm_restarts else epoch % (2 * T_max)
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + math.cos(math.pi * e / T_max))


def lr_phases(n_epochs, T_max, warm_restarts=False):
    """``(start, stop)`` epoch ranges of monotone learning-rate phases.

    Without restarts the phases alternate decreasing ``[2kT, 2kT + T)`` and
    increasing ``[2kT + T, 2kT + 2T)``; with restarts each cycle is one
    decreasing phase.  Either way phases are ``T`` epochs long and the final
    one may be partial.
    """
    out = []
    start = 0
    while start < n_epochs:
        stop = min(start + T_max, n_epochs)
        out.append((start, stop))
        start = stop
    return out


# ---------------------------------------------------------------------------
# configuration and records


@dataclass
class Phase:
    epochs: int
    lr: float
    eta_min: float
    bounds: str | None = None  # "train", "val", "test" or None to keep the data
    count: int | None = None


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-6
    T_max: int = 30
    eta_min: float = 1e-6
    warm_restarts: bool = False
    clip_norm: float = 1.0
    reg_mode: str = "none"
    reg_lambda: float = 0.0
    reg_eps: float = regularize.DEFAULT_EPS
    scale_window: int = regularize.DEFAULT_WINDOW
    phases: list = field(default_factory=list)
    seed: int = 0
    max_skips: int = MAX_SKIPS

    def __post_init__(self):
        for name in ("epochs", "batch_size", "T_max", "max_skips"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr < 0 or self.weight_decay < 0 or self.clip_norm <= 0:
            raise ConfigError("lr and weight_decay must be >= 0 and clip_norm > 0")
        if self.reg_mode not in regularize.MODES:
            raise ConfigError(f"reg_mode must be one of {regularize.MODES}")
        self.phases = [p if isinstance(p, Phase) else Phase(**p) for p in self.phases]

    def schedule(self):
        """Phases to run; a config without phases is a single phase."""
        return self.phases or [Phase(self.epochs, self.lr, self.eta_min)]


RECORD_FIELDS = ("epoch", "phase", "train_mae", "val_mae", "val_mae_phys", "reg", "lr",
                 "clip_frac", "singular_frac", "skipped", "grad_norm", "wall_time")


@dataclass
class TrainRecord:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append({k: row.get(k, float("nan")) for k in RECORD_FIELDS})

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    @classmethod
    def from_csv(cls, path):
        rec = cls()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                vals = {k: float(v) for k, v in row.items()}
                for k in ("epoch", "phase", "skipped"):
                    if math.isfinite(vals[k]):
                        vals[k] = int(vals[k])
                rec.rows.append(vals)
        return rec


@dataclass
class TrainResult:
    params: net.NetworkParams  # best-validation parameters
    final_params: net.NetworkParams
    record: TrainRecord
    best_val_mae: float
    best_epoch: int
    scale_state: regularize.ScaleState
    factors: np.ndarray
    status: str = "completed"


# ---------------------------------------------------------------------------
# loss and gradient


@dataclass
class BatchResult:
    terms: regularize.LossTerms
    grad: np.ndarray
    singular: np.ndarray


def batch_loss_and_grad(params, X, target, mode="none", lam=0.0, state=None, need_grad=True,
                        update_scales=False):
    """Loss terms and parameter gradient for one batch in network units.

    With ``update_scales`` the batch's mass matrices are pushed into ``state``
    before the penalty is evaluated; the scales themselves get no gradient.
    """
    arch = params.arch
    n = arch.n
    D = 2 * n
    Ljet, cache = net.forward_batch(params, X, keep=need_grad)
    b = bundle_from_jets(Ljet, n)
    if update_scales and state is not None:
        regularize.update_scales(state, b.H)
    qdot = X[:, n:]
    r = rhs(b, qdot)
    a, sing = linalg.solve_masked(b.H, r)
    a = np.where(sing[:, None], 0.0, a)
    terms = regularize.total_loss(a, target, b.H, mode, lam, state, valid=~sing)
    if not need_grad:
        return BatchResult(terms, None, sing)
    # adjoints through a = H^{-1} (g - C qdot)
    abar = terms.d_pred
    ok = ~sing & np.any(abar != 0.0, axis=1)
    rbar = np.zeros_like(a)
    if np.any(ok):
        rbar[ok] = linalg.solve(b.H[ok], abar[ok], check=False)
    Hbar = terms.d_H - rbar[:, :, None] * a[:, None, :]
    Cbar = -rbar[:, :, None] * qdot[:, None, :]
    full = np.zeros((X.shape[0], D, D))
    full[:, n:, n:] = Hbar
    full[:, n:, :n] = Cbar
    G = np.zeros_like(Ljet)
    G[:, 1:1 + n] = rbar
    G[:, 1 + D:1 + D + n_packed(D)] = full_adjoint_to_packed(full)
    grad = net.backward_batch(params, cache, G)
    return BatchResult(terms, grad, sing)


def evaluate_mae(params, ds, factors=None):
    """Validation MAE in network units and in physical units.

    Samples whose mass matrix is singular are excluded; the fraction is
    returned as the third value.
    """
    n = params.arch.n
    X = ds.X
    tot = 0.0
    tot_phys = 0.0
    cnt = 0
    n_sing = 0
    for a0 in range(0, X.shape[0], EVAL_CHUNK):
        Xb = X[a0:a0 + EVAL_CHUNK]
        tb = ds.qddot[a0:a0 + EVAL_CHUNK]
        try:
            L, _ = net.forward_batch(params, Xb)
        except NonFiniteJetError:
            return math.inf, math.inf, 1.0
        bnd = bundle_from_jets(L, n)
        a, sing = linalg.solve_masked(bnd.H, rhs(bnd, Xb[:, n:]))
        ok = ~sing & np.all(np.isfinite(a), axis=1)
        n_sing += int((~ok).sum())
        if np.any(ok):
            d = a[ok] - tb[ok]
            tot += float(np.abs(d).sum())
            if factors is not None:
                tot_phys += float(np.abs(scale.accel_to_physical(d, factors)).sum())
            cnt += int(ok.sum())
    if cnt == 0:
        return math.inf, math.inf, 1.0
    mae = tot / (cnt * n)
    phys = tot_phys / (cnt * n) if factors is not None else mae
    return mae, phys, n_sing / X.shape[0]


# ---------------------------------------------------------------------------
# loop


def _phase_data(phase, k, dataset, spec, factors, seed):
    if phase.bounds is None:
        return dataset
    if spec is None:
        raise ConfigError("resampling phases need the system spec")
    bounds = {"train": spec.train_bounds, "val": spec.val_bounds, "test": spec.test_bounds}[phase.bounds]
    raw = systems.sample_dataset(spec, bounds, phase.count or len(dataset), seed=[seed, 1000 + k])
    return scale.scale_dataset(raw, factors)


def train(cfg, dataset, spec=None, val=None, arch=None, init=None, on_epoch=None):
    """Train a Lagrangian network.

    Parameters
    ----------
    cfg : TrainConfig
    dataset : Dataset
        Scaled training data (``dataset.factors`` set, or ``None`` = unscaled).
    spec : SystemSpec, optional
        Needed only for phases that resample data.
    val : Dataset, optional
        Scaled validation data; defaults to the training data.
    arch : Architecture, optional
        Defaults to the desk-scale double-pendulum network.
    init : NetworkParams, optional
        Starting parameters; otherwise drawn with ``cfg.seed``.
    on_epoch : callable, optional
        ``on_epoch(row)`` after each epoch.

    Raises
    ------
    UnrecoverableDivergence
        After ``cfg.max_skips`` consecutive skipped steps.  The exception
        carries the partial ``record`` and the best ``params`` so far.
    """
    n = dataset.q.shape[1]
    factors = dataset.factors if dataset.factors is not None else np.ones(2 * n)
    arch = arch or (init.arch if init is not None else net.Architecture(input_dim=2 * n, layers=3, hidden_dim=128))
    if arch.input_dim != 2 * n:
        raise ConfigError("architecture input_dim does not match the dataset")
    params = init.copy() if init is not None else net.init_params(arch, cfg.seed)
    val = val if val is not None else dataset
    state = regularize.ScaleState(n, cfg.reg_eps, cfg.scale_window)
    record = TrainRecord()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    best = (math.inf, -1, params.copy())
    epoch = 0
    skips = 0
    for k, phase in enumerate(cfg.schedule()):
        if k > 0 and best[1] >= 0:
            params = best[2].copy()
        data = _phase_data(phase, k, dataset, spec, factors, cfg.seed)
        X_all, Y_all = data.X, data.qddot
        adam = AdamState.zeros(params.size)
        for pe in range(phase.epochs):
            t0 = time.perf_counter()
            lr = cosine_lr(pe, phase.lr, cfg.T_max, phase.eta_min, cfg.warm_restarts)
            perm = rng.permutation(X_all.shape[0])
            sums = dict(mae=0.0, reg=0.0, clip=0, steps=0, sing=0, skipped=0, gnorm=0.0, seen=0)
            for a0 in range(0, perm.size, cfg.batch_size):
                idx = perm[a0:a0 + cfg.batch_size]
                Xb, Yb = X_all[idx], Y_all[idx]
                try:
                    res = batch_loss_and_grad(params, Xb, Yb, cfg.reg_mode, cfg.reg_lambda, state,
                                              update_scales=cfg.reg_mode != "none")
                    grad_ok = np.isfinite(res.terms.loss) and np.all(np.isfinite(res.grad))
                except (NonFiniteJetError, FloatingPointError):
                    res, grad_ok = None, False
                if not grad_ok:
                    skips += 1
                    sums["skipped"] += 1
                    if skips >= cfg.max_skips:
                        exc = UnrecoverableDivergence(f"{skips} consecutive skipped steps at epoch {epoch}")
                        exc.record, exc.params = record, best[2]
                        raise exc
                    continue
                skips = 0
                g, norm, clipped = clip_global_norm(res.grad, cfg.clip_norm)
                theta, _ = adam_step(params.theta, g, adam, lr, cfg.weight_decay)
                params = params.with_theta(theta)
                m = len(idx)
                sums["mae"] += res.terms.mae * m
                sums["reg"] += res.terms.reg * m
                sums["seen"] += m
                sums["sing"] += int(res.singular.sum())
                sums["clip"] += int(clipped)
                sums["gnorm"] += norm
                sums["steps"] += 1
            v_mae, v_phys, _ = evaluate_mae(params, val, factors)
            steps = max(sums["steps"], 1)
            seen = max(sums["seen"], 1)
            row = dict(
                epoch=epoch, phase=k,
                train_mae=sums["mae"] / seen if sums["seen"] else math.nan,
                val_mae=v_mae, val_mae_phys=v_phys,
                reg=sums["reg"] / seen if sums["seen"] else math.nan,
                lr=lr, clip_frac=sums["clip"] / steps, singular_frac=sums["sing"] / seen,
                skipped=sums["skipped"], grad_norm=sums["gnorm"] / steps,
                wall_time=time.perf_counter() - t0,
            )
            record.append(**row)
            if v_mae < best[0]:
                best = (v_mae, epoch, params.copy())
            if on_epoch is not None:
                on_epoch(record.rows[-1])
            epoch += 1
    best_params = best[2] if best[1] >= 0 else params
    return TrainResult(best_params, params, record, best[0], best[1], state, factors)


def config_dict(cfg):
    d = asdict(cfg)
    d["phases"] = [asdict(p) if isinstance(p, Phase) else p for p in cfg.phases]
    return d
