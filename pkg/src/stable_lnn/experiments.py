"""End-to-end experiment pipeline shared by the CLI and the acceptance suite.

A run directory holds ``config.cfg``, ``manifest.json``, ``record.csv`` and
``checkpoint.json`` (best-validation parameters with scaling factors), plus
any rollout and report outputs.  A ``.lock`` file marks a directory owned by
a running command.
"""
from __future__ import annotations

import contextlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass

import numpy as np

from . import _backend, config, dynamics, integrate, net, scale, systems, train
from .errors import ConfigError, UnrecoverableDivergence

VERSION = "0.1.0"


@contextlib.contextmanager
def run_lock(run_dir):
    """Exclusive ownership of ``run_dir`` for the duration of a command."""
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, ".lock")
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{run_dir} is locked by another command ({path})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(path)


def environment():
    import scipy

    return {"stable_lnn": VERSION, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "kernels": _backend.name()}


# ---------------------------------------------------------------------------
# building blocks


def build_system(cfg):
    spec = systems.make_system(cfg["system"])
    tb = spec.train_bounds
    over = {k: cfg.get(f"train_{k}") for k in ("q_low", "q_high", "qd_low", "qd_high")}
    if any(v is not None for v in over.values()):
        try:
            spec.train_bounds = systems.Bounds(*(np.asarray(over[k] if over[k] is not None else getattr(tb, k),
                                                            dtype=np.float64)
                                                 for k in ("q_low", "q_high", "qd_low", "qd_high")))
        except ValueError as exc:
            raise ConfigError(f"bad training bounds: {exc}") from None
        if spec.train_bounds.q_low.shape != (spec.n,):
            raise ConfigError(f"training bounds need {spec.n} entries")
    return spec


def make_data(cfg, spec):
    raw = systems.sample_dataset(spec, spec.train_bounds, cfg["n_train"], seed=[cfg["data_seed"], 0])
    raw_val = systems.sample_dataset(spec, spec.val_bounds, cfg["n_val"], seed=[cfg["data_seed"], 1])
    factors = scale.fit_scaling(raw, cfg["scaling"])
    return scale.scale_dataset(raw, factors), scale.scale_dataset(raw_val, factors), factors


def make_arch(cfg, spec):
    try:
        return net.Architecture(
            input_dim=2 * spec.n, layers=cfg["layers"], hidden_dim=cfg["hidden_dim"],
            activation=cfg["activation"], k=cfg["k"], quadratic_alpha=cfg["quadratic_alpha"],
            init_scheme=cfg["init_scheme"], dyt=cfg["dyt"], zero_output=cfg["zero_output"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def make_train_config(cfg):
    keys = ("epochs", "batch_size", "lr", "weight_decay", "T_max", "eta_min", "warm_restarts",
            "clip_norm", "reg_mode", "reg_lambda", "reg_eps", "scale_window", "phases", "seed",
            "max_skips")
    try:
        return train.TrainConfig(**{k: cfg[k] for k in keys})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def controller(cfg):
    return integrate.StepController(rtol=cfg["rtol"], atol=cfg["atol"], p_coeff=cfg["p_coeff"],
                                    i_coeff=cfg["i_coeff"], d_coeff=cfg["d_coeff"])


def truth_controller(cfg):
    return integrate.StepController(rtol=cfg["truth_rtol"], atol=cfg["truth_atol"])


# ---------------------------------------------------------------------------
# training


@dataclass
class RunResult:
    cfg: dict
    spec: systems.SystemSpec
    factors: np.ndarray
    params: net.NetworkParams
    record: train.TrainRecord
    status: str
    best_val_mae: float
    best_epoch: int
    wall_time: float

    @property
    def diverged(self):
        """Training aborted, or an epoch produced a non-finite loss."""
        if self.status != "completed":
            return True
        cols = [self.record.column("train_mae"), self.record.column("val_mae")]
        return any(not np.all(np.isfinite(c)) for c in cols)

    def loss_curve(self):
        """Per-epoch training loss (MAE plus regularizer)."""
        return self.record.column("train_mae") + np.nan_to_num(self.record.column("reg"))

    def model(self):
        return dynamics.Model.from_params(self.params, self.factors)


def run_training(cfg, run_dir=None, log=None):
    """Generate data, train, and (optionally) persist everything in ``run_dir``."""
    cfg = config.resolve(cfg) if "version" not in cfg else cfg
    spec = build_system(cfg)
    arch = make_arch(cfg, spec)
    tcfg = make_train_config(cfg)
    ds, vs, factors = make_data(cfg, spec)
    t0 = time.perf_counter()

    def on_epoch(row):
        if log is not None:
            log(row)

    status = "completed"
    try:
        res = train.train(tcfg, ds, spec, vs, arch=arch, on_epoch=on_epoch)
        params, record, best, best_epoch = res.params, res.record, res.best_val_mae, res.best_epoch
    except UnrecoverableDivergence as exc:
        status = "diverged"
        params, record = exc.params, exc.record
        vals = record.column("val_mae") if len(record) else np.array([math.inf])
        best = float(np.nanmin(vals)) if np.any(np.isfinite(vals)) else math.inf
        best_epoch = int(np.nanargmin(vals)) if np.isfinite(best) else -1
    out = RunResult(cfg, spec, factors, params, record, status, best, best_epoch,
                    time.perf_counter() - t0)
    if run_dir is not None:
        save_run(out, run_dir)
    return out


def save_run(result, run_dir):
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.cfg"), "w") as fh:
        fh.write(config.dump(result.cfg))
    result.record.to_csv(os.path.join(run_dir, "record.csv"))
    net.save_checkpoint(os.path.join(run_dir, "checkpoint.json"), result.params, {
        "factors": result.factors.tolist(), "system": result.spec.name,
        "best_epoch": result.best_epoch, "best_val_mae": result.best_val_mae,
    })
    manifest = {
        "name": result.cfg["name"], "system": result.spec.name, "status": result.status,
        "seed": result.cfg["seed"], "data_seed": result.cfg["data_seed"],
        "best_val_mae": result.best_val_mae, "best_epoch": result.best_epoch,
        "wall_time": result.wall_time, "environment": environment(),
        "files": ["config.cfg", "record.csv", "checkpoint.json"],
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)


def load_run(run_dir):
    """Return ``(cfg, params, factors, spec, record)`` from a run directory."""
    ck = os.path.join(run_dir, "checkpoint.json")
    if not os.path.exists(ck):
        raise ConfigError(f"{run_dir}: no checkpoint.json")
    cfg = config.load(os.path.join(run_dir, "config.cfg"))
    params, extra = net.load_checkpoint(ck)
    rec_path = os.path.join(run_dir, "record.csv")
    record = train.TrainRecord.from_csv(rec_path) if os.path.exists(rec_path) else train.TrainRecord()
    return cfg, params, np.asarray(extra["factors"]), build_system(cfg), record


# ---------------------------------------------------------------------------
# rollouts


def initial_conditions(spec, count, seed):
    Q, Qd = systems.sample_states(spec, spec.test_bounds, count, seed)
    return np.concatenate([Q, Qd], axis=1)


def time_grid(spec, t_end=None, dt=None):
    t_end = spec.t_end if t_end is None else t_end
    dt = spec.dt if dt is None else dt
    return np.linspace(0.0, t_end, int(round(t_end / dt)) + 1)


def rollout(spec, y0, t_grid, model=None, ctrl=None):
    """Integrate from ``y0`` with a learned ``model`` or the analytic system."""
    if model is None:
        rhs, wrap = integrate.system_rhs(spec), None
        ctrl = ctrl or integrate.StepController.ground_truth()
    else:
        rhs, wrap = integrate.model_rhs(model), integrate.wrapper_for(spec)
        ctrl = ctrl or integrate.StepController()
    return integrate.integrate(rhs, y0, t_grid, ctrl, wrap=wrap)


def update_manifest(run_dir, key, value):
    """Record ``value`` under ``key`` in an existing run manifest."""
    path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(path):
        return
    with open(path) as fh:
        manifest = json.load(fh)
    manifest[key] = value
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
