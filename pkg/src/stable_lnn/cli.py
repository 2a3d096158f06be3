"""Command-line experiment harness.

Subcommands::

    stable-lnn gen SYSTEM --count N --seed S --out data.csv
    stable-lnn train CONFIG_OR_PRESET --run-dir runs/x [--set key=value ...]
    stable-lnn rollout --run-dir runs/x --random 4 --seed 3
    stable-lnn report runs/x [runs/y ...] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
``STABLE_LNN_THREADS`` sets the BLAS/OpenMP thread count.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

logger = logging.getLogger("stable_lnn")


def _apply_threads():
    n = os.environ.get("STABLE_LNN_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n


def _floats(text):
    return [float(v) for v in text.split(",")] if text is not None else None


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args):
    import numpy as np

    from . import systems
    from .errors import ConfigError

    try:
        spec = systems.make_system(args.system)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    base = {"train": spec.train_bounds, "val": spec.val_bounds, "test": spec.test_bounds}[args.bounds]
    parts = {}
    for k in ("q_low", "q_high", "qd_low", "qd_high"):
        v = _floats(getattr(args, k))
        if v is not None and len(v) != spec.n:
            raise ConfigError(f"--{k.replace('_', '-')} needs {spec.n} comma-separated values")
        parts[k] = np.asarray(v) if v is not None else getattr(base, k)
    try:
        bounds = systems.Bounds(**parts)
    except ValueError as exc:
        raise ConfigError(f"bad bounds: {exc}") from None
    if args.count <= 0:
        raise ConfigError("--count must be positive")
    ds = systems.sample_dataset(spec, bounds, args.count, args.seed)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    systems.save_dataset(args.out, ds, spec)
    print(f"wrote {args.count} samples of {spec.name} to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_config(source, sets):
    from . import config
    from .errors import ConfigError

    over = {}
    if os.path.exists(source):
        with open(source) as fh:
            over = config.parse(fh.read())
    elif source in config.PRESETS:
        over = {"preset": source}
    else:
        raise ConfigError(f"{source!r} is neither a config file nor a preset")
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = config.parse_value(v)
    return config.resolve(over)


def cmd_train(args):
    from . import experiments

    cfg = _load_config(args.config, args.set)
    run_dir = args.run_dir or os.path.join("runs", cfg["name"])

    def log(row):
        if not args.quiet:
            print(f"epoch {row['epoch']:4d}  train {row['train_mae']:.5g}  val {row['val_mae']:.5g}  "
                  f"reg {row['reg']:.3g}  lr {row['lr']:.2e}", flush=True)

    with experiments.run_lock(run_dir):
        res = experiments.run_training(cfg, run_dir=run_dir, log=log)
    print(f"{res.status}: best val MAE {res.best_val_mae:.6g} at epoch {res.best_epoch}; outputs in {run_dir}")
    return EXIT_OK if not res.diverged else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# rollout


def cmd_rollout(args):
    import contextlib

    from . import experiments

    lock = experiments.run_lock(args.run_dir) if args.run_dir else contextlib.nullcontext()
    with lock:
        return _rollout(args)


def _rollout(args):
    import numpy as np

    from . import config, dynamics, experiments, net, systems
    from .errors import ConfigError

    model = None
    cfg = config.resolve({})
    if args.run_dir and os.path.exists(os.path.join(args.run_dir, "checkpoint.json")):
        cfg, params, factors, spec, _ = experiments.load_run(args.run_dir)
        model = dynamics.Model.from_params(params, factors)
    elif args.checkpoint:
        params, extra = net.load_checkpoint(args.checkpoint)
        spec = systems.make_system(args.system or extra.get("system"))
        model = dynamics.Model.from_params(params, np.asarray(extra["factors"]))
    else:
        if not args.system:
            raise ConfigError("analytic rollout needs --system")
        spec = systems.make_system(args.system)
    if args.system and args.system != spec.name:
        raise ConfigError(f"checkpoint is for {spec.name}, not {args.system}")
    out = args.out or os.path.join(args.run_dir or ".", "rollouts")
    os.makedirs(out, exist_ok=True)
    if args.init:
        y0s = np.atleast_2d(np.asarray(_floats(args.init)))
        if y0s.shape[1] != 2 * spec.n:
            raise ConfigError(f"--init needs {2 * spec.n} values")
    else:
        y0s = experiments.initial_conditions(spec, args.random, args.seed)
    grid = experiments.time_grid(spec, args.t_end if args.t_end is not None else cfg["rollout_t_end"],
                                 args.dt if args.dt is not None else cfg["rollout_dt"])
    ctrl_cfg = dict(cfg)
    for key in ("rtol", "atol", "p_coeff", "i_coeff", "d_coeff"):
        v = getattr(args, key)
        if v is not None:
            ctrl_cfg[key] = v
    energy = (lambda Q, Qd: systems.energy(spec, Q, Qd))
    failed = False
    summary = []
    for k, y0 in enumerate(y0s):
        ref = experiments.rollout(spec, y0, grid, None, experiments.truth_controller(cfg))
        ref.to_files(os.path.join(out, f"analytic_{k}.csv"), spec.coord_names, energy,
                     {"initial_state": y0.tolist(), "kind": "analytic"})
        entry = {"index": k, "analytic": ref.status}
        if model is not None:
            tr = experiments.rollout(spec, y0, grid, model, experiments.controller(ctrl_cfg))
            tr.to_files(os.path.join(out, f"learned_{k}.csv"), spec.coord_names, energy,
                        {"initial_state": y0.tolist(), "kind": "learned"})
            entry["learned"] = tr.status
            failed |= tr.status != "completed"
        summary.append(entry)
        print(json.dumps(entry))
    # paths relative to the run directory keep reruns byte-identical
    where = os.path.relpath(out, args.run_dir) if args.run_dir else out
    index = {"system": spec.name, "t_end": float(grid[-1]), "out": where, "runs": summary}
    with open(os.path.join(out, "rollouts.json"), "w") as fh:
        json.dump(index, fh, indent=2)
    if args.run_dir:
        experiments.update_manifest(args.run_dir, "rollouts", index)
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------
# report


def _report_one(run_dir, out, t_end):
    import numpy as np

    from . import dynamics, experiments, metrics, plotting, train

    cfg, params, factors, spec, record = experiments.load_run(run_dir)
    if len(record) == 0:
        raise ValueError(f"{run_dir}: empty training record")
    os.makedirs(out, exist_ok=True)
    model = dynamics.Model.from_params(params, factors)
    loss = record.column("train_mae") + np.nan_to_num(record.column("reg"))
    ep = record.column("epoch")
    plotting.line_plot(os.path.join(out, "loss.svg"),
                       [("train loss", ep, loss), ("val MAE", ep, record.column("val_mae"))],
                       title=f"{cfg['name']}: training loss", xlabel="epoch", ylabel="loss", ylog=True)
    summary = {"name": cfg["name"], "system": spec.name, "epochs": len(record),
               "best_val_mae": float(np.nanmin(record.column("val_mae")))}
    try:
        summary["instability"] = metrics.instability(loss, train.lr_phases(len(record), cfg["T_max"]))
    except ValueError as exc:
        summary["instability"] = None
        summary["instability_note"] = str(exc)
    # energy error along one rollout from the test bounds
    y0 = experiments.initial_conditions(spec, 1, cfg["rollout_seed"])[0]
    grid = experiments.time_grid(spec, t_end, None)
    tr = experiments.rollout(spec, y0, grid, model, experiments.controller(cfg))
    ref = experiments.rollout(spec, y0, grid, None, experiments.truth_controller(cfg))
    series = []
    for label, t in (("learned", tr), ("analytic", ref)):
        if len(t.t) > 1:
            ee = metrics.energy_error(t, spec)
            series.append((label, t.t, np.maximum(ee.series, 1e-16)))
            summary[f"energy_error_pct_{label}"] = ee.summary_pct
        summary[f"rollout_status_{label}"] = t.status
    plotting.line_plot(os.path.join(out, "energy_error.svg"), series, title="energy error",
                       xlabel="t", ylabel="relative error", ylog=True)
    # det H over the first two coordinates, velocities at the centre of the test box
    b = spec.test_bounds
    n = spec.n
    xs = np.linspace(b.q_low[0], b.q_high[0], 25)
    ys = np.linspace(b.q_low[1], b.q_high[1], 25) if n > 1 else np.zeros(1)
    centre = np.concatenate([(b.q_low + b.q_high) / 2, (b.qd_low + b.qd_high) / 2])
    if spec.constrained_velocity is not None:
        centre[n] = systems_tdot(spec, centre)
    pts = np.tile(centre, (xs.size * ys.size, 1))
    XX, YY = np.meshgrid(xs, ys)
    pts[:, 0] = XX.ravel()
    if n > 1:
        pts[:, 1] = YY.ravel()
    field = dynamics.mass_matrix_field(model, pts)
    field.to_csv(os.path.join(out, "det_h.csv"), [f"q_{c}" for c in spec.coord_names]
                 + [f"qdot_{c}" for c in spec.coord_names])
    plotting.heatmap(os.path.join(out, "det_h.svg"), xs, ys, field.det.reshape(ys.size, xs.size),
                     title="learned det H", xlabel=spec.coord_names[0],
                     ylabel=spec.coord_names[1] if n > 1 else "")
    summary["det_h_negative_frac"] = float(np.mean(field.det[field.finite] < 0)) if np.any(field.finite) else None
    metrics.write_summary(os.path.join(out, "metrics.json"), summary)
    experiments.update_manifest(run_dir, "report", {"out": out, "summary": summary})
    return summary, (cfg["name"], ep, loss)


def systems_tdot(spec, state):
    from . import systems

    n = spec.n
    return float(systems.ads4_tdot(spec, state[:n], state[n + 1:2 * n]))


def _find_runs(paths):
    runs = []
    for p in paths:
        if os.path.exists(os.path.join(p, "checkpoint.json")):
            runs.append(p)
        elif os.path.isdir(p):
            runs += sorted(os.path.join(p, d) for d in os.listdir(p)
                           if os.path.exists(os.path.join(p, d, "checkpoint.json")))
    return runs


def cmd_report(args):
    from . import plotting
    from .errors import ConfigError

    runs = _find_runs(args.run_dirs)
    if not runs:
        raise ConfigError(f"no finished runs found in {args.run_dirs}")
    curves = []
    summaries = []
    for rd in runs:
        out = args.out and os.path.join(args.out, os.path.basename(os.path.normpath(rd))) or os.path.join(rd, "report")
        s, curve = _report_one(rd, out, args.t_end)
        summaries.append(s)
        curves.append(curve)
        print(json.dumps(s, default=float))
    if len(runs) > 1:
        out = os.path.join(args.out or os.path.dirname(os.path.normpath(runs[0])), "comparison")
        os.makedirs(out, exist_ok=True)
        plotting.line_plot(os.path.join(out, "loss_comparison.svg"), curves, title="training loss",
                           xlabel="epoch", ylabel="loss", ylog=True)
        with open(os.path.join(out, "comparison.json"), "w") as fh:
            json.dump(summaries, fh, indent=2, default=float)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="stable-lnn", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a labelled dataset")
    g.add_argument("system")
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--bounds", choices=("train", "val", "test"), default="train")
    for k in ("q-low", "q-high", "qd-low", "qd-high"):
        g.add_argument(f"--{k}", help="comma-separated override")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train from a config file or preset name")
    t.add_argument("config")
    t.add_argument("--run-dir")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="integrate learned and analytic trajectories")
    r.add_argument("--run-dir")
    r.add_argument("--checkpoint")
    r.add_argument("--system")
    r.add_argument("--random", type=int, default=4)
    r.add_argument("--seed", type=int, default=3)
    r.add_argument("--init", help="comma-separated q..., qdot...")
    r.add_argument("--t-end", type=float)
    r.add_argument("--dt", type=float)
    r.add_argument("--out")
    for k in ("rtol", "atol", "p_coeff", "i_coeff", "d_coeff"):
        r.add_argument(f"--{k.replace('_', '-')}", dest=k, type=float)
    r.set_defaults(func=cmd_rollout)

    rp = sub.add_parser("report", help="metrics JSON and SVG plots for finished runs")
    rp.add_argument("run_dirs", nargs="+")
    rp.add_argument("--out")
    rp.add_argument("--t-end", type=float, default=None)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    _apply_threads()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import ConfigError, LNNError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LNNError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
