"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Times each hot kernel plus one full training step (forward, Euler-Lagrange
solve, regularizer and backward pass) on both backends, checks that the two
agree, and prints a table of milliseconds per call with the speedup.
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from stable_lnn import _backend, _fallback, net, systems, train


def _kernel_cases(rng):
    B, D, m = 128, 4, 128
    K = 1 + D + D * (D + 1) // 2
    T = rng.normal(size=(B, K, m))
    G = rng.normal(size=(B, K, m))
    A = rng.normal(size=(4096, 3, 3))
    A = A + A.transpose(0, 2, 1)

    def fwd(k):
        return lambda: k.act_forward(_fallback.GELU, 0.5, T, D)

    def bwd(k):
        _, f1, f2, f3 = k.act_forward(_fallback.GELU, 0.5, T, D)
        return lambda: k.act_backward(T, f1, f2, f3, G, D)

    def eig(k):
        return lambda: k.jacobi_eigh(A)

    return {"act_forward (128x15x128)": fwd, "act_backward (128x15x128)": bwd,
            "jacobi_eigh (4096 x 3x3)": eig}


def _train_step_case():
    spec = systems.make_system("double_pendulum")
    ds = systems.sample_dataset(spec, spec.train_bounds, 128, seed=0)
    arch = net.Architecture(input_dim=4, layers=3, hidden_dim=128, activation="gelu")
    params = net.init_params(arch, seed=0)
    return lambda: train.batch_loss_and_grad(params, ds.X, ds.qddot, mode="sylvester", lam=100.0,
                                             update_scales=False)


def _time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def run(repeat=20):
    try:
        _backend.use("compiled")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    rows = []
    for label, make in _kernel_cases(rng).items():
        t = {}
        outs = {}
        for name in ("python", "compiled"):
            k = _backend.use(name)
            fn = make(k)
            t[name] = _time(fn, repeat)
            outs[name] = fn()
        a, b = outs["python"], outs["compiled"]
        a = a[0] if isinstance(a, tuple) else a
        b = b[0] if isinstance(b, tuple) else b
        rows.append((label, t["python"], t["compiled"], float(np.max(np.abs(a - b)))))
    step = _train_step_case()
    t, res = {}, {}
    for name in ("python", "compiled"):
        _backend.use(name)
        t[name] = _time(step, max(3, repeat // 4))
        res[name] = step().grad
    rows.append(("training step (B=128, 3x128 gelu)", t["python"], t["compiled"],
                 float(np.max(np.abs(res["python"] - res["compiled"])))))
    _backend.use("compiled")
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    rows = run(args.repeat)
    print(f"{'kernel':38s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, tp, tc, diff in rows:
        print(f"{label:38s} {tp:10.3f} {tc:12.3f} {tp / tc:8.2f} {diff:11.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([dict(zip(("kernel", "python_ms", "compiled_ms", "max_abs_diff"), r)) for r in rows],
                      fh, indent=2)


if __name__ == "__main__":
    main()
