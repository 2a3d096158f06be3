"""The compiled kernels agree with the numpy reference implementation."""
import os
import subprocess
import sys

import numpy as np
import pytest

from stable_lnn import _backend, _fallback, net, systems, train

compiled = pytest.importorskip("stable_lnn._kernels")

KINDS = [_fallback.GELU, _fallback.SOFTPLUS, _fallback.XTANHK, _fallback.TANH]


@pytest.fixture
def restore_backend():
    before = _backend.name()
    yield
    _backend.use(before)


@pytest.mark.parametrize("kind", KINDS)
def test_act_derivs_agree(kind):
    x = np.linspace(-30, 30, 2001)
    for a, b in zip(_fallback.act_derivs(kind, x, 0.7), compiled.act_derivs(kind, x, 0.7)):
        np.testing.assert_allclose(b, a, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("d", [2, 4, 6])
def test_act_forward_backward_agree(kind, d, rng):
    K = 1 + d + d * (d + 1) // 2
    T = rng.normal(size=(7, K, 5))
    G = rng.normal(size=(7, K, 5))
    fa = _fallback.act_forward(kind, 0.5, T, d)
    fb = compiled.act_forward(kind, 0.5, T, d)
    for a, b in zip(fa, fb):
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-14)
    ga = _fallback.act_backward(T, *fa[1:], G, d)
    gb = compiled.act_backward(T, *fb[1:], G, d)
    np.testing.assert_allclose(gb, ga, rtol=1e-12, atol=1e-13)


def test_jacobi_agrees_with_lapack(rng):
    A = rng.normal(size=(50, 4, 4))
    A = A + A.transpose(0, 2, 1)
    for k in (_fallback, compiled):
        w, V = k.jacobi_eigh(A)
        np.testing.assert_allclose(np.sort(w, axis=1), np.linalg.eigvalsh(A), atol=1e-12)
        np.testing.assert_allclose(V @ (w[..., None] * V.transpose(0, 2, 1)), A, atol=1e-12)


def test_training_step_agrees(restore_backend):
    spec = systems.make_system("triple_pendulum")
    ds = systems.sample_dataset(spec, count=32, seed=0)
    params = net.init_params(net.Architecture(input_dim=6, layers=3, hidden_dim=16), 0)
    out = {}
    for name in ("python", "compiled"):
        _backend.use(name)
        assert _backend.name() == name
        r = train.batch_loss_and_grad(params, ds.X, ds.qddot, "sylvester", 10.0)
        out[name] = (r.terms.loss, r.grad)
    assert out["python"][0] == pytest.approx(out["compiled"][0], rel=1e-12)
    np.testing.assert_allclose(out["compiled"][1], out["python"][1], rtol=1e-10, atol=1e-13)


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.use("fortran")


def test_env_var_forces_fallback():
    env = dict(os.environ, STABLE_LNN_PURE_PYTHON="1")
    r = subprocess.run([sys.executable, "-c", "from stable_lnn import _backend; print(_backend.name())"],
                       capture_output=True, text=True, env=env)
    assert r.stdout.strip() == "python"
    env["STABLE_LNN_PURE_PYTHON"] = "0"
    r = subprocess.run([sys.executable, "-c", "from stable_lnn import _backend; print(_backend.name())"],
                       capture_output=True, text=True, env=env)
    assert r.stdout.strip() == "compiled"
