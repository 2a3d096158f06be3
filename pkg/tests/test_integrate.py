import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stable_lnn import integrate as I
from stable_lnn import systems as S
from stable_lnn.errors import SingularMassMatrix


def decay(t, y):
    return -y


def oscillator(t, y):
    return np.array([y[1], -y[0]])


def test_tableau_consistency():
    for s in range(1, 7):
        assert sum(I.A[s]) == pytest.approx(I.C[s], abs=1e-14)
    assert I.B.sum() == pytest.approx(1.0, abs=1e-15)
    assert I.E.sum() == pytest.approx(0.0, abs=1e-15)
    # the dense output reproduces the 5th-order step at theta = 1
    np.testing.assert_allclose(I.P.sum(axis=1), I.B, atol=1e-13)


def test_exponential_within_tolerance():
    ctrl = I.StepController(rtol=1e-6, atol=1e-10)
    tr = I.integrate(decay, [1.0], [0.0, 1.0], ctrl)
    assert tr.completed
    assert abs(tr.y[-1, 0] - math.exp(-1)) < ctrl.rtol * 10 * math.exp(-1)


def test_harmonic_oscillator_energy_drift():
    grid = np.linspace(0, 200 * math.pi, 1001)
    tr = I.integrate(oscillator, [1.0, 0.0], grid, I.StepController(rtol=1e-10, atol=1e-12))
    assert tr.completed
    E = 0.5 * (tr.y ** 2).sum(axis=1)
    assert np.max(np.abs(E / E[0] - 1)) < 1e-8
    np.testing.assert_allclose(tr.y[:, 0], np.cos(grid), atol=1e-7)


def test_double_pendulum_energy_drift():
    spec = S.make_system("double_pendulum")
    grid = np.linspace(0, 10, 101)
    tr = I.integrate(I.system_rhs(spec), [math.pi / 2, 0, 0, 0], grid, I.StepController(rtol=1e-10, atol=1e-12))
    assert tr.completed
    E = S.energy(spec, tr.y[:, :2], tr.y[:, 2:])
    assert np.max(np.abs((E - E[0]) / E[0])) < 1e-7


def test_dense_output_matches_exact_solution():
    grid = np.linspace(0, 5, 503)
    tr = I.integrate(decay, [1.0], grid, I.StepController(rtol=1e-9, atol=1e-12))
    assert tr.diagnostics.accepted < 500
    np.testing.assert_allclose(tr.y[:, 0], np.exp(-grid), rtol=1e-7)
    np.testing.assert_array_equal(tr.t, grid)


def test_pid_step_examples():
    ctrl = I.StepController()
    assert I.pid_step([1.0, 1.0, 1.0], 0.1, ctrl) == pytest.approx(0.09, rel=1e-15)
    assert I.pid_step([1e-20, 1.0, 1.0], 0.1, ctrl) == pytest.approx(0.1 * ctrl.factor_max)
    assert I.pid_step([1e20, 1.0, 1.0], 0.1, ctrl) == pytest.approx(0.1 * ctrl.factor_min)
    assert I.pid_step([1e-20, 1.0, 1.0], 0.1, ctrl, accepted=False) == 0.1
    with pytest.raises(ValueError):
        I.pid_step([-1.0], 0.1, ctrl)


@given(st.floats(1e-3, 10), st.floats(1e-3, 10), st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_pid_without_d_ignores_oldest_error(e0, e1, e2, e2b):
    ctrl = I.StepController(p_coeff=0.3, i_coeff=0.5, d_coeff=0.0)
    assert I.pid_step([e0, e1, e2], 1.0, ctrl) == I.pid_step([e0, e1, e2b], 1.0, ctrl)


def test_pid_exponent_conventions():
    ctrl = I.StepController(p_coeff=0.0, i_coeff=1.0, d_coeff=0.0)
    assert ctrl.exponents() == (0.2, 0.0, 0.0)
    c = I.StepController(p_coeff=0.2, i_coeff=0.4, d_coeff=0.1)
    np.testing.assert_allclose(c.exponents(), [0.7 / 5, -0.4 / 5, 0.1 / 5])
    d = I.StepController(p_coeff=0.2, i_coeff=0.4, d_coeff=0.1, convention="direct")
    np.testing.assert_allclose(d.exponents(), [0.04, 0.08, 0.02])
    with pytest.raises(ValueError):
        I.StepController(rtol=0)
    with pytest.raises(ValueError):
        I.StepController(convention="other")


def test_fixed_step_order_five():
    errs = []
    hs = (0.1, 0.05, 0.025)
    for h in hs:
        tr = I.integrate(decay, [1.0], [0.0, 1.0], fixed_step=h)
        errs.append(abs(tr.y[-1, 0] - math.exp(-1)))
    orders = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(np.abs(orders - 5) < 0.3), orders


def test_tighter_rtol_reduces_error():
    # over [0, 5] there are enough steps for the asymptotic regime
    e = []
    for rtol in (1e-5, 1e-6, 1e-7, 1e-8):
        tr = I.integrate(decay, [1.0], [0.0, 5.0], I.StepController(rtol=rtol, atol=1e-14))
        e.append(abs(tr.y[-1, 0] - math.exp(-5)))
    assert all(a / b >= 5 for a, b in zip(e, e[1:]))


def test_bit_identical_reruns():
    spec = S.make_system("double_pendulum")
    grid = np.linspace(0, 5, 51)
    a = I.integrate(I.system_rhs(spec), [1.0, 2.0, 0.5, -0.5], grid)
    b = I.integrate(I.system_rhs(spec), [1.0, 2.0, 0.5, -0.5], grid)
    assert np.array_equal(a.y, b.y) and a.diagnostics == b.diagnostics


def test_singular_status_keeps_partial_trajectory():
    def rhs(t, y):
        if t > 0.55:
            raise SingularMassMatrix("det H = 0")
        return -y

    tr = I.integrate(rhs, [1.0], np.linspace(0, 1, 11))
    assert tr.status == "singular_mass_matrix"
    assert 2 <= len(tr.t) <= 7 and tr.t[-1] <= 0.6
    np.testing.assert_allclose(tr.y[:, 0], np.exp(-tr.t), rtol=1e-6)


def test_divergence_and_step_limits():
    tr = I.integrate(lambda t, y: y ** 2, [1.0], [0.0, 2.0])
    assert tr.status in ("diverged", "step_underflow")
    tr = I.integrate(lambda t, y: np.array([np.nan]) if t > 0.1 else -y, [1.0], [0.0, 1.0])
    assert tr.status == "diverged"
    tr = I.integrate(oscillator, [1.0, 0.0], [0.0, 100.0], I.StepController(max_steps=5))
    assert tr.status == "max_steps"


def test_wrap_applies_only_to_derivative_input():
    seen = []

    def rhs(t, y):
        seen.append(y[0])
        return np.array([1.0, 0.0])

    spec = S.make_system("double_pendulum")
    tr = I.integrate(lambda t, y: np.concatenate([rhs(t, y)[:1], [0.0], [0.0, 0.0]]),
                     [6.0, 0.0, 0.0, 0.0], [0.0, 1.0], wrap=I.wrapper_for(spec))
    assert max(seen) < 2 * math.pi
    assert tr.y[-1, 0] == pytest.approx(7.0)
    assert I.wrapper_for(S.make_system("ads4_geodesic")) is None


def test_grid_validation():
    with pytest.raises(ValueError):
        I.integrate(decay, [1.0], [0.0, 0.0])
    tr = I.integrate(decay, [1.0], [0.0])
    assert tr.completed and len(tr.t) == 1


def test_to_files(tmp_path):
    spec = S.make_system("sphere_geodesic")
    tr = I.integrate(I.system_rhs(spec), [1.0, 0.0, 0.1, 0.5], np.linspace(0, 1, 6))
    path = tmp_path / "traj.csv"
    tr.to_files(path, spec.coord_names, energy=lambda q, qd: S.energy(spec, q, qd), extra={"seed": 1})
    lines = path.read_text().splitlines()
    assert lines[0] == "t,q_theta,q_phi,qdot_theta,qdot_phi,energy"
    assert len(lines) == 7
    side = json.loads((tmp_path / "traj.json").read_text())
    assert side["status"] == "completed" and side["seed"] == 1 and side["n_points"] == 6
