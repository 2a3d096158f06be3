import math

import numpy as np
import pytest

from stable_lnn import dynamics, jets, net, systems
from stable_lnn.dynamics import DerivativeBundle, Model
from stable_lnn.errors import SingularMassMatrix


def analytic(name):
    spec = systems.make_system(name)
    return spec, Model.from_lagrangian(spec.lagrangian, spec.n)


def test_separable_lagrangian_bundle():
    def L(q, qd):
        return 0.5 * (qd[0] * qd[0] + qd[1] * qd[1]) - (q[0] * q[0] + 3.0 * q[1])

    b = dynamics.derivative_bundle(Model.from_lagrangian(L, 2), [0.5, 1.0], [0.3, -0.2])
    np.testing.assert_allclose(b.H, np.eye(2))
    np.testing.assert_allclose(b.C, 0.0)
    np.testing.assert_allclose(b.g, [-1.0, -3.0])


def test_double_pendulum_mass_matrix_and_accel():
    spec, m = analytic("double_pendulum")
    b = dynamics.derivative_bundle(m, [0.3, 0.3], [0.0, 0.0])
    np.testing.assert_allclose(b.H, [[2, 1], [1, 1]], atol=1e-14)
    a = dynamics.model_accel(m, [math.pi / 2, 0.0], [0.0, 0.0])
    np.testing.assert_allclose(a, [-9.8, 0.0], atol=1e-12)


def test_ads4_mass_matrix():
    spec, m = analytic("ads4_geodesic")
    b = dynamics.derivative_bundle(m, [0, 0, 0, 1.0], [1.2, 0.1, 0.2, 0.3])
    np.testing.assert_allclose(b.H, np.diag([-1.0, 1, 1, 1]), atol=1e-14)


def test_accel_examples():
    b = DerivativeBundle(g=np.array([-9.8, 0.0]), H=np.eye(2), C=np.zeros((2, 2)), L_value=0.0)
    np.testing.assert_allclose(dynamics.accel(b, [5.0, -3.0]), [-9.8, 0.0])
    with pytest.raises(SingularMassMatrix):
        dynamics.accel(DerivativeBundle(np.zeros(2), np.diag([0.0, 1.0]), np.zeros((2, 2)), 0.0), [0, 0])


@pytest.mark.parametrize("name", systems.SYSTEM_NAMES)
def test_pipeline_matches_closed_forms(name):
    spec, m = analytic(name)
    ds = systems.sample_dataset(spec, spec.train_bounds, 200, seed=4)
    b = dynamics.derivative_bundle(m, ds.q, ds.qdot)
    a = dynamics.linalg.solve(b.H, dynamics.rhs(b, ds.qdot))
    assert np.max(np.linalg.norm(a - ds.qddot, axis=1) / np.linalg.norm(ds.qddot, axis=1)) < 1e-8


@pytest.mark.parametrize("c", [0.5, 3.0, 100.0])
def test_accel_invariant_under_scaling_and_offset(c):
    arch = net.Architecture(input_dim=4, layers=3, hidden_dim=16, zero_output=False)
    model = Model.from_params(net.init_params(arch, 1))
    X = np.random.default_rng(0).uniform(-1, 1, (6, 4))
    base = dynamics.accel_masked(dynamics.derivative_bundle(model, X[:, :2], X[:, 2:]), X[:, 2:])[0]
    for other in (model.scaled(c), model.scaled(1.0, offset=17.0)):
        a = dynamics.accel_masked(dynamics.derivative_bundle(other, X[:, :2], X[:, 2:]), X[:, 2:])[0]
        np.testing.assert_allclose(a, base, rtol=1e-10, atol=1e-12)


def test_mass_matrix_field_double_pendulum_positive():
    spec, m = analytic("double_pendulum")
    t = np.linspace(-math.pi, math.pi, 9)
    T1, T2 = np.meshgrid(t, t)
    grid = np.column_stack([T1.ravel(), T2.ravel(), np.zeros((81, 2))])
    field = dynamics.mass_matrix_field(m, grid)
    np.testing.assert_allclose(field.det, 1 + np.sin(grid[:, 0] - grid[:, 1]) ** 2, rtol=1e-12)
    assert np.all(field.det > 0) and np.all(field.finite)


def test_mass_matrix_field_single_point_and_csv(tmp_path):
    spec, m = analytic("spring_pendulum")
    x = np.array([[1.2, 0.3, 0.1, -0.4]])
    field = dynamics.mass_matrix_field(m, x)
    b = dynamics.derivative_bundle(m, x[0, :2], x[0, 2:])
    np.testing.assert_array_equal(field.H[0], b.H)
    field.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].split(",") == ["q0", "q1", "qdot0", "qdot1", "H00", "H01", "H10", "H11", "det"]
    assert len(lines) == 2


def test_mass_matrix_field_sphere_pole_behaviour():
    spec, m = analytic("sphere_geodesic")
    th = np.array([1.0, 0.1, 0.01, 1e-3])
    grid = np.column_stack([th, np.zeros(4), np.full(4, 0.2), np.full(4, 0.3)])
    field = dynamics.mass_matrix_field(m, grid)
    np.testing.assert_allclose(field.det, np.sin(th) ** 2, rtol=1e-12)


def test_mass_matrix_field_records_nonfinite():
    def fn(X):
        raise FloatingPointError

    field = dynamics.mass_matrix_field(Model(fn, 1), np.zeros((2, 2)))
    assert not np.any(field.finite) and np.all(np.isnan(field.det))


def test_metric_from_lagrangian():
    spec, m = analytic("ads4_geodesic")
    est = dynamics.metric_from_lagrangian(m, [0.0, 1.0, 2.0, 2.0])
    np.testing.assert_allclose(est.metric, 0.25 * np.diag([-1.0, 1, 1, 1]), atol=1e-14)
    assert est.residual < 1e-14
    spec, m = analytic("sphere_geodesic")
    est = dynamics.metric_from_lagrangian(m, [math.pi / 2, 0.4])
    np.testing.assert_allclose(est.metric, np.eye(2), atol=1e-14)
    assert est.residual < 1e-14


def test_metric_residual_detects_velocity_dependence():
    def L(q, qd):
        return 0.5 * qd[0] * qd[0] + qd[0] ** 4

    est = dynamics.metric_from_lagrangian(Model.from_lagrangian(L, 1), [0.0])
    assert est.residual > 0.1


def test_fit_scale():
    R = np.diag([-1.0, 1, 1, 1])
    s, rms = dynamics.fit_scale(3.0 * R, R)
    assert s == pytest.approx(3.0) and rms == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        dynamics.fit_scale(R, np.zeros((4, 4)))


def test_scaled_network_model_matches_physical():
    """Factors recorded with the model map scaled-unit Lagrangians back exactly."""
    arch = net.Architecture(input_dim=4, layers=3, hidden_dim=8)
    p = net.init_params(arch, 0)
    f = np.array([2.0, 3.0, 2.0, 3.0])
    m = Model.from_params(p, f)
    X = np.random.default_rng(2).normal(size=(3, 4))
    Ls, _ = net.forward_batch(p, X / f)
    b = dynamics.derivative_bundle(m, X[:, :2], X[:, 2:])
    from stable_lnn._packing import unpack

    H_scaled = unpack(Ls[:, 5:], 4)[:, 2:, 2:]
    np.testing.assert_allclose(b.H, H_scaled / np.outer(f[2:], f[2:]), rtol=1e-14)
