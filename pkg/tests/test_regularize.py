import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stable_lnn import regularize as R

from conftest import fd_grad, rel_err


def state(c, eps=1e-8):
    return R.ScaleState(len(c), eps, c=np.asarray(c, dtype=float))


def test_update_scales_examples():
    st_ = R.ScaleState(2)
    R.update_scales(st_, [np.diag([2.0, 8.0])] * 5)
    np.testing.assert_allclose(st_.c, [2, 8])
    np.testing.assert_allclose(st_.s, [2, 16])
    st_ = R.ScaleState(2)
    for v in (1.0, 3.0, 100.0):
        R.update_scales(st_, [np.diag([v, v])])
    np.testing.assert_allclose(st_.c, [3, 3])
    st_ = R.ScaleState(2)
    R.update_scales(st_, [np.diag([4.0, -5.0]), np.diag([6.0, 7.0])])
    np.testing.assert_allclose(st_.c, [5.0, 6.0])


def test_update_scales_window_and_nonfinite():
    st_ = R.ScaleState(1, window=2)
    for v in (1.0, 10.0, 20.0):
        R.update_scales(st_, [[[v]]])
    assert st_.c[0] == 15.0
    R.update_scales(st_, [[[np.nan]]])
    assert st_.c[0] == 15.0 and len(st_.history) == 2
    with pytest.raises(ValueError):
        R.update_scales(st_, np.zeros((0, 1, 1)))
    back = R.ScaleState.from_dict(st_.to_dict())
    np.testing.assert_array_equal(back.c, st_.c)


def test_sylvester_examples():
    assert R.sylvester_classical(np.eye(3), state([5.0, 0.1, 2.0]), 100.0)[0] == 0.0
    p, g = R.sylvester_classical(np.array([[-2.0]]), state([1.0]), 1.0)
    assert p == pytest.approx(2 / (1 + 1e-8), rel=1e-15)
    assert g[0, 0] == pytest.approx(-1 / (1 + 1e-8))


def test_lorentzian_examples():
    H0 = np.diag([-1.0, 1, 1, 1])
    assert R.lorentzian_sylvester(H0, state([1, 1, 1, 1]), 1.0)[0] == 0.0
    p, g = R.lorentzian_sylvester(np.diag([1.0, 1, 1, 1]), state([1, 1, 1, 1], eps=0.0), 1.0)
    assert p == 1.0 and g[0, 0] == 1.0
    # spatial block diag(-1, 1, 1): every spatial leading minor equals -1
    c = np.array([1.0, 2.0, 3.0, 4.0])
    p, _ = R.lorentzian_sylvester(np.diag([-1.0, -1, 1, 1]), state(c), 1.0)
    eps = 1e-8
    assert p == pytest.approx(1 / (2 + eps) + 1 / (6 + eps) + 1 / (24 + eps), rel=1e-14)
    with pytest.raises(ValueError):
        R.lorentzian_sylvester(np.eye(1), state([1.0]), 1.0)


def test_total_loss_examples():
    H = np.stack([np.eye(2)] * 3)
    st_ = state([1.0, 1.0])
    y = np.random.default_rng(0).normal(size=(3, 2))
    for mode in ("none", "eigen", "sylvester"):
        assert R.total_loss(y, y, H, mode, 100.0, st_).loss == 0.0
    # the identity is not Lorentzian, so that mode must penalize it
    assert R.total_loss(y, y, H, "lorentzian", 100.0, st_).loss > 0
    t = R.total_loss(np.tile([1.0, -1.0], (4, 1)), np.zeros((4, 2)), np.stack([np.eye(2)] * 4))
    assert t.mae == 1.0 and t.loss == 1.0
    t = R.total_loss(np.zeros((1, 2)), np.zeros((1, 2)), np.diag([-3.0, 2.0])[None], "eigen", 1.0, st_)
    assert t.loss == pytest.approx(3.0)


def test_total_loss_singular_samples_only_contribute_regularizer():
    H = np.stack([np.diag([-1.0, 1.0]), np.eye(2)])
    pred = np.array([[np.nan, np.nan], [1.0, 1.0]])
    t = R.total_loss(pred, np.zeros((2, 2)), H, "eigen", 2.0, state([1, 1]), valid=np.array([False, True]))
    assert np.isfinite(t.loss)
    assert t.mae == 1.0 and t.reg == pytest.approx(1.0) and t.n_valid == 1
    assert np.all(t.d_pred[0] == 0)


@pytest.mark.parametrize("alpha", [0.5, 3.0, 100.0])
def test_sylvester_scale_invariance_at_zero_eps(alpha):
    r = np.random.default_rng(int(alpha * 10))
    c = r.uniform(0.5, 2.0, 3)
    for _ in range(20):
        A = r.normal(size=(3, 3))
        H = A + A.T
        p0 = R.sylvester_classical(H, state(c, 0.0), 1.0)[0]
        p1 = R.sylvester_classical(alpha * H, state(alpha * c, 0.0), 1.0)[0]
        assert p1 == pytest.approx(p0, rel=1e-12, abs=1e-300)


def _sym_fd(fun, H):
    n = H.shape[0]
    iu = np.triu_indices(n)

    def f(v):
        S = np.zeros((n, n))
        S[iu] = v
        return float(fun(S + S.T - np.diag(np.diag(S))))

    return iu, fd_grad(f, H[iu], h=1e-6)


@pytest.mark.parametrize("mode", ["eigen", "sylvester", "lorentzian"])
def test_penalty_gradients_vs_fd(mode):
    r = np.random.default_rng(1)
    st_ = state([0.7, 1.3, 2.0])
    checked = 0
    while checked < 5:
        A = r.normal(size=(3, 3))
        H = A + A.T
        if np.min(np.abs(np.linalg.eigvalsh(H))) < 0.05 or np.min(np.abs(np.concatenate(
                [[H[0, 0]], [np.linalg.det(H[:k, :k]) for k in (1, 2, 3)],
                 [np.linalg.det(H[1:1 + k, 1:1 + k]) for k in (1, 2)]]))) < 0.05:
            continue
        p, g = R.penalty(H, mode, st_, 10.0)
        if p == 0:
            continue
        iu, fd = _sym_fd(lambda S: R.penalty(S, mode, st_, 10.0)[0], H)
        expect = np.where(iu[0] == iu[1], g[iu], 2 * g[iu])
        assert rel_err(expect, fd) < 1e-5
        checked += 1


spd = arrays(np.float64, (3, 3), elements=st.floats(-2, 2)).map(lambda A: A @ A.T + 0.1 * np.eye(3))


@given(spd, st.lists(st.floats(0.1, 10), min_size=3, max_size=3))
def test_sylvester_zero_on_positive_definite(H, c):
    assert R.sylvester_classical(H, state(c), 100.0)[0] == 0.0
    assert R.eigen_penalty(H, None, 100.0)[0] == 0.0


@given(spd, st.floats(0.1, 5.0))
def test_lorentzian_zero_on_lorentzian_signature(S, t):
    H = np.zeros((4, 4))
    H[0, 0] = -t
    H[1:, 1:] = S
    assert R.lorentzian_sylvester(H, state([1, 1, 1, 1]), 100.0)[0] == 0.0


@given(spd, st.integers(0, 2), st.floats(0.5, 5.0))
def test_sylvester_positive_on_seeded_violation(S, k, mag):
    # flip the sign of one leading direction: the k-th leading minor turns negative
    L = np.linalg.cholesky(S)
    D = np.eye(3)
    D[k, k] = -mag
    H = L @ D @ L.T
    assert R.sylvester_classical(H, state([1, 1, 1]), 1.0)[0] > 0
    Hl = np.zeros((4, 4))
    Hl[0, 0] = -1.0
    Hl[1:, 1:] = H
    assert R.lorentzian_sylvester(Hl, state([1, 1, 1, 1]), 1.0)[0] > 0
    Hl[0, 0] = mag
    Hl[1:, 1:] = S
    assert R.lorentzian_sylvester(Hl, state([1, 1, 1, 1]), 1.0)[0] > 0


@given(arrays(np.float64, (3, 3), elements=st.floats(-3, 3)).map(lambda A: A + A.T))
def test_eigen_penalty_zero_iff_psd(H):
    p = R.eigen_penalty(H, None, 1.0)[0]
    w = np.linalg.eigvalsh(H)
    if w[0] < -1e-9:
        assert p > 0
    elif w[0] > 1e-9:
        assert p == 0


def test_unknown_mode():
    with pytest.raises(ValueError):
        R.penalty(np.eye(2), "trace", state([1, 1]), 1.0)
