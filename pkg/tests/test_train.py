import math

import numpy as np
import pytest

from stable_lnn import net, regularize, scale, systems, train
from stable_lnn.errors import ConfigError

from conftest import fd_grad, rel_err


def test_adam_examples():
    st = train.AdamState.zeros(3)
    theta = np.array([1.0, -2.0, 3.0])
    new, ok = train.adam_step(theta, np.zeros(3), st, 0.1)
    assert ok and np.array_equal(new, theta)
    st = train.AdamState.zeros(1)
    new, _ = train.adam_step(np.array([0.0]), np.array([1.0]), st, 0.01)
    assert new[0] == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)
    for _ in range(5):
        new, _ = train.adam_step(new, np.array([1.0]), st, 0.01)
    assert new[0] == pytest.approx(-0.06, rel=1e-6)
    st = train.AdamState.zeros(2)
    new, _ = train.adam_step(np.array([2.0, -4.0]), np.zeros(2), st, 1.0, weight_decay=0.1)
    np.testing.assert_allclose(new, [1.8, -3.6])


def test_adam_skips_nonfinite():
    st = train.AdamState.zeros(2)
    new, ok = train.adam_step(np.ones(2), np.array([np.nan, 1.0]), st, 0.1)
    assert not ok and st.t == 0 and np.array_equal(new, np.ones(2))
    with pytest.raises(ValueError):
        train.adam_step(np.ones(2), np.ones(3), st, 0.1)


def test_cosine_examples():
    assert train.cosine_lr(0, 1e-3, 30, 1e-6) == 1e-3
    assert train.cosine_lr(30, 1e-3, 30, 1e-6) == pytest.approx(1e-6, rel=1e-12)
    assert train.cosine_lr(15, 1e-3, 30, 1e-6) == pytest.approx((1e-3 + 1e-6) / 2, rel=1e-12)
    # the schedule rises again after T_max, with period 2 T_max
    assert train.cosine_lr(45, 1.0, 30) == pytest.approx(0.5)
    assert train.cosine_lr(60, 1.0, 30) == pytest.approx(1.0)
    assert train.cosine_lr(30, 1.0, 30, warm_restarts=True) == 1.0
    with pytest.raises(ValueError):
        train.cosine_lr(-1, 1.0, 30)


def test_lr_phases_follow_monotone_segments():
    assert train.lr_phases(70, 30) == [(0, 30), (30, 60), (60, 70)]
    lrs = [train.cosine_lr(e, 1.0, 30) for e in range(90)]
    for a, b in train.lr_phases(90, 30):
        d = np.diff(lrs[a:b])
        assert np.all(d <= 0) or np.all(d >= 0)


def test_clip_examples():
    g, norm, clipped = train.clip_global_norm(np.array([0.3, 0.4]))
    assert not clipped and norm == pytest.approx(0.5) and list(g) == [0.3, 0.4]
    g, norm, clipped = train.clip_global_norm(np.array([3.0, 4.0]))
    assert clipped and norm == 5.0
    np.testing.assert_allclose(g, [0.6, 0.8])
    g, _, clipped = train.clip_global_norm(np.array([0.6, 0.8]))
    assert not clipped


def test_config_validation():
    with pytest.raises(ConfigError):
        train.TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        train.TrainConfig(reg_mode="trace")
    with pytest.raises(ConfigError):
        train.TrainConfig(lr=-1.0)
    cfg = train.TrainConfig(phases=[dict(epochs=2, lr=1e-3, eta_min=0.0)])
    assert isinstance(cfg.phases[0], train.Phase)
    assert train.config_dict(cfg)["phases"][0]["epochs"] == 2


@pytest.fixture(scope="module")
def small_data():
    spec = systems.make_system("double_pendulum")
    raw = systems.sample_dataset(spec, count=40, seed=0)
    f = scale.fit_scaling(raw)
    return spec, scale.scale_dataset(raw, f)


def _tiny(seed=0, **kw):
    arch = net.Architecture(input_dim=4, layers=2, hidden_dim=8, **kw)
    return net.init_params(arch, seed)


@pytest.mark.parametrize("mode", ["none", "eigen", "sylvester", "lorentzian"])
def test_full_pipeline_gradient_vs_fd(mode, small_data):
    _, ds = small_data
    X = ds.X[:4]
    r = np.random.default_rng(0)
    target = ds.qddot[:4] + r.choice([-1.0, 1.0], size=(4, 2)) * r.uniform(1, 2, size=(4, 2))
    for seed in range(20):
        params = _tiny(seed)
        st = regularize.ScaleState(2, c=np.array([0.8, 1.3]))
        res = train.batch_loss_and_grad(params, X, target, mode, 1.0, st)
        if mode == "none" or res.terms.reg > 0:
            break
    assert mode == "none" or res.terms.reg > 0
    resid = np.abs(res.terms.d_pred)
    assert np.all(resid > 0)

    def loss(theta):
        return train.batch_loss_and_grad(params.with_theta(theta), X, target, mode, 1.0, st,
                                         need_grad=False).terms.loss

    fd = fd_grad(loss, params.theta, h=1e-6)
    assert rel_err(res.grad, fd) < 1e-4


def test_singular_samples_do_not_produce_nan():
    params = _tiny(0, zero_output=True, quadratic_alpha=0.0)
    X = np.random.default_rng(1).normal(size=(6, 4))
    res = train.batch_loss_and_grad(params, X, np.ones((6, 2)), "eigen", 1.0, regularize.ScaleState(2))
    assert np.all(res.singular)
    assert np.isfinite(res.terms.loss) and np.all(np.isfinite(res.grad))
    assert res.terms.mae == 0.0


def test_lr_zero_leaves_params_unchanged(small_data):
    spec, ds = small_data
    init = _tiny(3)
    cfg = train.TrainConfig(epochs=2, batch_size=16, lr=0.0, eta_min=0.0, weight_decay=1e-3, reg_mode="sylvester",
                            reg_lambda=10.0)
    res = train.train(cfg, ds, spec, init=init)
    assert np.array_equal(res.final_params.theta, init.theta)


def _strip(rows):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]


def test_training_is_deterministic(small_data):
    spec, ds = small_data
    sub = ds.subset(np.arange(10))
    cfg = train.TrainConfig(epochs=1, batch_size=4, lr=1e-3, reg_mode="sylvester", reg_lambda=1.0, seed=5)
    arch = net.Architecture(input_dim=4, layers=2, hidden_dim=16)
    a = train.train(cfg, sub, spec, arch=arch)
    b = train.train(cfg, sub, spec, arch=arch)
    assert _strip(a.record.rows) == _strip(b.record.rows)
    assert np.array_equal(a.params.theta, b.params.theta)


def test_training_reduces_loss_and_tracks_best(small_data):
    spec, ds = small_data
    cfg = train.TrainConfig(epochs=6, batch_size=8, lr=3e-3, T_max=6)
    res = train.train(cfg, ds, spec, arch=net.Architecture(input_dim=4, layers=3, hidden_dim=32))
    val = res.record.column("val_mae")
    assert len(res.record) == 6
    assert res.best_val_mae == val.min() and res.best_epoch == int(np.argmin(val))
    assert val.min() < val[0]


def test_multi_phase_schedule_and_resampling(small_data):
    spec, ds = small_data
    cfg = train.TrainConfig(batch_size=20, phases=[dict(epochs=1, lr=1e-3, eta_min=0.0),
                                                   dict(epochs=2, lr=5e-4, eta_min=0.0, bounds="val", count=30)])
    res = train.train(cfg, ds, spec, arch=net.Architecture(input_dim=4, layers=2, hidden_dim=8))
    assert list(res.record.column("phase")) == [0, 1, 1]
    assert res.record.rows[1]["lr"] == 5e-4
    with pytest.raises(ConfigError):
        train.train(cfg, ds, None, arch=net.Architecture(input_dim=4, layers=2, hidden_dim=8))


def test_checkpoint_round_trip_reproduces_val_loss(tmp_path, small_data):
    spec, ds = small_data
    cfg = train.TrainConfig(epochs=2, batch_size=8)
    res = train.train(cfg, ds, spec, arch=net.Architecture(input_dim=4, layers=2, hidden_dim=16))
    path = tmp_path / "ckpt.json"
    net.save_checkpoint(path, res.params, {"factors": res.factors.tolist()})
    params, extra = net.load_checkpoint(path)
    mae, _, _ = train.evaluate_mae(params, ds, np.asarray(extra["factors"]))
    assert mae == pytest.approx(res.best_val_mae, rel=1e-12)


def test_record_csv_round_trip(tmp_path):
    rec = train.TrainRecord()
    rec.append(epoch=0, phase=0, train_mae=0.5, val_mae=0.25, lr=1e-3)
    rec.append(epoch=1, phase=0, train_mae=0.4, val_mae=0.2, lr=5e-4)
    rec.to_csv(tmp_path / "r.csv")
    back = train.TrainRecord.from_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(back.column("val_mae"), [0.25, 0.2])
    assert back.rows[1]["epoch"] == 1
    assert math.isnan(back.rows[0]["reg"])
