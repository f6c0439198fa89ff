import math

import numpy as np
import pytest

from bdcsense import cfnn
from bdcsense.cfnn import CfnnTopology, forward, init_weights
from bdcsense.dataset import Dataset, Scaler, build_patterns, kfold
from bdcsense.motor_model import DriveProfile, default_setup, simulate
from bdcsense.pipeline import (REFERENCE_ERRORS, THRESHOLDS, CrossValidation, ScalerMismatch,
                               StopCriteria, TrainingDiverged, cross_validate, emit_figures,
                               evaluate, train)
from bdcsense.rprop import RpropConfig, Variant


def linear_toy():
    x = np.linspace(-1, 1, 10)[:, None]
    return x, 0.5 * x


def test_single_epoch_is_one_step():
    x, y = linear_toy()
    topo = CfnnTopology((1, 3, 1))
    w0 = init_weights(topo, 3)
    _, g = cfnn.gradient(w0, (x, y))
    w, rep = train((x, y), None, topo, RpropConfig(), StopCriteria(1, math.inf, 1), seed=3)
    assert rep.epochs == 1
    assert rep.stop_reason == "goal_sse"
    expected = w0.to_vector() - np.sign(g.to_vector()) * 0.1
    np.testing.assert_array_equal(w.to_vector(), expected)


def test_linear_toy_fit():
    x, y = linear_toy()
    _, rep = train((x, y), None, CfnnTopology((1, 3, 1)), RpropConfig(),
                   StopCriteria(500, 1e-4, 500), seed=0)
    assert rep.best_train_sse < 1e-4
    assert rep.epochs <= 500


def test_training_is_deterministic():
    x, y = linear_toy()
    args = ((x, y), (x[::2], y[::2]), CfnnTopology((1, 4, 2, 1)), RpropConfig(), StopCriteria(60, 0.0, 60))
    w1, r1 = train(*args, seed=9)
    w2, r2 = train(*args, seed=9)
    assert r1.lines() == r2.lines()
    np.testing.assert_array_equal(w1.to_vector(), w2.to_vector())


@pytest.mark.parametrize("variant", list(Variant))
def test_best_not_worse_than_initial(variant):
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (40, 2))
    y = np.column_stack([np.sin(2 * x[:, 0]), x[:, 0] * x[:, 1], x[:, 1] ** 2])
    _, rep = train((x, y), None, CfnnTopology((2, 5, 3)), RpropConfig(variant=variant),
                   StopCriteria(100, 1e-6, 50), seed=2)
    assert rep.best_train_sse <= rep.initial_sse
    assert len(rep.train_sse) == len(rep.val_sse) == rep.epochs
    assert all(math.isfinite(e) for e in rep.train_sse)


def test_patience_stops_training():
    x, y = linear_toy()
    # Validation targets that cannot be fitted together with the training set.
    _, rep = train((x, y), (x, -y), CfnnTopology((1, 2, 1)), RpropConfig(),
                   StopCriteria(5000, 0.0, 5), seed=0)
    assert rep.stop_reason == "patience"
    assert rep.epochs - rep.best_epoch == 5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_epoch():
    x, y = linear_toy()
    y = y.copy()
    y[0, 0] = 1e200
    with pytest.raises(TrainingDiverged) as info:
        train((x, y), None, CfnnTopology((1, 2, 1)), RpropConfig(), StopCriteria(5, 0.0, 5), seed=0)
    assert info.value.epoch == 0


def test_report_layout():
    x, y = linear_toy()
    _, rep = train((x, y), (x, y), CfnnTopology((1, 2, 1)), RpropConfig(), StopCriteria(3, 0.0, 10),
                   seed=0, config={"seed": "1"})
    lines = rep.lines()
    assert lines[0] == "# seed = 1"
    assert "epoch,train_sse,val_sse" in lines
    assert lines[-1].startswith("3,")
    assert not any("wall" in ln for ln in lines)


def _toy_dataset(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, 2))
    y = np.column_stack([x[:, 0], x[:, 1], 0.5 * x[:, 0] - 0.2 * x[:, 1]])
    sc = Scaler(("v", "i", "omega", "theta", "r"), (0.0,) * 5, (1.0,) * 5)
    return Dataset(x, y, sc, seed, 0.0, 0.0, 1.0)


def test_cross_validation_two_folds():
    ds = _toy_dataset()
    cv = cross_validate(ds, 2, CfnnTopology((2, 3, 3)), RpropConfig(), StopCriteria(30, 0.0, 30), seed=4)
    assert len(cv.reports) == 2
    assert all(math.isfinite(v) for v in cv.best_val_sse)
    s = cv.summary()
    assert s["min"] <= s["mean"] <= s["max"]
    n_val = sum(len(va) for _, va in kfold(ds, 2, 4))
    assert n_val == len(ds)


def test_cross_validation_reports_fold(monkeypatch):
    ds = _toy_dataset()
    calls = []

    def fake_train(tr, va, *args, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise TrainingDiverged(7, math.inf)
        return init_weights(CfnnTopology((2, 3, 3)), 0), None

    monkeypatch.setattr("bdcsense.pipeline.train", fake_train)
    with pytest.raises(TrainingDiverged) as info:
        cross_validate(ds, 3, CfnnTopology((2, 3, 3)), RpropConfig(), StopCriteria(), seed=0)
    assert (info.value.fold, info.value.epoch) == (1, 7)


@pytest.fixture(scope="module")
def short_run():
    cal, _ = default_setup()
    prof = DriveProfile(((0.0, 240.0, cal.t_l), (5.0, 220.0, cal.t_l)))
    traj = simulate(cal.params, prof, t_end=10.0, sample_rate=10.0)
    noisy = build_patterns(traj, 2.0, 1.2, 0.125, seed=1)
    clean = build_patterns(traj, 2.0, 0.0, 0.0, seed=1, scaler=noisy.scaler)
    return traj, noisy, clean


def test_oracle_model_gives_zero_error(short_run):
    traj, noisy, clean = short_run
    rep = evaluate(lambda x: clean.targets, None, traj, noisy)
    assert all(v < 1e-12 for v in rep.absolute.values())
    assert all(v < 1e-12 for v in rep.relative.values())
    assert rep.passes() == {"speed": True, "temperature": True, "resistance": True}


def test_relative_times_nominal_is_absolute(short_run):
    traj, noisy, _ = short_run
    w = init_weights(CfnnTopology((2, 4, 3)), 0)
    rep = evaluate(w, noisy.scaler, traj, noisy)
    for name in rep.absolute:
        assert rep.relative[name] * rep.nominal[name] == pytest.approx(rep.absolute[name], abs=1e-9)
    assert rep.window_start == pytest.approx(9.0)
    assert rep.nominal["speed"] == traj.omega[-1]


def test_evaluate_scaler_mismatch(short_run):
    traj, noisy, _ = short_run
    other = Scaler(noisy.scaler.names, tuple(m - 1 for m in noisy.scaler.mins), noisy.scaler.maxs)
    with pytest.raises(ScalerMismatch):
        evaluate(init_weights(CfnnTopology((2, 3)), 0), other, traj, noisy)


def test_evaluate_length_mismatch(short_run):
    traj, noisy, _ = short_run
    with pytest.raises(ValueError, match="samples"):
        evaluate(lambda x: x, None, traj, noisy.subset(np.arange(5)))


def test_noiseless_not_worse_than_noisy(short_run):
    traj, noisy, clean = short_run
    topo = CfnnTopology((2, 6, 3))
    w, _ = train(clean, None, topo, RpropConfig(), StopCriteria(300, 0.0, 300), seed=3)
    e_clean = evaluate(w, None, traj, clean)
    e_noisy = evaluate(w, None, traj, noisy)
    for name in e_clean.absolute:
        assert e_clean.absolute[name] <= e_noisy.absolute[name] + 1e-12


def test_figures(tmp_path, short_run):
    traj, noisy, _ = short_run
    rep = evaluate(init_weights(CfnnTopology((2, 4, 3)), 0), None, traj, noisy)
    paths = emit_figures(rep, tmp_path, meta=["seed = 42"])
    assert [p.name for p in paths] == ["fig3_speed.csv", "fig4_temperature.csv",
                                       "fig5_resistance.csv", "fig6_errors.csv"]
    cols = []
    for p in paths[:3]:
        lines = p.read_text().splitlines()
        assert lines[0] == "# seed = 42"
        assert lines[1] == "t,simulated,estimated"
        data = np.loadtxt(p, delimiter=",", comments="#", skiprows=2)
        assert data.shape == (len(noisy), 3)
        cols.append(data[:, 2] - data[:, 1])
    err = np.loadtxt(paths[3], delimiter=",", skiprows=2)
    assert paths[3].read_text().splitlines()[1] == "t,err_speed,err_temp,err_res"
    np.testing.assert_allclose(err[:, 1:], np.column_stack(cols), rtol=1e-12, atol=1e-12)


def test_reference_row():
    assert REFERENCE_ERRORS["speed"] == (0.015, 0.0067e-2)
    assert REFERENCE_ERRORS["temperature"] == (3.0, 3.75e-2)
    assert REFERENCE_ERRORS["resistance"] == (0.04, 0.9e-2)
    assert THRESHOLDS == {"speed": ("rel", 1e-3), "temperature": ("abs", 4.0),
                          "resistance": ("rel", 2e-2)}


def test_report_table_has_reference_column(short_run):
    traj, noisy, clean = short_run
    rep = evaluate(lambda x: clean.targets, None, traj, noisy)
    text = "\n".join(rep.table())
    assert "0.015" in text and "0.04" in text
    csv = rep.lines({"seed": "42"})
    assert csv[0] == "# seed = 42"
    assert csv[2] == "quantity,abs_error,rel_error,nominal,ref_abs_error,ref_rel_error,status"
    assert csv[4].startswith("temperature,") and csv[4].split(",")[4] == "3"


def test_stop_criteria_validation():
    for kw in (dict(max_epochs=0), dict(goal_sse=-1.0), dict(patience=0)):
        with pytest.raises(ValueError):
            StopCriteria(**kw)
