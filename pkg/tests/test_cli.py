import numpy as np
import pytest

from bdcsense import cfnn, dataset, motor_model
from bdcsense.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from bdcsense.config import RunConfig, derive_seed, load_config_file

SHORT = ["--sim.t_end", "20", "--stop.max_epochs", "5"]


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path), *SHORT])


def test_simulate_writes_trajectory_and_summary(tmp_path):
    assert run(tmp_path, "simulate") == EXIT_OK
    traj = motor_model.read_trajectory_csv(tmp_path / "trajectory.csv")
    assert len(traj) == 201
    text = (tmp_path / "steady_state.txt").read_text()
    assert "calibration.k_e = " in text
    assert "sim.t_end = 20" in text
    assert (tmp_path / "trajectory.csv").read_text().startswith("# motor.v_rated = 240")


def test_zero_voltage_profile(tmp_path):
    assert run(tmp_path, "simulate", "--sim.profile", "0:0:0") == EXIT_OK
    traj = motor_model.read_trajectory_csv(tmp_path / "trajectory.csv")
    assert np.all(traj.as_array()[:, 1:5] == 0.0)


@pytest.mark.parametrize("flag, value", [("--sim.dt", "0.05"), ("--sim.dt", "-1"),
                                         ("--dataset.sigma_i", "-0.1"), ("--network.topology", "2-5-2"),
                                         ("--rprop.variant", "ADAM"), ("--stop.patience", "0")])
def test_invalid_config_rejected_before_work(tmp_path, capsys, flag, value):
    out = tmp_path / "out"
    assert main(["simulate", "--out", str(out), flag, value]) == EXIT_CONFIG
    assert not out.exists()
    assert flag[2:].split(".")[0] in capsys.readouterr().err


def test_print_config(capsys):
    assert main(["repro", "--print-config", "--rprop.variant", "rprop_plus"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert "rprop.variant = RPROP_PLUS" in lines
    assert "rprop.eta_plus = 1.2" in lines
    assert "motor.k_e = auto" in lines
    assert len(lines) == len(RunConfig.keys())


def test_config_file_layering(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# sweep\nseed = 7\ndataset.sigma_v = 2.4  # doubled\n")
    assert load_config_file(conf) == {"seed": "7", "dataset.sigma_v": "2.4"}
    assert main(["train", "--config", str(conf), "--seed", "9", "--print-config"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert "seed = 9" in lines
    assert "dataset.sigma_v = 2.3999999999999999" in lines


def test_unknown_key_in_config_file(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("motor.colour = red\n")
    assert main(["simulate", "--config", str(conf)]) == EXIT_CONFIG


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.conf")]) == EXIT_IO


def test_derived_seeds_are_distinct():
    seeds = {derive_seed(42, s) for s in ("noise", "init", "folds")}
    assert len(seeds) == 3
    assert derive_seed(42, "noise") == derive_seed(42, "noise")


def test_gendata_inline_and_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "gendata") == EXIT_OK
    assert run(b, "gendata") == EXIT_OK
    assert (a / "dataset.csv").read_bytes() == (b / "dataset.csv").read_bytes()
    ds = dataset.read_csv(a / "dataset.csv")
    assert len(ds) == 41  # floor(20 s * 2 Hz) + 1
    assert ds.seed == derive_seed(42, "noise")


def test_gendata_from_trajectory_without_noise(tmp_path):
    # The voltage must vary, or the noiseless voltage channel cannot be scaled.
    assert run(tmp_path, "simulate", "--sim.profile", "0:240:7.5;10:200:7.5") == EXIT_OK
    traj_path = str(tmp_path / "trajectory.csv")
    assert run(tmp_path, "gendata", "--trajectory", traj_path,
               "--dataset.sigma_v", "0", "--dataset.sigma_i", "0") == EXIT_OK
    ds = dataset.read_csv(tmp_path / "dataset.csv")
    clean = dataset.subsample(motor_model.read_trajectory_csv(traj_path), 2.0)
    phys = dataset.invert(ds.scaler, np.concatenate([ds.inputs, ds.targets], axis=1))
    np.testing.assert_allclose(phys, dataset.records_from_trajectory(clean), rtol=1e-12, atol=1e-12)


def test_noiseless_constant_voltage_rejected(tmp_path, capsys):
    assert run(tmp_path, "gendata", "--dataset.sigma_v", "0") == EXIT_CONFIG
    assert "constant" in capsys.readouterr().err


def test_gendata_missing_trajectory(tmp_path):
    assert run(tmp_path, "gendata", "--trajectory", str(tmp_path / "none.csv")) == EXIT_CONFIG


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["gendata", "--out", str(d), *SHORT]) == EXIT_OK
    return d


def test_train_emits_loadable_checkpoint(tmp_path, data_dir):
    ds = str(data_dir / "dataset.csv")
    assert run(tmp_path, "train", "--dataset", ds, "--stop.max_epochs", "1") == EXIT_OK
    w, scaler = cfnn.load_checkpoint(tmp_path / "checkpoint.txt")
    assert w.topology.spec == "2-10-8-3"
    assert scaler == dataset.read_csv(ds).scaler
    report = (tmp_path / "train_report.csv").read_text()
    assert "# rprop.variant = IRPROP_MINUS" in report
    assert "threads" not in report


def test_train_rerun_bit_identical(tmp_path, data_dir):
    ds = str(data_dir / "dataset.csv")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "train", "--dataset", ds) == EXIT_OK
    assert run(b, "train", "--dataset", ds, "--threads", "2") == EXIT_OK
    for name in ("checkpoint.txt", "train_report.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_variant_flag_changes_training(tmp_path, data_dir):
    ds = str(data_dir / "dataset.csv")
    paths = {}
    for v in ("RPROP_PLUS", "RPROP_MINUS"):
        paths[v] = tmp_path / v
        assert run(paths[v], "train", "--dataset", ds, "--stop.max_epochs", "40",
                   "--rprop.variant", v) == EXIT_OK
    assert ((paths["RPROP_PLUS"] / "checkpoint.txt").read_text()
            != (paths["RPROP_MINUS"] / "checkpoint.txt").read_text())


def test_cross_validation_outputs(tmp_path, data_dir):
    ds = str(data_dir / "dataset.csv")
    assert run(tmp_path, "train", "--dataset", ds, "--train.cross_validate", "true",
               "--train.folds", "3") == EXIT_OK
    assert sorted(p.name for p in tmp_path.glob("train_report_fold*.csv")) == [
        "train_report_fold0.csv", "train_report_fold1.csv", "train_report_fold2.csv"]
    assert "val_sse.mean = " in (tmp_path / "cv_summary.txt").read_text()


def test_train_needs_dataset(tmp_path):
    assert run(tmp_path, "train") == EXIT_CONFIG


def test_evaluate_writes_report_and_figures(tmp_path, data_dir, capsys):
    ds = str(data_dir / "dataset.csv")
    assert run(tmp_path, "train", "--dataset", ds) == EXIT_OK
    capsys.readouterr()
    assert run(tmp_path, "evaluate", "--dataset", ds, "--checkpoint", str(tmp_path / "checkpoint.txt"),
               "--trajectory", str(data_dir / "trajectory.csv")) == EXIT_OK
    out = capsys.readouterr().out
    assert "0.015" in out and "0.04" in out
    report = (tmp_path / "eval_report.csv").read_text().splitlines()
    assert report[-3].startswith("speed,") and report[-3].split(",")[4] == "0.014999999999999999"
    for name, cols in (("fig3_speed.csv", 3), ("fig6_errors.csv", 4)):
        rows = [ln for ln in (tmp_path / name).read_text().splitlines() if not ln.startswith("#")]
        data = np.loadtxt(rows[1:], delimiter=",")
        assert data.shape == (41, cols)


def test_evaluate_scaler_mismatch(tmp_path, data_dir):
    ds = str(data_dir / "dataset.csv")
    other = tmp_path / "other"
    assert main(["gendata", "--out", str(other), *SHORT, "--dataset.sigma_v", "5"]) == EXIT_OK
    assert run(tmp_path, "train", "--dataset", ds) == EXIT_OK
    code = run(tmp_path, "evaluate", "--dataset", str(other / "dataset.csv"),
               "--checkpoint", str(tmp_path / "checkpoint.txt"),
               "--trajectory", str(data_dir / "trajectory.csv"))
    assert code == EXIT_CONFIG


def test_corrupt_checkpoint(tmp_path, data_dir):
    bad = tmp_path / "ck.txt"
    bad.write_text("cfnn-v9\n")
    code = run(tmp_path, "evaluate", "--dataset", str(data_dir / "dataset.csv"),
               "--checkpoint", str(bad), "--trajectory", str(data_dir / "trajectory.csv"))
    assert code == EXIT_CONFIG


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--out", str(blocker / "sub"), *SHORT]) == EXIT_IO


def test_repro_short(tmp_path, capsys):
    code = main(["repro", "--out", str(tmp_path), *SHORT])
    out = capsys.readouterr().out
    (run_dir,) = tmp_path.glob("repro-*")
    names = {p.name for p in run_dir.iterdir()}
    assert {"trajectory.csv", "dataset.csv", "checkpoint.txt", "train_report.csv", "eval_report.csv",
            "fig3_speed.csv", "fig6_errors.csv", "acceptance.txt", "timing.txt"} <= names
    assert "temperature abs error <= 4 K" in out
    assert "speed rel error <= 0.1%" in out
    assert "resistance rel error <= 2%" in out
    # A 20 s run never reaches the thermal band, so the physics gate fails.
    assert code == 4
    assert "overall: FAIL" in (run_dir / "acceptance.txt").read_text()
