"""Command-line entry point: ``bdcsense {simulate,gendata,train,evaluate,repro}``.

Exit codes: 0 success, 1 invalid configuration or input, 2 numerical failure,
3 I/O error, 4 ``repro`` finished but missed an acceptance threshold.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import cfnn, dataset, motor_model, pipeline
from .config import ConfigError, RunConfig, load_config_file
from .motor_model import SimulationError, SteadyStateError, Trajectory

log = logging.getLogger("bdcsense")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO, EXIT_FAIL = 0, 1, 2, 3, 4

# Physics gate on the S1 run: temperature band, resistance band, energy-balance limit.
PHYSICS_LIMITS = {"theta": (70.0, 90.0), "resistance": (4.5, 4.7), "energy_balance": 5e-3}


def trajectory_id(traj: Trajectory) -> str:
    return hashlib.sha256(np.ascontiguousarray(traj.as_array()).tobytes()).hexdigest()[:16]


def _meta(cfg: RunConfig) -> list[str]:
    return [f"{k} = {v}" for k, v in cfg.echo().items()]


# -- stages -------------------------------------------------------------------

def stage_simulate(cfg: RunConfig, out: Path) -> tuple[Trajectory, list[str]]:
    cal = cfg.calibration_result()
    p = cal.params
    profile = cfg.profile()
    traj = motor_model.simulate(p, profile, cfg.sim.dt, cfg.t_end(), cfg.sim.sample_rate)
    final = traj.state(len(traj) - 1)
    v_end, tl_end = profile.at(traj.t[-1])
    balance = (motor_model.energy_balance_error(final, p)
               if motor_model.power_losses(final, p) > 0 else 0.0)
    lines = cal.report() + [
        f"final.t = {traj.t[-1]:.17g}",
        f"final.i_a = {final.i_a:.17g}",
        f"final.omega = {final.omega:.17g}",
        f"final.theta = {final.theta:.17g}",
        f"final.resistance = {traj.resistance[-1]:.17g}",
        f"final.energy_balance_error = {balance:.17g}",
        f"equilibrium = {'true' if balance < PHYSICS_LIMITS['energy_balance'] else 'false'}",
    ]
    try:
        ss = motor_model.steady_state(p, v_end, tl_end)
        lines += [f"steady_state.i_a = {ss.i_a:.17g}", f"steady_state.omega = {ss.omega:.17g}",
                  f"steady_state.theta = {ss.theta:.17g}"]
    except SteadyStateError as exc:
        lines.append(f"steady_state = unavailable ({exc})")
    motor_model.write_trajectory_csv(traj, out / "trajectory.csv", _meta(cfg))
    (out / "steady_state.txt").write_text("\n".join(_meta(cfg) + lines) + "\n")
    return traj, lines


def stage_gendata(cfg: RunConfig, traj: Trajectory, out: Path) -> dataset.Dataset:
    ds = dataset.build_patterns(traj, cfg.dataset.rate, cfg.dataset.sigma_v, cfg.dataset.sigma_i,
                                cfg.seed_for("noise"), window=cfg.dataset.window,
                                source=trajectory_id(traj), meta=_meta(cfg))
    dataset.write_csv(ds, out / "dataset.csv")
    return ds


def stage_train(cfg: RunConfig, ds: dataset.Dataset, out: Path) -> cfnn.CfnnWeights:
    topo = cfg.topology()
    folds = dataset.kfold(ds, cfg.train.folds, cfg.seed_for("folds"))
    if cfg.train.cross_validate:
        cv = pipeline.cross_validate(ds, cfg.train.folds, topo, cfg.rprop, cfg.stop,
                                     cfg.seed_for("init"), cfg.seed_for("folds"), cfg.threads)
        for f, rep in enumerate(cv.reports):
            rep.config = cfg.echo()
            rep.write(out / f"train_report_fold{f}.csv")
        s = cv.summary()
        (out / "cv_summary.txt").write_text("\n".join(
            _meta(cfg) + [f"val_sse.{k} = {v:.17g}" for k, v in s.items()]) + "\n")
    train_set, val_set = folds[0][0], folds[0][1]
    weights, report = pipeline.train(train_set, val_set, topo, cfg.rprop, cfg.stop,
                                     cfg.seed_for("init"), cfg.threads, cfg.network.init_scale,
                                     cfg.echo())
    report.write(out / "train_report.csv")
    cfnn.save_checkpoint(weights, out / "checkpoint.txt", ds.scaler, _meta(cfg))
    (out / "timing.txt").write_text(f"train.wall_time_s = {report.wall_time:.3f}\n")
    log.info("trained %d epochs (%s), best epoch %d, best val SSE %.6g",
             report.epochs, report.stop_reason, report.best_epoch,
             report.val_sse[report.best_epoch - 1])
    return weights


def stage_evaluate(cfg: RunConfig, weights: cfnn.CfnnWeights, scaler, traj: Trajectory,
                   ds: dataset.Dataset, out: Path) -> pipeline.EvalReport:
    report = pipeline.evaluate(weights, scaler, traj, ds, cfg.eval.steady_fraction)
    report.write(out / "eval_report.csv", cfg.echo())
    pipeline.emit_figures(report, out, _meta(cfg))
    (out / "eval_summary.txt").write_text("\n".join(report.table()) + "\n")
    return report


def acceptance_rows(traj: Trajectory, cfg: RunConfig, report: pipeline.EvalReport) -> list[tuple[str, str, bool]]:
    p = cfg.motor_params()
    final = traj.state(len(traj) - 1)
    lo, hi = PHYSICS_LIMITS["theta"]
    rlo, rhi = PHYSICS_LIMITS["resistance"]
    balance = motor_model.energy_balance_error(final, p)
    rows = [
        (f"theta_ss in [{lo:g}, {hi:g}] K", f"{final.theta:.4f}", lo <= final.theta <= hi),
        (f"R_ss in [{rlo:g}, {rhi:g}] ohm", f"{traj.resistance[-1]:.4f}", rlo <= traj.resistance[-1] <= rhi),
        (f"energy balance < {PHYSICS_LIMITS['energy_balance'] * 100:g}%", f"{balance * 100:.4f}%",
         balance < PHYSICS_LIMITS["energy_balance"]),
    ]
    ok = report.passes()
    for name, (kind, limit) in pipeline.THRESHOLDS.items():
        if kind == "abs":
            rows.append((f"{name} abs error <= {limit:g} {pipeline.UNITS[name]}",
                         f"{report.absolute[name]:.4g}", ok[name]))
        else:
            rows.append((f"{name} rel error <= {limit * 100:g}%",
                         f"{report.relative[name] * 100:.4g}%", ok[name]))
    return rows


# -- commands -----------------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: str | None, flag: str) -> Path:
    if not path:
        raise ConfigError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag}: no such file {path}")
    return p


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    _, lines = stage_simulate(cfg, out)
    print("\n".join(lines))
    return EXIT_OK


def cmd_gendata(cfg: RunConfig, args) -> int:
    if args.trajectory:
        traj = motor_model.read_trajectory_csv(_require(args.trajectory, "--trajectory"))
        out = _out_dir(cfg)
    else:
        out = _out_dir(cfg)
        traj, _ = stage_simulate(cfg, out)
    ds = stage_gendata(cfg, traj, out)
    print(f"wrote {len(ds)} patterns to {out / 'dataset.csv'}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    ds = dataset.read_csv(_require(args.dataset, "--dataset"))
    if ds.inputs.shape[1] != cfg.topology().n_in:
        raise ConfigError(f"network.topology: dataset has {ds.inputs.shape[1]} inputs")
    out = _out_dir(cfg)
    with threadpool_limits(1):
        stage_train(cfg, ds, out)
    print(f"wrote {out / 'checkpoint.txt'}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ck = _require(args.checkpoint, "--checkpoint")
    tr = _require(args.trajectory, "--trajectory")
    dp = _require(args.dataset, "--dataset")
    weights, scaler = cfnn.load_checkpoint(ck)
    traj = motor_model.read_trajectory_csv(tr)
    ds = dataset.read_csv(dp)
    if scaler is not None and scaler != ds.scaler:
        raise pipeline.ScalerMismatch("checkpoint scaler differs from the dataset scaler")
    out = _out_dir(cfg)
    with threadpool_limits(1):
        report = stage_evaluate(cfg, weights, scaler, traj, ds, out)
    print("\n".join(report.table()))
    return EXIT_OK


def _timestamped(base: Path) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    run = base / f"repro-{stamp}"
    n = 1
    while run.exists():
        run = base / f"repro-{stamp}-{n}"
        n += 1
    run.mkdir(parents=True)
    return run


def cmd_repro(cfg: RunConfig, args) -> int:
    run = _timestamped(Path(cfg.out))
    stage = "simulate"
    try:
        t0 = time.perf_counter()
        traj, _ = stage_simulate(cfg, run)
        stage = "gendata"
        ds = stage_gendata(cfg, traj, run)
        stage = "train"
        with threadpool_limits(1):
            weights = stage_train(cfg, ds, run)
            stage = "evaluate"
            report = stage_evaluate(cfg, weights, ds.scaler, traj, ds, run)
    except Exception as exc:
        log.error("repro failed in stage %s: %s", stage, exc)
        raise
    rows = acceptance_rows(traj, cfg, report)
    width = max(len(r[0]) for r in rows)
    table = [f"{name:<{width}}  {value:>12}  {'PASS' if ok else 'FAIL'}" for name, value, ok in rows]
    passed = all(r[2] for r in rows)
    table.append(f"overall: {'PASS' if passed else 'FAIL'}")
    (run / "acceptance.txt").write_text("\n".join(table) + "\n")
    print("\n".join(report.table()))
    print()
    print("\n".join(table))
    print(f"artifacts in {run} ({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate,
    "gendata": cmd_gendata,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "repro": cmd_repro,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--print-config", action="store_true", help="print the merged config and exit")
    for key in RunConfig.keys():
        common.add_argument(f"--{key}", dest=f"cfg:{key}", metavar="VALUE", default=None)
    common.add_argument("--trajectory", help="trajectory CSV (gendata, evaluate)")
    common.add_argument("--dataset", help="dataset CSV (train, evaluate)")
    common.add_argument("--checkpoint", help="checkpoint file (evaluate)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bdcsense", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__name__.replace("cmd_", ""))
    return parser


def resolve_config(args) -> RunConfig:
    values = load_config_file(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key.startswith("cfg:") and value is not None:
            values[key[4:]] = value
    return RunConfig().with_values(values)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print("\n".join(cfg.dump()))
            return EXIT_OK
        return COMMANDS[args.command](cfg, args)
    except (SimulationError, SteadyStateError, pipeline.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
