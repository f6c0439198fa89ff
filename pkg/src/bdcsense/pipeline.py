"""Training loop, cross-validation and steady-state error evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Union

import numpy as np

from . import cfnn, rprop
from .cfnn import CfnnTopology, CfnnWeights
from .dataset import TARGET_CHANNELS, Dataset, Scaler, invert, kfold, subsample
from .motor_model import Trajectory

__all__ = [
    "REFERENCE_ERRORS",
    "THRESHOLDS",
    "StopCriteria",
    "TrainingDiverged",
    "ScalerMismatch",
    "TrainReport",
    "CrossValidation",
    "EvalReport",
    "train",
    "cross_validate",
    "evaluate",
    "emit_figures",
]

OUTPUTS = ("speed", "temperature", "resistance")
UNITS = {"speed": "rad/s", "temperature": "K", "resistance": "ohm"}

# Steady-state errors reported for the original estimator: (absolute, relative).
REFERENCE_ERRORS = {
    "speed": (0.015, 0.0067e-2),
    "temperature": (3.0, 3.75e-2),
    "resistance": (0.04, 0.9e-2),
}

# Relaxed acceptance targets: (kind, limit) with kind "abs" or "rel".
THRESHOLDS = {
    "speed": ("rel", 1e-3),
    "temperature": ("abs", 4.0),
    "resistance": ("rel", 2e-2),
}


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float, fold: int | None = None):
        where = f"fold {fold}, epoch {epoch}" if fold is not None else f"epoch {epoch}"
        super().__init__(f"training SSE became non-finite ({value}) at {where}")
        self.epoch = epoch
        self.value = value
        self.fold = fold


class ScalerMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StopCriteria:
    max_epochs: int = 5000
    goal_sse: float = 1e-3
    patience: int = 200

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.goal_sse >= 0:
            raise ValueError("goal_sse must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainReport:
    """Per-epoch SSE after each applied step, plus how and why training stopped.

    ``wall_time`` is kept out of :meth:`lines` so written reports stay byte-stable.
    """

    train_sse: list[float]
    val_sse: list[float]
    initial_sse: float
    stop_reason: str
    best_epoch: int
    wall_time: float = 0.0
    config: dict[str, str] = field(default_factory=dict)

    @property
    def epochs(self) -> int:
        return len(self.train_sse)

    @property
    def best_train_sse(self) -> float:
        return min(self.train_sse)

    def lines(self) -> list[str]:
        out = [f"# {k} = {v}" for k, v in self.config.items()]
        out += [
            f"# initial_sse = {self.initial_sse:.17g}",
            f"# epochs = {self.epochs}",
            f"# stop_reason = {self.stop_reason}",
            f"# best_epoch = {self.best_epoch}",
            "epoch,train_sse,val_sse",
        ]
        out += [f"{k + 1},{t:.17g},{v:.17g}" for k, (t, v) in enumerate(zip(self.train_sse, self.val_sse))]
        return out

    def write(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")


def train(
    train_set: Dataset | tuple[np.ndarray, np.ndarray],
    val_set: Dataset | tuple[np.ndarray, np.ndarray] | None,
    topology: CfnnTopology,
    cfg: rprop.RpropConfig,
    stop: StopCriteria,
    seed: int,
    threads: int = 1,
    init_scale: float = 0.5,
    config: dict[str, str] | None = None,
) -> tuple[CfnnWeights, TrainReport]:
    """Full-batch Rprop training.

    Each epoch takes the gradient at the current weights, applies one Rprop
    step, then records train and validation SSE at the new weights.  The
    weights with the lowest validation SSE (train SSE when there is no
    validation split) are returned.
    """
    t0 = time.perf_counter()
    weights = cfnn.init_weights(topology, seed, scale=init_scale)
    vec = weights.to_vector()
    state = rprop.init_state(cfg, vec.shape)
    err, grad = cfnn.gradient(weights, train_set, threads)
    if not math.isfinite(err):
        raise TrainingDiverged(0, err)
    initial = err
    train_hist: list[float] = []
    val_hist: list[float] = []
    best_score, best_vec, best_epoch = math.inf, vec.copy(), 0
    reason = "max_epochs"
    for epoch in range(1, stop.max_epochs + 1):
        vec = vec + rprop.step(state, grad.to_vector(), err, cfg)
        weights = CfnnWeights.from_vector(topology, vec)
        err, grad = cfnn.gradient(weights, train_set, threads)
        if not math.isfinite(err):
            raise TrainingDiverged(epoch, err)
        val = cfnn.sse(weights, val_set) if val_set is not None else math.nan
        train_hist.append(err)
        val_hist.append(val)
        score = val if val_set is not None else err
        if score < best_score:
            best_score, best_vec, best_epoch = score, vec.copy(), epoch
        if err <= stop.goal_sse:
            reason = "goal_sse"
            break
        if epoch - best_epoch >= stop.patience:
            reason = "patience"
            break
    report = TrainReport(train_hist, val_hist, initial, reason, best_epoch,
                         time.perf_counter() - t0, dict(config or {}))
    return CfnnWeights.from_vector(topology, best_vec), report


@dataclass
class CrossValidation:
    reports: list[TrainReport]
    weights: list[CfnnWeights]

    @property
    def best_val_sse(self) -> list[float]:
        return [r.val_sse[r.best_epoch - 1] for r in self.reports]

    def summary(self) -> dict[str, float]:
        v = self.best_val_sse
        return {"mean": float(np.mean(v)), "min": float(np.min(v)), "max": float(np.max(v))}


def cross_validate(
    dataset: Dataset,
    k: int,
    topology: CfnnTopology,
    cfg: rprop.RpropConfig,
    stop: StopCriteria,
    seed: int,
    fold_seed: int | None = None,
    threads: int = 1,
) -> CrossValidation:
    """Train one network per fold.  Errors are re-raised with the fold index attached."""
    folds = kfold(dataset, k, seed if fold_seed is None else fold_seed)
    reports, weights = [], []
    for f, (tr, va) in enumerate(folds):
        try:
            w, rep = train(tr, va, topology, cfg, stop, seed, threads)
        except TrainingDiverged as exc:
            raise TrainingDiverged(exc.epoch, exc.value, fold=f) from exc
        reports.append(rep)
        weights.append(w)
    return CrossValidation(reports, weights)


Predictor = Union[CfnnWeights, Callable[[np.ndarray], np.ndarray]]


@dataclass
class EvalReport:
    t: np.ndarray
    simulated: np.ndarray  # (n, 3): speed, temperature, resistance
    estimated: np.ndarray
    window_start: float
    absolute: dict[str, float]
    relative: dict[str, float]
    nominal: dict[str, float]

    @property
    def errors(self) -> np.ndarray:
        return self.estimated - self.simulated

    def passes(self) -> dict[str, bool]:
        out = {}
        for name, (kind, limit) in THRESHOLDS.items():
            value = self.absolute[name] if kind == "abs" else self.relative[name]
            out[name] = value <= limit
        return out

    def table(self) -> list[str]:
        """Achieved errors next to the reference row and the acceptance limit."""
        rows = [f"{'quantity':<12} {'abs error':>14} {'rel error':>11} "
                f"{'ref abs':>9} {'ref rel':>9} {'limit':>12}  result"]
        ok = self.passes()
        for name in OUTPUTS:
            ref_abs, ref_rel = REFERENCE_ERRORS[name]
            kind, limit = THRESHOLDS[name]
            lim = f"<={limit:g} {UNITS[name]}" if kind == "abs" else f"<={limit * 100:g}%"
            rows.append(
                f"{name:<12} {self.absolute[name]:>10.4g} {UNITS[name]:<3} {self.relative[name] * 100:>10.4g}% "
                f"{ref_abs:>9g} {ref_rel * 100:>8.4g}% {lim:>12}  {'PASS' if ok[name] else 'FAIL'}")
        return rows

    def lines(self, config: dict[str, str] | None = None) -> list[str]:
        out = [f"# {k} = {v}" for k, v in (config or {}).items()]
        out.append(f"# steady_state_window_start = {self.window_start:.17g}")
        out.append("quantity,abs_error,rel_error,nominal,ref_abs_error,ref_rel_error,status")
        ok = self.passes()
        for name in OUTPUTS:
            ref_abs, ref_rel = REFERENCE_ERRORS[name]
            out.append(f"{name},{self.absolute[name]:.17g},{self.relative[name]:.17g},"
                       f"{self.nominal[name]:.17g},{ref_abs:.17g},{ref_rel:.17g},"
                       f"{'PASS' if ok[name] else 'FAIL'}")
        return out

    def write(self, path: str | Path, config: dict[str, str] | None = None) -> None:
        Path(path).write_text("\n".join(self.lines(config)) + "\n")


def evaluate(
    model: Predictor,
    scaler: Scaler | None,
    trajectory: Trajectory,
    dataset: Dataset,
    steady_fraction: float = 0.1,
) -> EvalReport:
    """Compare network estimates on ``dataset`` against the clean ``trajectory``.

    The steady-state error is the mean absolute error over samples in the last
    ``steady_fraction`` of the run; relative errors divide by the final clean
    value of each quantity.
    """
    if scaler is not None and scaler != dataset.scaler:
        raise ScalerMismatch("checkpoint scaler differs from the dataset scaler")
    clean = subsample(trajectory, dataset.rate)
    if len(clean) != len(dataset):
        raise ValueError(f"trajectory has {len(clean)} samples at {dataset.rate:g} Hz, "
                         f"dataset has {len(dataset)} patterns")
    if isinstance(model, CfnnWeights):
        y_norm = np.concatenate([cfnn.forward(model, dataset.inputs[k : k + cfnn.CHUNK])[0]
                                 for k in range(0, len(dataset), cfnn.CHUNK)])
    else:
        y_norm = np.asarray(model(dataset.inputs), dtype=float)
    estimated = invert(dataset.scaler, y_norm, TARGET_CHANNELS)
    simulated = np.column_stack([clean.omega, clean.theta, clean.resistance])
    start = (1.0 - steady_fraction) * clean.t[-1]
    tail = clean.t >= start
    abs_err = np.mean(np.abs(estimated[tail] - simulated[tail]), axis=0)
    nominal = simulated[-1]
    if np.any(nominal <= 0):
        raise ValueError("nominal steady-state values must be positive for relative errors")
    return EvalReport(
        t=clean.t.copy(),
        simulated=simulated,
        estimated=estimated,
        window_start=float(start),
        absolute={n: float(a) for n, a in zip(OUTPUTS, abs_err)},
        relative={n: float(a / m) for n, a, m in zip(OUTPUTS, abs_err, nominal)},
        nominal={n: float(m) for n, m in zip(OUTPUTS, nominal)},
    )


FIGURE_FILES = ("fig3_speed.csv", "fig4_temperature.csv", "fig5_resistance.csv")


def emit_figures(report: EvalReport, out_dir: str | Path, meta: Iterable[str] = ()) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    head = "".join(f"# {m}\n" for m in meta)
    paths = []
    for k, name in enumerate(FIGURE_FILES):
        path = out_dir / name
        data = np.column_stack([report.t, report.simulated[:, k], report.estimated[:, k]])
        np.savetxt(path, data, fmt="%.17g", delimiter=",", comments="",
                   header=head + "t,simulated,estimated")
        paths.append(path)
    path = out_dir / "fig6_errors.csv"
    np.savetxt(path, np.column_stack([report.t, report.errors]), fmt="%.17g", delimiter=",",
               comments="", header=head + "t,err_speed,err_temp,err_res")
    paths.append(path)
    return paths
