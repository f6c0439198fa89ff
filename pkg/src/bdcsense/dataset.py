"""Noisy, normalised (V, i) -> (omega, theta, R) patterns built from trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .motor_model import Trajectory

__all__ = [
    "CHANNELS",
    "INPUT_CHANNELS",
    "TARGET_CHANNELS",
    "Pattern",
    "Scaler",
    "Dataset",
    "gaussian_pairs",
    "records_from_trajectory",
    "subsample",
    "add_noise",
    "fit_scaler",
    "apply",
    "invert",
    "build_patterns",
    "kfold",
    "write_csv",
    "read_csv",
]

CHANNELS = ("v", "i", "omega", "theta", "r")
INPUT_CHANNELS = CHANNELS[:2]
TARGET_CHANNELS = CHANNELS[2:]
FORMAT_TAG = "bdcsense-dataset v1"


class Pattern(NamedTuple):
    input: np.ndarray
    target: np.ndarray


def gaussian_pairs(n: int, seed: int) -> np.ndarray:
    """``(n, 2)`` standard normal draws, one Box-Muller pair per row.

    Uniforms come from numpy's PCG64 seeded with ``seed``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random((n, 2))
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    angle = 2.0 * np.pi * u[:, 1]
    return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])


def records_from_trajectory(traj: Trajectory) -> np.ndarray:
    """Stack a trajectory into ``(n, 5)`` records in :data:`CHANNELS` order."""
    return np.column_stack([traj.v_a, traj.i_a, traj.omega, traj.theta, traj.resistance])


def subsample(traj: Trajectory, rate: float) -> Trajectory:
    """Keep the samples at ``t = k / rate``; ``1/rate`` must be a multiple of the trajectory step."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    if not rate > 0:
        raise ValueError("rate must be > 0")
    if len(traj) == 1:
        return Trajectory.from_array(traj.as_array())
    step = traj.t[1] - traj.t[0]
    ratio = 1.0 / (rate * step)
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-6 * ratio:
        raise ValueError(
            f"rate {rate:g} Hz is not an integer divisor of the trajectory rate {1 / step:g} Hz")
    count = int(math.floor(traj.t[-1] * rate + 1e-9)) + 1
    return Trajectory.from_array(traj.as_array()[: (count - 1) * stride + 1 : stride])


def add_noise(records: np.ndarray, sigma_v: float, sigma_i: float, seed: int) -> np.ndarray:
    """Add white Gaussian noise to the voltage and current columns only."""
    if sigma_v < 0 or sigma_i < 0:
        raise ValueError("noise standard deviations must be >= 0")
    out = np.array(records, dtype=float, copy=True)
    z = gaussian_pairs(len(out), seed)
    out[:, 0] += sigma_v * z[:, 0]
    out[:, 1] += sigma_i * z[:, 1]
    return out


@dataclass(frozen=True)
class Scaler:
    """Per-channel affine map of ``[min, max]`` onto ``[-1, 1]``."""

    names: tuple[str, ...]
    mins: tuple[float, ...]
    maxs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not len(self.names) == len(self.mins) == len(self.maxs):
            raise ValueError("scaler fields must have equal length")
        for name, lo, hi in zip(self.names, self.mins, self.maxs):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"scaler channel {name!r} has non-finite bounds")
            if not hi > lo:
                raise ValueError(f"scaler channel {name!r} is constant (max <= min)")

    def _bounds(self, channels: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        idx = [self.names.index(c) for c in channels]
        return np.array(self.mins)[idx], np.array(self.maxs)[idx]

    def format(self) -> str:
        return ";".join(f"{n}:{lo:.17g}:{hi:.17g}" for n, lo, hi in zip(self.names, self.mins, self.maxs))

    @classmethod
    def parse(cls, text: str) -> "Scaler":
        names, mins, maxs = [], [], []
        for chunk in text.strip().split(";"):
            name, lo, hi = chunk.split(":")
            names.append(name)
            mins.append(float(lo))
            maxs.append(float(hi))
        return cls(tuple(names), tuple(mins), tuple(maxs))


def fit_scaler(records: np.ndarray, names: Sequence[str] = CHANNELS) -> Scaler:
    records = np.asarray(records, dtype=float)
    if records.ndim != 2 or records.shape[1] != len(names):
        raise ValueError(f"records must have shape (n, {len(names)})")
    if not np.all(np.isfinite(records)):
        raise ValueError("records contain non-finite values")
    return Scaler(tuple(names), tuple(float(x) for x in records.min(axis=0)),
                  tuple(float(x) for x in records.max(axis=0)))


def apply(scaler: Scaler, values: np.ndarray, channels: Sequence[str] = CHANNELS) -> np.ndarray:
    """Map physical values to normalised units.  Out-of-range values are not clipped."""
    lo, hi = scaler._bounds(channels)
    return 2.0 * (np.asarray(values, dtype=float) - lo) / (hi - lo) - 1.0


def invert(scaler: Scaler, values: np.ndarray, channels: Sequence[str] = CHANNELS) -> np.ndarray:
    lo, hi = scaler._bounds(channels)
    return lo + (np.asarray(values, dtype=float) + 1.0) * (hi - lo) / 2.0


@dataclass(eq=False)
class Dataset:
    """Normalised patterns plus everything needed to rebuild or undo them.

    ``inputs`` has ``2 * window`` columns: (v, i) at lag 0, then lag 1, ...
    """

    inputs: np.ndarray
    targets: np.ndarray
    scaler: Scaler
    seed: int
    sigma_v: float
    sigma_i: float
    rate: float
    window: int = 1
    source: str = ""
    meta: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if len(self.inputs) == 0:
            raise ValueError("dataset is empty")
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")
        if self.inputs.shape[1] != 2 * self.window or self.targets.shape[1] != 3:
            raise ValueError("dataset column counts do not match window / outputs")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return len(self.inputs)

    def __getitem__(self, k: int) -> Pattern:
        return Pattern(self.inputs[k], self.targets[k])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.targets, other.targets)
                and (self.scaler, self.seed, self.sigma_v, self.sigma_i, self.rate,
                     self.window, self.source, self.meta)
                == (other.scaler, other.seed, other.sigma_v, other.sigma_i, other.rate,
                    other.window, other.source, other.meta))

    @property
    def input_channels(self) -> tuple[str, ...]:
        return tuple(c for _ in range(self.window) for c in INPUT_CHANNELS)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.scaler, self.seed,
                       self.sigma_v, self.sigma_i, self.rate, self.window, self.source, self.meta)

    def physical_targets(self) -> np.ndarray:
        return invert(self.scaler, self.targets, TARGET_CHANNELS)


def _lagged(x: np.ndarray, window: int) -> np.ndarray:
    # Columns (v_k, i_k, v_{k-1}, i_{k-1}, ...); the first sample repeats into the past.
    n = len(x)
    cols = []
    for lag in range(window):
        idx = np.maximum(np.arange(n) - lag, 0)
        cols.append(x[idx])
    return np.concatenate(cols, axis=1)


def build_patterns(
    traj: Trajectory,
    rate: float,
    sigma_v: float,
    sigma_i: float,
    seed: int,
    scaler: Scaler | None = None,
    window: int = 1,
    source: str = "",
    meta: Iterable[str] = (),
) -> Dataset:
    """Subsample ``traj`` at ``rate``, add input noise, pair with clean targets and scale.

    With ``scaler=None`` a scaler is fitted to the noisy records being built.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    records = add_noise(records_from_trajectory(subsample(traj, rate)), sigma_v, sigma_i, seed)
    if scaler is None:
        scaler = fit_scaler(records)
    scaled = apply(scaler, records)
    return Dataset(_lagged(scaled[:, :2], window), scaled[:, 2:], scaler, int(seed),
                   float(sigma_v), float(sigma_i), float(rate), window, source, tuple(meta))


def kfold(dataset: Dataset, k: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Seeded k-way partition; returns ``(train, validation)`` per fold."""
    n = len(dataset)
    if not (isinstance(k, (int, np.integer)) and 2 <= k <= n):
        raise ValueError(f"k must be an integer in [2, {n}], got {k!r}")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for f in range(k):
        val = np.sort(folds[f])
        train = np.sort(np.concatenate([folds[g] for g in range(k) if g != f]))
        out.append((dataset.subset(train), dataset.subset(val)))
    return out


def _columns(window: int) -> list[str]:
    cols = ["v_norm", "i_norm"]
    for lag in range(1, window):
        cols += [f"v_norm_lag{lag}", f"i_norm_lag{lag}"]
    return cols + ["omega_norm", "theta_norm", "r_norm"]


def write_csv(dataset: Dataset, path: str | Path) -> None:
    head = [
        FORMAT_TAG,
        f"seed={dataset.seed}",
        f"sigma_v={dataset.sigma_v:.17g}",
        f"sigma_i={dataset.sigma_i:.17g}",
        f"scaler={dataset.scaler.format()}",
        f"rate={dataset.rate:.17g}",
        f"window={dataset.window}",
        f"source={dataset.source}",
        *(f"meta={m}" for m in dataset.meta),
    ]
    header = "".join(f"# {h}\n" for h in head) + ",".join(_columns(dataset.window))
    data = np.concatenate([dataset.inputs, dataset.targets], axis=1)
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


_REQUIRED = ("seed", "sigma_v", "sigma_i", "scaler", "rate", "window", "source")


def read_csv(path: str | Path) -> Dataset:
    """Parse a dataset file; malformed content raises ``ValueError`` naming the line."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# {FORMAT_TAG}":
        raise ValueError(f"{path}:1: missing '# {FORMAT_TAG}' tag")
    head: dict[str, str] = {}
    meta: list[str] = []
    n = 1
    while n < len(lines) and lines[n].startswith("#"):
        key, sep, value = lines[n][2:].partition("=")
        if not sep:
            raise ValueError(f"{path}:{n + 1}: malformed header line")
        if key == "meta":
            meta.append(value)
        else:
            head[key] = value
        n += 1
    missing = [k for k in _REQUIRED if k not in head]
    if missing:
        raise ValueError(f"{path}: missing header keys {missing}")
    try:
        window = int(head["window"])
        scaler = Scaler.parse(head["scaler"])
        seed = int(head["seed"])
        sigma_v, sigma_i, rate = float(head["sigma_v"]), float(head["sigma_i"]), float(head["rate"])
    except ValueError as exc:
        raise ValueError(f"{path}: bad header value: {exc}") from None
    cols = _columns(window)
    if n >= len(lines) or lines[n].strip() != ",".join(cols):
        raise ValueError(f"{path}:{n + 1}: expected column header {','.join(cols)!r}")
    rows = []
    for lineno in range(n + 2, len(lines) + 1):
        text = lines[lineno - 1]
        if not text.strip():
            continue
        parts = text.split(",")
        if len(parts) != len(cols):
            raise ValueError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(parts)}")
        try:
            row = [float(x) for x in parts]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(x) for x in row):
            raise ValueError(f"{path}:{lineno}: non-finite value")
        rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no patterns")
    data = np.array(rows)
    return Dataset(data[:, : 2 * window], data[:, 2 * window :], scaler, seed, sigma_v, sigma_i,
                   rate, window, head["source"], tuple(meta))
