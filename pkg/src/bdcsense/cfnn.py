"""Cascade-forward network: every layer (input included) feeds every later layer.

Layers are indexed 0 (input) .. L+1 (output).  Hidden layers use the tanh
sigmoid, the output layer is linear.  Weight block ``(src, dst)`` has shape
``(size[dst], size[src])``; every non-input layer has a bias.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .dataset import Dataset, Scaler

__all__ = [
    "CfnnTopology",
    "CfnnWeights",
    "GradientBundle",
    "CheckpointError",
    "tansig",
    "purelin",
    "init_weights",
    "forward",
    "sse",
    "gradient",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = "cfnn-v1"
# Fixed chunking keeps the batch reduction order independent of the thread count.
CHUNK = 4096


class CheckpointError(ValueError):
    pass


def tansig(net):
    """Hyperbolic tangent sigmoid, ``2 / (1 + exp(-2 net)) - 1``."""
    return np.tanh(net)


def purelin(net):
    return net


@dataclass(frozen=True)
class CfnnTopology:
    layer_sizes: tuple[int, ...]
    input_tansig: bool = False

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {self.layer_sizes!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def parse(cls, spec: str, input_tansig: bool = False) -> "CfnnTopology":
        try:
            sizes = tuple(int(s) for s in spec.strip().split("-"))
        except ValueError:
            raise ValueError(f"bad topology spec {spec!r}") from None
        return cls(sizes, input_tansig)

    @property
    def spec(self) -> str:
        return "-".join(str(s) for s in self.layer_sizes)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def output_layer(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def connections(self) -> list[tuple[int, int]]:
        n = len(self.layer_sizes)
        return [(s, d) for s in range(n) for d in range(s + 1, n)]

    @property
    def activations(self) -> tuple[str, ...]:
        """Tag per layer, input layer included."""
        hidden = ("tansig",) * (len(self.layer_sizes) - 2)
        return ("tansig" if self.input_tansig else "identity",) + hidden + ("purelin",)


@dataclass
class CfnnWeights:
    topology: CfnnTopology
    blocks: dict[tuple[int, int], np.ndarray]
    biases: dict[int, np.ndarray]

    def __post_init__(self) -> None:
        sizes = self.topology.layer_sizes
        if set(self.blocks) != set(self.topology.connections):
            raise ValueError("weight blocks do not match the cascade connection set")
        for (s, d), w in self.blocks.items():
            if w.shape != (sizes[d], sizes[s]):
                raise ValueError(f"block {(s, d)} has shape {w.shape}, expected {(sizes[d], sizes[s])}")
        if set(self.biases) != set(range(1, len(sizes))):
            raise ValueError("one bias vector per non-input layer required")
        for d, bias in self.biases.items():
            if bias.shape != (sizes[d],):
                raise ValueError(f"bias {d} has shape {bias.shape}, expected {(sizes[d],)}")

    @classmethod
    def zeros(cls, topology: CfnnTopology) -> "CfnnWeights":
        sizes = topology.layer_sizes
        return cls(topology, {(s, d): np.zeros((sizes[d], sizes[s])) for s, d in topology.connections},
                   {d: np.zeros(sizes[d]) for d in range(1, len(sizes))})

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.blocks.values()) + sum(b.size for b in self.biases.values())

    def to_vector(self) -> np.ndarray:
        """Blocks in (src, dst) order, row-major, then biases by layer."""
        parts = [self.blocks[c].ravel() for c in self.topology.connections]
        parts += [self.biases[d] for d in range(1, len(self.topology.layer_sizes))]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, topology: CfnnTopology, vec: np.ndarray) -> "CfnnWeights":
        out = cls.zeros(topology)
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (out.n_params,):
            raise ValueError(f"expected {out.n_params} parameters, got {vec.shape}")
        k = 0
        for c in topology.connections:
            w = out.blocks[c]
            w[...] = vec[k : k + w.size].reshape(w.shape)
            k += w.size
        for d in range(1, len(topology.layer_sizes)):
            out.biases[d][...] = vec[k : k + out.biases[d].size]
            k += out.biases[d].size
        return out

    def copy(self) -> "CfnnWeights":
        return CfnnWeights(self.topology, {c: w.copy() for c, w in self.blocks.items()},
                           {d: b.copy() for d, b in self.biases.items()})


# Same layout as the weights: one entry per weight and bias, holding dE/dw.
GradientBundle = CfnnWeights


def init_weights(topology: CfnnTopology, seed: int, scheme: str = "uniform",
                 scale: float = 0.5) -> CfnnWeights:
    if scheme != "uniform":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = CfnnWeights.zeros(topology).n_params
    return CfnnWeights.from_vector(topology, rng.uniform(-scale, scale, n))


def forward(weights: CfnnWeights, x: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Evaluate the network on one input vector or a ``(n, n_in)`` batch.

    Returns the output and a cache of ``(net, act)`` per layer for :func:`gradient`.
    """
    topo = weights.topology
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != topo.n_in:
        raise ValueError(f"input has shape {x.shape}, network expects {topo.n_in} inputs")
    acts = [tansig(xb) if topo.input_tansig else xb]
    cache = [(xb, acts[0])]
    for d in range(1, len(topo.layer_sizes)):
        net = np.broadcast_to(weights.biases[d], (len(xb), topo.layer_sizes[d])).copy()
        for s in range(d):
            net += acts[s] @ weights.blocks[(s, d)].T
        act = purelin(net) if d == topo.output_layer else tansig(net)
        acts.append(act)
        cache.append((net, act))
    out = acts[-1]
    return (out[0] if single else out), cache


def _xy(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return data.inputs, data.targets
    x, y = data
    return np.atleast_2d(np.asarray(x, dtype=float)), np.atleast_2d(np.asarray(y, dtype=float))


def sse(weights: CfnnWeights, data) -> float:
    """Sum over patterns and outputs of (target - output)^2 (no 1/2 factor)."""
    x, y = _xy(data)
    if len(x) == 0:
        raise ValueError("empty dataset")
    if y.shape[1] != weights.topology.n_out:
        raise ValueError(f"targets have {y.shape[1]} columns, network has {weights.topology.n_out} outputs")
    total = 0.0
    for k in range(0, len(x), CHUNK):
        out, _ = forward(weights, x[k : k + CHUNK])
        total += float(np.sum((y[k : k + CHUNK] - out) ** 2))
    return total


def _chunk_gradient(weights: CfnnWeights, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    topo = weights.topology
    sizes = topo.layer_sizes
    out, cache = forward(weights, x)
    resid = y - out
    err = float(np.sum(resid ** 2))
    grad = CfnnWeights.zeros(topo)
    n_layers = len(sizes)
    # dE/dact per layer; each layer collects signal from every later layer it feeds.
    upstream: list[np.ndarray | None] = [None] * n_layers
    upstream[-1] = -2.0 * resid
    for d in range(n_layers - 1, 0, -1):
        net, act = cache[d]
        if d == topo.output_layer:
            delta = upstream[d]
        else:
            delta = upstream[d] * (1.0 - act * act)
        grad.biases[d][...] = delta.sum(axis=0)
        for s in range(d):
            grad.blocks[(s, d)][...] = delta.T @ cache[s][1]
            if s > 0:
                contrib = delta @ weights.blocks[(s, d)]
                upstream[s] = contrib if upstream[s] is None else upstream[s] + contrib
    return err, grad.to_vector()


def gradient(weights: CfnnWeights, data, threads: int = 1) -> tuple[float, GradientBundle]:
    """Batch SSE and its exact gradient by reverse accumulation over the cascade.

    Patterns are processed in fixed chunks (mapped over up to ``threads`` workers)
    and reduced in chunk order, so the result does not depend on ``threads``.
    """
    x, y = _xy(data)
    if len(x) == 0:
        raise ValueError("empty dataset")
    if x.shape[1] != weights.topology.n_in or y.shape[1] != weights.topology.n_out:
        raise ValueError("dataset dimensions do not match the network")
    starts = range(0, len(x), CHUNK)
    work = lambda k: _chunk_gradient(weights, x[k : k + CHUNK], y[k : k + CHUNK])
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(k) for k in starts]
    err = 0.0
    vec = np.zeros(weights.n_params)
    for e, g in parts:
        err += e
        vec += g
    return err, CfnnWeights.from_vector(weights.topology, vec)


def _fmt(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in np.asarray(values).ravel())


def save_checkpoint(weights: CfnnWeights, path: str | Path, scaler: Scaler | None = None,
                    meta: Iterable[str] = ()) -> None:
    """Text checkpoint; ``meta`` lines are appended as ``# `` comments."""
    topo = weights.topology
    lines = [
        CHECKPOINT_VERSION,
        topo.spec,
        ",".join(topo.activations),
        "scaler=" + (scaler.format() if scaler is not None else "none"),
    ]
    lines += [f"W {s} {d} {_fmt(weights.blocks[(s, d)])}" for s, d in topo.connections]
    lines += [f"b {d} {_fmt(weights.biases[d])}" for d in range(1, len(topo.layer_sizes))]
    lines += [f"# {m}" for m in meta]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> tuple[CfnnWeights, Scaler | None]:
    """Read a checkpoint back, validating version, tags and every block shape."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    if len(lines) < 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    if lines[0] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {lines[0]!r}")
    tags = lines[2].split(",")
    if tags[0] not in ("identity", "tansig"):
        raise CheckpointError(f"{path}: bad input activation {tags[0]!r}")
    try:
        topo = CfnnTopology.parse(lines[1], input_tansig=tags[0] == "tansig")
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if tuple(tags) != topo.activations:
        raise CheckpointError(f"{path}: activation tags {tags} do not match topology {topo.spec}")
    if not lines[3].startswith("scaler="):
        raise CheckpointError(f"{path}:4: expected scaler line")
    scaler_text = lines[3][len("scaler="):]
    try:
        scaler = None if scaler_text == "none" else Scaler.parse(scaler_text)
    except ValueError as exc:
        raise CheckpointError(f"{path}:4: {exc}") from None

    sizes = topo.layer_sizes
    expected = [("W", s, d) for s, d in topo.connections] + [("b", d) for d in range(1, len(sizes))]
    body = lines[4:]
    if len(body) != len(expected):
        raise CheckpointError(f"{path}: expected {len(expected)} parameter lines, found {len(body)}")
    w = CfnnWeights.zeros(topo)
    for n, (key, line) in enumerate(zip(expected, body), start=5):
        parts = line.split()
        head = parts[: len(key)]
        if head != [str(k) for k in key]:
            raise CheckpointError(f"{path}:{n}: expected {' '.join(map(str, key))}, got {' '.join(head)}")
        try:
            values = np.array([float(v) for v in parts[len(key):]])
        except ValueError:
            raise CheckpointError(f"{path}:{n}: bad number") from None
        target = w.blocks[key[1:]] if key[0] == "W" else w.biases[key[1]]
        if values.size != target.size:
            raise CheckpointError(f"{path}:{n}: {values.size} values, shape needs {target.size}")
        if not np.all(np.isfinite(values)):
            raise CheckpointError(f"{path}:{n}: non-finite weight")
        target[...] = values.reshape(target.shape)
    return w, scaler
