"""Resilient backpropagation: sign-based, per-parameter adaptive steps.

Four variants are supported.  All share the step-size adaptation

    delta <- min(delta * eta_plus, delta_max)   if g(t-1) g(t) > 0
    delta <- max(delta * eta_minus, delta_min)  if g(t-1) g(t) < 0
    delta unchanged                             otherwise

and differ only in what happens on a sign change:

* ``RPROP_PLUS``: undo the previous step, forget the gradient.
* ``RPROP_MINUS``: step against the new sign as usual.
* ``IRPROP_PLUS``: undo the previous step only if the error went up, forget
  the gradient.
* ``IRPROP_MINUS``: forget the gradient, which makes the step zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = ["Variant", "RpropConfig", "RpropState", "init_state", "step"]


class Variant(str, Enum):
    RPROP_PLUS = "RPROP_PLUS"
    RPROP_MINUS = "RPROP_MINUS"
    IRPROP_PLUS = "IRPROP_PLUS"
    IRPROP_MINUS = "IRPROP_MINUS"


@dataclass(frozen=True)
class RpropConfig:
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 0.1
    delta_max: float = 50.0
    delta_min: float = 1e-6
    variant: Variant = Variant.IRPROP_MINUS

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0 < self.eta_minus < 1 < self.eta_plus:
            raise ValueError("need 0 < eta_minus < 1 < eta_plus")
        if not 0 < self.delta_min <= self.delta0 <= self.delta_max:
            raise ValueError("need 0 < delta_min <= delta0 <= delta_max")
        if not math.isfinite(self.eta_plus) or not math.isfinite(self.delta_max):
            raise ValueError("rprop factors must be finite")


@dataclass
class RpropState:
    delta: np.ndarray
    prev_grad: np.ndarray
    prev_step: np.ndarray
    prev_error: float = math.inf

    def copy(self) -> "RpropState":
        return RpropState(self.delta.copy(), self.prev_grad.copy(), self.prev_step.copy(),
                          self.prev_error)


def init_state(cfg: RpropConfig, shape) -> RpropState:
    return RpropState(np.full(shape, cfg.delta0, dtype=float), np.zeros(shape), np.zeros(shape))


def step(state: RpropState, grads: np.ndarray, epoch_error: float, cfg: RpropConfig) -> np.ndarray:
    """Return the weight change for this epoch and advance ``state`` in place.

    ``grads`` is dE/dw at the current weights and ``epoch_error`` the error there.
    """
    g = np.array(grads, dtype=float, copy=True)
    if g.shape != state.delta.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state {state.delta.shape}")
    if not math.isfinite(epoch_error):
        raise ValueError("epoch error must be finite")

    same = np.sign(state.prev_grad) * np.sign(g)
    grow = same > 0
    flip = same < 0
    delta = state.delta.copy()
    delta[grow] = np.minimum(delta[grow] * cfg.eta_plus, cfg.delta_max)
    delta[flip] = np.maximum(delta[flip] * cfg.eta_minus, cfg.delta_min)

    v = cfg.variant
    if v is not Variant.RPROP_MINUS:
        g[flip] = 0.0
    dw = -np.sign(g) * delta
    if v is Variant.RPROP_PLUS or (v is Variant.IRPROP_PLUS and epoch_error > state.prev_error):
        dw[flip] = -state.prev_step[flip]

    state.delta = delta
    state.prev_grad = g
    state.prev_step = dw
    state.prev_error = float(epoch_error)
    return dw
