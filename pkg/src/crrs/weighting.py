"""Dynamic weight averaging over several loss streams.

Weights are a temperature softmax of per-stream loss ratios, scaled so
that they sum to the number of streams.  The ratio is either the current
loss over the previous epoch's loss, or the current loss over the running
mean of all previous epochs (kept with Welford's update).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

RATIO_MODES = ("previous", "mean")
DEFAULT_TEMPERATURE = 20.0
R_MAX = 10.0


def welford_mean(prev_mean: float, new_value: float, n: int) -> float:
    """Running mean after observing the ``n``-th value."""
    if n < 1:
        raise ValueError("welford_mean needs n >= 1")
    return prev_mean + (new_value - prev_mean) / n


def softmax_weights(ratios, temperature: float) -> np.ndarray:
    r = np.asarray(ratios, dtype=float) / temperature
    e = np.exp(r - r.max())
    return len(r) * e / e.sum()


@dataclass
class WeightState:
    n_terms: int
    temperature: float = DEFAULT_TEMPERATURE
    ratio_mode: str = "mean"
    r_max: float = R_MAX
    epoch: int = 0
    last_loss: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    last_ratios: np.ndarray | None = field(default=None, repr=False)
    clamped: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.n_terms < 1:
            raise ValueError("n_terms must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.ratio_mode not in RATIO_MODES:
            raise ValueError(f"ratio_mode must be one of {RATIO_MODES}")
        if self.last_loss is None:
            self.last_loss = np.zeros(self.n_terms)
        if self.running_mean is None:
            self.running_mean = np.zeros(self.n_terms)
        self.last_loss = np.asarray(self.last_loss, dtype=float)
        self.running_mean = np.asarray(self.running_mean, dtype=float)

    def _ratios(self, losses: np.ndarray, warn: bool = True) -> np.ndarray:
        ref = self.last_loss if self.ratio_mode == "previous" else self.running_mean
        zero = ref == 0
        if warn and zero.any() and not self.clamped:
            self.clamped = True
            log.warning("zero reference loss for stream(s) %s; ratio clamped to %g (reported once)",
                        np.flatnonzero(zero).tolist(), self.r_max)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(zero, self.r_max, losses / np.where(zero, 1.0, ref))
        return ratios

    def _check(self, losses) -> np.ndarray:
        losses = np.asarray(losses, dtype=float)
        if losses.shape != (self.n_terms,):
            raise ValueError(f"expected {self.n_terms} losses, got shape {losses.shape}")
        if not np.all(np.isfinite(losses)) or np.any(losses < 0):
            raise ValueError("losses must be finite and non-negative")
        return losses

    def preview(self, losses) -> np.ndarray:
        """The weights ``update(losses)`` would return, leaving the state untouched."""
        losses = self._check(losses)
        if self.epoch < 2:
            return np.ones(self.n_terms)
        return softmax_weights(self._ratios(losses, warn=False), self.temperature)

    def update(self, losses) -> np.ndarray:
        """Consume one epoch of per-stream losses and return the stream weights."""
        losses = self._check(losses)

        # the first two epochs have no usable ratio yet
        if self.epoch < 2:
            weights = np.ones(self.n_terms)
            self.last_ratios = None
        else:
            self.last_ratios = self._ratios(losses)
            weights = softmax_weights(self.last_ratios, self.temperature)

        n = self.epoch + 1
        self.running_mean = np.array([welford_mean(m, x, n) for m, x in zip(self.running_mean, losses)])
        self.last_loss = losses.copy()
        self.epoch += 1
        return weights

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "last_loss": self.last_loss.tolist(),
            "running_mean": self.running_mean.tolist(),
            "temperature": self.temperature,
            "ratio_mode": self.ratio_mode,
        }

    @classmethod
    def from_json(cls, obj: dict) -> WeightState:
        last = obj["last_loss"]
        return cls(n_terms=len(last), temperature=obj["temperature"], ratio_mode=obj["ratio_mode"],
                   epoch=obj["epoch"], last_loss=last, running_mean=obj["running_mean"])


def update(state: WeightState, losses) -> np.ndarray:
    return state.update(losses)


def weight_spread(ratios, temperature: float) -> float:
    w = softmax_weights(ratios, temperature)
    return float(w.max() - w.min())


def is_normalized(weights, tol: float = 1e-9) -> bool:
    return math.isclose(float(np.sum(weights)), len(weights), rel_tol=0.0, abs_tol=tol)
