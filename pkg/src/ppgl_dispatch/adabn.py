"""Test-time adaptation of batch-norm running statistics.

A feature map is a (channels, spatial) array of activations for one test sample;
statistics are taken over spatial positions, so batch size 1 is the normal case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

DEFAULT_MOMENTUM = 0.1


@dataclass(frozen=True, eq=False)
class BnLayerState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum_alpha: float = DEFAULT_MOMENTUM

    def __post_init__(self) -> None:
        mean = np.array(self.running_mean, dtype=np.float64).reshape(-1)
        var = np.array(self.running_var, dtype=np.float64).reshape(-1)
        if mean.shape != var.shape or mean.size == 0:
            raise ValueError(f"running_mean {mean.shape} and running_var {var.shape} must be equal and nonempty")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise ValueError("running statistics must be finite")
        if np.any(var < 0):
            raise ValueError("running_var must be non-negative")
        if not 0.0 <= self.momentum_alpha <= 1.0:
            raise ValueError(f"momentum_alpha must be in [0, 1], got {self.momentum_alpha}")
        mean.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "running_mean", mean)
        object.__setattr__(self, "running_var", var)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BnLayerState):
            return NotImplemented
        return (
            self.momentum_alpha == other.momentum_alpha
            and np.array_equal(self.running_mean, other.running_mean)
            and np.array_equal(self.running_var, other.running_var)
        )

    __hash__ = None

    @property
    def channel_count(self) -> int:
        return self.running_mean.size

    def to_dict(self) -> dict:
        return {
            "channel_count": self.channel_count,
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "momentum_alpha": self.momentum_alpha,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BnLayerState:
        state = cls(d["running_mean"], d["running_var"], float(d.get("momentum_alpha", DEFAULT_MOMENTUM)))
        if "channel_count" in d and int(d["channel_count"]) != state.channel_count:
            raise ValueError(f"channel_count {d['channel_count']} does not match {state.channel_count} statistics")
        return state


def as_feature_map(values, channel_count: int | None = None) -> np.ndarray:
    """Coerce to a (channels, spatial) float array with at least 2 spatial positions."""
    arr = np.asarray(values, dtype=np.float64)
    if channel_count is not None and arr.ndim == 1:
        arr = arr.reshape(channel_count, -1)
    if arr.ndim != 2:
        raise ValueError(f"feature map must be 2-D (channels, spatial), got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise ValueError(f"spatial_size must be >= 2, got {arr.shape[1]}")
    return arr


def current_stats(features) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population variance over spatial positions."""
    x = as_feature_map(features)
    mean = x.mean(axis=1)
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    return mean, var


def adabn_update(state: BnLayerState, features, momentum_alpha: float | None = None) -> BnLayerState:
    """Blend running statistics toward this sample's statistics. Returns a new state."""
    alpha = state.momentum_alpha if momentum_alpha is None else momentum_alpha
    mean, var = current_stats(features)
    if mean.size != state.channel_count:
        raise ValueError(f"feature map has {mean.size} channels, state has {state.channel_count}")
    return BnLayerState(
        running_mean=(1.0 - alpha) * state.running_mean + alpha * mean,
        running_var=(1.0 - alpha) * state.running_var + alpha * var,
        momentum_alpha=alpha,
    )


def adapt_sequence(state: BnLayerState, samples: Iterable) -> BnLayerState:
    for features in samples:
        state = adabn_update(state, features)
    return state


def save_state(state: BnLayerState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state.to_dict(), indent=2), "utf-8")


def load_state(path: str | Path) -> BnLayerState:
    return BnLayerState.from_dict(json.loads(Path(path).read_text("utf-8")))
