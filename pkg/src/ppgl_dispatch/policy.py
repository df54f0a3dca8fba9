"""Linear-softmax dispatcher policy with a linear value baseline."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .env import ACTIONS, EnvState, SubTask

TASKS = tuple(SubTask)


@dataclass(frozen=True)
class FeatureConfig:
    """Layout of the state vector: answered one-hot, step fraction, observation bins, bias."""

    summary_bins: int = 2
    max_steps: int = 20

    @property
    def dim(self) -> int:
        return len(TASKS) + 1 + len(TASKS) * self.summary_bins + 1

    def to_dict(self) -> dict[str, int]:
        return {"summary_bins": self.summary_bins, "max_steps": self.max_steps}


_SCALE = {SubTask.CELLULARITY: 500.0, SubTask.KI67: 10.0}


def _summary_value(task: SubTask, payload: Any) -> float:
    """Map an observation payload to [0, 1] for binning."""
    if isinstance(payload, bool):
        return float(payload)
    if isinstance(payload, Enum):
        members = list(type(payload))
        return members.index(payload) / max(1, len(members) - 1)
    if isinstance(payload, float):
        return payload / _SCALE.get(task, 1.0)
    return 0.5


def state_features(state: EnvState, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    x = np.zeros(config.dim)
    for i, task in enumerate(TASKS):
        if task in state.answered:
            x[i] = 1.0
    x[len(TASKS)] = min(1.0, state.step_index / config.max_steps)
    if config.summary_bins:
        latest: dict[SubTask, Any] = {}
        for _, obs in state.history:
            if obs is not None and obs.error is None:
                latest[obs.task] = obs.payload
        base = len(TASKS) + 1
        for i, task in enumerate(TASKS):
            if task not in latest:
                continue
            v = _summary_value(task, latest[task])
            b = min(config.summary_bins - 1, max(0, int(v * config.summary_bins)))
            x[base + i * config.summary_bins + b] = 1.0
    x[-1] = 1.0
    return x


@dataclass
class PolicyParams:
    weights: np.ndarray  # (action_count, feature_dim)
    value_weights: np.ndarray  # (feature_dim,)
    features: FeatureConfig = FeatureConfig()

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.value_weights = np.asarray(self.value_weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.value_weights.shape != (self.weights.shape[1],):
            raise ValueError(f"inconsistent shapes {self.weights.shape} / {self.value_weights.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.value_weights))):
            raise ValueError("policy parameters must be finite")

    @property
    def action_count(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, features: FeatureConfig = FeatureConfig(), action_count: int = len(ACTIONS)) -> PolicyParams:
        return cls(np.zeros((action_count, features.dim)), np.zeros(features.dim), features)

    def copy(self) -> PolicyParams:
        return PolicyParams(self.weights.copy(), self.value_weights.copy(), self.features)

    def value(self, x: np.ndarray) -> float:
        return float(self.value_weights @ x)


def policy_distribution(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    """Softmax of ``weights @ features`` with max-subtraction."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (params.feature_dim,):
        raise ValueError(f"features have shape {x.shape}, expected ({params.feature_dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    logits = params.weights @ x
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def log_prob(params: PolicyParams, features: np.ndarray, action: int) -> float:
    x = np.asarray(features, dtype=np.float64)
    logits = params.weights @ x
    m = logits.max()
    return float(logits[action] - m - np.log(np.exp(logits - m).sum()))


def grad_log_prob(params: PolicyParams, features: np.ndarray, action: int) -> np.ndarray:
    """d log pi(action | x) / d weights = (onehot(action) - pi) outer x."""
    p = policy_distribution(params, features)
    g = -p
    g[action] += 1.0
    return np.outer(g, features)


def greedy_action(params: PolicyParams, features: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. the lowest action index on ties
    return int(np.argmax(params.weights @ np.asarray(features, dtype=np.float64)))


def sample_action(params: PolicyParams, features: np.ndarray, rng: np.random.Generator) -> int:
    p = policy_distribution(params, features)
    return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))


# --- checkpoints ---------------------------------------------------------------


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(params: PolicyParams, path: str | Path, train_config: dict | None = None) -> None:
    d = {
        "feature_dim": params.feature_dim,
        "action_count": params.action_count,
        "features": params.features.to_dict(),
        "weights": params.weights.reshape(-1).tolist(),
        "value_weights": params.value_weights.tolist(),
        "train_config_hash": config_hash(train_config or {}),
    }
    Path(path).write_text(json.dumps(d), "utf-8")


def load_checkpoint(path: str | Path) -> PolicyParams:
    d = json.loads(Path(path).read_text("utf-8"))
    features = FeatureConfig(**d.get("features", {}))
    w = np.asarray(d["weights"], dtype=np.float64).reshape(d["action_count"], d["feature_dim"])
    params = PolicyParams(w, np.asarray(d["value_weights"], dtype=np.float64), features)
    if features.dim != params.feature_dim:
        raise ValueError(f"feature layout needs dim {features.dim}, checkpoint has {params.feature_dim}")
    return params
