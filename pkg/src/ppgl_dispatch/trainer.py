"""Policy-gradient training of the dispatcher with GAE advantages."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cases import CaseRecord
from .env import ACTIONS, EnvState, GeneratorConfig, RewardConfig, SimConfig, case_seed, generate_case
from .gapp import DEFAULT_RUBRIC, GappRubric
from .orchestrator import run_episode
from .policy import FeatureConfig, PolicyParams, log_prob, sample_action, state_features

logger = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Trajectory:
    features: np.ndarray  # (T, feature_dim)
    actions: np.ndarray  # (T,) int
    rewards: np.ndarray  # (T,)
    log_probs: np.ndarray  # (T,)
    values: np.ndarray  # (T,)
    terminal: bool = True
    malformed: int = 0
    redundant: int = 0

    def __post_init__(self) -> None:
        if len(self.actions) == 0:
            raise ValueError("trajectory must be nonempty")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    def __len__(self) -> int:
        return len(self.actions)


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    bootstrap_value: float = 0.0,
    gamma: float = 0.95,
    lam: float = 0.97,
) -> np.ndarray:
    """Generalised advantage estimates by the backward recursion A_t = d_t + gamma*lam*A_{t+1}."""
    if len(rewards) != len(values):
        raise ValueError(f"length mismatch: {len(rewards)} rewards vs {len(values)} values")
    if len(rewards) == 0:
        raise ValueError("need at least one step")
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lambda must lie in [0, 1]")
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    next_v = np.append(v[1:], bootstrap_value)
    delta = r + gamma * next_v - v
    adv = np.empty_like(delta)
    acc = 0.0
    for t in range(len(delta) - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def standardize(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def surrogate_gradient(params: PolicyParams, features: np.ndarray, actions: np.ndarray, advantages: np.ndarray,
                       n_trajectories: int) -> np.ndarray:
    """(1/N) sum_t grad log pi(a_t | s_t) * A_t, vectorised over all steps of the batch."""
    logits = features @ params.weights.T
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    g = -p
    g[np.arange(len(actions)), actions] += 1.0
    return (g * advantages[:, None]).T @ features / n_trajectories


def entropy_gradient(params: PolicyParams, features: np.ndarray, n_trajectories: int) -> np.ndarray:
    """(1/N) sum_t d H(pi(.|s_t)) / d weights."""
    logits = features @ params.weights.T
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    h = -(p * logp).sum(axis=1, keepdims=True)
    return (-p * (logp + h)).T @ features / n_trajectories


def fit_value(features: np.ndarray, returns: np.ndarray, ridge: float = 1e-3) -> np.ndarray:
    d = features.shape[1]
    return np.linalg.solve(features.T @ features + ridge * np.eye(d), features.T @ returns)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 300
    batch_size: int = 16
    learning_rate: float = 1.0
    gae_lambda: float = 0.97
    seed: int = 0
    standardize_advantages: bool = True
    value_ridge: float = 1e-3
    entropy_coef: float = 0.1
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self) -> None:
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if "features" in d:
            d["features"] = FeatureConfig(**d["features"])
        return cls(**d)


def policy_gradient_step(
    params: PolicyParams,
    batch: Sequence[Trajectory],
    learning_rate: float = 0.05,
    gamma: float = 0.95,
    gae_lambda: float = 0.97,
    standardize_advantages: bool = True,
    value_ridge: float = 1e-3,
    entropy_coef: float = 0.0,
) -> tuple[PolicyParams, dict]:
    """One ascent step on the surrogate plus a least-squares refit of the value baseline."""
    if not batch:
        raise ValueError("batch must be nonempty")
    adv = np.concatenate([gae(tr.rewards, tr.values, 0.0, gamma, gae_lambda) for tr in batch])
    if standardize_advantages:
        adv = standardize(adv)
    feats = np.concatenate([tr.features for tr in batch])
    actions = np.concatenate([tr.actions for tr in batch])
    grad = surrogate_gradient(params, feats, actions, adv, len(batch))
    if entropy_coef:
        grad = grad + entropy_coef * entropy_gradient(params, feats, len(batch))
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("policy gradient contains non-finite values")
    returns = np.concatenate([discounted_returns(tr.rewards, gamma) for tr in batch])
    new = PolicyParams(
        params.weights + learning_rate * grad,
        fit_value(feats, returns, value_ridge),
        params.features,
    )
    steps = len(actions)
    diagnostics = {
        "grad_norm": float(np.linalg.norm(grad)),
        "mean_return": math.fsum(math.fsum(tr.rewards) for tr in batch) / len(batch),
        "mean_length": steps / len(batch),
        "malformed_rate": sum(tr.malformed for tr in batch) / steps,
        "redundancy_rate": sum(tr.redundant for tr in batch) / steps,
    }
    return new, diagnostics


def collect_trajectory(
    params: PolicyParams,
    case: CaseRecord,
    rng: np.random.Generator,
    reward_config: RewardConfig = RewardConfig(),
    sim_config: SimConfig = SimConfig(),
    rubric: GappRubric = DEFAULT_RUBRIC,
) -> Trajectory:
    feats: list[np.ndarray] = []
    acts: list[int] = []
    logps: list[float] = []
    vals: list[float] = []

    def select(state: EnvState):
        x = state_features(state, params.features)
        a = sample_action(params, x, rng)
        feats.append(x)
        acts.append(a)
        logps.append(log_prob(params, x, a))
        vals.append(params.value(x))
        return ACTIONS[a]

    _, trace = run_episode(case, select, reward_config, sim_config, rubric)
    return Trajectory(
        features=np.array(feats),
        actions=np.array(acts, dtype=np.int64),
        rewards=np.array(trace.rewards),
        log_probs=np.array(logps),
        values=np.array(vals),
        terminal=True,
        malformed=trace.malformed_calls,
        redundant=trace.redundant_calls,
    )


def episode_rng(seed: int, iteration: int, episode: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, iteration, episode]))


def train(
    sim_config: SimConfig = SimConfig(),
    reward_config: RewardConfig = RewardConfig(),
    train_config: TrainConfig = TrainConfig(),
    corpus: Sequence[CaseRecord] | None = None,
    generator_config: GeneratorConfig = GeneratorConfig(),
    rubric: GappRubric = DEFAULT_RUBRIC,
    initial: PolicyParams | None = None,
) -> tuple[PolicyParams, list[dict]]:
    """Train from zero weights (or ``initial``). Randomness depends only on ``train_config.seed``.

    Cases cycle through ``corpus`` when given, otherwise are generated from the seed.
    """
    params = initial.copy() if initial is not None else PolicyParams.zeros(train_config.features)
    curve: list[dict] = []
    episode = 0
    for it in range(train_config.iterations):
        batch = []
        for j in range(train_config.batch_size):
            if corpus:
                case = corpus[episode % len(corpus)]
            else:
                case = generate_case(case_seed(train_config.seed, episode), generator_config)
            batch.append(collect_trajectory(params, case, episode_rng(train_config.seed, it, j),
                                            reward_config, sim_config, rubric))
            episode += 1
        params, diag = policy_gradient_step(
            params,
            batch,
            train_config.learning_rate,
            reward_config.gamma,
            train_config.gae_lambda,
            train_config.standardize_advantages,
            train_config.value_ridge,
            train_config.entropy_coef,
        )
        record = {"iteration": it, **diag}
        curve.append(record)
        if it % 50 == 0 or it == train_config.iterations - 1:
            logger.info("iter %d mean_return %.3f mean_length %.2f malformed %.3f",
                        it, diag["mean_return"], diag["mean_length"], diag["malformed_rate"])
    return params, curve


def write_curve(curve: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in curve:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
