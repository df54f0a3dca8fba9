"""Dispatcher MDP: synthetic cases, simulated specialist swarms, shaped rewards.

The dispatcher issues ``Call(swarm, task)`` actions until it emits a report.
Per-step rewards carry only the format and redundancy penalties; the diagnostic
term is granted once, at the end, by :func:`finalize`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Mapping, Union

import numpy as np

from .cases import (
    CaseRecord,
    CatecholamineType,
    GappComponents,
    GenotypeProfile,
    HistologicPattern,
    LabPanel,
    StainStats,
)
from .gapp import COMPONENTS, DEFAULT_RUBRIC, GappRubric, score_components
from .knowledge import catecholamine_phenotype, syndromes_of

if TYPE_CHECKING:
    from .orchestrator import DiagnosticReport


class Swarm(str, Enum):
    WSI = "WSI"
    GENE = "Gene"
    TABLE = "Table"


class SubTask(str, Enum):
    HIST_PATTERN = "HistPattern"
    NECROSIS = "Necrosis"
    INVASION = "Invasion"
    CELLULARITY = "Cellularity"
    KI67 = "Ki67"
    MUT_CONF_SDHB = "MutConfSDHB"
    MUT_CONF_VHL = "MutConfVHL"
    MUT_CONF_RET = "MutConfRET"
    CATECHOLAMINE_PHENOTYPE = "CatecholaminePhenotype"
    LAB_SUMMARY = "LabSummary"

    @property
    def swarm(self) -> Swarm:
        return TASK_SWARM[self]


TASK_SWARM = {
    SubTask.HIST_PATTERN: Swarm.WSI,
    SubTask.NECROSIS: Swarm.WSI,
    SubTask.INVASION: Swarm.WSI,
    SubTask.CELLULARITY: Swarm.WSI,
    SubTask.KI67: Swarm.WSI,
    SubTask.MUT_CONF_SDHB: Swarm.GENE,
    SubTask.MUT_CONF_VHL: Swarm.GENE,
    SubTask.MUT_CONF_RET: Swarm.GENE,
    SubTask.CATECHOLAMINE_PHENOTYPE: Swarm.TABLE,
    SubTask.LAB_SUMMARY: Swarm.TABLE,
}

# task -> GAPP component it reports
COMPONENT_TASKS = {
    "histologic_pattern": SubTask.HIST_PATTERN,
    "cellularity": SubTask.CELLULARITY,
    "comedo_necrosis": SubTask.NECROSIS,
    "vascular_capsular_invasion": SubTask.INVASION,
    "ki67": SubTask.KI67,
    "catecholamine_type": SubTask.CATECHOLAMINE_PHENOTYPE,
}

MUTATION_TASKS = {
    "SDHB": SubTask.MUT_CONF_SDHB,
    "VHL": SubTask.MUT_CONF_VHL,
    "RET": SubTask.MUT_CONF_RET,
}

# tasks that r_diag can reward: six GAPP components plus the two syndrome genes
SCOREABLE_TASKS = (*COMPONENT_TASKS.values(), SubTask.MUT_CONF_VHL, SubTask.MUT_CONF_RET)


@dataclass(frozen=True)
class Call:
    swarm: Swarm
    task: SubTask

    @property
    def well_formed(self) -> bool:
        return TASK_SWARM[self.task] is self.swarm

    def __str__(self) -> str:
        return f"Call({self.swarm.value},{self.task.value})"


@dataclass(frozen=True)
class EmitReport:
    def __str__(self) -> str:
        return "EmitReport"


Action = Union[Call, EmitReport]

# fixed action indexing: every (swarm, task) pair, then EmitReport last
ACTIONS: tuple[Action, ...] = (*(Call(s, t) for s in Swarm for t in SubTask), EmitReport())
ACTION_INDEX = {a: i for i, a in enumerate(ACTIONS)}


def parse_action(text: str) -> Action:
    text = text.strip()
    if text == "EmitReport":
        return EmitReport()
    if text.startswith("Call(") and text.endswith(")"):
        swarm, task = text[5:-1].split(",")
        return Call(Swarm(swarm.strip()), SubTask(task.strip()))
    raise ValueError(f"unparseable action {text!r}")


@dataclass(frozen=True)
class Observation:
    """A swarm's answer. ``error`` is set (and ``payload`` None) for malformed calls."""

    task: SubTask
    payload: Any
    noise_seed_used: int
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        payload = self.payload.value if isinstance(self.payload, Enum) else self.payload
        return {
            "task": self.task.value,
            "payload": payload,
            "noise_seed_used": self.noise_seed_used,
            "error": self.error,
        }


@dataclass(frozen=True)
class NoiseConfig:
    p_err: float = 0.1
    cellularity_sigma: float = 15.0
    ki67_sigma: float = 0.5
    # Beta(a, b) for mutation confidence; None means noiseless 1.0 / 0.0
    beta_present: tuple[float, float] | None = (8.0, 2.0)
    beta_absent: tuple[float, float] | None = (2.0, 8.0)

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_err <= 1.0:
            raise ValueError(f"p_err must be in [0, 1], got {self.p_err}")
        if self.cellularity_sigma < 0 or self.ki67_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")

    @classmethod
    def zero(cls) -> NoiseConfig:
        return cls(p_err=0.0, cellularity_sigma=0.0, ki67_sigma=0.0, beta_present=None, beta_absent=None)


@dataclass(frozen=True)
class SimConfig:
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    max_steps: int = 20

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SimConfig:
        d = dict(d)
        noise = d.pop("noise", {})
        if "beta_present" in noise and noise["beta_present"] is not None:
            noise["beta_present"] = tuple(noise["beta_present"])
        if "beta_absent" in noise and noise["beta_absent"] is not None:
            noise["beta_absent"] = tuple(noise["beta_absent"])
        return cls(noise=NoiseConfig(**noise), **d)


@dataclass(frozen=True)
class RewardConfig:
    lambda1: float = 0.1
    lambda2: float = 0.2
    gamma: float = 0.95
    diag_weights: Mapping[str, float] = field(
        default_factory=lambda: {**{c: 0.125 for c in COMPONENTS}, "alerts": 0.25}
    )

    def __post_init__(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        keys = set(COMPONENTS) | {"alerts"}
        if set(self.diag_weights) != keys:
            raise ValueError(f"diag_weights must have exactly the keys {sorted(keys)}")
        if any(w < 0 for w in self.diag_weights.values()):
            raise ValueError("diag_weights must be non-negative")
        if abs(math.fsum(self.diag_weights.values()) - 1.0) > 1e-9:
            raise ValueError("diag_weights must sum to 1")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RewardConfig:
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "gamma": self.gamma,
            "diag_weights": dict(self.diag_weights),
        }


@dataclass(frozen=True)
class RewardParts:
    """Logged reward decomposition; penalties are stored as negative numbers."""

    diag: float = 0.0
    format_penalty: float = 0.0
    redundancy_penalty: float = 0.0

    @property
    def total(self) -> float:
        return self.diag + self.format_penalty + self.redundancy_penalty

    def to_dict(self) -> dict[str, float]:
        return {"diag": self.diag, "format_penalty": self.format_penalty, "redundancy_penalty": self.redundancy_penalty}


@dataclass(frozen=True)
class EnvState:
    case: CaseRecord
    answered: frozenset[SubTask] = frozenset()
    history: tuple[tuple[Action, Observation | None], ...] = ()
    step_index: int = 0
    done: bool = False
    truncated: bool = False


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    reward: float
    parts: RewardParts
    observation: Observation | None
    malformed: bool = False  # capability mismatch, whatever lambda1 is
    redundant: bool = False  # task already answered, whatever lambda2 is


class EpisodeDoneError(RuntimeError):
    pass


def reset(case: CaseRecord) -> EnvState:
    return EnvState(case=case)


def noise_seed(case_seed: int, step_index: int) -> int:
    return int(np.random.SeedSequence([case_seed, step_index]).generate_state(1)[0])


def _flip(rng: np.random.Generator, value, choices, p_err: float):
    if p_err > 0 and rng.random() < p_err:
        wrong = [c for c in choices if c != value]
        return wrong[int(rng.integers(len(wrong)))]
    return value


def observe(case: CaseRecord, task: SubTask, noise: NoiseConfig, seed: int) -> Observation:
    """Noisy answer of the responsible swarm; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    t = case.truth
    if task is SubTask.HIST_PATTERN:
        payload = _flip(rng, t.histologic_pattern, list(HistologicPattern), noise.p_err)
    elif task is SubTask.NECROSIS:
        payload = _flip(rng, t.comedo_necrosis, [False, True], noise.p_err)
    elif task is SubTask.INVASION:
        payload = _flip(rng, t.vascular_capsular_invasion, [False, True], noise.p_err)
    elif task is SubTask.CELLULARITY:
        v = t.cellularity_cells_per_unit
        if noise.cellularity_sigma > 0:
            v = max(0.0, v + rng.normal(0.0, noise.cellularity_sigma))
        payload = float(v)
    elif task is SubTask.KI67:
        v = t.ki67_percent
        if noise.ki67_sigma > 0:
            v = min(100.0, max(0.0, v + rng.normal(0.0, noise.ki67_sigma)))
        payload = float(v)
    elif task in (SubTask.MUT_CONF_SDHB, SubTask.MUT_CONF_VHL, SubTask.MUT_CONF_RET):
        present = {
            SubTask.MUT_CONF_SDHB: case.genotype.sdhb,
            SubTask.MUT_CONF_VHL: case.genotype.vhl,
            SubTask.MUT_CONF_RET: case.genotype.ret,
        }[task]
        ab = noise.beta_present if present else noise.beta_absent
        payload = (1.0 if present else 0.0) if ab is None else float(rng.beta(*ab))
    elif task is SubTask.CATECHOLAMINE_PHENOTYPE:
        payload = _flip(rng, t.catecholamine_type, list(CatecholamineType), noise.p_err)
    elif task is SubTask.LAB_SUMMARY:
        labs = case.labs
        payload = (
            f"metanephrine {labs.metanephrine:.2f}x ULN; normetanephrine {labs.normetanephrine:.2f}x ULN; "
            f"3-methoxytyramine {labs.methoxytyramine_3:.2f}x ULN"
        )
    else:  # pragma: no cover
        raise ValueError(task)
    return Observation(task=task, payload=payload, noise_seed_used=seed)


def step(
    state: EnvState,
    action: Action,
    reward_config: RewardConfig = RewardConfig(),
    sim_config: SimConfig = SimConfig(),
) -> StepResult:
    if state.done:
        raise EpisodeDoneError("cannot step a finished episode")
    seed = noise_seed(state.case.seed, state.step_index)
    answered = state.answered
    done = malformed = redundant = False
    if isinstance(action, EmitReport):
        obs = None
        parts = RewardParts()
        done = True
    elif not action.well_formed:
        obs = Observation(
            task=action.task,
            payload=None,
            noise_seed_used=seed,
            error=f"{action.swarm.value} swarm cannot perform {action.task.value}",
        )
        parts = RewardParts(format_penalty=-reward_config.lambda1)
        malformed = True
    else:
        obs = observe(state.case, action.task, sim_config.noise, seed)
        redundant = action.task in answered
        parts = RewardParts(redundancy_penalty=-reward_config.lambda2 if redundant else 0.0)
        answered = answered | {action.task}
    step_index = state.step_index + 1
    truncated = not done and step_index >= sim_config.max_steps
    new_state = EnvState(
        case=state.case,
        answered=answered,
        history=state.history + ((action, obs),),
        step_index=step_index,
        done=done or truncated,
        truncated=truncated,
    )
    return StepResult(new_state, parts.total, parts, obs, malformed, redundant)


def finalize(
    state: EnvState,
    report: DiagnosticReport,
    reward_config: RewardConfig = RewardConfig(),
    rubric: GappRubric = DEFAULT_RUBRIC,
) -> float:
    """Weighted match of reported GAPP points and syndrome alerts against the case truth."""
    if not state.done:
        raise ValueError("finalize requires a finished episode")
    truth_points = score_components(state.case.truth, rubric).per_component
    reported = getattr(getattr(report, "gapp_score", None), "per_component", None) or {}
    w = reward_config.diag_weights
    r = 0.0
    for c in COMPONENTS:
        p = reported.get(c)
        if p is not None and p == truth_points[c]:
            r += w[c]
    alerts = getattr(report, "alerts", None)
    if alerts is not None and {a.syndrome for a in alerts} == syndromes_of(state.case.genotype):
        r += w["alerts"]
    return min(1.0, max(0.0, r))


# --- synthetic cohort ---------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    sdhb_prior: float = 0.10
    vhl_prior: float = 0.073
    ret_prior: float = 0.063
    coupling_strength: float = 0.8
    phenotype_prior: tuple[float, float, float] = (0.3, 0.5, 0.2)  # epi, norepi, non-functioning
    pattern_prior: tuple[float, float, float] = (0.5, 0.3, 0.2)
    necrosis_rate: float = 0.2
    invasion_rate: float = 0.3
    cellularity_range: tuple[float, float] = (60.0, 400.0)
    ki67_scale: float = 1.5
    sdhb_aggression: float = 2.0
    isolated_3mt_rate: float = 0.2

    def __post_init__(self) -> None:
        priors = (self.sdhb_prior, self.vhl_prior, self.ret_prior)
        if any(not 0.0 <= p <= 1.0 for p in priors) or sum(priors) > 1.0:
            raise ValueError("genotype priors must lie in [0, 1] and sum to at most 1")
        for name in ("coupling_strength", "necrosis_rate", "invasion_rate", "isolated_3mt_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("phenotype_prior", "pattern_prior"):
            p = getattr(self, name)
            if len(p) != 3 or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be 3 non-negative weights summing to 1")
        lo, hi = self.cellularity_range
        if not 0 <= lo < hi:
            raise ValueError("cellularity_range must satisfy 0 <= low < high")
        if self.ki67_scale <= 0 or self.sdhb_aggression < 1:
            raise ValueError("ki67_scale must be > 0 and sdhb_aggression >= 1")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> GeneratorConfig:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _labs_for(rng: np.random.Generator, phenotype: CatecholamineType, cfg: GeneratorConfig) -> LabPanel:
    u = rng.uniform
    if phenotype is CatecholamineType.EPINEPHRINE:
        return LabPanel(u(1.2, 6.0), u(0.3, 5.0), u(0.1, 0.9))
    if phenotype is CatecholamineType.NOREPINEPHRINE:
        return LabPanel(u(0.1, 0.95), u(1.2, 8.0), u(0.1, 1.5))
    mt = u(1.2, 4.0) if rng.random() < cfg.isolated_3mt_rate else u(0.1, 0.9)
    return LabPanel(u(0.1, 0.95), u(0.1, 0.95), mt)


def generate_case(seed: int, config: GeneratorConfig = GeneratorConfig(), case_id: str | None = None) -> CaseRecord:
    """Deterministic synthetic patient for ``seed``."""
    rng = np.random.default_rng(seed)
    u = rng.random()
    sdhb = u < config.sdhb_prior
    vhl = config.sdhb_prior <= u < config.sdhb_prior + config.vhl_prior
    ret = config.sdhb_prior + config.vhl_prior <= u < config.sdhb_prior + config.vhl_prior + config.ret_prior
    genotype = GenotypeProfile(sdhb=bool(sdhb), vhl=bool(vhl), ret=bool(ret))

    phenotypes = list(CatecholamineType)
    coupled = rng.random() < config.coupling_strength
    if vhl and coupled:
        phenotype = CatecholamineType.NOREPINEPHRINE
    elif ret and coupled:
        phenotype = CatecholamineType.EPINEPHRINE
    else:
        phenotype = phenotypes[int(rng.choice(3, p=config.phenotype_prior))]
    labs = _labs_for(rng, phenotype, config)
    assert catecholamine_phenotype(labs) is phenotype

    boost = config.sdhb_aggression if sdhb else 1.0
    truth = GappComponents(
        histologic_pattern=list(HistologicPattern)[int(rng.choice(3, p=config.pattern_prior))],
        cellularity_cells_per_unit=float(rng.uniform(*config.cellularity_range)),
        comedo_necrosis=bool(rng.random() < min(1.0, config.necrosis_rate * boost)),
        vascular_capsular_invasion=bool(rng.random() < min(1.0, config.invasion_rate * boost)),
        ki67_percent=float(min(100.0, rng.gamma(1.5, config.ki67_scale * boost))),
        catecholamine_type=phenotype,
    )
    stain = StainStats(
        mean_l=float(rng.normal(65.0, 8.0)),
        mean_a=float(rng.normal(20.0, 6.0)),
        mean_b=float(rng.normal(-10.0, 6.0)),
        std_l=float(rng.uniform(8.0, 18.0)),
        std_a=float(rng.uniform(4.0, 12.0)),
        std_b=float(rng.uniform(3.0, 9.0)),
    )
    return CaseRecord(
        case_id=case_id if case_id is not None else f"case-{seed}",
        truth=truth,
        genotype=genotype,
        labs=labs,
        stain_shift=stain,
        seed=int(seed),
    )


def case_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def generate_corpus(n: int, seed: int, config: GeneratorConfig = GeneratorConfig()) -> list[CaseRecord]:
    return [generate_case(case_seed(seed, i), config, case_id=f"case-{i:05d}") for i in range(n)]
