"""Run a dispatcher on a case, assemble the evidence-backed report, and score policies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .cases import CaseRecord
from .env import (
    ACTIONS,
    COMPONENT_TASKS,
    MUTATION_TASKS,
    SCOREABLE_TASKS,
    Action,
    Call,
    EmitReport,
    EnvState,
    Observation,
    RewardConfig,
    RewardParts,
    SimConfig,
    SubTask,
    TASK_SWARM,
    finalize,
    reset,
    step,
)
from .gapp import COMPONENTS, DEFAULT_RUBRIC, GappRubric, GappScore, score_components, score_findings
from .knowledge import (
    DEFAULT_ALERT_THRESHOLD,
    KnowledgeGraph,
    RiskAlert,
    evaluate_alerts,
    load_graph,
)
from .policy import PolicyParams, greedy_action, sample_action, state_features

NOT_ASSESSED = "not assessed"
GREEDY = "greedy"
SAMPLE = "sample"


def _jsonable(v: Any) -> Any:
    return v.value if isinstance(v, Enum) else v


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    action: Action
    observation: Observation | None
    parts: RewardParts
    malformed: bool = False
    redundant: bool = False

    @property
    def reward(self) -> float:
        return self.parts.total


@dataclass(frozen=True)
class EpisodeTrace:
    case_id: str
    steps: tuple[StepRecord, ...]
    r_diag: float
    truncated: bool

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    @property
    def total_reward(self) -> float:
        return math.fsum(self.rewards)

    @property
    def tool_calls(self) -> int:
        return sum(isinstance(s.action, Call) for s in self.steps)

    @property
    def malformed_calls(self) -> int:
        return sum(s.malformed for s in self.steps)

    @property
    def redundant_calls(self) -> int:
        return sum(s.redundant for s in self.steps)


@dataclass(frozen=True)
class DiagnosticReport:
    case_id: str
    component_findings: Mapping[str, Any]  # value or None when not assessed
    gapp_score: GappScore
    mutation_confidences: Mapping[str, float]
    alerts: tuple[RiskAlert, ...]
    catecholamine_phenotype: Any
    lab_summary: str | None
    evidence_trail: tuple[tuple[int, Action, Observation | None], ...]
    sources: Mapping[str, int]  # finding key -> evidence step index
    narrative: str = field(default="", compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "component_findings": {
                c: (NOT_ASSESSED if self.component_findings.get(c) is None else _jsonable(self.component_findings[c]))
                for c in COMPONENTS
            },
            "gapp_score": self.gapp_score.to_dict(),
            "mutation_confidences": dict(self.mutation_confidences),
            "alerts": [a.to_dict() for a in self.alerts],
            "catecholamine_phenotype": _jsonable(self.catecholamine_phenotype) or NOT_ASSESSED,
            "lab_summary": self.lab_summary or NOT_ASSESSED,
            "evidence_trail": [
                {"step_index": i, "action": str(a), "observation": None if o is None else o.to_dict()}
                for i, a, o in self.evidence_trail
            ],
            "sources": dict(self.sources),
            "narrative": self.narrative,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.2f}"
    return str(_jsonable(v))


def _narrative(report: DiagnosticReport, graph: KnowledgeGraph) -> str:
    src = report.sources
    lines = ["Findings"]
    for c in COMPONENTS:
        v = report.component_findings.get(c)
        lines.append(f"  - {c}: {NOT_ASSESSED}" if v is None else f"  - {c}: {_fmt(v)} [evidence #{src[c]}]")
    if report.lab_summary is not None:
        lines.append(f"  - laboratory: {report.lab_summary} [evidence #{src['lab_summary']}]")
    score = report.gapp_score
    lines.append("GAPP")
    refs = ", ".join(f"#{src[c]}" for c in COMPONENTS if c in src)
    lines.append(
        f"  - total {score.total} ({score.grade.value})"
        + ("" if score.complete else ", incomplete: unassessed components contribute 0")
        + (f" [evidence {refs}]" if refs else "")
    )
    lines.append("Genotype Risk")
    if not report.mutation_confidences:
        lines.append(f"  - mutation status: {NOT_ASSESSED}")
    for gene, conf in report.mutation_confidences.items():
        line = f"  - {gene} confidence {conf:.3f} [evidence #{src[gene]}]"
        hit = graph.retrieve(gene)
        if hit.found and "metastatic_risk_range" in hit.node.attributes:
            line += f"; reported metastatic risk {hit.node.attributes['metastatic_risk_range']}"
        lines.append(line)
    lines.append("Alerts")
    if not report.alerts:
        lines.append("  - none")
    for a in report.alerts:
        lines.append(f"  - {a.syndrome.value} (trigger {a.trigger_entity}) [evidence #{src[a.trigger_entity]}]: {a.rationale}")
    lines.append("Evidence")
    for i, a, o in report.evidence_trail:
        if o is None:
            result = "report requested"
        elif o.error is not None:
            result = f"error: {o.error}"
        else:
            result = _fmt(o.payload)
        lines.append(f"  #{i} {a} -> {result}")
    return "\n".join(lines)


def build_report(
    state: EnvState,
    rubric: GappRubric = DEFAULT_RUBRIC,
    graph: KnowledgeGraph | None = None,
    alert_threshold: float = DEFAULT_ALERT_THRESHOLD,
) -> DiagnosticReport:
    """Assemble a report from the episode history; the latest answer per task wins."""
    graph = graph if graph is not None else _default_graph()
    latest: dict[SubTask, tuple[int, Any]] = {}
    for i, (_, obs) in enumerate(state.history):
        if obs is not None and obs.error is None:
            latest[obs.task] = (i, obs.payload)
    findings: dict[str, Any] = {}
    sources: dict[str, int] = {}
    for c, task in COMPONENT_TASKS.items():
        if task in latest:
            sources[c], findings[c] = latest[task]
        else:
            findings[c] = None
    confidences: dict[str, float] = {}
    for gene, task in MUTATION_TASKS.items():
        if task in latest:
            sources[gene], confidences[gene] = latest[task]
    lab_summary = None
    if SubTask.LAB_SUMMARY in latest:
        sources["lab_summary"], lab_summary = latest[SubTask.LAB_SUMMARY]
    report = DiagnosticReport(
        case_id=state.case.case_id,
        component_findings=findings,
        gapp_score=score_findings(findings, rubric),
        mutation_confidences=confidences,
        alerts=tuple(evaluate_alerts(graph, confidences, alert_threshold)),
        catecholamine_phenotype=findings["catecholamine_type"],
        lab_summary=lab_summary,
        evidence_trail=tuple((i, a, o) for i, (a, o) in enumerate(state.history)),
        sources=sources,
    )
    return replace(report, narrative=_narrative(report, graph))


_GRAPH: KnowledgeGraph | None = None


def _default_graph() -> KnowledgeGraph:
    global _GRAPH
    if _GRAPH is None:
        _GRAPH = load_graph()
    return _GRAPH


Selector = Callable[[EnvState], Action]


def run_episode(
    case: CaseRecord,
    select: Selector,
    reward_config: RewardConfig = RewardConfig(),
    sim_config: SimConfig = SimConfig(),
    rubric: GappRubric = DEFAULT_RUBRIC,
    graph: KnowledgeGraph | None = None,
    alert_threshold: float = DEFAULT_ALERT_THRESHOLD,
) -> tuple[DiagnosticReport, EpisodeTrace]:
    """Roll out ``select`` until done; the diagnostic reward is credited to the final step."""
    state = reset(case)
    records: list[StepRecord] = []
    while not state.done:
        action = select(state)
        res = step(state, action, reward_config, sim_config)
        records.append(StepRecord(state.step_index, action, res.observation, res.parts, res.malformed, res.redundant))
        state = res.state
    report = build_report(state, rubric, graph, alert_threshold)
    r_diag = finalize(state, report, reward_config, rubric)
    last = records[-1]
    records[-1] = replace(last, parts=replace(last.parts, diag=r_diag))
    return report, EpisodeTrace(case.case_id, tuple(records), r_diag, state.truncated)


def scripted_selector(tasks: Sequence[SubTask] = SCOREABLE_TASKS) -> Selector:
    """Call each task once with its owning swarm, then emit."""

    def select(state: EnvState) -> Action:
        for task in tasks:
            if task not in state.answered:
                return Call(TASK_SWARM[task], task)
        return EmitReport()

    return select


def policy_selector(policy: PolicyParams, mode: str = GREEDY, seed: int = 0) -> Selector:
    if mode not in (GREEDY, SAMPLE):
        raise ValueError(f"mode must be {GREEDY!r} or {SAMPLE!r}, got {mode!r}")
    rng = np.random.default_rng(seed)

    def select(state: EnvState) -> Action:
        x = state_features(state, policy.features)
        idx = greedy_action(policy, x) if mode == GREEDY else sample_action(policy, x, rng)
        return ACTIONS[idx]

    return select


def uniform_selector(seed: int = 0) -> Selector:
    rng = np.random.default_rng(seed)

    def select(state: EnvState) -> Action:
        return ACTIONS[int(rng.integers(len(ACTIONS)))]

    return select


def run_case(
    policy: PolicyParams,
    case: CaseRecord,
    mode: str = GREEDY,
    seed: int = 0,
    reward_config: RewardConfig = RewardConfig(),
    sim_config: SimConfig = SimConfig(),
    rubric: GappRubric = DEFAULT_RUBRIC,
    graph: KnowledgeGraph | None = None,
    alert_threshold: float = DEFAULT_ALERT_THRESHOLD,
) -> tuple[DiagnosticReport, EpisodeTrace]:
    return run_episode(
        case, policy_selector(policy, mode, seed), reward_config, sim_config, rubric, graph, alert_threshold
    )


# --- metrics -------------------------------------------------------------------


def mean(xs: Iterable[float]) -> float:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else math.nan


def mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    if len(pred) != len(truth):
        raise ValueError("length mismatch")
    return mean(abs(p - t) for p, t in zip(pred, truth))


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation; NaN when either side has zero variance or fewer than 2 pairs."""
    if len(x) != len(y):
        raise ValueError("length mismatch")
    if len(x) < 2:
        return math.nan
    mx, my = mean(x), mean(y)
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0 or syy == 0:
        return math.nan
    return math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)


def macro_f1(pred: Sequence[Any], truth: Sequence[Any]) -> float:
    """Macro-F1 over labels seen in truth or predictions. A None prediction is always wrong."""
    if len(pred) != len(truth):
        raise ValueError("length mismatch")
    labels = {t for t in truth} | {p for p in pred if p is not None}
    scores = []
    for label in sorted(labels, key=str):
        tp = sum(p == label and t == label for p, t in zip(pred, truth))
        fp = sum(p == label and t != label for p, t in zip(pred, truth))
        fn = sum(t == label and p != label for p, t in zip(pred, truth))
        scores.append(2 * tp / (2 * tp + fp + fn))
    return mean(scores)


def binary_f1(pred: Sequence[bool], truth: Sequence[bool]) -> float:
    """Positive-class F1; NaN when there are no positives on either side."""
    tp = sum(p and t for p, t in zip(pred, truth))
    fp = sum(p and not t for p, t in zip(pred, truth))
    fn = sum(t and not p for p, t in zip(pred, truth))
    return math.nan if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def _nan_to_none(v: float) -> float | None:
    return None if isinstance(v, float) and math.isnan(v) else v


def evaluate(
    policy: PolicyParams | Selector,
    corpus: Sequence[CaseRecord],
    rubric: GappRubric = DEFAULT_RUBRIC,
    reward_config: RewardConfig = RewardConfig(),
    sim_config: SimConfig = SimConfig(),
    mode: str = GREEDY,
    seed: int = 0,
    alert_threshold: float = DEFAULT_ALERT_THRESHOLD,
) -> dict[str, Any]:
    """Run every case and aggregate report and behaviour metrics.

    Undefined quantities (e.g. Pearson r of a constant predictor) are reported as None.
    """
    if not corpus:
        raise ValueError("cannot evaluate on an empty corpus")
    reports, traces = [], []
    for i, case in enumerate(corpus):
        if isinstance(policy, PolicyParams):
            sel = policy_selector(policy, mode, int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
        else:
            sel = policy
        rep, tr = run_episode(case, sel, reward_config, sim_config, rubric, alert_threshold=alert_threshold)
        reports.append(rep)
        traces.append(tr)
    return metrics_from(reports, traces, corpus, rubric, alert_threshold)


def metrics_from(
    reports: Sequence[DiagnosticReport],
    traces: Sequence[EpisodeTrace],
    corpus: Sequence[CaseRecord],
    rubric: GappRubric = DEFAULT_RUBRIC,
    alert_threshold: float = DEFAULT_ALERT_THRESHOLD,
) -> dict[str, Any]:
    truth_scores = [score_components(c.truth, rubric) for c in corpus]
    m: dict[str, Any] = {"n_cases": len(corpus)}
    m["gapp_total_mae"] = mae([r.gapp_score.total for r in reports], [t.total for t in truth_scores])
    m["macro_f1"] = {}
    for c, attr in (
        ("histologic_pattern", "histologic_pattern"),
        ("comedo_necrosis", "comedo_necrosis"),
        ("vascular_capsular_invasion", "vascular_capsular_invasion"),
    ):
        m["macro_f1"][c] = macro_f1([r.component_findings.get(c) for r in reports], [getattr(k.truth, attr) for k in corpus])
    for c, attr in (("cellularity", "cellularity_cells_per_unit"), ("ki67", "ki67_percent")):
        pairs = [
            (r.component_findings[c], getattr(k.truth, attr))
            for r, k in zip(reports, corpus)
            if r.component_findings.get(c) is not None
        ]
        m[f"{c}_assessed"] = len(pairs)
        m[f"{c}_mae"] = _nan_to_none(mae([p for p, _ in pairs], [t for _, t in pairs]))
        m[f"{c}_r"] = _nan_to_none(pearson_r([p for p, _ in pairs], [t for _, t in pairs]))
    per_gene = {}
    for gene, attr in (("SDHB", "sdhb"), ("VHL", "vhl"), ("RET", "ret")):
        pred = [r.mutation_confidences.get(gene, 0.0) >= alert_threshold for r in reports]
        per_gene[gene] = binary_f1(pred, [getattr(k.genotype, attr) for k in corpus])
    defined = [v for v in per_gene.values() if not math.isnan(v)]
    m["mutation_f1_per_gene"] = {g: _nan_to_none(v) for g, v in per_gene.items()}
    m["mutation_f1"] = mean(defined) if defined else None
    steps = sum(len(t.steps) for t in traces)
    m["mean_reward"] = mean(t.total_reward for t in traces)
    m["mean_r_diag"] = mean(t.r_diag for t in traces)
    m["mean_episode_length"] = mean(len(t.steps) for t in traces)
    m["mean_tool_calls"] = mean(t.tool_calls for t in traces)
    m["malformed_rate"] = sum(t.malformed_calls for t in traces) / steps
    m["redundant_rate"] = sum(t.redundant_calls for t in traces) / steps
    return m
