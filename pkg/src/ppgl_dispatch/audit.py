"""Append-only JSONL audit trail of dispatcher episodes, with replay checking."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from .cases import CaseRecord
from .env import Observation, RewardConfig, SimConfig, parse_action
from .gapp import DEFAULT_RUBRIC, GappRubric
from .orchestrator import EpisodeTrace, run_episode


class AuditError(ValueError):
    pass


def observation_digest(obs: Observation | None) -> str:
    if obs is None:
        return "none"
    blob = json.dumps(obs.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class AuditRecord:
    run_id: str
    case_id: str
    step_index: int
    action: str
    observation_digest: str
    reward_total: float
    reward_parts: dict[str, float]
    timestamp: int = -1  # logical counter, assigned by the log on append

    def check(self) -> None:
        keys = {"diag", "format_penalty", "redundancy_penalty"}
        if set(self.reward_parts) != keys:
            raise AuditError(f"reward_parts must have keys {sorted(keys)}")
        p = self.reward_parts
        if p["diag"] + p["format_penalty"] + p["redundancy_penalty"] != self.reward_total:
            raise AuditError(
                f"reward parts {p} do not sum to reward_total {self.reward_total} "
                f"(run {self.run_id}, case {self.case_id}, step {self.step_index})"
            )
        if not self.run_id or not self.case_id:
            raise AuditError("run_id and case_id must be non-empty")
        parse_action(self.action)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "case_id": self.case_id,
            "step_index": self.step_index,
            "action": self.action,
            "observation_digest": self.observation_digest,
            "reward_total": self.reward_total,
            "reward_parts": dict(self.reward_parts),
            "timestamp": self.timestamp,
        }


class AuditLog:
    """One writer per file. Existing content is read on open so appends stay consistent."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._last_step: dict[tuple[str, str], int] = {}
        self._counter = 0
        if self.path.exists():
            for rec in self._read():
                self._last_step[(rec.run_id, rec.case_id)] = rec.step_index
                self._counter = max(self._counter, rec.timestamp + 1)

    def _read(self) -> Iterator[AuditRecord]:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield AuditRecord(**json.loads(line))

    def append(self, record: AuditRecord) -> AuditRecord:
        record.check()
        key = (record.run_id, record.case_id)
        last = self._last_step.get(key)
        if last is not None and record.step_index <= last:
            raise AuditError(f"step_index {record.step_index} not after {last} for run {key[0]}, case {key[1]}")
        stamped = AuditRecord(**{**record.to_dict(), "timestamp": self._counter})
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(stamped.to_dict(), sort_keys=True) + "\n")
        self._last_step[key] = record.step_index
        self._counter += 1
        return stamped

    def replay(self, run_id: str, case_id: str) -> list[AuditRecord]:
        if not self.path.exists():
            return []
        recs = [r for r in self._read() if r.run_id == run_id and r.case_id == case_id]
        return sorted(recs, key=lambda r: r.step_index)


def records_for(run_id: str, trace: EpisodeTrace) -> list[AuditRecord]:
    return [
        AuditRecord(
            run_id=run_id,
            case_id=trace.case_id,
            step_index=s.step_index,
            action=str(s.action),
            observation_digest=observation_digest(s.observation),
            reward_total=s.parts.total,
            reward_parts=s.parts.to_dict(),
        )
        for s in trace.steps
    ]


def log_episode(log: AuditLog, run_id: str, trace: EpisodeTrace) -> list[AuditRecord]:
    return [log.append(r) for r in records_for(run_id, trace)]


def replay_episode(
    records: list[AuditRecord],
    case: CaseRecord,
    reward_config: RewardConfig = RewardConfig(),
    sim_config: SimConfig = SimConfig(),
    rubric: GappRubric = DEFAULT_RUBRIC,
) -> list[str]:
    """Re-execute the logged actions on ``case``; return a list of mismatches (empty when exact)."""
    actions = iter([parse_action(r.action) for r in records])

    def select(_state):
        try:
            return next(actions)
        except StopIteration:
            raise AuditError("logged episode ended before the environment finished") from None

    _, trace = run_episode(case, select, reward_config, sim_config, rubric)
    fresh = records_for(records[0].run_id if records else "replay", trace)
    problems = []
    if len(fresh) != len(records):
        problems.append(f"length {len(fresh)} on replay vs {len(records)} logged")
    for old, new in zip(records, fresh):
        for attr in ("step_index", "action", "observation_digest", "reward_total", "reward_parts"):
            if getattr(old, attr) != getattr(new, attr):
                problems.append(f"step {old.step_index}: {attr} {getattr(old, attr)!r} != {getattr(new, attr)!r}")
    return problems
