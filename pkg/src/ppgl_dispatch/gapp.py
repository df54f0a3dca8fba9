"""GAPP point scoring: component findings -> per-component points, total, grade."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from .cases import CatecholamineType, GappComponents, HistologicPattern

COMPONENTS = (
    "histologic_pattern",
    "cellularity",
    "comedo_necrosis",
    "vascular_capsular_invasion",
    "ki67",
    "catecholamine_type",
)

# component name -> GappComponents attribute
COMPONENT_FIELDS = {
    "histologic_pattern": "histologic_pattern",
    "cellularity": "cellularity_cells_per_unit",
    "comedo_necrosis": "comedo_necrosis",
    "vascular_capsular_invasion": "vascular_capsular_invasion",
    "ki67": "ki67_percent",
    "catecholamine_type": "catecholamine_type",
}


class Grade(str, Enum):
    WELL = "WellDifferentiated"
    MODERATE = "ModeratelyDifferentiated"
    POOR = "PoorlyDifferentiated"


class RubricError(ValueError):
    pass


def _band(value: float, breaks: Sequence[float], points: Sequence[int]) -> int:
    # a value exactly on a break falls in the higher band
    idx = sum(1 for b in breaks if value >= b)
    return points[idx]


@dataclass(frozen=True)
class GappRubric:
    pattern_points: Mapping[HistologicPattern, int]
    cellularity_breaks: tuple[float, float]
    cellularity_points: tuple[int, int, int]
    necrosis_points: int
    invasion_points: int
    ki67_breaks: tuple[float, float]
    ki67_points: tuple[int, int, int]
    catecholamine_points: Mapping[CatecholamineType, int]
    grade_breaks: tuple[int, int]
    documented_maximum: int | None = None
    version: str = ""

    def __post_init__(self) -> None:
        try:
            pattern = {HistologicPattern(k): v for k, v in self.pattern_points.items()}
            catechol = {CatecholamineType(k): v for k, v in self.catecholamine_points.items()}
        except ValueError as exc:
            raise RubricError(str(exc)) from None
        if set(pattern) != set(HistologicPattern):
            raise RubricError("pattern_points must cover every histologic pattern")
        if set(catechol) != set(CatecholamineType):
            raise RubricError("catecholamine_points must cover every catecholamine type")
        object.__setattr__(self, "pattern_points", pattern)
        object.__setattr__(self, "catecholamine_points", catechol)
        for name in ("cellularity_breaks", "cellularity_points", "ki67_breaks", "ki67_points", "grade_breaks"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name, n in (("cellularity_breaks", 2), ("ki67_breaks", 2), ("grade_breaks", 2),
                        ("cellularity_points", 3), ("ki67_points", 3)):
            if len(getattr(self, name)) != n:
                raise RubricError(f"{name} must have {n} entries")
        for name in ("cellularity_breaks", "ki67_breaks", "grade_breaks"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise RubricError(f"{name} must be strictly ascending, got {(lo, hi)}")
        all_points = [
            *pattern.values(), *catechol.values(), *self.cellularity_points, *self.ki67_points,
            self.necrosis_points, self.invasion_points,
        ]
        if any(not isinstance(p, int) or isinstance(p, bool) or p < 0 for p in all_points):
            raise RubricError("all point values must be non-negative integers")
        if self.documented_maximum is not None and self.maximum != self.documented_maximum:
            raise RubricError(
                f"rubric maximum {self.maximum} differs from documented maximum {self.documented_maximum}"
            )

    @property
    def maximum(self) -> int:
        return (
            max(self.pattern_points.values())
            + max(self.cellularity_points)
            + self.necrosis_points
            + self.invasion_points
            + max(self.ki67_points)
            + max(self.catecholamine_points.values())
        )

    def points(self, component: str, value: Any) -> int:
        """Points awarded for a single component value."""
        if component == "histologic_pattern":
            return self.pattern_points[HistologicPattern(value)]
        if component == "cellularity":
            return _band(value, self.cellularity_breaks, self.cellularity_points)
        if component == "comedo_necrosis":
            return self.necrosis_points if value else 0
        if component == "vascular_capsular_invasion":
            return self.invasion_points if value else 0
        if component == "ki67":
            return _band(value, self.ki67_breaks, self.ki67_points)
        if component == "catecholamine_type":
            return self.catecholamine_points[CatecholamineType(value)]
        raise KeyError(component)

    def grade(self, total: int) -> Grade:
        lo, hi = self.grade_breaks
        if total >= hi:
            return Grade.POOR
        if total >= lo:
            return Grade.MODERATE
        return Grade.WELL

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "pattern_points": {k.value: v for k, v in self.pattern_points.items()},
            "cellularity_breaks": list(self.cellularity_breaks),
            "cellularity_points": list(self.cellularity_points),
            "necrosis_points": self.necrosis_points,
            "invasion_points": self.invasion_points,
            "ki67_breaks": list(self.ki67_breaks),
            "ki67_points": list(self.ki67_points),
            "catecholamine_points": {k.value: v for k, v in self.catecholamine_points.items()},
            "grade_breaks": list(self.grade_breaks),
            "documented_maximum": self.documented_maximum,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> GappRubric:
        try:
            return cls(**d)
        except TypeError as exc:
            raise RubricError(str(exc)) from None


def load_rubric(path: str | Path | None = None) -> GappRubric:
    """Load a rubric JSON file; with no path, the packaged default."""
    if path is None:
        text = resources.files("ppgl_dispatch.data").joinpath("gapp_rubric_default.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return GappRubric.from_dict(json.loads(text))


DEFAULT_RUBRIC = load_rubric()


@dataclass(frozen=True)
class GappScore:
    """Per-component points (None where a component was not assessed), total and grade."""

    per_component: Mapping[str, int | None]
    total: int
    grade: Grade

    @property
    def complete(self) -> bool:
        return all(self.per_component.get(c) is not None for c in COMPONENTS)

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_component": {c: self.per_component.get(c) for c in COMPONENTS},
            "total": self.total,
            "grade": self.grade.value,
        }


def score_findings(findings: Mapping[str, Any], rubric: GappRubric = DEFAULT_RUBRIC) -> GappScore:
    """Score a possibly incomplete set of findings keyed by component name.

    Missing or None components score as None and contribute nothing to the total.
    """
    per = {}
    for c in COMPONENTS:
        v = findings.get(c)
        per[c] = None if v is None else rubric.points(c, v)
    total = sum(p for p in per.values() if p is not None)
    return GappScore(per_component=per, total=total, grade=rubric.grade(total))


def findings_of(components: GappComponents) -> dict[str, Any]:
    return {c: getattr(components, f) for c, f in COMPONENT_FIELDS.items()}


def score_components(components: GappComponents, rubric: GappRubric = DEFAULT_RUBRIC) -> GappScore:
    if not isinstance(components, GappComponents):
        raise TypeError(f"expected GappComponents, got {type(components).__name__}")
    return score_findings(findings_of(components), rubric)


def gapp_total_mae(predicted: Sequence[GappScore], truth: Sequence[GappScore]) -> float:
    if len(predicted) != len(truth):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs {len(truth)} truth")
    if not predicted:
        raise ValueError("cannot compute MAE of empty lists")
    return sum(abs(p.total - t.total) for p, t in zip(predicted, truth)) / len(predicted)
