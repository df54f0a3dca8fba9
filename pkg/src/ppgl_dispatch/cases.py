"""Shared domain types and the line-delimited JSON corpus format."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable


class HistologicPattern(str, Enum):
    ZELLBALLEN = "Zellballen"
    LARGE_IRREGULAR_NESTS = "LargeIrregularNests"
    PSEUDOROSETTE = "Pseudorosette"


class CatecholamineType(str, Enum):
    EPINEPHRINE = "EpinephrineType"
    NOREPINEPHRINE = "NorepinephrineType"
    NON_FUNCTIONING = "NonFunctioning"


class CorpusError(ValueError):
    """A corpus record is malformed or violates a type invariant."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.detail = message
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


def _require(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise CorpusError(message, field=field)


def _finite(x: float) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


@dataclass(frozen=True)
class GappComponents:
    """The six GAPP findings, with cellularity and Ki-67 kept continuous."""

    histologic_pattern: HistologicPattern
    cellularity_cells_per_unit: float
    comedo_necrosis: bool
    vascular_capsular_invasion: bool
    ki67_percent: float
    catecholamine_type: CatecholamineType

    def __post_init__(self) -> None:
        for name, enum in (
            ("histologic_pattern", HistologicPattern),
            ("catecholamine_type", CatecholamineType),
        ):
            try:
                object.__setattr__(self, name, enum(getattr(self, name)))
            except ValueError:
                raise CorpusError(f"unknown value {getattr(self, name)!r}", field=name) from None
        c = self.cellularity_cells_per_unit
        _require(_finite(c) and c >= 0, "cellularity_cells_per_unit", f"must be finite and >= 0, got {c!r}")
        k = self.ki67_percent
        _require(_finite(k) and 0 <= k <= 100, "ki67_percent", f"must be in [0, 100], got {k!r}")
        _require(isinstance(self.comedo_necrosis, bool), "comedo_necrosis", "must be a boolean")
        _require(
            isinstance(self.vascular_capsular_invasion, bool),
            "vascular_capsular_invasion",
            "must be a boolean",
        )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["histologic_pattern"] = self.histologic_pattern.value
        d["catecholamine_type"] = self.catecholamine_type.value
        return d


@dataclass(frozen=True)
class GenotypeProfile:
    sdhb: bool = False
    vhl: bool = False
    ret: bool = False

    def __post_init__(self) -> None:
        for name in ("sdhb", "vhl", "ret"):
            _require(isinstance(getattr(self, name), bool), name, "must be a boolean")


@dataclass(frozen=True)
class LabPanel:
    """Plasma metabolites as multiples of the upper limit of normal."""

    metanephrine: float
    normetanephrine: float
    methoxytyramine_3: float

    def __post_init__(self) -> None:
        for name in ("metanephrine", "normetanephrine", "methoxytyramine_3"):
            v = getattr(self, name)
            _require(_finite(v) and v >= 0, name, f"must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class StainStats:
    """Per-channel LAB mean and standard deviation over tissue pixels."""

    mean_l: float
    mean_a: float
    mean_b: float
    std_l: float
    std_a: float
    std_b: float

    def __post_init__(self) -> None:
        for name in ("mean_l", "mean_a", "mean_b"):
            _require(_finite(getattr(self, name)), name, "must be finite")
        # zero is representable (constant source regions); targets must be strictly positive
        for name in ("std_l", "std_a", "std_b"):
            v = getattr(self, name)
            _require(_finite(v) and v >= 0, name, f"must be finite and >= 0, got {v!r}")

    def require_positive_std(self) -> StainStats:
        for name in ("std_l", "std_a", "std_b"):
            v = getattr(self, name)
            _require(v > 0, name, f"must be > 0, got {v!r}")
        return self

    @property
    def mean(self) -> tuple[float, float, float]:
        return (self.mean_l, self.mean_a, self.mean_b)

    @property
    def std(self) -> tuple[float, float, float]:
        return (self.std_l, self.std_a, self.std_b)


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    truth: GappComponents
    genotype: GenotypeProfile
    labs: LabPanel
    stain_shift: StainStats
    seed: int

    def __post_init__(self) -> None:
        _require(isinstance(self.case_id, str) and self.case_id != "", "case_id", "must be a non-empty string")
        _require(
            isinstance(self.seed, int) and not isinstance(self.seed, bool) and self.seed >= 0,
            "seed",
            f"must be an unsigned integer, got {self.seed!r}",
        )
        self.stain_shift.require_positive_std()

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "truth": self.truth.to_dict(),
            "genotype": asdict(self.genotype),
            "labs": asdict(self.labs),
            "stain_shift": asdict(self.stain_shift),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CaseRecord:
        """Build a record from its JSON form, raising CorpusError naming the bad field."""
        if not isinstance(d, dict):
            raise CorpusError("record must be a JSON object")
        expected = {"case_id", "truth", "genotype", "labs", "stain_shift", "seed"}
        missing = expected - d.keys()
        if missing:
            raise CorpusError("missing key", field=sorted(missing)[0])
        extra = d.keys() - expected
        if extra:
            raise CorpusError("unexpected key", field=sorted(extra)[0])
        parts = {}
        for key, typ in (
            ("truth", GappComponents),
            ("genotype", GenotypeProfile),
            ("labs", LabPanel),
            ("stain_shift", StainStats),
        ):
            sub = d[key]
            if not isinstance(sub, dict):
                raise CorpusError("must be an object", field=key)
            try:
                parts[key] = typ(**sub)
            except TypeError as exc:
                raise CorpusError(str(exc), field=key) from None
        return cls(case_id=d["case_id"], seed=d["seed"], **parts)


def save_corpus(cases: Iterable[CaseRecord], path: str | Path) -> None:
    """Write one JSON object per line. Floats keep full repr precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            fh.write(json.dumps(case.to_dict(), sort_keys=True, allow_nan=False))
            fh.write("\n")


def load_corpus(path: str | Path) -> list[CaseRecord]:
    cases: list[CaseRecord] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON ({exc.msg})", line=lineno) from None
            try:
                case = CaseRecord.from_dict(raw)
            except CorpusError as exc:
                raise CorpusError(exc.detail, line=lineno, field=exc.field) from None
            if case.case_id in seen:
                raise CorpusError(
                    f"duplicate case_id {case.case_id!r} (first on line {seen[case.case_id]})",
                    line=lineno,
                    field="case_id",
                )
            seen[case.case_id] = lineno
            cases.append(case)
    return cases
