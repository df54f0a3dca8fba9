"""Entity / hypernym / description knowledge graph, syndrome alerts and phenotype rules."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from .cases import CatecholamineType, LabPanel

DEFAULT_ALERT_THRESHOLD = 0.5


class GraphError(ValueError):
    pass


class Syndrome(str, Enum):
    VHL = "VHLSyndrome"
    MEN2 = "MEN2"


# gene -> (syndrome, syndrome node entity); dict order fixes alert order
SYNDROME_GENES = {
    "VHL": (Syndrome.VHL, "VHL syndrome"),
    "RET": (Syndrome.MEN2, "MEN2"),
}


@dataclass(frozen=True)
class KnowledgeNode:
    entity: str
    hypernym: str = ""
    description: str = ""
    attributes: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity": self.entity,
            "hypernym": self.hypernym,
            "description": self.description,
            "attributes": dict(self.attributes),
        }


@dataclass(frozen=True)
class Retrieval:
    """Lookup result. ``node`` is None when the entity is unknown; nothing is invented."""

    query: str
    node: KnowledgeNode | None
    ancestors: tuple[str, ...] = ()

    @property
    def found(self) -> bool:
        return self.node is not None

    def to_dict(self) -> dict[str, Any]:
        if self.node is None:
            return {"query": self.query, "found": False}
        return {
            "query": self.query,
            "found": True,
            "node": self.node.to_dict(),
            "ancestors": list(self.ancestors),
        }


@dataclass(frozen=True)
class RiskAlert:
    syndrome: Syndrome
    trigger_entity: str
    confidence: float
    rationale: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if not self.rationale:
            raise ValueError("rationale must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "syndrome": self.syndrome.value,
            "trigger_entity": self.trigger_entity,
            "confidence": self.confidence,
            "rationale": self.rationale,
        }


class KnowledgeGraph:
    """Immutable after construction; referential integrity and acyclicity are checked up front."""

    def __init__(self, nodes: Iterable[KnowledgeNode]):
        by_key: dict[str, KnowledgeNode] = {}
        for node in nodes:
            if not node.entity:
                raise GraphError("node with empty entity name")
            key = node.entity.casefold()
            if key in by_key:
                raise GraphError(f"duplicate entity {node.entity!r}")
            by_key[key] = node
        for node in by_key.values():
            if node.hypernym and node.hypernym.casefold() not in by_key:
                raise GraphError(f"node {node.entity!r} names undefined hypernym {node.hypernym!r}")
        self._nodes = by_key
        self._chains = {key: self._walk(key) for key in by_key}

    def _walk(self, key: str) -> tuple[str, ...]:
        chain: list[str] = []
        seen = [key]
        node = self._nodes[key]
        while node.hypernym:
            nxt = node.hypernym.casefold()
            if nxt in seen:
                cycle = [self._nodes[k].entity for k in seen[seen.index(nxt):]] + [self._nodes[nxt].entity]
                raise GraphError(f"hypernym cycle: {' -> '.join(cycle)}")
            seen.append(nxt)
            node = self._nodes[nxt]
            chain.append(node.entity)
        return tuple(chain)

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, entity: str) -> bool:
        return entity.casefold() in self._nodes

    def nodes(self) -> list[KnowledgeNode]:
        return list(self._nodes.values())

    def retrieve(self, query_entity: str) -> Retrieval:
        key = query_entity.strip().casefold()
        node = self._nodes.get(key)
        if node is None:
            return Retrieval(query=query_entity, node=None)
        return Retrieval(query=query_entity, node=node, ancestors=self._chains[key])

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]]) -> KnowledgeGraph:
        nodes = []
        for r in records:
            try:
                nodes.append(
                    KnowledgeNode(
                        entity=r["entity"],
                        hypernym=r.get("hypernym", "") or "",
                        description=r.get("description", ""),
                        attributes={str(k): str(v) for k, v in (r.get("attributes") or {}).items()},
                    )
                )
            except KeyError:
                raise GraphError(f"node record without 'entity': {r!r}") from None
        return cls(nodes)


def load_graph(path: str | Path | None = None) -> KnowledgeGraph:
    """Load a JSON array of nodes; with no path, the packaged default graph."""
    if path is None:
        text = resources.files("ppgl_dispatch.data").joinpath("ppgl_graph_default.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    records = json.loads(text)
    if not isinstance(records, list):
        raise GraphError("graph file must hold a JSON array of nodes")
    return KnowledgeGraph.from_records(records)


def retrieve(graph: KnowledgeGraph, query_entity: str) -> Retrieval:
    return graph.retrieve(query_entity)


def evaluate_alerts(
    graph: KnowledgeGraph,
    mutation_confidences: Mapping[str, float],
    alert_threshold: float = DEFAULT_ALERT_THRESHOLD,
) -> list[RiskAlert]:
    """Syndrome alerts for genes whose confidence reaches the threshold (inclusive).

    Genes absent from ``mutation_confidences`` are treated as not assessed and never alert.
    """
    if not 0.0 < alert_threshold < 1.0:
        raise ValueError(f"alert_threshold must be in (0, 1), got {alert_threshold}")
    for gene, c in mutation_confidences.items():
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"confidence for {gene} must be in [0, 1], got {c}")
    alerts = []
    for gene, (syndrome, syndrome_entity) in SYNDROME_GENES.items():
        c = mutation_confidences.get(gene)
        if c is None or c < alert_threshold:
            continue
        parts = [f"{gene} mutation confidence {c:.3f} >= threshold {alert_threshold:.3f}."]
        for hit in (graph.retrieve(gene), graph.retrieve(syndrome_entity)):
            if hit.found:
                parts.append(f"[{hit.node.entity}] {hit.node.description}")
        alerts.append(RiskAlert(syndrome=syndrome, trigger_entity=gene, confidence=float(c), rationale=" ".join(parts)))
    return alerts


def syndromes_of(genotype) -> set[Syndrome]:
    """Syndromes implied by a true genotype (SDHB carries no syndrome alert)."""
    out = set()
    if genotype.vhl:
        out.add(Syndrome.VHL)
    if genotype.ret:
        out.add(Syndrome.MEN2)
    return out


def catecholamine_phenotype(labs: LabPanel) -> CatecholamineType:
    # metanephrine takes precedence; isolated 3-MT elevation counts as non-functioning
    if labs.metanephrine > 1.0:
        return CatecholamineType.EPINEPHRINE
    if labs.normetanephrine > 1.0:
        return CatecholamineType.NOREPINEPHRINE
    return CatecholamineType.NON_FUNCTIONING
