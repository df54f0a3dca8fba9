"""
Looking up genes and syndromes in the knowledge graph, and raising syndrome alerts
"""

from ppgl_dispatch.cases import LabPanel
from ppgl_dispatch.knowledge import catecholamine_phenotype, evaluate_alerts, load_graph

g = load_graph()
print(len(g), "nodes")

## A node comes back with its chain of broader categories
hit = g.retrieve("sdhb")
print(hit.node.entity, "->", " -> ".join(hit.ancestors))
print(hit.node.attributes)

## Unknown entities are reported as not found, never filled in
print(g.retrieve("BRCA1").to_dict())

## Alerts fire at or above the threshold, VHL before MEN2
for conf in ({"VHL": 0.9, "RET": 0.1}, {"VHL": 0.5, "RET": 0.5}, {"VHL": 0.49}):
    print(conf, [a.syndrome.value for a in evaluate_alerts(g, conf, 0.5)])
print(evaluate_alerts(g, {"RET": 0.8})[0].rationale)

## Plasma metabolites decide the catecholamine phenotype
for labs in ((2.0, 0.5, 0.3), (0.5, 3.0, 0.2), (0.4, 0.6, 2.5)):
    print(labs, catecholamine_phenotype(LabPanel(*labs)).value)
