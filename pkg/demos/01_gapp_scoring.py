"""
Scoring GAPP components with the packaged rubric, and swapping in another rubric
"""

from dataclasses import replace

from ppgl_dispatch.cases import CatecholamineType, GappComponents, HistologicPattern
from ppgl_dispatch.gapp import DEFAULT_RUBRIC, GappRubric, score_components, score_findings

## A low-risk tumour: nested pattern, sparse cells, no necrosis or invasion
calm = GappComponents(
    histologic_pattern=HistologicPattern.ZELLBALLEN,
    cellularity_cells_per_unit=120.0,
    comedo_necrosis=False,
    vascular_capsular_invasion=False,
    ki67_percent=0.6,
    catecholamine_type=CatecholamineType.EPINEPHRINE,
)
print(score_components(calm).to_dict())

## Push each component up a band and watch the total climb
busy = replace(calm, histologic_pattern=HistologicPattern.PSEUDOROSETTE, cellularity_cells_per_unit=260.0,
               comedo_necrosis=True, ki67_percent=4.2, catecholamine_type=CatecholamineType.NOREPINEPHRINE)
s = score_components(busy)
print(s.total, s.grade.value, "of a possible", DEFAULT_RUBRIC.maximum)

## Values exactly on a break land in the higher band
for cells in (149.9, 150.0, 250.0):
    print(cells, score_components(replace(calm, cellularity_cells_per_unit=cells)).per_component["cellularity"])

## Partial findings: unassessed components stay None and add nothing
print(score_findings({"comedo_necrosis": True, "ki67": 2.0}).to_dict())

## Rubrics are data; a variant weighting necrosis at 3 points needs no code change
d = DEFAULT_RUBRIC.to_dict()
d.update(necrosis_points=3, documented_maximum=10)
heavy = GappRubric.from_dict(d)
print(score_components(busy, heavy).total)
