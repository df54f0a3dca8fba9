import json

import pytest
from hypothesis import given, settings, strategies as st

from ppgl_dispatch.cases import (
    CaseRecord,
    CatecholamineType,
    CorpusError,
    GappComponents,
    GenotypeProfile,
    HistologicPattern,
    LabPanel,
    StainStats,
    load_corpus,
    save_corpus,
)
from ppgl_dispatch.env import generate_case, generate_corpus

finite = st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False)

components = st.builds(
    GappComponents,
    histologic_pattern=st.sampled_from(HistologicPattern),
    cellularity_cells_per_unit=finite,
    comedo_necrosis=st.booleans(),
    vascular_capsular_invasion=st.booleans(),
    ki67_percent=st.floats(min_value=0, max_value=100),
    catecholamine_type=st.sampled_from(CatecholamineType),
)
positive = st.floats(min_value=1e-9, max_value=1e3)
stats = st.builds(
    StainStats,
    mean_l=st.floats(-1e3, 1e3), mean_a=st.floats(-1e3, 1e3), mean_b=st.floats(-1e3, 1e3),
    std_l=positive, std_a=positive, std_b=positive,
)
records = st.builds(
    CaseRecord,
    case_id=st.text(min_size=1, max_size=12),
    truth=components,
    genotype=st.builds(GenotypeProfile, st.booleans(), st.booleans(), st.booleans()),
    labs=st.builds(LabPanel, finite, finite, finite),
    stain_shift=stats,
    seed=st.integers(0, 2**64 - 1),
)


def test_empty_file_loads_empty(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("")
    assert load_corpus(p) == []


def test_save_empty_list(tmp_path):
    p = tmp_path / "c.jsonl"
    save_corpus([], p)
    assert p.read_text() == ""
    assert load_corpus(p) == []


def test_three_lines_order_preserved(tmp_path):
    cases = generate_corpus(3, 11)
    p = tmp_path / "c.jsonl"
    save_corpus(cases, p)
    assert [c.case_id for c in load_corpus(p)] == ["case-00000", "case-00001", "case-00002"]


def test_round_trip_100_cases(tmp_path):
    cases = generate_corpus(100, 5)
    p = tmp_path / "c.jsonl"
    save_corpus(cases, p)
    assert load_corpus(p) == cases


@settings(max_examples=60, deadline=None)
@given(st.lists(records, max_size=5, unique_by=lambda c: c.case_id))
def test_round_trip_property(tmp_path_factory, cases):
    p = tmp_path_factory.mktemp("rt") / "c.jsonl"
    save_corpus(cases, p)
    assert load_corpus(p) == cases


def test_ki67_out_of_range_names_line_and_field(tmp_path):
    lines = [c.to_dict() for c in generate_corpus(3, 1)]
    lines[1]["truth"]["ki67_percent"] = 150
    p = tmp_path / "c.jsonl"
    p.write_text("\n".join(json.dumps(d) for d in lines) + "\n")
    with pytest.raises(CorpusError) as exc:
        load_corpus(p)
    assert exc.value.line == 2
    assert exc.value.field == "ki67_percent"
    assert "line 2" in str(exc.value) and "ki67_percent" in str(exc.value)


@pytest.mark.parametrize(
    "path, value, field",
    [
        (("truth", "cellularity_cells_per_unit"), -1.0, "cellularity_cells_per_unit"),
        (("truth", "histologic_pattern"), "Rosette", "histologic_pattern"),
        (("labs", "metanephrine"), -0.5, "metanephrine"),
        (("stain_shift", "std_a"), 0.0, "std_a"),
        (("case_id",), "", "case_id"),
        (("seed",), -3, "seed"),
    ],
)
def test_invalid_fields_are_named(tmp_path, path, value, field):
    d = generate_case(3).to_dict()
    target = d
    for key in path[:-1]:
        target = target[key]
    target[path[-1]] = value
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps(d) + "\n")
    with pytest.raises(CorpusError) as exc:
        load_corpus(p)
    assert exc.value.field == field
    assert exc.value.line == 1


def test_missing_and_extra_keys(tmp_path):
    d = generate_case(3).to_dict()
    del d["labs"]
    with pytest.raises(CorpusError, match="labs"):
        CaseRecord.from_dict(d)
    d = generate_case(3).to_dict()
    d["note"] = "x"
    with pytest.raises(CorpusError, match="note"):
        CaseRecord.from_dict(d)


def test_duplicate_case_id_rejected(tmp_path):
    case = generate_case(1, case_id="dup")
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps(case.to_dict()) + "\n" + json.dumps(case.to_dict()) + "\n")
    with pytest.raises(CorpusError, match="duplicate") as exc:
        load_corpus(p)
    assert exc.value.line == 2


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps(generate_case(1).to_dict()) + "\n{not json\n")
    with pytest.raises(CorpusError) as exc:
        load_corpus(p)
    assert exc.value.line == 2


def test_unwritable_path_raises(tmp_path):
    with pytest.raises(OSError):
        save_corpus(generate_corpus(1, 0), tmp_path / "missing-dir" / "c.jsonl")


def test_missing_file_raises(tmp_path):
    with pytest.raises(OSError):
        load_corpus(tmp_path / "nope.jsonl")


def test_full_precision_reals(tmp_path):
    case = generate_case(9)
    p = tmp_path / "c.jsonl"
    save_corpus([case], p)
    loaded = load_corpus(p)[0]
    assert loaded.truth.cellularity_cells_per_unit == case.truth.cellularity_cells_per_unit
    assert loaded.stain_shift.std_b == case.stain_shift.std_b


def test_stain_stats_zero_std_allowed_for_measurements_only():
    s = StainStats(50, 0, 0, 0.0, 0.0, 0.0)
    with pytest.raises(CorpusError):
        s.require_positive_std()
