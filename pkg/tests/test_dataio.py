import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from retinervenet import dataio
from retinervenet.errors import ConfigError, DataError, ParseError
from retinervenet.synth import synth_generate


def record(**over):
    rec = {"schema_version": 1, "patient_id": "P1", "eye": "right", "age": 60.0,
           "sdoct_date": "2015-01-01", "sap_date": "2015-02-01", "quality_score": 25.0,
           "fixation_loss_pct": 5.0, "false_positive_pct": 2.0,
           "rnfl": [90.0] * 768, "td": [-1.0] * 52, "md": -1.0, "psd": 1.5}
    rec.update(over)
    return rec


def write_lines(path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    return path


def test_parse_well_formed(tmp_path):
    exams = dataio.parse_exams(write_lines(tmp_path / "a.jsonl", [record(), record(patient_id="P2")]))
    assert len(exams) == 2
    assert exams[0].rnfl.values.shape == (768,) and exams[0].vf.td.shape == (52,)
    assert exams[1].patient_id == "P2" and exams[0].date_gap_days == 31


def test_parse_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert dataio.parse_exams(p) == []


@pytest.mark.parametrize("bad, field", [
    (record(td=[0.0] * 54), "td"),
    (record(rnfl=[1.0] * 767), "rnfl"),
    ({k: v for k, v in record().items() if k != "md"}, "md"),
    (record(td=[0.0] * 51 + [float("nan")]), "td"),
    (record(schema_version=2), "schema_version"),
    (record(eye="both"), "eye"),
    (record(td=[-45.0] + [0.0] * 51), "td"),
    (record(sap_date="2015-13-01"), "sap_date"),
])
def test_parse_errors_name_line_and_field(tmp_path, bad, field):
    p = tmp_path / "b.jsonl"
    p.write_text(json.dumps(record()) + "\n" + json.dumps(bad, allow_nan=True) + "\n")
    with pytest.raises(ParseError) as err:
        dataio.parse_exams(p)
    assert err.value.line == 2 and err.value.field == field
    assert "line 2" in str(err.value)


def test_blind_spot_hint():
    with pytest.raises(ParseError, match="blind-spot"):
        dataio.exam_from_record(record(td=[0.0] * 54), 1)


def test_write_parse_roundtrip(tmp_path):
    exams = synth_generate(5, seed=1)
    p = tmp_path / "s.jsonl"
    dataio.write_exams(p, exams)
    back = dataio.parse_exams(p)
    for a, b in zip(exams, back):
        assert a.to_record() == b.to_record()


def exam(**over):
    return dataio.exam_from_record(record(**over))


def test_reliability_rules():
    assert dataio.rejection_reasons(exam(fixation_loss_pct=33.0)) == []
    assert dataio.rejection_reasons(exam(fixation_loss_pct=33.1)) == ["fixation_loss"]
    assert dataio.rejection_reasons(exam(false_positive_pct=15.5)) == ["false_positive"]
    assert dataio.rejection_reasons(exam(quality_score=14.9)) == ["quality"]
    assert dataio.rejection_reasons(exam(quality_score=15.0)) == []
    assert dataio.rejection_reasons(exam(sap_date="2015-06-30")) == []   # 180 days
    assert dataio.rejection_reasons(exam(sap_date="2015-07-01")) == ["pairing_window"]
    assert dataio.rejection_reasons(exam(sdoct_date="2015-07-01", sap_date="2015-01-01")) == ["pairing_window"]


def test_filter_partitions_and_is_idempotent():
    exams = [exam(quality_score=q, fixation_loss_pct=f) for q in (10.0, 20.0) for f in (1.0, 40.0)]
    kept, rejected = dataio.reliability_filter(exams)
    assert len(kept) + len(rejected) == len(exams)
    assert {id(e) for e in kept}.isdisjoint({id(e) for e, _ in rejected})
    assert [r for _, r in rejected] == [["quality"], ["fixation_loss", "quality"], ["fixation_loss"]]
    again, none = dataio.reliability_filter(kept)
    assert again == kept and none == []


def test_interval_and_group_boundaries():
    assert [dataio.assign_interval(v) for v in (-3, -6, -16, -16.01, -26, -26.01)] == [1, 2, 3, 3, 3, 4]
    assert [dataio.assign_group(v) for v in (-2.7, -6, -11.99, -12, -20)] == \
        ["early", "moderate", "moderate", "advanced", "advanced"]
    with pytest.raises(DataError):
        dataio.assign_interval(float("nan"))
    with pytest.raises(DataError):
        dataio.assign_group(float("inf"))


@settings(max_examples=100, deadline=None)
@given(st.floats(-40, 10))
def test_vectorised_buckets_agree(md):
    assert dataio.assign_intervals([md])[0] == dataio.assign_interval(md)
    assert dataio.assign_groups([md])[0] == dataio.assign_group(md)


def patients(counts):
    out = []
    for k, n in enumerate(counts):
        out += [exam(patient_id=f"P{k:03d}") for _ in range(n)]
    return out


def test_split_ten_single_exam_patients():
    tr, va, te, stats = dataio.split_by_patient(patients([1] * 10), (0.6, 0.2, 0.2), seed=3)
    assert (len(tr), len(va), len(te)) == (6, 2, 2)
    assert stats.counts == {"train": 6, "val": 2, "test": 2}


def test_split_keeps_big_patient_together():
    ex = patients([100] + [1] * 9)
    parts = dataio.split_by_patient(ex, seed=0)[:3]
    holders = [i for i, part in enumerate(parts) if any(e.patient_id == "P000" for e in part)]
    assert len(holders) == 1
    assert sum(e.patient_id == "P000" for e in parts[holders[0]]) == 100


def test_split_is_deterministic_and_validated():
    ex = patients([1, 2, 3, 1, 1, 2, 1])
    a = dataio.split_by_patient(ex, seed=11)
    b = dataio.split_by_patient(ex, seed=11)
    assert [[id(e) for e in p] for p in a[:3]] == [[id(e) for e in p] for p in b[:3]]
    with pytest.raises(ConfigError):
        dataio.split_by_patient(patients([1, 1]))
    with pytest.raises(ConfigError):
        dataio.split_by_patient(ex, (0.5, 0.2, 0.2))


def test_split_stats_consistent():
    ex = synth_generate(300, seed=4)
    tr, va, te, stats = dataio.split_by_patient(ex, seed=1)
    assert sum(stats.counts.values()) == 300
    assert sum(sum(v) for v in stats.interval_counts.values()) == 300
    assert sum(sum(v.values()) for v in stats.group_counts.values()) == 300
    owners = [set(v) for v in stats.patients.values()]
    assert not (owners[0] & owners[1] or owners[0] & owners[2] or owners[1] & owners[2])


def test_to_arrays_shapes():
    x, y, md = dataio.to_arrays(synth_generate(4, seed=0))
    assert x.shape == (4, 768) and y.shape == (4, 52) and md.shape == (4,)
    assert np.allclose(md, y.mean(axis=1), atol=1e-12)
    x, y, md = dataio.to_arrays([])
    assert x.shape == (0, 768)
