import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_audit.data import (
    Dataset,
    PaperRecord,
    TreatmentSpec,
    format_summary,
    parse_csv,
    summarize,
    treatment_arrays,
    write_csv,
)
from causal_audit.errors import DegenerateGroupError, DomainError, IntegrityError, RowError, SchemaError
from causal_audit.scm import ScmConfig, simulate

HEADER = "id,race,gender,country,h_index,prestige,outcome\n"


def test_parse_single_row():
    ds = parse_csv(io.StringIO(HEADER + "p1,1,0,1,12.5,0,2\n"))
    (rec,) = ds.records
    assert rec == PaperRecord("p1", 1, 0, 1, 12.5, 0.0, 2)


def test_column_order_is_free():
    ds = parse_csv(io.StringIO("outcome,id,h_index,prestige,race,gender,country\n3,a,1,1,0,1,0\n"))
    assert ds.records[0] == PaperRecord("a", 0, 1, 0, 1.0, 1.0, 3)


def test_outcome_out_of_range_cites_row():
    with pytest.raises(RowError) as exc:
        parse_csv(io.StringIO(HEADER + "p1,1,0,1,12.5,0,2\np2,0,0,0,3,1,4\n"))
    assert exc.value.row == 2
    assert "row 2" in str(exc.value)


@pytest.mark.parametrize("bad", ["p1,2,0,1,1,0,2", "p1,1,0,1,-1,0,2", "p1,1,0,1,1,1.5,2",
                                 "p1,1,0,1,nan,0,2", "p1,1,0,1,1,0", "p1,yes,0,1,1,0,2"])
def test_bad_rows_rejected(bad):
    with pytest.raises(RowError):
        parse_csv(io.StringIO(HEADER + bad + "\n"))


def test_missing_column_named():
    with pytest.raises(SchemaError) as exc:
        parse_csv(io.StringIO("id,race,gender,h_index,prestige,outcome\n"))
    assert exc.value.column == "country"


def test_unknown_column_rejected():
    with pytest.raises(SchemaError):
        parse_csv(io.StringIO(HEADER.strip() + ",extra\n"))


def test_duplicate_id():
    with pytest.raises(IntegrityError):
        parse_csv(io.StringIO(HEADER + "a,1,0,1,1,0,2\na,0,0,1,1,0,2\n"))


def test_csv_round_trip():
    ds = simulate(ScmConfig(n_units=300, seed=5)).dataset
    back = parse_csv(io.StringIO(write_csv(ds)), provenance="synthetic")
    assert back == ds
    assert summarize(back) == summarize(ds)


def test_summary_two_records():
    ds = Dataset.from_records([PaperRecord("a", 0, 0, 0, 10.0, 0.0, 1), PaperRecord("b", 1, 1, 0, 20.0, 1.0, 3)])
    s = summarize(ds)
    assert s["h_index"]["mean"] == 15.0
    assert (s["h_index"]["min"], s["h_index"]["max"]) == (10.0, 20.0)
    assert s["shares"]["race"]["Minority"] == 0.5
    assert s["outcome_counts"] == {"1": 1, "2": 0, "3": 1}
    assert "Max h-index" in format_summary(s)


def test_summary_empty_raises():
    with pytest.raises(DomainError):
        summarize(Dataset.from_records([]))


def test_summary_matches_numpy_oracle():
    ds = simulate(ScmConfig(n_units=530, seed=11)).dataset
    s = summarize(ds)
    assert s["h_index"]["sd"] == pytest.approx(np.std(ds.h_index, ddof=1), rel=1e-12)
    q1, q3 = np.percentile(ds.h_index, [25, 75])
    assert s["h_index"]["iqr"] == pytest.approx(q3 - q1)
    assert s["shares"]["race"]["Minority"] == pytest.approx(ds.race.sum() / 530)


def test_spec_validation():
    with pytest.raises(DomainError):
        TreatmentSpec("race", ("race", "h_index"))
    with pytest.raises(DomainError):
        TreatmentSpec("age")
    with pytest.raises(DomainError):
        TreatmentSpec("race", ("h_index", "h_index"))


def test_treatment_arrays_requires_both_groups():
    ds = Dataset.from_records([PaperRecord(f"p{i}", 0, 0, 0, 1.0 + i, 0.0, 2) for i in range(3)])
    with pytest.raises(DegenerateGroupError):
        treatment_arrays(ds, TreatmentSpec("race"))
    with pytest.raises(DomainError):
        treatment_arrays(Dataset.from_records([PaperRecord("a", 1, 0, 0, 1.0, 0.0, 2),
                                               PaperRecord("b", 0, 0, 0, 1.0, 0.0, 2)]),
                         TreatmentSpec("race", ()), require_covariates=True)


def test_dataset_is_read_only():
    ds = simulate(ScmConfig(n_units=10, seed=0)).dataset
    with pytest.raises(ValueError):
        ds.race[0] = 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1),
                          st.floats(0, 200, allow_nan=False), st.sampled_from([0.0, 1.0]),
                          st.integers(1, 3)), min_size=1, max_size=40))
def test_round_trip_property(rows):
    recs = [PaperRecord(f"id{i}", *r) for i, r in enumerate(rows)]
    ds = Dataset.from_records(recs)
    assert parse_csv(io.StringIO(write_csv(ds))).records == recs
