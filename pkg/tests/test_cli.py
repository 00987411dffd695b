import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from causal_audit import cli, report
from causal_audit.data import TreatmentSpec, parse_csv
from causal_audit.fairrank import FairnessConfig, TrainHyper, evaluate_scores, score, train
from causal_audit.scm import ScmConfig, simulate

from conftest import BIASED


def run_dir(out: Path, stdout: str) -> Path:
    line = [l for l in stdout.splitlines() if l.startswith("run directory:")][-1]
    return Path(line.split(":", 1)[1].strip())


def generate(tmp_path, *args):
    rc = cli.main(["generate", "--out", str(tmp_path / "out"), *args])
    assert rc == 0
    dirs = sorted((tmp_path / "out").iterdir(), key=lambda p: p.stat().st_mtime)
    return dirs[-1]


def test_generate_writes_dataset_and_truth(tmp_path):
    d = generate(tmp_path, "--n", "5000", "--seed", "7", "--tau-race", "-0.6")
    truth = json.loads((d / "truth.json").read_text())
    data = simulate(ScmConfig(n_units=5000, seed=7, tau_race=-0.6))
    assert truth["true_ate"] == data.true_ate()
    assert parse_csv(d / "dataset.csv", provenance="synthetic") == data.dataset
    index = json.loads((d / "index.json").read_text())
    assert index["outputs"] == ["dataset.csv", "truth.json"]
    assert not list(d.glob(".*tmp"))


def test_generate_rerun_identical(tmp_path):
    a = generate(tmp_path, "--n", "300", "--seed", "1")
    first = {p.name: p.read_bytes() for p in a.iterdir()}
    b = generate(tmp_path, "--n", "300", "--seed", "1")
    assert a == b
    assert {p.name: p.read_bytes() for p in b.iterdir()} == first


@pytest.mark.parametrize("args", [["generate", "--n", "0"], ["generate", "--n", "x"], ["bogus"],
                                  ["audit"], ["audit", "--data", "/nonexistent.csv"]])
def test_usage_errors_exit_2(tmp_path, args):
    assert cli.main([*args, *(["--out", str(tmp_path)] if args[0] != "bogus" else [])]) == 2


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 120, "seed": 5, "scm": {"tau_race": -1.0}}))
    d = generate(tmp_path, "--n", "999", "--config", str(cfg))
    truth = json.loads((d / "truth.json").read_text())
    assert truth["n_units"] == 120 and truth["config"]["seed"] == 5 and truth["config"]["tau_race"] == -1.0
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text(json.dumps({"n_units": -3}))
    assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_audit_missing_treated_unit_exits_1(tmp_path, capsys):
    csv = tmp_path / "tiny.csv"
    csv.write_text("id,race,gender,country,h_index,prestige,outcome\n"
                   "a,0,0,1,3,0,1\nb,0,1,0,9,1,2\nc,0,1,1,12,0,3\n")
    rc = cli.main(["audit", "--data", str(csv), "--treatments", "race", "--n-boot", "200",
                   "--out", str(tmp_path / "out")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "race" in err
    d = next((tmp_path / "out").iterdir())
    rep = json.loads((d / "report.json").read_text())
    assert "DegenerateGroupError" in rep["treatments"][0]["error"]


@pytest.fixture(scope="module")
def audited(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("audit")
    gen = generate(tmp, "--n", "1500", "--seed", "3")
    args = ["audit", "--data", str(gen / "dataset.csv"), "--truth", str(gen / "truth.json"),
            "--n-boot", "200", "--out", str(tmp / "out")]
    return tmp, gen, args


def test_audit_report_validates_and_is_deterministic(audited, capsys):
    tmp, gen, args = audited
    assert cli.main([*args, "--threads", "1"]) == 0
    d = run_dir(tmp, capsys.readouterr().out)
    rep = json.loads((d / "report.json").read_text())
    jsonschema.validate(rep, report.report_schema())
    jsonschema.Draft202012Validator.check_schema(report.report_schema())
    first = (d / "report.json").read_bytes()
    assert cli.main([*args, "--threads", "3"]) == 0
    assert run_dir(tmp, capsys.readouterr().out) == d
    assert (d / "report.json").read_bytes() == first
    for name in ("summary", "balance", "ate", "stratified", "intersectional"):
        assert (d / "tables" / f"{name}.csv").exists()
    for name in ("ate_forest", "propensity_overlap_race", "acceptance_vs_h_index_race"):
        assert (d / "figures" / f"{name}.svg").read_text().startswith("<svg")
    race = rep["treatments"][0]
    assert race["estimates"]["ipw"]["seed"] == 0 and race["estimates"]["ipw"]["method"] == "ipw"
    assert race["truth"]["true_ate"] == json.loads((gen / "truth.json").read_text())["true_ate"]


def test_report_command_rerenders_identically(audited, capsys):
    tmp, _, args = audited
    assert cli.main(args) == 0
    d = run_dir(tmp, capsys.readouterr().out)
    before = {p.relative_to(d): p.read_bytes() for p in d.rglob("*") if p.is_file()}
    for p in (d / "figures").iterdir():
        p.unlink()
    assert cli.main(["report", str(d)]) == 0
    after = {p.relative_to(d): p.read_bytes() for p in d.rglob("*") if p.is_file()}
    assert after == before


def test_figures_are_pure_views_of_report(audited, capsys):
    tmp, _, args = audited
    cli.main(args)
    d = run_dir(tmp, capsys.readouterr().out)
    rep = json.loads((d / "report.json").read_text())
    snapshot = json.dumps(rep, sort_keys=True)
    report.audit_figures(rep)
    report.audit_tables(rep)
    assert json.dumps(rep, sort_keys=True) == snapshot


def test_audit_calibration_harness():
    """The IPW interval covers the generator's true ATE in at least 18 of 20 replications."""
    covered = 0
    spec = TreatmentSpec("race")
    for seed in range(20):
        data = simulate(ScmConfig(n_units=1500, seed=100 + seed))
        rep = report.audit_dataset(data.dataset, [spec], report.AuditOptions(n_boot=200, seed=seed, n_strata=1),
                                   truth=data.truth())
        covered += rep["treatments"][0]["truth"]["ipw_ci_covers_truth"]
    assert covered >= 18


@pytest.fixture(scope="module")
def biased_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("biased")
    cfg = tmp / "scm.json"
    cfg.write_text(json.dumps({"n": 1000, "seed": 0, "scm": BIASED}))
    return generate(tmp, "--config", str(cfg))


def test_sweep_trend_and_artifacts(biased_csv, tmp_path, capsys):
    rc = cli.main(["sweep", "--data", str(biased_csv / "dataset.csv"), "--out", str(tmp_path), "--threads", "2"])
    assert rc == 0
    d = run_dir(tmp_path, capsys.readouterr().out)
    rep = json.loads((d / "report.json").read_text())
    rows = {r["lambda"]: r for r in rep["rows"]}
    assert sorted(rows) == [0.0, 0.5, 1.0, 5.0, 10.0]
    assert abs(rows[10.0]["ate_race"]) < abs(rows[0.0]["ate_race"])
    assert (d / "figures" / "ate_vs_lambda.svg").exists()
    assert len(list((d / "models").glob("lambda_*.json"))) == 5
    index = json.loads((d / "index.json").read_text())
    assert "report.json" in index["outputs"] and index["identity"]["lambdas"] == [0.0, 0.5, 1.0, 5.0, 10.0]


def test_ablate_layout(biased_csv, tmp_path, capsys):
    rc = cli.main(["ablate", "--data", str(biased_csv / "dataset.csv"), "--out", str(tmp_path), "--epochs", "300"])
    assert rc == 0
    out = capsys.readouterr().out
    for label in ("Baseline (No Fairness)", "Balanced (0.5:0.5)", "Race-Focused (0.9:0.1)",
                  "Country-Focused (0.1:0.9)"):
        assert label in out
    assert out.splitlines()[0].split() == ["Fairness", "Weighting", "(W_r:W_c)", "Race", "Country", "Gender", "NDCG"]


def test_train_lambda_zero_reproduces_baseline(biased_csv, tmp_path, capsys):
    rc = cli.main(["train", "--data", str(biased_csv / "dataset.csv"), "--lambda", "0", "--epochs", "400",
                   "--out", str(tmp_path)])
    assert rc == 0
    d = run_dir(tmp_path, capsys.readouterr().out)
    rep = json.loads((d / "report.json").read_text())
    ds = parse_csv(biased_csv / "dataset.csv")
    base = train(ds, FairnessConfig(0.0), TrainHyper(epochs=400))
    ev = evaluate_scores(ds, score(base, ds))
    for attr in ("race", "gender", "country"):
        assert rep["evaluation"]["rank_gaps"][attr] == pytest.approx(ev["rank_gaps"][attr], abs=1e-9)
    ranking = (d / "tables" / "ranking.csv").read_text().splitlines()
    assert ranking[0] == "id,score,rank" and ranking[1].endswith(",1")


def test_merit_relevance_requires_matching_truth(biased_csv, tmp_path):
    data = str(biased_csv / "dataset.csv")
    assert cli.main(["train", "--data", data, "--relevance", "merit", "--out", str(tmp_path)]) == 2
    other = generate(tmp_path, "--n", "50", "--seed", "9")
    assert cli.main(["train", "--data", data, "--relevance", "merit", "--truth", str(other / "truth.json"),
                     "--epochs", "5", "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--data", data, "--relevance", "merit", "--truth", str(biased_csv / "truth.json"),
                     "--epochs", "5", "--out", str(tmp_path)]) == 0


def test_clean_json_maps_non_finite_to_null():
    assert report.clean_json({"a": float("nan"), "b": np.float64(1.5), "c": [np.int64(2), float("inf")]}) == \
        {"a": None, "b": 1.5, "c": [2, None]}


def test_persisted_run_config_replays(audited, capsys, tmp_path):
    tmp, _, args = audited
    cli.main(args)
    d = run_dir(tmp, capsys.readouterr().out)
    cfg = json.loads((d / "run_config.json").read_text())
    assert cfg["n_boot"] == 200 and "out" not in cfg
    assert cli.main(["audit", "--config", str(d / "run_config.json"), "--out", str(tmp_path)]) == 0
    replay = run_dir(tmp_path, capsys.readouterr().out)
    assert replay.name == d.name
    assert (replay / "report.json").read_bytes() == (d / "report.json").read_bytes()
