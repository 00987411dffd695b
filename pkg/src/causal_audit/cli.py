"""``causal-audit`` command line: generate, audit, train, sweep, ablate, report.

Every run writes into ``<out>/<run-id>/`` where the run id is a hash of the
resolved settings (including the input file's sha256). ``run_config.json``
holds the resolved flags and replays the run via ``--config``; ``index.json``
is written last and links the configuration to the files produced.

Exit codes: 0 success, 1 analysis failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__, report
from .data import ATTRIBUTES, COVARIATE_CHOICES, TreatmentSpec, parse_csv, write_csv
from .errors import CausalAuditError, ConfigError
from .fairrank import (
    FairnessConfig,
    TrainHyper,
    ablation,
    evaluate_scores,
    lambda_sweep,
    rank,
    score,
    train,
)
from .scm import ScmConfig, simulate, truth_json

EXIT_OK, EXIT_ANALYSIS, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- file plumbing


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_id(run_config: dict) -> str:
    blob = json.dumps(report.clean_json(run_config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def file_sha256(path: str) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc


class Run:
    """Collects outputs for one run directory and writes the index last.

    ``identity`` (resolved settings plus input hashes) determines the run id;
    ``options`` are the resolved flags, saved as ``run_config.json`` so that
    ``--config run_config.json`` replays the run.
    """

    def __init__(self, options: dict, identity: dict):
        self.options = report.clean_json({k: v for k, v in options.items() if k not in _NOT_REPLAYED})
        self.identity = report.clean_json(identity)
        self.id = run_id(self.identity)
        self.dir = Path(options["out"]) / self.id
        self.files: list[str] = []

    def write(self, rel: str, text: str) -> None:
        atomic_write(self.dir / rel, text)
        self.files.append(rel)

    def finish(self, status: str) -> None:
        atomic_write(self.dir / "run_config.json", report.dumps(self.options))
        index = {"run_id": self.id, "tool_version": __version__, "identity": self.identity,
                 "run_config": "run_config.json", "status": status, "outputs": sorted(self.files)}
        atomic_write(self.dir / "index.json", report.dumps(index))


# ---------------------------------------------------------------- argument parsing


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _pairs(text: str) -> list[tuple[float, float]]:
    out = []
    for item in _names(text):
        try:
            a, b = item.split(":")
            out.append((float(a), float(b)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"weight pairs look like 0.5:0.5, got {item!r}") from exc
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file whose keys override the flags")
    p.add_argument("--out", default="out", help="output root (default: out)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (capped by CAUSAL_AUDIT_THREADS)")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=False, help="dataset CSV")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=lambda s: [int(x) for x in _names(s)], default=[16],
                   help="hidden layer widths, e.g. 16 or 32,16")
    p.add_argument("--w-race", type=float, default=1.0)
    p.add_argument("--w-country", type=float, default=1.0)
    p.add_argument("--relevance", choices=("observed", "merit"), default="observed",
                   help="NDCG relevance; 'merit' uses the untreated outcome from --truth")
    p.add_argument("--truth", help="truth.json of a generated dataset (needed for --relevance merit)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="causal-audit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset with known treatment effects")
    _add_common(g)
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--treatment", choices=ATTRIBUTES, default="race")
    for attr in ATTRIBUTES:
        g.add_argument(f"--tau-{attr}", type=float, default=None)
    g.add_argument("--coef-conf-institution", type=float, default=None)
    g.add_argument("--coef-conf-quality", type=float, default=None)

    a = sub.add_parser("audit", help="observational audit of a dataset")
    _add_common(a)
    a.add_argument("--data", help="dataset CSV")
    a.add_argument("--treatments", type=_names, default=list(ATTRIBUTES))
    a.add_argument("--covariates", type=_names, default=["h_index", "prestige"])
    a.add_argument("--n-boot", type=int, default=500)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--clip", type=_floats, default=None, help="propensity clip bounds lo,hi")
    a.add_argument("--unstabilized", action="store_true")
    a.add_argument("--ridge", type=float, default=0.0)
    a.add_argument("--n-strata", type=int, default=4)
    a.add_argument("--strat-var", choices=("h_index", "prestige"), default="h_index")
    a.add_argument("--intersect", type=_names, default=["race", "gender"])
    a.add_argument("--truth", help="truth.json for comparison with the true ATE")

    t = sub.add_parser("train", help="train one fairness-regularized scorer")
    _add_common(t)
    _add_training(t)
    t.add_argument("--lambda", dest="lam", type=float, default=1.0)

    s = sub.add_parser("sweep", help="train across a lambda grid")
    _add_common(s)
    _add_training(s)
    s.add_argument("--lambdas", type=_floats, default=[0.0, 0.5, 1.0, 5.0, 10.0])

    b = sub.add_parser("ablate", help="vary the race/country penalty weights at a fixed lambda")
    _add_common(b)
    _add_training(b)
    b.add_argument("--lambda", dest="lam", type=float, default=1.0)
    b.add_argument("--pairs", type=_pairs, default=[(0.5, 0.5), (0.9, 0.1), (0.1, 0.9)])

    r = sub.add_parser("report", help="re-render tables and figures of a run from its report.json")
    r.add_argument("run_dir", help="directory containing report.json")
    return ap


_NOT_REPLAYED = {"command", "config", "out", "threads"}


def resolve(args: argparse.Namespace) -> dict:
    """Flags merged with the optional --config JSON (config wins)."""
    opts = {k: v for k, v in vars(args).items() if k not in ("config",)}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load --config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("--config must hold a JSON object")
        for k, v in cfg.items():
            key = k.replace("-", "_")
            key = "lam" if key == "lambda" else key
            if key == "scm" and args.command == "generate":
                opts["scm"] = v
                continue
            if key not in opts or key in ("command",):
                raise UsageError(f"unknown config key {k!r} for {args.command}")
            opts[key] = v
    return opts


# ---------------------------------------------------------------- commands


def _load_dataset(path):
    if not path:
        raise UsageError("--data is required")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return parse_csv(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc


def _load_truth(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load truth file {path}: {exc}") from exc


def cmd_generate(o: dict) -> int:
    if o["n"] <= 0:
        raise UsageError(f"--n must be a positive integer, got {o['n']}")
    fields = dict(o.get("scm") or {})
    fields.setdefault("n_units", o["n"])
    fields.setdefault("seed", o["seed"])
    fields.setdefault("treatment", o["treatment"])
    for key in ("tau_race", "tau_gender", "tau_country", "coef_conf_institution", "coef_conf_quality"):
        if o.get(key) is not None:
            fields.setdefault(key, o[key])
    cfg = ScmConfig.from_dict(fields)
    run = Run(o, {"command": "generate", "tool_version": __version__, "scm": cfg.to_dict()})
    data = simulate(cfg)
    run.write("dataset.csv", write_csv(data.dataset))
    run.write("truth.json", truth_json(data))
    run.finish("ok")
    print(f"{run.dir / 'dataset.csv'}  true ATE ({cfg.treatment}) = {data.true_ate():+.4f}")
    return EXIT_OK


def cmd_audit(o: dict) -> int:
    ds = _load_dataset(o["data"])
    bad = [c for c in o["covariates"] if c not in COVARIATE_CHOICES]
    if bad or any(t not in ATTRIBUTES for t in o["treatments"]):
        raise UsageError(f"unknown treatment or covariate: {bad or o['treatments']}")
    clip = tuple(o["clip"]) if o["clip"] else None
    if clip is not None and len(clip) != 2:
        raise UsageError("--clip takes exactly two bounds")
    if o["n_boot"] < 200:
        raise UsageError("--n-boot must be at least 200")
    specs = [TreatmentSpec(t, tuple(c for c in o["covariates"] if c != t)) for t in o["treatments"]]
    opts = report.AuditOptions(n_boot=o["n_boot"], alpha=o["alpha"], seed=o["seed"],
                               stabilized=not o["unstabilized"], clip=clip, n_strata=o["n_strata"],
                               strat_var=o["strat_var"], intersect=tuple(o["intersect"]), ridge=o["ridge"],
                               n_jobs=o["threads"])
    truth = _load_truth(o["truth"]) if o.get("truth") else None
    run_cfg = {"command": "audit", "tool_version": __version__, "data_sha256": file_sha256(o["data"]),
               "treatments": [s.to_dict() for s in specs], "options": opts.to_dict(),
               "truth": truth}
    run = Run(o, run_cfg)
    rep = report.audit_dataset(ds, specs, opts, truth)
    rep["run_id"] = run.id
    _write_audit_views(run, rep)
    failed = report.primary_failures(rep)
    run.finish("failed" if failed else "ok")
    print(report.audit_text(rep))
    print(f"run directory: {run.dir}")
    if failed:
        print(f"error: inestimable primary ATE for {', '.join(failed)}", file=sys.stderr)
        return EXIT_ANALYSIS
    return EXIT_OK


def _write_audit_views(run: Run, rep: dict) -> None:
    run.write("report.json", report.dumps(rep))
    run.write("report.txt", report.audit_text(rep))
    for name, text in report.audit_tables(rep).items():
        run.write(f"tables/{name}.csv", text)
    for name, text in report.audit_figures(rep).items():
        run.write(f"figures/{name}.svg", text)


def _hyper(o: dict) -> TrainHyper:
    return TrainHyper(epochs=o["epochs"], lr=o["lr"], seed=o["seed"], hidden_dims=tuple(o["hidden"]))


def _relevance(o: dict, ds):
    """Observed outcome ranks, or the untreated potential outcome regenerated from truth.json."""
    if o["relevance"] == "observed":
        return None, None
    if not o.get("truth"):
        raise UsageError("--relevance merit needs --truth")
    truth = _load_truth(o["truth"])
    data = simulate(ScmConfig.from_dict(truth["config"]))
    if data.dataset != ds:
        raise UsageError("truth.json does not describe this dataset")
    return data.y_if_control, truth["config"]


def _training_config(o: dict, command: str, **extra) -> dict:
    return {"command": command, "tool_version": __version__, "data_sha256": file_sha256(o["data"]),
            "hyper": _hyper(o).to_dict(), "w_race": o["w_race"], "w_country": o["w_country"],
            "relevance": o["relevance"], **extra}


def cmd_train(o: dict) -> int:
    ds = _load_dataset(o["data"])
    rel, scm_cfg = _relevance(o, ds)
    cfg = FairnessConfig(o["lam"], o["w_race"], o["w_country"])
    run = Run(o, _training_config(o, "train", fairness=cfg.to_dict(), merit_scm=scm_cfg))
    try:
        m = train(ds, cfg, _hyper(o))
    except CausalAuditError as exc:
        run.write("report.json", report.dumps({"schema_version": report.SCHEMA_VERSION, "kind": "train",
                                                "run_id": run.id, "status": "failed", "error": str(exc)}))
        run.finish("failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    scores = score(m, ds)
    ev = evaluate_scores(ds, scores, rel)
    rep = {"schema_version": report.SCHEMA_VERSION, "kind": "train", "run_id": run.id, "status": "ok",
           "fairness": cfg.to_dict(), "alpha": None, "seed": o["seed"], "train_meta": m.train_meta,
           "evaluation": ev, "ndcg_definition": report.NDCG_DEFINITION}
    run.write("models/model.json", m.to_json())
    run.write("report.json", report.dumps(rep))
    ranking = "id,score,rank\n" + "".join(f"{i},{s!r},{k}\n" for i, s, k in rank(m, ds))
    run.write("tables/ranking.csv", ranking)
    run.finish("ok")
    print(f"lambda={cfg.lam:g}  NDCG={ev['ndcg']:.4f}  rank gaps: "
          + ", ".join(f"{a}={v:+.1f}" for a, v in ev["rank_gaps"].items() if v is not None))
    print(f"run directory: {run.dir}")
    return EXIT_OK


def cmd_sweep(o: dict) -> int:
    ds = _load_dataset(o["data"])
    rel, scm_cfg = _relevance(o, ds)
    lambdas = sorted(float(x) for x in o["lambdas"])
    run = Run(o, _training_config(o, "sweep", lambdas=lambdas, merit_scm=scm_cfg))
    rows, models = lambda_sweep(ds, lambdas, _hyper(o), o["w_race"], o["w_country"], rel,
                                n_jobs=o["threads"], return_models=True)
    for row, m in zip(rows, models):
        if m is not None:
            run.write(f"models/lambda_{row['lambda']:g}.json", m.to_json())
    rep = {"schema_version": report.SCHEMA_VERSION, "kind": "sweep", "run_id": run.id,
           "sign_convention": report.SIGN_CONVENTION, "ndcg_definition": report.NDCG_DEFINITION,
           "penalized": ["race", "country"], "spillover": ["gender"], "rows": rows}
    run.write("report.json", report.dumps(rep))
    for name, text in report.sweep_tables(report.clean_json(rows)).items():
        run.write(f"tables/{name}.csv", text)
    run.write("figures/ate_vs_lambda.svg", report.sweep_figure(report.clean_json(rows)))
    ok = [r for r in rows if r["status"] == "ok"]
    run.finish("ok" if ok else "failed")
    for r in rows:
        if r["status"] == "ok":
            print(f"lambda={r['lambda']:<6g} ATE race={r['ate_race']:+.4f} gender={r['ate_gender']:+.4f} "
                  f"country={r['ate_country']:+.4f} NDCG={r['ndcg']:.4f}")
        else:
            print(f"lambda={r['lambda']:<6g} failed: {r['error']}")
    print(f"run directory: {run.dir}")
    return EXIT_OK if ok else EXIT_ANALYSIS


def cmd_ablate(o: dict) -> int:
    ds = _load_dataset(o["data"])
    rel, scm_cfg = _relevance(o, ds)
    pairs = [tuple(map(float, p)) for p in o["pairs"]]
    run = Run(o, _training_config(o, "ablate", lam=o["lam"], pairs=pairs, merit_scm=scm_cfg))
    rows = ablation(ds, pairs, o["lam"], _hyper(o), rel, n_jobs=o["threads"])
    rep = {"schema_version": report.SCHEMA_VERSION, "kind": "ablation", "run_id": run.id,
           "ndcg_definition": report.NDCG_DEFINITION, "rows": rows}
    run.write("report.json", report.dumps(rep))
    clean = report.clean_json(rows)
    for name, text in report.ablation_tables(clean).items():
        run.write(f"tables/{name}.csv", text)
    text = report.ablation_text(clean)
    run.write("report.txt", text)
    ok = [r for r in rows if r["status"] == "ok"]
    run.finish("ok" if ok else "failed")
    print(text)
    print(f"run directory: {run.dir}")
    return EXIT_OK if ok else EXIT_ANALYSIS


def cmd_report(o: dict) -> int:
    d = Path(o["run_dir"])
    try:
        rep = json.loads((d / "report.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load {d / 'report.json'}: {exc}") from exc
    kind = rep.get("kind")
    if kind == "audit":
        for name, text in report.audit_tables(rep).items():
            atomic_write(d / "tables" / f"{name}.csv", text)
        for name, text in report.audit_figures(rep).items():
            atomic_write(d / "figures" / f"{name}.svg", text)
        print(report.audit_text(rep))
    elif kind == "sweep":
        for name, text in report.sweep_tables(rep["rows"]).items():
            atomic_write(d / "tables" / f"{name}.csv", text)
        atomic_write(d / "figures" / "ate_vs_lambda.svg", report.sweep_figure(rep["rows"]))
    elif kind == "ablation":
        for name, text in report.ablation_tables(rep["rows"]).items():
            atomic_write(d / "tables" / f"{name}.csv", text)
        print(report.ablation_text(rep["rows"]))
    elif kind == "train":
        print(json.dumps(rep.get("evaluation"), indent=2, sort_keys=True))
    else:
        raise UsageError(f"unrecognised report kind {kind!r}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "audit": cmd_audit, "train": cmd_train, "sweep": cmd_sweep,
            "ablate": cmd_ablate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CausalAuditError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except (ValueError, TypeError, KeyError) as exc:
        # malformed --config values surface here
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
