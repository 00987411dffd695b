"""Audit assembly, JSON report schema, and table/figure rendering.

Figures and text tables are computed from the report dictionary alone, so
re-rendering a saved ``report.json`` reproduces them exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__, svg
from .data import ATTRIBUTES, GROUP_LABELS, Dataset, TreatmentSpec, align_table, format_summary, summarize
from .errors import CausalAuditError
from .estimators import (
    SIGN_CONVENTION,
    estimate,
    intersectional_ate,
    ipw_pipeline,
    naive_difference,
    stratified_ate,
)
from .metrics import NDCG_DEFINITION, pearson_r
from .weighting import balance_report

SCHEMA_VERSION = "1.0"


def clean_json(obj):
    """Convert numpy scalars/arrays to Python and non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean_json(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(clean_json(obj), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class AuditOptions:
    n_boot: int = 500
    alpha: float = 0.05
    seed: int = 0
    stabilized: bool = True
    clip: tuple[float, float] | None = None
    n_strata: int = 4
    strat_var: str = "h_index"
    intersect: tuple[str, str] = ("race", "gender")
    ridge: float = 0.0
    n_jobs: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("n_jobs")
        return d


def _overlap(scores, t, bins: int = 20) -> dict:
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = {"edges": edges.tolist()}
    for key, mask in (("treated", t == 1), ("control", t == 0)):
        counts, _ = np.histogram(scores[mask], bins=edges)
        out[key] = (counts / max(1, mask.sum()) / (1.0 / bins)).tolist()
    return out


def _acceptance_curves(ds: Dataset, attr: str, bins: int = 8) -> dict:
    """Share of accepted papers (rank >= 2) per h-index quantile bin, by group."""
    edges = np.unique(np.quantile(ds.h_index, np.linspace(0, 1, bins + 1)))
    idx = np.clip(np.searchsorted(edges, ds.h_index, side="right") - 1, 0, len(edges) - 2)
    accepted = (ds.outcome >= 2).astype(float)
    g = ds.column(attr)
    mids, r0, r1 = [], [], []
    for k in range(len(edges) - 1):
        sel = idx == k
        mids.append(float(ds.h_index[sel].mean()) if sel.any() else float((edges[k] + edges[k + 1]) / 2))
        for val, dest in ((0, r0), (1, r1)):
            m = sel & (g == val)
            dest.append(float(accepted[m].mean()) if m.any() else None)
    return {"attribute": attr, "h_index_mid": mids, "group0": r0, "group1": r1}


def audit_dataset(ds: Dataset, specs, opts: AuditOptions | None = None, truth: dict | None = None) -> dict:
    """Run the whole observational audit and return the report dictionary."""
    opts = opts or AuditOptions()
    est_opts = {"stabilized": opts.stabilized, "clip": opts.clip, "ridge": opts.ridge}
    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "kind": "audit",
        "sign_convention": SIGN_CONVENTION,
        "options": opts.to_dict(),
        "dataset": {"n": len(ds), "provenance": ds.provenance},
        "summary": summarize(ds),
        "treatments": [],
        "figures_data": {"propensity_overlap": {}, "acceptance_curves": {}},
        "errors": [],
    }
    try:
        report["summary"]["pearson_h_index_outcome"] = pearson_r(ds.h_index, ds.outcome.astype(float))
    except CausalAuditError:
        report["summary"]["pearson_h_index_outcome"] = None

    for spec in specs:
        entry: dict = {"treatment": spec.treatment_attr, "spec": spec.to_dict(), "status": "ok"}
        try:
            ate, model, ws = ipw_pipeline(ds, spec, **est_opts)
            entry["propensity_model"] = model.to_dict()
            entry["weights"] = {"stabilized": ws.stabilized, "clip_bounds": ws.clip_bounds, **ws.diagnostics}
            entry["balance"] = balance_report(ds, spec, ws).to_dict()
            t = ds.column(spec.treatment_attr)
            report["figures_data"]["propensity_overlap"][spec.treatment_attr] = _overlap(model.predict(
                np.column_stack([ds.column(c).astype(float) for c in spec.covariates])), t)
        except CausalAuditError as exc:
            entry["status"] = "inestimable"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            report["errors"].append(f"{spec.treatment_attr}: {entry['error']}")
            report["treatments"].append(entry)
            continue
        entry["estimates"] = {}
        for method in ("ipw", "linear_regression"):
            e = estimate(ds, spec, method, n_boot=opts.n_boot, alpha=opts.alpha, seed=opts.seed,
                         n_jobs=opts.n_jobs, **(est_opts if method == "ipw" else {}))
            entry["estimates"][method] = e.to_dict()
            if not e.ok:
                report["errors"].append(f"{spec.treatment_attr} {method}: {e.note}")
        if entry["estimates"]["ipw"]["status"] != "ok":
            entry["status"] = "inestimable"
        entry["naive_difference"] = naive_difference(ds, spec)
        entry["stratified"] = [e.to_dict() for e in stratified_ate(
            ds, spec, opts.strat_var, opts.n_strata, n_boot=opts.n_boot, alpha=opts.alpha,
            seed=opts.seed, n_jobs=opts.n_jobs, **est_opts)]
        if truth is not None and truth.get("treatment") == spec.treatment_attr:
            lo, hi = entry["estimates"]["ipw"]["ci"]
            true = truth["true_ate"]
            entry["truth"] = {
                "true_ate": true,
                "ipw_error": None if entry["estimates"]["ipw"]["ate"] is None
                else entry["estimates"]["ipw"]["ate"] - true,
                "ipw_ci_covers_truth": lo is not None and hi is not None and lo <= true <= hi,
            }
        report["treatments"].append(entry)

    for attr in ("race", "gender", "country"):
        report["figures_data"]["acceptance_curves"][attr] = _acceptance_curves(ds, attr)

    try:
        rows = intersectional_ate(ds, opts.intersect, "both",
                                  covariates=tuple(c for c in ("h_index", "prestige")), **est_opts)
        report["intersectional"] = {"group_def": list(opts.intersect), "rows": [r.to_dict() for r in rows]}
    except (CausalAuditError, ValueError) as exc:
        report["intersectional"] = {"group_def": list(opts.intersect), "rows": [], "error": str(exc)}
    # canonical key order, identical to what a reloaded report.json yields
    return json.loads(dumps(report))


def primary_failures(report: dict) -> list[str]:
    return [t["treatment"] for t in report["treatments"] if t["status"] != "ok"]


# ---------------------------------------------------------------- schema

_NUM = {"type": ["number", "null"]}
_ESTIMATE = {
    "type": "object",
    "required": ["ate", "ci", "alpha", "method", "n_treated", "n_control", "seed", "sign_convention", "status"],
    "properties": {
        "ate": _NUM,
        "ci": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "method": {"enum": ["ipw", "linear_regression"]},
        "n_treated": {"type": "integer", "minimum": 0},
        "n_control": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer"},
        "sign_convention": {"type": "string"},
        "status": {"enum": ["ok", "inestimable"]},
    },
}

AUDIT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "causal-audit report",
    "type": "object",
    "required": ["schema_version", "kind", "sign_convention", "summary", "treatments", "intersectional",
                 "figures_data"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"const": "audit"},
        "sign_convention": {"type": "string"},
        "run_id": {"type": "string"},
        "summary": {
            "type": "object",
            "required": ["n", "shares", "h_index", "outcome"],
            "properties": {"n": {"type": "integer", "minimum": 1}},
        },
        "treatments": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["treatment", "status"],
                "properties": {
                    "treatment": {"enum": list(ATTRIBUTES)},
                    "status": {"enum": ["ok", "inestimable"]},
                    "estimates": {
                        "type": "object",
                        "properties": {"ipw": _ESTIMATE, "linear_regression": _ESTIMATE},
                    },
                    "balance": {
                        "type": "object",
                        "required": ["threshold", "balanced", "rows"],
                        "properties": {
                            "rows": {"type": "array", "items": {
                                "type": "object",
                                "required": ["covariate", "smd_pre", "smd_post"],
                            }},
                        },
                    },
                    "stratified": {"type": "array", "items": {"type": "object",
                                                               "required": ["ate", "ci", "status", "label"]}},
                },
            },
        },
        "intersectional": {
            "type": "object",
            "required": ["group_def", "rows"],
            "properties": {"rows": {"type": "array", "items": {
                "type": "object", "required": ["subgroup", "ate_ipw", "ate_lr"],
                "properties": {"ate_ipw": _NUM, "ate_lr": _NUM}}}},
        },
    },
}


def report_schema() -> dict:
    return json.loads(json.dumps(AUDIT_SCHEMA))


# ---------------------------------------------------------------- rendering


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def _fmt(x, spec="+.3f") -> str:
    return "n/a" if x is None else format(x, spec)


def audit_tables(report: dict) -> dict[str, str]:
    """CSV tables keyed by file stem."""
    s = report["summary"]
    # explicit order: a reloaded report has sorted keys
    summary_rows = [("n", "", s["n"])]
    for attr in ATTRIBUTES:
        for cat in GROUP_LABELS[attr]:
            summary_rows.append((attr, cat, s["shares"][attr][cat]))
    for k in ("1", "2", "3"):
        summary_rows.append(("outcome_rank", k, s["outcome_counts"][k]))
    for key in ("h_index", "outcome"):
        for stat in ("mean", "sd", "median", "iqr", "min", "max"):
            summary_rows.append((key, stat, s[key][stat]))
    tables = {"summary": _csv(("characteristic", "statistic", "value"), summary_rows)}

    bal, ate, strat = [], [], []
    for t in report["treatments"]:
        for r in t.get("balance", {}).get("rows", []):
            bal.append((t["treatment"], r["covariate"], r["mean_treated_pre"], r["mean_control_pre"], r["smd_pre"],
                        r["mean_treated_post"], r["mean_control_post"], r["smd_post"]))
        for method, e in t.get("estimates", {}).items():
            ate.append((t["treatment"], GROUP_LABELS[t["treatment"]][1], GROUP_LABELS[t["treatment"]][0], method,
                        e["ate"], e["ci"][0], e["ci"][1], e["alpha"], e["n_treated"], e["n_control"], e["seed"],
                        e["status"]))
        for e in t.get("stratified", []):
            strat.append((t["treatment"], e["label"], e["ate"], e["ci"][0], e["ci"][1], e["n_treated"],
                          e["n_control"], e["status"]))
    tables["balance"] = _csv(("treatment", "covariate", "group1_mean_pre", "group0_mean_pre", "smd_pre",
                              "group1_mean_post", "group0_mean_post", "smd_post"), bal)
    tables["ate"] = _csv(("demographic", "treated", "comparison", "method", "ate", "ci_low", "ci_high", "alpha",
                          "n_treated", "n_control", "seed", "status"), ate)
    tables["stratified"] = _csv(("treatment", "stratum", "ate", "ci_low", "ci_high", "n_treated", "n_control",
                                 "status"), strat)
    tables["intersectional"] = _csv(("subgroup", "ate_ipw", "ate_lr", "n_members", "status"), [
        (r["subgroup"], r["ate_ipw"], r["ate_lr"], r["n_members"], r["status"])
        for r in report["intersectional"]["rows"]])
    return tables


def audit_text(report: dict) -> str:
    out = ["== Dataset overview ==", format_summary(report["summary"])]
    out.append("== Covariate balance before/after IPW ==")
    for t in report["treatments"]:
        if "balance" not in t:
            out.append(f"{t['treatment']}: {t.get('error', 'inestimable')}\n")
            continue
        header = ("Comparison", "Covariate", "G1 Mean (Pre)", "G0 Mean (Pre)", "SMD (Pre)",
                  "G1 Mean (Post)", "G0 Mean (Post)", "SMD (Post)")
        lo, hi = GROUP_LABELS[t["treatment"]]
        rows = [(f"{t['treatment'].title()} ({hi} vs. {lo})", r["covariate"], f"{r['mean_treated_pre']:.3f}",
                 f"{r['mean_control_pre']:.3f}", f"{r['smd_pre']:.2f}", f"{r['mean_treated_post']:.3f}",
                 f"{r['mean_control_post']:.3f}", f"{r['smd_post']:.2f}") for r in t["balance"]["rows"]]
        out.append(align_table([header, *rows]))
    out.append("== Average treatment effects ==")
    header = ("Demo.", "Treat.", "Comp.", "Method", "ATE", "95% CI")
    rows = []
    for t in report["treatments"]:
        lo, hi = GROUP_LABELS[t["treatment"]]
        for method, e in t.get("estimates", {}).items():
            rows.append((t["treatment"].title(), hi, lo, method, _fmt(e["ate"]),
                         f"({_fmt(e['ci'][0], '.3f')}, {_fmt(e['ci'][1], '.3f')})"))
    out.append(align_table([header, *rows]) + f"sign convention: {report['sign_convention']}\n")
    out.append("== Stratified IPW effects ==")
    rows = [(t["treatment"], e["label"], _fmt(e["ate"]), f"({_fmt(e['ci'][0], '.3f')}, {_fmt(e['ci'][1], '.3f')})",
             e["status"]) for t in report["treatments"] for e in t.get("stratified", [])]
    out.append(align_table([("Treatment", "Stratum", "ATE", "95% CI", "Status"), *rows]))
    out.append("== Intersectional effects (membership vs. all others) ==")
    rows = [(r["subgroup"], _fmt(r["ate_ipw"]), _fmt(r["ate_lr"])) for r in report["intersectional"]["rows"]]
    out.append(align_table([("Demographic Group", "ATE (IPW)", "ATE (LR)"), *rows]))
    return "\n".join(out)


def audit_figures(report: dict) -> dict[str, str]:
    figs = {}
    for attr, ov in report["figures_data"]["propensity_overlap"].items():
        lo, hi = GROUP_LABELS[attr]
        figs[f"propensity_overlap_{attr}"] = svg.histogram(
            {f"{hi} (treated)": ov["treated"], f"{lo} (control)": ov["control"]}, ov["edges"],
            f"Propensity score overlap: {attr}", "estimated propensity score")
    for attr, cur in report["figures_data"]["acceptance_curves"].items():
        lo, hi = GROUP_LABELS[attr]
        figs[f"acceptance_vs_h_index_{attr}"] = svg.line_chart(
            {f"{lo} ({attr}=0)": list(zip(cur["h_index_mid"], cur["group0"])),
             f"{hi} ({attr}=1)": list(zip(cur["h_index_mid"], cur["group1"]))},
            f"Acceptance rate vs. h-index by {attr}", "max h-index (bin mean)", "share accepted (rank >= 2)")
    rows = []
    for t in report["treatments"]:
        for method, e in t.get("estimates", {}).items():
            rows.append((f"{t['treatment']} {'IPW' if method == 'ipw' else 'LR'}", e["ate"], e["ci"][0], e["ci"][1]))
    figs["ate_forest"] = svg.forest_plot(rows, "Average treatment effects (95% CI)")
    return figs


# ---------------------------------------------------------------- fairness experiment views


def sweep_tables(rows) -> dict[str, str]:
    header = ("lambda", "status", "ate_race", "ate_gender", "ate_country", "ndcg", "race_gap", "gender_gap",
              "country_gap", "race_parity_gap", "country_parity_gap", "seed")
    body = []
    for r in rows:
        if r.get("status") != "ok":
            body.append((r["lambda"], r.get("status"), *[None] * 9, r.get("seed")))
            continue
        body.append((r["lambda"], "ok", r["ate_race"], r["ate_gender"], r["ate_country"], r["ndcg"],
                     r["rank_gaps"]["race"], r["rank_gaps"]["gender"], r["rank_gaps"]["country"],
                     r["parity_gaps"]["race"], r["parity_gaps"]["country"], r["seed"]))
    return {"sweep": _csv(header, body)}


def sweep_figure(rows) -> str:
    ok = [r for r in rows if r.get("status") == "ok"]
    series = {f"{a.title()}": [(r["lambda"], r[f"ate_{a}"]) for r in ok] for a in ("race", "gender", "country")}
    return svg.line_chart(series, "Causal bias (ATE of model scores) vs. lambda", "lambda",
                          "IPW ATE of score", hline=0.0)


def ablation_tables(rows) -> dict[str, str]:
    header = ("weighting", "w_race", "w_country", "lambda", "race_gap", "country_gap", "gender_gap", "ndcg", "status")
    return {"ablation": _csv(header, [
        (r["label"], r["w_race"], r["w_country"], r["lambda"], r.get("race_gap"), r.get("country_gap"),
         r.get("gender_gap"), r.get("ndcg"), r["status"]) for r in rows])}


def ablation_text(rows) -> str:
    header = ("Fairness Weighting (W_r:W_c)", "Race", "Country", "Gender", "NDCG")
    body = [(r["label"], _fmt(r.get("race_gap"), ".1f"), _fmt(r.get("country_gap"), ".1f"),
             _fmt(r.get("gender_gap"), ".1f"), _fmt(r.get("ndcg"), ".4f")) for r in rows]
    return align_table([header, *body]) + f"NDCG: {NDCG_DEFINITION}\n"


def comparison_text(table) -> str:
    header = ("Metric", "Baseline", "Fair")
    return align_table([header, *[(name, f"{b:.4f}" if "NDCG" in name else f"{b:.1f}",
                                   f"{f:.4f}" if "NDCG" in name else f"{f:.1f}") for name, b, f in table]])
