"""ATE estimation: weighted difference in means, regression adjustment,
percentile bootstrap, and stratified / intersectional breakdowns."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import GROUP_LABELS, Dataset, TreatmentSpec, align_table, treatment_arrays
from .errors import (
    CausalAuditError,
    CollinearityError,
    DegenerateGroupError,
    InestimableError,
    ShapeError,
    UnstableEstimateError,
)
from .propensity import DEFAULT_MAX_ITER, DEFAULT_TOL, fit_logistic_arrays
from .weighting import WeightSet, ipw_weights_arrays

SIGN_CONVENTION = "treated_minus_control; higher outcome is better; negative means the treated group is disadvantaged"
METHODS = ("ipw", "linear_regression")
MIN_BOOT = 200
MAX_FAILURE_SHARE = 0.10


def worker_count(n_jobs: int | None = None) -> int:
    if n_jobs is not None:
        return max(1, int(n_jobs))
    env = os.environ.get("CAUSAL_AUDIT_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


@dataclass(frozen=True)
class CausalEstimate:
    ate: float
    ci_low: float
    ci_high: float
    alpha: float = 0.05
    method: str = "ipw"
    n_treated: int = 0
    n_control: int = 0
    seed: int = 0
    treatment: str = ""
    label: str = ""
    n_boot: int = 0
    n_failed: int = 0
    outside_ci: bool = False
    status: str = "ok"
    note: str = ""

    @classmethod
    def inestimable(cls, reason: str, **kw) -> "CausalEstimate":
        nan = float("nan")
        return cls(nan, nan, nan, status="inestimable", note=reason, **kw)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else float(x)

        return {
            "ate": num(self.ate),
            "ci": [num(self.ci_low), num(self.ci_high)],
            "alpha": self.alpha,
            "method": self.method,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "seed": self.seed,
            "sign_convention": SIGN_CONVENTION,
            "treatment": self.treatment,
            "label": self.label,
            "n_boot": self.n_boot,
            "n_failed": self.n_failed,
            "outside_ci": self.outside_ci,
            "status": self.status,
            "note": self.note,
        }


# ---------------------------------------------------------------- point estimators


def ate_ipw_arrays(t, y, w) -> float:
    t = np.asarray(t)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    tr = t == 1
    w1, w0 = w[tr].sum(), w[~tr].sum()
    if not (w1 > 0 and w0 > 0):
        raise DegenerateGroupError("a treatment group has zero total weight")
    return float(np.dot(w[tr], y[tr]) / w1 - np.dot(w[~tr], y[~tr]) / w0)


def ate_ipw(ds: Dataset, spec: TreatmentSpec, weights: WeightSet) -> float:
    """Weighted mean outcome of treated rows minus that of control rows."""
    t, _, y = treatment_arrays(ds, spec)
    if len(weights) != len(ds):
        raise ShapeError(f"{len(weights)} weights for {len(ds)} rows")
    return ate_ipw_arrays(t, y, weights.weights)


def naive_difference(ds: Dataset, spec: TreatmentSpec) -> float:
    t, _, y = treatment_arrays(ds, spec)
    return float(y[t == 1].mean() - y[t == 0].mean())


def _dependent_columns(D: np.ndarray, names) -> list[str]:
    kept: list[int] = []
    dependent = []
    rank = 0
    for j in range(D.shape[1]):
        r = np.linalg.matrix_rank(D[:, kept + [j]])
        if r > rank:
            kept.append(j)
            rank = r
        else:
            dependent.append(names[j])
    return dependent


def ols_treatment_coef(t, X, y, names=("treatment",)) -> float:
    """OLS of ``y`` on intercept, treatment and covariates; returns the treatment slope."""
    t = np.asarray(t, dtype=float)
    X = np.asarray(X, dtype=float).reshape(len(t), -1)
    D = np.column_stack([np.ones(len(t)), t, X])
    colnames = ["intercept", *names]
    if len(colnames) < D.shape[1]:
        colnames += [f"x{j}" for j in range(len(colnames) - 1, D.shape[1] - 1)]
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise CollinearityError(_dependent_columns(D, colnames))
    coef, *_ = np.linalg.lstsq(D, np.asarray(y, dtype=float), rcond=None)
    return float(coef[1])


def ate_linear_regression(ds: Dataset, spec: TreatmentSpec) -> float:
    t, X, y = treatment_arrays(ds, spec)
    return ols_treatment_coef(t, X, y, (spec.treatment_attr, *spec.covariates))


def ipw_fit_arrays(t, X, y, names, stabilized=True, clip=None, ridge=0.0,
                   tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Fit propensities, weight, and estimate. Returns ``(ate, model, weights)``."""
    model = fit_logistic_arrays(X, t, names, tol=tol, max_iter=max_iter, ridge=ridge, warn=False)
    if model.fit_meta.get("separation"):
        raise InestimableError("propensity model is separated; refit with ridge > 0")
    ws = ipw_weights_arrays(t, model.predict(X), stabilized=stabilized, clip=clip)
    return ate_ipw_arrays(t, y, ws.weights), model, ws


def ipw_pipeline(ds: Dataset, spec: TreatmentSpec, stabilized: bool = True, clip=None,
                 ridge: float = 0.0, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    t, X, y = treatment_arrays(ds, spec, require_covariates=True)
    return ipw_fit_arrays(t, X, y, spec.covariates, stabilized, clip, ridge, tol, max_iter)


def estimator_for(method: str, **opts) -> Callable[[Dataset, TreatmentSpec], float]:
    """Pure ``(dataset, spec) -> ate`` callable; IPW refits the propensity model each call."""
    if method == "ipw":
        def ipw(ds, spec):
            return ipw_pipeline(ds, spec, **opts)[0]
        return ipw
    if method == "linear_regression":
        return ate_linear_regression
    if method == "naive":
        return naive_difference
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------- bootstrap


def child_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))


def bootstrap_replicates(estimator, ds: Dataset, spec: TreatmentSpec, n_boot: int = 1000,
                         seed: int = 0, n_jobs: int | None = None):
    """Row-resampled estimator values. Returns ``(replicates, n_failed)``.

    Resample ``r`` draws from its own child stream of ``seed`` so the result
    does not depend on evaluation order or worker count.
    """
    if n_boot < MIN_BOOT:
        raise ValueError(f"n_boot must be >= {MIN_BOOT}, got {n_boot}")
    n = len(ds)

    def one(r: int) -> float:
        idx = child_rng(seed, r).integers(0, n, n)
        try:
            v = float(estimator(ds.take(idx), spec))
        except (CausalAuditError, ValueError, ArithmeticError, np.linalg.LinAlgError):
            return float("nan")
        return v

    workers = worker_count(n_jobs)
    if workers == 1:
        values = [one(r) for r in range(n_boot)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(one, range(n_boot)))
    values = np.asarray(values)
    ok = np.isfinite(values)
    n_failed = int((~ok).sum())
    if n_failed > MAX_FAILURE_SHARE * n_boot:
        raise UnstableEstimateError(n_failed, n_boot)
    return values[ok], n_failed


def percentile_interval(replicates, alpha: float = 0.05) -> tuple[float, float]:
    lo, hi = np.quantile(np.asarray(replicates, dtype=float), [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def bootstrap_ci(estimator, ds: Dataset, spec: TreatmentSpec, n_boot: int = 1000,
                 alpha: float = 0.05, seed: int = 0, n_jobs: int | None = None) -> tuple[float, float]:
    reps, _ = bootstrap_replicates(estimator, ds, spec, n_boot=n_boot, seed=seed, n_jobs=n_jobs)
    return percentile_interval(reps, alpha)


def estimate(ds: Dataset, spec: TreatmentSpec, method: str = "ipw", n_boot: int = 1000,
             alpha: float = 0.05, seed: int = 0, n_jobs: int | None = None, label: str = "",
             **opts) -> CausalEstimate:
    """Point estimate on the full sample plus percentile-bootstrap interval."""
    t = ds.column(spec.treatment_attr)
    n1 = int(t.sum())
    counts = dict(n_treated=n1, n_control=len(ds) - n1, alpha=alpha, method=method, seed=seed,
                  treatment=spec.treatment_attr, label=label)
    est = estimator_for(method, **opts)
    try:
        point = est(ds, spec)
        reps, failed = bootstrap_replicates(est, ds, spec, n_boot=n_boot, seed=seed, n_jobs=n_jobs)
    except CausalAuditError as exc:
        return CausalEstimate.inestimable(str(exc), **counts)
    lo, hi = percentile_interval(reps, alpha)
    return CausalEstimate(point, lo, hi, n_boot=n_boot, n_failed=failed,
                          outside_ci=not (lo <= point <= hi), **counts)


# ---------------------------------------------------------------- breakdowns


def quantile_strata(x, n_strata: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratum index per row from empirical quantiles; boundary ties go to the lower stratum."""
    x = np.asarray(x, dtype=float)
    if n_strata < 1:
        raise ValueError("n_strata must be >= 1")
    bounds = np.quantile(x, np.arange(1, n_strata) / n_strata)
    return np.searchsorted(bounds, x, side="left"), bounds


def stratified_ate(ds: Dataset, spec: TreatmentSpec, strat_var: str = "h_index", n_strata: int = 4,
                   n_boot: int = 1000, alpha: float = 0.05, seed: int = 0,
                   n_jobs: int | None = None, **opts) -> list[CausalEstimate]:
    """Run the full IPW pipeline separately inside each quantile stratum."""
    strata, bounds = quantile_strata(ds.column(strat_var), n_strata)
    edges = [float(ds.column(strat_var).min()), *map(float, bounds), float(ds.column(strat_var).max())]
    out = []
    for k in range(n_strata):
        idx = np.flatnonzero(strata == k)
        label = f"Q{k + 1}: {strat_var} {'[' if k == 0 else '('}{edges[k]:.4g}, {edges[k + 1]:.4g}]"
        sub = ds.take(idx, provenance="subset")
        t = sub.column(spec.treatment_attr)
        n1 = int(t.sum())
        if len(idx) == 0 or n1 == 0 or n1 == len(idx):
            out.append(CausalEstimate.inestimable(
                "stratum lacks a treatment group", method="ipw", n_treated=n1,
                n_control=len(idx) - n1, alpha=alpha, seed=seed, treatment=spec.treatment_attr, label=label))
            continue
        out.append(estimate(sub, spec, "ipw", n_boot=n_boot, alpha=alpha, seed=seed,
                            n_jobs=n_jobs, label=label, **opts))
    return out


@dataclass(frozen=True)
class SubgroupEstimate:
    subgroup: str
    cell: tuple[int, int]
    n_members: int
    ate_ipw: float
    ate_lr: float
    status: str = "ok"
    note: str = ""

    def to_dict(self) -> dict:
        def num(x):
            return None if not math.isfinite(x) else float(x)

        return {"subgroup": self.subgroup, "cell": list(self.cell), "n_members": self.n_members,
                "ate_ipw": num(self.ate_ipw), "ate_lr": num(self.ate_lr),
                "status": self.status, "note": self.note}


def intersectional_ate(ds: Dataset, group_def=("race", "gender"), method: str = "both",
                       covariates=("h_index", "prestige"), **opts) -> list[SubgroupEstimate]:
    """Membership in each (a, b) cell versus everyone else, one row per cell.

    ``method`` is ``"ipw"``, ``"linear_regression"`` or ``"both"``; skipped
    methods report NaN.
    """
    a_attr, b_attr = group_def
    if a_attr == b_attr:
        raise ValueError("group_def needs two distinct attributes")
    for c in covariates:
        if c in group_def:
            raise ValueError(f"covariate {c!r} defines the subgroups")
    a, b = ds.column(a_attr), ds.column(b_attr)
    X = np.column_stack([ds.column(c).astype(float) for c in covariates]) if covariates else np.empty((len(ds), 0))
    y = ds.outcome_values()
    rows = []
    for av in (0, 1):
        for bv in (0, 1):
            name = f"{GROUP_LABELS[a_attr][av]}, {GROUP_LABELS[b_attr][bv]}"
            t = ((a == av) & (b == bv)).astype(np.int64)
            m = int(t.sum())
            if m == 0 or m == len(t):
                rows.append(SubgroupEstimate(name, (av, bv), m, float("nan"), float("nan"),
                                             "inestimable", "empty subgroup or no comparison units"))
                continue
            ipw = lr = float("nan")
            notes = []
            if method in ("ipw", "both"):
                try:
                    ipw = ipw_fit_arrays(t, X, y, tuple(covariates), **opts)[0]
                except CausalAuditError as exc:
                    notes.append(f"ipw: {exc}")
            if method in ("linear_regression", "both"):
                try:
                    lr = ols_treatment_coef(t, X, y, ("member", *covariates))
                except CausalAuditError as exc:
                    notes.append(f"lr: {exc}")
            rows.append(SubgroupEstimate(name, (av, bv), m, ipw, lr,
                                         "partial" if notes else "ok", "; ".join(notes)))
    return rows


# ---------------------------------------------------------------- tables


def ate_table_text(estimates) -> str:
    header = ("Demo.", "Treat.", "Comp.", "ATE", "95% CI", "Method", "Status")
    body = []
    for e in estimates:
        comp, treat = GROUP_LABELS.get(e.treatment, ("0", "1"))
        if e.ok:
            body.append((e.label or e.treatment.title(), treat, comp, f"{e.ate:+.3f}",
                         f"({e.ci_low:.3f}, {e.ci_high:.3f})", e.method, e.status))
        else:
            body.append((e.label or e.treatment.title(), treat, comp, "n/a", "n/a", e.method, e.status))
    return align_table([header, *body]) + f"sign convention: {SIGN_CONVENTION}\n"


def intersectional_table_text(rows) -> str:
    def f(x):
        return "n/a" if not math.isfinite(x) else f"{x:+.3f}"

    header = ("Demographic Group", "ATE (IPW)", "ATE (LR)")
    return align_table([header, *[(r.subgroup, f(r.ate_ipw), f(r.ate_lr)) for r in rows]])
