"""Inverse-propensity weights and standardized-mean-difference balance checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, TreatmentSpec, align_table, treatment_arrays
from .errors import DegenerateCovariateError, PositivityError, ShapeError

BALANCE_THRESHOLD = 0.1
DEFAULT_CLIP = (0.01, 0.99)


@dataclass(frozen=True, eq=False)
class WeightSet:
    weights: np.ndarray
    stabilized: bool
    clip_bounds: tuple[float, float] | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if not object.__getattribute__(self, "diagnostics"):
            object.__setattr__(self, "diagnostics", {
                "min": float(w.min()) if w.size else float("nan"),
                "max": float(w.max()) if w.size else float("nan"),
                "effective_sample_size": effective_sample_size(w) if w.size else 0.0,
            })

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, n: int) -> "WeightSet":
        return cls(np.ones(n), stabilized=False)


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


def ipw_weights_arrays(t, scores, stabilized: bool = True, clip=None) -> WeightSet:
    t = np.asarray(t)
    e = np.asarray(scores, dtype=float)
    if e.shape != t.shape:
        raise ShapeError(f"{e.shape[0]} scores for {t.shape[0]} rows")
    if clip is not None:
        lo, hi = clip
        if not 0.0 < lo < hi < 1.0:
            raise ValueError(f"clip bounds must satisfy 0 < lo < hi < 1, got {clip}")
        e = np.clip(e, lo, hi)
        clip = (float(lo), float(hi))
    bad = np.flatnonzero(~np.isfinite(e) | (e <= 0.0) | (e >= 1.0))
    if bad.size:
        raise PositivityError(bad + 1)
    treated = t == 1
    w = np.where(treated, 1.0 / e, 1.0 / (1.0 - e))
    if stabilized:
        p1 = treated.mean()
        w = w * np.where(treated, p1, 1.0 - p1)
    return WeightSet(w, stabilized=stabilized, clip_bounds=clip)


def ipw_weights(ds: Dataset, spec: TreatmentSpec, scores, stabilized: bool = True, clip=None) -> WeightSet:
    """IPW weights: ``1/e`` for treated rows and ``1/(1-e)`` for control rows.

    Stabilized weights multiply each group by its empirical share. ``clip``
    bounds the scores first; pass ``True`` for the default [0.01, 0.99].
    """
    t, _, _ = treatment_arrays(ds, spec)
    if clip is True:
        clip = DEFAULT_CLIP
    return ipw_weights_arrays(t, scores, stabilized=stabilized, clip=clip or None)


def smd_arrays(x, t, w=None, name: str = "covariate") -> float:
    x = np.asarray(x, dtype=float)
    t = np.asarray(t)
    x1, x0 = x[t == 1], x[t == 0]
    s1 = np.var(x1, ddof=1) if x1.size > 1 else 0.0
    s0 = np.var(x0, ddof=1) if x0.size > 1 else 0.0
    pooled = np.sqrt((s1 + s0) / 2.0)
    if not pooled > 0:
        raise DegenerateCovariateError(name)
    if w is None:
        m1, m0 = x1.mean(), x0.mean()
    else:
        w = np.asarray(w, dtype=float)
        m1 = np.average(x1, weights=w[t == 1])
        m0 = np.average(x0, weights=w[t == 0])
    return float((m1 - m0) / pooled)


def smd(ds: Dataset, spec: TreatmentSpec, covariate: str, weights: WeightSet | None = None) -> float:
    """Standardized mean difference, treated minus control.

    The denominator always uses unweighted group SDs so pre- and
    post-weighting values are on the same scale.
    """
    t, _, _ = treatment_arrays(ds, spec)
    w = None
    if weights is not None:
        if len(weights) != len(ds):
            raise ShapeError(f"{len(weights)} weights for {len(ds)} rows")
        w = weights.weights
    return smd_arrays(ds.column(covariate), t, w, name=covariate)


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    mean_treated_pre: float
    mean_control_pre: float
    smd_pre: float
    mean_treated_post: float
    mean_control_post: float
    smd_post: float

    # the report's headline columns
    @property
    def mean_treated(self) -> float:
        return self.mean_treated_post

    @property
    def mean_control(self) -> float:
        return self.mean_control_post


@dataclass(frozen=True)
class BalanceReport:
    rows: tuple[BalanceRow, ...]
    threshold: float = BALANCE_THRESHOLD
    treatment: str = ""

    @property
    def balanced(self) -> bool:
        return all(abs(r.smd_post) < self.threshold for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "treatment": self.treatment,
            "threshold": self.threshold,
            "balanced": self.balanced,
            "rows": [
                {
                    "covariate": r.covariate,
                    "mean_treated_pre": r.mean_treated_pre,
                    "mean_control_pre": r.mean_control_pre,
                    "smd_pre": r.smd_pre,
                    "mean_treated_post": r.mean_treated_post,
                    "mean_control_post": r.mean_control_post,
                    "smd_post": r.smd_post,
                }
                for r in self.rows
            ],
        }

    def to_text(self) -> str:
        header = ("Covariate", "Group 1 Mean (Pre)", "Group 0 Mean (Pre)", "SMD (Pre)",
                  "Group 1 Mean (Post)", "Group 0 Mean (Post)", "SMD (Post)")
        body = [
            (r.covariate, f"{r.mean_treated_pre:.3f}", f"{r.mean_control_pre:.3f}", f"{r.smd_pre:.2f}",
             f"{r.mean_treated_post:.3f}", f"{r.mean_control_post:.3f}", f"{r.smd_post:.2f}")
            for r in self.rows
        ]
        status = "balanced" if self.balanced else "NOT balanced"
        return align_table([header, *body]) + f"threshold |SMD| < {self.threshold:g}: {status}\n"


def balance_report(ds: Dataset, spec: TreatmentSpec, weights: WeightSet,
                   threshold: float = BALANCE_THRESHOLD) -> BalanceReport:
    t, _, _ = treatment_arrays(ds, spec)
    if len(weights) != len(ds):
        raise ShapeError(f"{len(weights)} weights for {len(ds)} rows")
    w = weights.weights
    rows = []
    for cov in spec.covariates:
        x = ds.column(cov).astype(float)
        rows.append(BalanceRow(
            covariate=cov,
            mean_treated_pre=float(x[t == 1].mean()),
            mean_control_pre=float(x[t == 0].mean()),
            smd_pre=smd_arrays(x, t, None, cov),
            mean_treated_post=float(np.average(x[t == 1], weights=w[t == 1])),
            mean_control_post=float(np.average(x[t == 0], weights=w[t == 0])),
            smd_post=smd_arrays(x, t, w, cov),
        ))
    return BalanceReport(tuple(rows), threshold, spec.treatment_attr)
