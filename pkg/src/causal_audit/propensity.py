"""Logistic propensity model fitted by Newton/IRLS maximum likelihood."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, PaperRecord, TreatmentSpec, treatment_arrays
from .errors import ConvergenceError, DegenerateCovariateError, SeparationWarning, ShapeError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
# Largest standardized-scale coefficient magnitude accepted without a ridge
# penalty before the fit is declared (quasi-)separated.
SEPARATION_CAP = 25.0

_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coefficients: tuple[float, ...]
    covariate_names: tuple[str, ...]
    fit_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if len(self.coefficients) != len(self.covariate_names):
            raise ShapeError("one coefficient per covariate required")

    @property
    def converged(self) -> bool:
        return bool(self.fit_meta.get("converged", False))

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.coefficients):
            raise ShapeError(f"expected {len(self.coefficients)} covariates, got {X.shape[1]}")
        return self.intercept + X @ np.asarray(self.coefficients)

    def predict(self, X) -> np.ndarray:
        """Propensity scores, kept strictly inside (0, 1)."""
        return np.clip(_sigmoid(self.linear_predictor(X)), _P_LO, _P_HI)

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": list(self.coefficients),
            "covariate_names": list(self.covariate_names),
            "fit_meta": self.fit_meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(d["intercept"], d["coefficients"], d["covariate_names"], d.get("fit_meta", {}))


def _sigmoid(x):
    # split branches avoid overflow warnings for large |x|
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _loglik(Z, t, beta, ridge):
    eta = Z @ beta
    ll = np.sum(t * eta - np.logaddexp(0.0, eta))
    return ll - 0.5 * ridge * np.sum(beta[1:] ** 2)


def fit_logistic_arrays(X, t, covariate_names=None, tol: float = DEFAULT_TOL,
                        max_iter: int = DEFAULT_MAX_ITER, ridge: float = 0.0,
                        warn: bool = True) -> LogisticModel:
    """Maximum-likelihood logistic regression of ``t`` on ``X`` plus intercept.

    Columns are standardized internally; ``ridge`` penalises the squared
    standardized slopes (never the intercept). Convergence is declared when
    the Euclidean norm of the per-observation mean score falls below ``tol``.
    A separated fit is returned unconverged with ``fit_meta["separation"]``
    set, after a :class:`SeparationWarning` unless ``warn`` is false.
    """
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    n, p = X.shape
    names = tuple(covariate_names) if covariate_names is not None else tuple(f"x{j}" for j in range(p))
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates must be finite")

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    for j in range(p):
        if sd[j] == 0:
            raise DegenerateCovariateError(names[j])
    Z = np.column_stack([np.ones(n), (X - mu) / sd])

    beta = np.zeros(p + 1)
    pbar = min(max(t.mean(), 1e-12), 1 - 1e-12)
    beta[0] = np.log(pbar / (1 - pbar))
    penalty = np.full(p + 1, ridge)
    penalty[0] = 0.0

    ll = _loglik(Z, t, beta, ridge)
    trace = [float(ll)]
    gnorm = np.inf
    separated = False
    it = 0
    for it in range(1, max_iter + 1):
        prob = _sigmoid(Z @ beta)
        grad = Z.T @ (t - prob) - penalty * beta
        gnorm = float(np.linalg.norm(grad) / n)
        if gnorm <= tol:
            it -= 1
            break
        w = prob * (1 - prob)
        H = (Z * w[:, None]).T @ Z + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = grad / n
        accepted = False
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            ll_new = _loglik(Z, t, cand, ridge)
            if ll_new >= ll:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            # gradient-ascent fallback with a backtracking step
            scale = 1.0 / n
            for _ in range(60):
                cand = beta + scale * grad
                ll_new = _loglik(Z, t, cand, ridge)
                if ll_new >= ll:
                    accepted = True
                    break
                scale *= 0.5
        if not accepted:
            break
        beta, ll = cand, ll_new
        trace.append(float(ll))
        if ridge == 0 and np.any(np.abs(beta[1:]) > SEPARATION_CAP):
            separated = True
            break

    prob = _sigmoid(Z @ beta)
    gnorm = float(np.linalg.norm(Z.T @ (t - prob) - penalty * beta) / n)
    coefs = beta[1:] / sd
    intercept = float(beta[0] - np.sum(beta[1:] * mu / sd))
    converged = gnorm <= tol and not separated
    meta = {
        "iterations": it,
        "final_gradient_norm": gnorm,
        "ridge_penalty": float(ridge),
        "tol": float(tol),
        "converged": bool(converged),
        "separation": bool(separated),
        "loglik_trace": trace,
    }
    model = LogisticModel(intercept, coefs, names, meta)
    if separated:
        if not warn:
            return model
        warnings.warn(
            "quasi-complete separation: standardized coefficient exceeded "
            f"{SEPARATION_CAP:g}; refit with ridge > 0",
            SeparationWarning,
            stacklevel=2,
        )
        return model
    if not converged:
        raise ConvergenceError(
            f"logistic fit did not converge in {max_iter} iterations (gradient norm {gnorm:.3g})", model
        )
    return model


def fit_logistic(ds: Dataset, spec: TreatmentSpec, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, ridge: float = 0.0) -> LogisticModel:
    t, X, _ = treatment_arrays(ds, spec, require_covariates=True)
    return fit_logistic_arrays(X, t, spec.covariates, tol=tol, max_iter=max_iter, ridge=ridge)


def covariate_matrix(ds: Dataset, names) -> np.ndarray:
    return np.column_stack([ds.column(c).astype(float) for c in names])


def propensity_scores(m: LogisticModel, ds: Dataset, spec: TreatmentSpec | None = None) -> np.ndarray:
    names = spec.covariates if spec is not None else m.covariate_names
    if tuple(names) != m.covariate_names:
        raise ShapeError(f"model covariates {m.covariate_names} differ from {tuple(names)}")
    return m.predict(covariate_matrix(ds, names))


def predict_propensity(m: LogisticModel, r: PaperRecord, spec: TreatmentSpec) -> float:
    """Score one record: sigmoid of the fitted linear predictor, strictly inside (0, 1)."""
    if len(spec.covariates) != len(m.coefficients):
        raise ShapeError(f"spec has {len(spec.covariates)} covariates, model has {len(m.coefficients)}")
    x = np.array([float(getattr(r, c)) for c in spec.covariates])
    if not np.all(np.isfinite(x)):
        raise ValueError("record covariates must be finite")
    return float(m.predict(x)[0])
