import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_audit.data import PaperRecord, TreatmentSpec
from causal_audit.errors import ConvergenceError, DegenerateCovariateError, SeparationWarning, ShapeError
from causal_audit.propensity import LogisticModel, fit_logistic, fit_logistic_arrays, predict_propensity

from conftest import make_ds

# 20-row fixture: two covariates, overlapping groups.
FIX_X = np.array([
    [12.0, 1], [30.5, 0], [8.0, 0], [45.0, 1], [22.0, 1], [17.5, 0], [60.0, 1], [5.0, 0], [33.0, 0], [27.0, 1],
    [14.0, 0], [39.0, 1], [21.0, 0], [50.0, 0], [9.5, 1], [26.0, 0], [31.0, 1], [18.0, 1], [42.0, 0], [11.0, 0],
])
FIX_T = np.array([1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 0, 1, 1])


def irls_oracle(X, t, iters=200):
    """Plain textbook IRLS on the raw design, no standardization or line search."""
    D = np.column_stack([np.ones(len(t)), X])
    beta = np.zeros(D.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-D @ beta))
        W = p * (1 - p)
        z = D @ beta + (t - p) / W
        new = np.linalg.solve(D.T @ (W[:, None] * D), D.T @ (W * z))
        if np.max(np.abs(new - beta)) < 1e-14:
            beta = new
            break
        beta = new
    return beta


def test_matches_irls_oracle_on_fixture():
    m = fit_logistic_arrays(FIX_X, FIX_T, ("h_index", "prestige"))
    ref = irls_oracle(FIX_X, FIX_T)
    got = np.array([m.intercept, *m.coefficients])
    assert np.max(np.abs(got - ref)) < 1e-6
    assert m.converged
    assert m.fit_meta["final_gradient_norm"] <= m.fit_meta["tol"]


def test_fair_coin_treatment_gives_near_zero_coefficients():
    rng = np.random.default_rng(2024)
    n = 4000
    ds = make_ds(rng.integers(0, 2, n), rng.integers(1, 4, n),
                 h_index=rng.uniform(0, 60, n), prestige=rng.integers(0, 2, n).astype(float))
    m = fit_logistic(ds, TreatmentSpec("race"))
    assert abs(m.intercept) < 0.1
    # slopes on standardized scale so the bound is unit-free
    sd = np.array([ds.h_index.std(), ds.prestige.std()])
    assert np.all(np.abs(np.array(m.coefficients) * sd) < 0.1)


def test_perfect_predictor_warns_separation():
    x = np.arange(40, dtype=float)
    t = (x >= 20).astype(int)
    with pytest.warns(SeparationWarning, match="ridge"):
        m = fit_logistic_arrays(x[:, None], t, ("h_index",))
    assert m.fit_meta["separation"] and not m.converged
    m2 = fit_logistic_arrays(x[:, None], t, ("h_index",), ridge=1.0)
    assert m2.converged and m2.coefficients[0] > 0


def test_ridge_shrinks_slopes():
    free = fit_logistic_arrays(FIX_X, FIX_T)
    shrunk = fit_logistic_arrays(FIX_X, FIX_T, ridge=5.0)
    assert np.linalg.norm(shrunk.coefficients) < np.linalg.norm(free.coefficients)


def test_non_convergence_raises_with_last_iterate():
    with pytest.raises(ConvergenceError) as exc:
        fit_logistic_arrays(FIX_X, FIX_T, max_iter=1)
    assert isinstance(exc.value.model, LogisticModel)
    assert exc.value.model.fit_meta["iterations"] == 1


def test_constant_covariate_is_degenerate():
    X = np.column_stack([FIX_X[:, 0], np.ones(20)])
    with pytest.raises(DegenerateCovariateError):
        fit_logistic_arrays(X, FIX_T, ("h_index", "prestige"))


def test_loglik_trace_non_decreasing():
    m = fit_logistic_arrays(FIX_X, FIX_T)
    assert np.all(np.diff(m.fit_meta["loglik_trace"]) >= -1e-12)


def test_zero_model_scores_half():
    m = LogisticModel(0.0, (0.0, 0.0), ("h_index", "prestige"))
    r = PaperRecord("a", 1, 0, 0, 33.0, 1.0, 2)
    assert predict_propensity(m, r, TreatmentSpec("race")) == 0.5


def test_closed_form_sigmoid():
    m = LogisticModel(0.0, (1.0,), ("h_index",))
    r = PaperRecord("a", 1, 0, 0, 2.0, 1.0, 2)
    assert predict_propensity(m, r, TreatmentSpec("race", ("h_index",))) == pytest.approx(1 / (1 + math.exp(-2)))
    assert round(predict_propensity(m, r, TreatmentSpec("race", ("h_index",))), 5) == 0.88080


def test_covariate_count_mismatch():
    m = LogisticModel(0.0, (1.0,), ("h_index",))
    with pytest.raises(ShapeError):
        predict_propensity(m, PaperRecord("a", 1, 0, 0, 2.0, 1.0, 2), TreatmentSpec("race"))


def test_model_json_round_trip():
    m = fit_logistic_arrays(FIX_X, FIX_T, ("h_index", "prestige"))
    import json
    back = LogisticModel.from_dict(json.loads(m.to_json()))
    assert np.array_equal(back.predict(FIX_X), m.predict(FIX_X))


@settings(max_examples=40, deadline=None)
@given(b0=st.floats(-3, 3), b1=st.floats(0.01, 3), x=st.floats(-50, 50), dx=st.floats(1e-3, 10))
def test_score_monotone_and_in_open_interval(b0, b1, x, dx):
    m = LogisticModel(b0, (b1,), ("h_index",))
    lo, hi = m.predict(np.array([[x], [x + dx]]))
    assert 0.0 < lo <= hi < 1.0
    if 1e-12 < lo and hi < 1 - 1e-12:
        assert lo < hi


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_irls_oracle_agreement_random(seed):
    rng = np.random.default_rng(seed)
    n = 200
    X = np.column_stack([rng.normal(30, 10, n), rng.integers(0, 2, n)])
    t = (rng.random(n) < 1 / (1 + np.exp(-(-1 + 0.03 * X[:, 0] - 0.5 * X[:, 1])))).astype(int)
    with warnings.catch_warnings():
        warnings.simplefilter("error", SeparationWarning)
        m = fit_logistic_arrays(X, t)
    ref = irls_oracle(X, t)
    assert np.allclose([m.intercept, *m.coefficients], ref, atol=1e-6, rtol=0)
