import numpy as np
import pytest

from causal_audit.data import Dataset

# Strong-confounding SCM preset shared by the recovery, balance and coverage checks.
STRONG = dict(
    coef_conf_institution=-2.0,
    coef_conf_quality=15.0,
    coef_outcome_prestige=1.0,
    outcome_thresholds=(-0.6, 0.6),
    base_rates={"race": 0.5, "gender": 0.473, "country": 0.253},
)

# Race and country both biased, no confounding: the ranker experiments.
BIASED = dict(coef_conf_institution=0.0, tau_race=-0.8, tau_country=-0.8)


def make_ds(race, outcome, h_index=None, prestige=None, gender=None, country=None, ids=None):
    n = len(race)
    rng = np.random.default_rng(12345)
    return Dataset(
        ids=ids if ids is not None else [f"p{i}" for i in range(n)],
        race=race,
        gender=gender if gender is not None else rng.integers(0, 2, n),
        country=country if country is not None else rng.integers(0, 2, n),
        h_index=h_index if h_index is not None else rng.uniform(0, 60, n),
        prestige=prestige if prestige is not None else rng.integers(0, 2, n).astype(float),
        outcome=outcome,
    )


@pytest.fixture
def small_ds():
    rng = np.random.default_rng(3)
    n = 60
    return make_ds(rng.integers(0, 2, n), rng.integers(1, 4, n))


def finite_difference_check(seed, h=1e-6):
    """Max relative error between analytic and central-difference gradients of the total loss
    for one random small network, labels, group flags and fairness configuration."""
    from causal_audit.fairrank import FairnessConfig, _forward, _sigmoid, init_params, loss_and_grad, total_loss

    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 21))
    d_in = int(rng.integers(2, 6))
    hidden = tuple(int(x) for x in rng.integers(1, 7, size=int(rng.integers(1, 3))))
    dims = (d_in, *hidden, 1)
    params = init_params(dims, rng)
    params = [p + rng.normal(0, 0.3, p.shape) for p in params]
    X = rng.normal(size=(n, d_in))
    y = rng.integers(0, 2, n).astype(float)
    race = rng.random(n) < 0.4
    country = rng.random(n) < 0.4
    race[0], country[1] = True, True
    cfg = FairnessConfig(float(rng.uniform(0, 10)), float(rng.uniform(0, 3)), float(rng.uniform(0, 3)))
    groups = {"race": race, "country": country}

    def objective(ps):
        logits, _ = _forward(ps, X)
        return total_loss(_sigmoid(logits), y, groups, cfg)

    _, grads, _, _ = loss_and_grad(params, X, y, groups, cfg)
    worst = 0.0
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            num = (objective(plus) - objective(minus)) / (2 * h)
            ana = grads[k][idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    return worst


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
