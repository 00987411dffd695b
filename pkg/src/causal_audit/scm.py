"""Synthetic populations drawn from a structural causal model with known effects.

Graph: demographic treatment -> institution prestige -> quality (h-index),
and treatment, prestige and quality all feed a latent acceptance score that
is cut into ranks 1/2/3. Both potential outcomes are recorded per unit: they
share the unit's prestige, quality and noise draws and differ only in the
treatment indicator, so ``true_ate`` is the direct effect of the attribute
holding the unit's realised covariates fixed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .data import ATTRIBUTES, Dataset, PaperRecord
from .errors import ConfigError, DomainError

# Centre/scale used to put h-index on the latent scale; match the default marginals.
QUALITY_CENTER = 27.55
QUALITY_SCALE = 14.47


def _default_base_rates() -> dict:
    return {"race": 0.197, "gender": 0.473, "country": 0.253}


@dataclass(frozen=True)
class ScmConfig:
    n_units: int = 5000
    seed: int = 0
    treatment: str = "race"
    coef_conf_institution: float = -0.6
    coef_conf_quality: float = 10.0
    tau_race: float = -0.6
    tau_gender: float = 0.0
    tau_country: float = 0.0
    quality_noise_sd: float = 13.6
    outcome_thresholds: tuple[float, float] = (-1.15, -0.25)
    base_rates: dict = field(default_factory=_default_base_rates)
    # structural coefficients of the remaining edges
    prestige_intercept: float = -0.2
    quality_base: float = 23.3
    coef_outcome_quality: float = 0.5
    coef_outcome_prestige: float = 0.5
    outcome_noise_sd: float = 1.0
    # heterogeneity knobs, all off by default
    tau_quality_slope: float = 0.0
    tau_interaction: float = 0.0
    interaction_cell: tuple[int, int] = (1, 0)

    def __post_init__(self):
        object.__setattr__(self, "outcome_thresholds", tuple(float(x) for x in self.outcome_thresholds))
        object.__setattr__(self, "interaction_cell", tuple(int(x) for x in self.interaction_cell))
        object.__setattr__(self, "base_rates", dict(self.base_rates))
        self.validate()

    def validate(self) -> None:
        if isinstance(self.n_units, bool) or not isinstance(self.n_units, (int, np.integer)) or self.n_units <= 0:
            raise ConfigError("n_units", f"must be a positive integer, got {self.n_units!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) \
                or not -(2 ** 63) <= self.seed < 2 ** 64:
            raise ConfigError("seed", f"must be a 64-bit integer, got {self.seed!r}")
        if self.treatment not in ATTRIBUTES:
            raise ConfigError("treatment", f"must be one of {ATTRIBUTES}")
        if len(self.outcome_thresholds) != 2:
            raise ConfigError("outcome_thresholds", "exactly two cut points required")
        lo, hi = self.outcome_thresholds
        if not lo < hi:
            raise ConfigError("outcome_thresholds", f"must be strictly ascending, got {self.outcome_thresholds}")
        if not self.quality_noise_sd > 0:
            raise ConfigError("quality_noise_sd", f"must be > 0, got {self.quality_noise_sd}")
        if not self.outcome_noise_sd > 0:
            raise ConfigError("outcome_noise_sd", f"must be > 0, got {self.outcome_noise_sd}")
        if set(self.base_rates) != set(ATTRIBUTES):
            raise ConfigError("base_rates", f"needs exactly the keys {ATTRIBUTES}")
        for k, v in self.base_rates.items():
            if not 0.0 < float(v) < 1.0:
                raise ConfigError("base_rates", f"{k} rate must lie in (0, 1), got {v}")
        if any(c not in (0, 1) for c in self.interaction_cell) or len(self.interaction_cell) != 2:
            raise ConfigError("interaction_cell", "must be a (race, gender) pair of 0/1 values")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not np.isfinite(v):
                raise ConfigError(f.name, "must be finite")

    def tau(self, attr: str) -> float:
        return float(getattr(self, f"tau_{attr}"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outcome_thresholds"] = list(self.outcome_thresholds)
        d["interaction_cell"] = list(self.interaction_cell)
        d["base_rates"] = {k: float(self.base_rates[k]) for k in ATTRIBUTES}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScmConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown ScmConfig field")
        return cls(**d)


@dataclass(frozen=True)
class SyntheticUnit:
    record: PaperRecord
    y_if_treated: int
    y_if_control: int


@dataclass(frozen=True, eq=False)
class SyntheticData:
    """Columnar generator output: observed dataset plus both potential outcomes."""

    config: ScmConfig
    dataset: Dataset
    y_if_treated: np.ndarray
    y_if_control: np.ndarray

    @property
    def treatment(self) -> np.ndarray:
        return self.dataset.column(self.config.treatment)

    @property
    def units(self) -> list[SyntheticUnit]:
        return [SyntheticUnit(r, int(a), int(b))
                for r, a, b in zip(self.dataset.records, self.y_if_treated, self.y_if_control)]

    def true_ate(self) -> float:
        return float(np.mean(self.y_if_treated - self.y_if_control))

    def truth(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "treatment": self.config.treatment,
            "true_ate": self.true_ate(),
            "n_units": len(self.dataset),
        }


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _rank(latent: np.ndarray, thresholds) -> np.ndarray:
    return (1 + (latent > thresholds[0]).astype(np.int64) + (latent > thresholds[1]).astype(np.int64))


def simulate(config: ScmConfig) -> SyntheticData:
    """Draw one population. Draw order is fixed so equal configs give equal output."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_units
    demo = {a: (rng.random(n) < config.base_rates[a]).astype(np.int64) for a in ATTRIBUTES}
    t = demo[config.treatment]

    p_prestige = _sigmoid(config.prestige_intercept + config.coef_conf_institution * t)
    prestige = (rng.random(n) < p_prestige).astype(float)
    quality = np.maximum(0.0, rng.normal(config.quality_base + config.coef_conf_quality * prestige,
                                         config.quality_noise_sd))
    noise = rng.normal(0.0, config.outcome_noise_sd, n)
    zq = (quality - QUALITY_CENTER) / QUALITY_SCALE

    def latent(flags: dict) -> np.ndarray:
        score = config.coef_outcome_quality * zq + config.coef_outcome_prestige * prestige + noise
        for a in ATTRIBUTES:
            eff = config.tau(a)
            if a == config.treatment:
                eff = eff + config.tau_quality_slope * zq
            score = score + eff * flags[a]
        cell = (flags["race"] == config.interaction_cell[0]) & (flags["gender"] == config.interaction_cell[1])
        return score + config.tau_interaction * cell

    y1 = _rank(latent({**demo, config.treatment: np.ones(n, dtype=np.int64)}), config.outcome_thresholds)
    y0 = _rank(latent({**demo, config.treatment: np.zeros(n, dtype=np.int64)}), config.outcome_thresholds)
    y = np.where(t == 1, y1, y0)

    width = len(str(n - 1))
    ds = Dataset(
        ids=[f"s{i:0{width}d}" for i in range(n)],
        race=demo["race"], gender=demo["gender"], country=demo["country"],
        h_index=quality, prestige=prestige, outcome=y,
        provenance="synthetic",
    )
    return SyntheticData(config, ds, y1, y0)


def generate(config: ScmConfig) -> list[SyntheticUnit]:
    return simulate(config).units


def true_ate(units: Sequence[SyntheticUnit] | SyntheticData) -> float:
    """Mean of ``y_if_treated - y_if_control``: the estimand every estimator targets."""
    if isinstance(units, SyntheticData):
        if len(units.dataset) == 0:
            raise DomainError("true_ate of an empty population is undefined")
        return units.true_ate()
    units = list(units)
    if not units:
        raise DomainError("true_ate of an empty population is undefined")
    return sum(u.y_if_treated - u.y_if_control for u in units) / len(units)


def truth_json(data: SyntheticData) -> str:
    return json.dumps(data.truth(), indent=2, sort_keys=True) + "\n"
