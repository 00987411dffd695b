"""Fairness-regularized acceptance scorer.

A small ReLU network with a sigmoid output is trained by full-batch gradient
descent on binary cross-entropy plus ``lambda`` times a weighted sum of
squared gaps between each protected group's mean score and the overall mean
score (race and country). Gradients are derived by hand, including the
path through the group means.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import ATTRIBUTES, Dataset, TreatmentSpec
from .errors import CausalAuditError, DomainError, ShapeError, TrainingError
from .estimators import ipw_pipeline, worker_count
from .metrics import NDCG_DEFINITION, RankedList, average_ranks, ndcg, parity_gap, rank_gap

FEATURES = ("h_index_std", "prestige", "race", "gender", "country")
PENALIZED = ("race", "country")

_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class FairnessConfig:
    lam: float = 1.0
    w_race: float = 1.0
    w_country: float = 1.0

    def __post_init__(self):
        for name in ("lam", "w_race", "w_country"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be a finite non-negative number, got {v!r}")

    def weight(self, attr: str) -> float:
        return {"race": self.w_race, "country": self.w_country}[attr]

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "w_race": self.w_race, "w_country": self.w_country}

    @classmethod
    def from_dict(cls, d: dict) -> "FairnessConfig":
        return cls(d.get("lambda", d.get("lam", 1.0)), d.get("w_race", 1.0), d.get("w_country", 1.0))


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 2000
    lr: float = 0.05
    seed: int = 0
    hidden_dims: tuple[int, ...] = (16,)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.epochs < 0 or not self.lr > 0 or any(h < 1 for h in self.hidden_dims):
            raise DomainError("epochs >= 0, lr > 0 and positive hidden widths required")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "lr": self.lr, "seed": self.seed, "hidden_dims": list(self.hidden_dims)}


@dataclass(frozen=True, eq=False)
class RankerModel:
    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    fairness_config: FairnessConfig = field(default_factory=FairnessConfig)
    train_meta: dict = field(default_factory=dict)
    encoding: dict = field(default_factory=lambda: {"h_index_mean": 0.0, "h_index_sd": 1.0})
    loss_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        Ws = tuple(np.array(w, dtype=float).reshape(a, b) for w, a, b in zip(self.weights, dims[:-1], dims[1:]))
        bs = tuple(np.array(b, dtype=float).reshape(n) for b, n in zip(self.biases, dims[1:]))
        if len(Ws) != len(dims) - 1 or len(bs) != len(dims) - 1:
            raise ShapeError("one weight matrix and bias vector per layer required")
        if dims[-1] != 1:
            raise ShapeError("output layer must have width 1")
        for a in (*Ws, *bs):
            a.setflags(write=False)
        object.__setattr__(self, "weights", Ws)
        object.__setattr__(self, "biases", bs)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "activation": {"hidden": "relu", "output": "sigmoid"},
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "fairness_config": self.fairness_config.to_dict(),
            "alpha": None,
            "encoding": dict(self.encoding),
            "features": list(FEATURES),
            "seed": self.train_meta.get("seed"),
            "train_meta": self.train_meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RankerModel":
        return cls(d["layer_dims"], d["weights"], d["biases"], FairnessConfig.from_dict(d["fairness_config"]),
                   d.get("train_meta", {}), d.get("encoding", {"h_index_mean": 0.0, "h_index_sd": 1.0}))


# ---------------------------------------------------------------- forward pass


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(params, X):
    """Returns output logits and the per-layer cache needed for backprop."""
    a = X
    cache = [a]
    L = len(params) // 2
    for l in range(L):
        z = a @ params[2 * l] + params[2 * l + 1]
        if l < L - 1:
            a = np.maximum(z, 0.0)
            cache.append(z)
            cache.append(a)
        else:
            a = z
    return a[:, 0], cache


def forward_batch(m: RankerModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.layer_dims[0]:
        raise ShapeError(f"expected {m.layer_dims[0]} features, got shape {X.shape}")
    logits, _ = _forward(m.params, X)
    return np.clip(_sigmoid(logits), _P_LO, _P_HI)


def forward(m: RankerModel, features) -> float:
    x = np.asarray(features, dtype=float)
    if x.ndim != 1 or x.shape[0] != m.layer_dims[0]:
        raise ShapeError(f"expected {m.layer_dims[0]} features, got {x.shape}")
    return float(forward_batch(m, x[None, :])[0])


# ---------------------------------------------------------------- losses


def _group_flags(groups) -> dict:
    if isinstance(groups, dict):
        return {k: np.asarray(v, dtype=bool) for k, v in groups.items()}
    race, country = groups
    return {"race": np.asarray(race, dtype=bool), "country": np.asarray(country, dtype=bool)}


def fairness_loss(predictions, groups, cfg: FairnessConfig) -> float:
    """Weighted squared gaps between protected-group mean and overall mean prediction."""
    p = np.asarray(predictions, dtype=float)
    flags = _group_flags(groups)
    overall = p.mean()
    total = 0.0
    for attr in PENALIZED:
        w = cfg.weight(attr)
        if w == 0:
            continue
        g = flags[attr]
        if not g.any():
            raise DomainError(f"protected group {attr!r} is empty but has weight {w}")
        total += w * (p[g].mean() - overall) ** 2
    return float(total)


def prediction_loss(predictions, labels) -> float:
    p = np.clip(np.asarray(predictions, dtype=float), _P_LO, _P_HI)
    y = np.asarray(labels, dtype=float)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def total_loss(predictions, labels, groups, cfg: FairnessConfig) -> float:
    y = np.asarray(labels)
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be binary")
    loss = prediction_loss(predictions, labels)
    if cfg.lam == 0:
        return loss
    return loss + cfg.lam * fairness_loss(predictions, groups, cfg)


def loss_and_grad(params, X, y, groups, cfg: FairnessConfig):
    """Total loss and its gradient for every parameter array.

    Cross-entropy is evaluated on logits for stability. The fairness part
    back-propagates d/dy_p of ``w * (mean_G - mean_all)^2``, which is
    ``2 w (mean_G - mean_all) (1[p in G]/|G| - 1/N)``.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    logits, cache = _forward(params, X)
    pred = _sigmoid(logits)
    bce = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    dz = (pred - y) / n

    fair = 0.0
    if cfg.lam != 0:
        flags = _group_flags(groups)
        overall = pred.mean()
        dpred = np.zeros(n)
        for attr in PENALIZED:
            w = cfg.weight(attr)
            if w == 0:
                continue
            g = flags[attr]
            ng = int(g.sum())
            if ng == 0:
                raise DomainError(f"protected group {attr!r} is empty but has weight {w}")
            gap = pred[g].mean() - overall
            fair += w * gap * gap
            coef = 2.0 * w * gap
            dpred -= coef / n
            dpred[g] += coef / ng
        dz = dz + cfg.lam * dpred * pred * (1.0 - pred)

    grads = [None] * len(params)
    L = len(params) // 2
    delta = dz[:, None]
    for l in range(L - 1, -1, -1):
        a_prev = cache[0] if l == 0 else cache[2 * l]
        grads[2 * l] = a_prev.T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            z_prev = cache[2 * l - 1]
            delta = (delta @ params[2 * l].T) * (z_prev > 0)
    return bce + cfg.lam * fair, grads, bce, fair


# ---------------------------------------------------------------- data plumbing


def binary_labels(ds: Dataset) -> np.ndarray:
    """Accepted tiers (rank 2 or 3) map to 1, rank 1 to 0."""
    return (ds.outcome >= 2).astype(float)


def fit_encoding(ds: Dataset) -> dict:
    sd = float(ds.h_index.std())
    return {"h_index_mean": float(ds.h_index.mean()), "h_index_sd": sd if sd > 0 else 1.0}


def encode(ds: Dataset, encoding: dict) -> np.ndarray:
    h = (ds.h_index - encoding["h_index_mean"]) / encoding["h_index_sd"]
    return np.column_stack([h, ds.prestige, ds.race, ds.gender, ds.country]).astype(float)


def init_params(dims, rng: np.random.Generator) -> list[np.ndarray]:
    params = []
    for a, b in zip(dims[:-1], dims[1:]):
        params.append(rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)))
        params.append(np.zeros(b))
    return params


def train(ds: Dataset, cfg: FairnessConfig, hyper: TrainHyper | None = None, labels=None) -> RankerModel:
    """Full-batch gradient descent from a seed-determined He initialisation."""
    hyper = hyper or TrainHyper()
    if len(ds) == 0:
        raise DomainError("cannot train on an empty dataset")
    y = binary_labels(ds) if labels is None else np.asarray(labels, dtype=float)
    if y.min() == y.max():
        raise DomainError("both label classes must be present")
    enc = fit_encoding(ds)
    X = encode(ds, enc)
    groups = {"race": ds.race == 1, "country": ds.country == 1}
    dims = (X.shape[1], *hyper.hidden_dims, 1)
    params = init_params(dims, np.random.default_rng(hyper.seed))

    history = []
    last_ok = [p.copy() for p in params]
    loss = bce = fair = float("nan")
    for epoch in range(hyper.epochs + 1):
        loss, grads, bce, fair = loss_and_grad(params, X, y, groups, cfg)
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            state = RankerModel(dims, last_ok[0::2], last_ok[1::2], cfg, {"seed": hyper.seed, "epochs_run": epoch},
                                enc, tuple(history))
            raise TrainingError(f"loss became non-finite at epoch {epoch}", state, epoch)
        history.append(float(loss))
        if epoch == hyper.epochs:
            break
        last_ok = [p.copy() for p in params]
        params = [p - hyper.lr * g for p, g in zip(params, grads)]

    meta = {
        "epochs_run": hyper.epochs,
        "final_total_loss": float(loss),
        "final_prediction_loss": float(bce),
        "final_fairness_loss": float(fair),
        "seed": hyper.seed,
        "lr": hyper.lr,
    }
    return RankerModel(dims, params[0::2], params[1::2], cfg, meta, enc, tuple(history))


def score(m: RankerModel, ds: Dataset) -> np.ndarray:
    return forward_batch(m, encode(ds, m.encoding))


def rank(m: RankerModel, ds: Dataset) -> list[tuple[str, float, int]]:
    """Descending by score; equal scores fall back to ascending id."""
    s = score(m, ds)
    order = sorted(range(len(ds)), key=lambda i: (-s[i], ds.ids[i]))
    return [(str(ds.ids[i]), float(s[i]), k + 1) for k, i in enumerate(order)]


def ranked_list(ds: Dataset, scores, relevance=None) -> RankedList:
    rel = ds.outcome if relevance is None else relevance
    return RankedList.from_scores(ds.ids, scores, rel, {a: ds.column(a) for a in ATTRIBUTES})


# ---------------------------------------------------------------- experiments


def evaluate_scores(ds: Dataset, scores, relevance=None, covariates=("h_index", "prestige"),
                    with_ate: bool = True) -> dict:
    """Ranking, parity and IPW-ATE metrics for one vector of model scores."""
    rl = ranked_list(ds, scores, relevance)
    out = {"ndcg": ndcg(rl), "rank_gaps": {}, "avg_ranks": {}, "parity_gaps": {}, "ate": {}, "notes": []}
    for attr in ATTRIBUTES:
        try:
            out["rank_gaps"][attr] = rank_gap(rl, attr)
            r0, r1 = average_ranks(rl, attr)
            out["avg_ranks"][attr] = {"group0": r0, "group1": r1}
            out["parity_gaps"][attr] = parity_gap(scores, ds.column(attr))
        except CausalAuditError as exc:
            out["rank_gaps"][attr] = None
            out["avg_ranks"][attr] = None
            out["parity_gaps"][attr] = None
            out["notes"].append(f"{attr}: {exc}")
        if with_ate:
            try:
                spec = TreatmentSpec(attr, tuple(c for c in covariates if c != attr))
                out["ate"][attr] = ipw_pipeline(ds.with_outcome(scores), spec)[0]
            except CausalAuditError as exc:
                out["ate"][attr] = None
                out["notes"].append(f"ate {attr}: {exc}")
    return out


def _run_parallel(fn, items, n_jobs):
    workers = worker_count(n_jobs)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def lambda_sweep(ds: Dataset, lambdas, hyper: TrainHyper | None = None, w_race: float = 1.0,
                 w_country: float = 1.0, relevance=None, n_jobs: int | None = None,
                 return_models: bool = False):
    """One model per lambda, each re-initialised from ``hyper.seed``.

    Every row carries the IPW ATE of the model scores for each attribute,
    NDCG, rank gaps and parity gaps. Gender is never penalised and is
    reported as spillover. A failing point yields a row with ``status`` set.
    """
    hyper = hyper or TrainHyper()
    lambdas = [float(l) for l in lambdas]
    if any(l < 0 for l in lambdas):
        raise DomainError("lambdas must be non-negative")
    if lambdas != sorted(lambdas):
        raise DomainError("lambdas must be sorted ascending")

    def one(lam):
        cfg = FairnessConfig(lam, w_race, w_country)
        try:
            m = train(ds, cfg, hyper)
        except CausalAuditError as exc:
            return _failed_row({"lambda": lam}, exc), None
        ev = evaluate_scores(ds, score(m, ds), relevance)
        row = {
            "lambda": lam, "status": "ok",
            "ate_race": ev["ate"]["race"], "ate_gender": ev["ate"]["gender"], "ate_country": ev["ate"]["country"],
            "ndcg": ev["ndcg"], "rank_gaps": ev["rank_gaps"], "avg_ranks": ev["avg_ranks"],
            "parity_gaps": ev["parity_gaps"], "final_total_loss": m.train_meta["final_total_loss"],
            "alpha": None, "seed": hyper.seed, "notes": ev["notes"],
        }
        return row, m

    results = _run_parallel(one, lambdas, n_jobs)
    rows = [r for r, _ in results]
    return (rows, [m for _, m in results]) if return_models else rows


def _failed_row(base: dict, exc: Exception) -> dict:
    return {**base, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def ablation_label(w_race: float, w_country: float) -> str:
    if w_race == 0 and w_country == 0:
        return "Baseline (No Fairness)"
    pair = f"({w_race:g}:{w_country:g})"
    if w_race == w_country:
        return f"Balanced {pair}"
    return f"Race-Focused {pair}" if w_race > w_country else f"Country-Focused {pair}"


def ablation(ds: Dataset, weight_pairs, lambda_fixed: float = 1.0, hyper: TrainHyper | None = None,
             relevance=None, n_jobs: int | None = None, include_baseline: bool = True) -> list[dict]:
    """One model per (w_race, w_country) pair at a fixed lambda; baseline row first."""
    hyper = hyper or TrainHyper()
    pairs = [(float(a), float(b)) for a, b in weight_pairs]
    if any(a < 0 or b < 0 for a, b in pairs):
        raise DomainError("fairness weights must be non-negative")
    jobs = ([(0.0, 0.0, 0.0)] if include_baseline else []) + [(a, b, float(lambda_fixed)) for a, b in pairs]

    def one(job):
        a, b, lam = job
        base = {"label": ablation_label(a, b) if lam > 0 or (a, b) == (0, 0) else "Baseline (No Fairness)",
                "w_race": a, "w_country": b, "lambda": lam}
        try:
            m = train(ds, FairnessConfig(lam, a, b), hyper)
        except CausalAuditError as exc:
            return _failed_row(base, exc)
        ev = evaluate_scores(ds, score(m, ds), relevance, with_ate=False)
        return {**base, "status": "ok", "race_gap": ev["rank_gaps"]["race"],
                "country_gap": ev["rank_gaps"]["country"], "gender_gap": ev["rank_gaps"]["gender"],
                "ndcg": ev["ndcg"], "seed": hyper.seed}

    return _run_parallel(one, jobs, n_jobs)


def comparison_table(baseline: dict, fair: dict, attr: str = "race") -> list[tuple[str, float, float]]:
    """Baseline-vs-fair rows: average rank per group, rank gap and NDCG."""
    b0, f0 = baseline["avg_ranks"][attr], fair["avg_ranks"][attr]
    return [
        (f"Avg. Rank ({attr} = 0)", b0["group0"], f0["group0"]),
        (f"Avg. Rank ({attr} = 1)", b0["group1"], f0["group1"]),
        (f"Rank Gap ({attr} 1 - {attr} 0)", baseline["rank_gaps"][attr], fair["rank_gaps"][attr]),
        ("NDCG (Utility)", baseline["ndcg"], fair["ndcg"]),
    ]

