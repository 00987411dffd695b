"""Ranking utility and group-fairness metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InestimableError, UndefinedMetricError

# Recorded in every metric bundle so numbers stay comparable across runs.
NDCG_DEFINITION = "gain = raw relevance, discount = log2(position + 1)"


@dataclass(frozen=True, eq=False)
class RankedList:
    """Items in presentation order (position 1 first)."""

    ids: tuple
    scores: np.ndarray
    relevance: np.ndarray
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        s = np.asarray(self.scores, dtype=float)
        r = np.asarray(self.relevance, dtype=float)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "relevance", r)
        object.__setattr__(self, "groups", {k: np.asarray(v, dtype=np.int64) for k, v in self.groups.items()})
        n = len(self.ids)
        if len(s) != n or len(r) != n or any(len(v) != n for v in self.groups.values()):
            raise DomainError("ids, scores, relevance and group flags must align")
        if len(set(self.ids)) != n:
            raise DomainError("ids must be unique")
        if n > 1 and np.any(np.diff(s) > 0):
            raise DomainError("scores must be non-increasing down the list")

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_scores(cls, ids, scores, relevance, groups=None) -> "RankedList":
        """Sort descending by score, ties by ascending id."""
        ids = list(ids)
        scores = np.asarray(scores, dtype=float)
        order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
        relevance = np.asarray(relevance)
        groups = {k: np.asarray(v)[order] for k, v in (groups or {}).items()}
        return cls([ids[i] for i in order], scores[order], relevance[order], groups)


def dcg(relevance, k: int | None = None) -> float:
    rel = np.asarray(relevance, dtype=float)
    if k is not None:
        rel = rel[:k]
    return float(np.sum(rel / np.log2(np.arange(2, len(rel) + 2))))


def ndcg(rl, k: int | None = None) -> float:
    """Normalised DCG of the list order (or of a bare relevance sequence)."""
    rel = np.asarray(rl.relevance if isinstance(rl, RankedList) else rl, dtype=float)
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    ideal = dcg(np.sort(rel)[::-1], k)
    if not ideal > 0:
        raise UndefinedMetricError("NDCG undefined: no positive relevance in the list")
    return dcg(rel, k) / ideal


def _flag(rl: RankedList, group_flag) -> np.ndarray:
    if isinstance(group_flag, str):
        if group_flag not in rl.groups:
            raise DomainError(f"unknown group flag {group_flag!r}")
        return rl.groups[group_flag]
    g = np.asarray(group_flag, dtype=np.int64)
    if len(g) != len(rl):
        raise DomainError("group flag length differs from list length")
    return g


def rank_gap(rl: RankedList, group_flag) -> float:
    """Mean 1-based position of group 1 minus that of group 0 (positive: group 1 ranked worse)."""
    g = _flag(rl, group_flag)
    pos = np.arange(1, len(g) + 1)
    if not (g == 1).any() or not (g == 0).any():
        raise InestimableError("rank gap needs both groups in the list")
    return float(pos[g == 1].mean() - pos[g == 0].mean())


def average_ranks(rl: RankedList, group_flag) -> tuple[float, float]:
    g = _flag(rl, group_flag)
    pos = np.arange(1, len(g) + 1)
    if not (g == 1).any() or not (g == 0).any():
        raise InestimableError("average ranks need both groups in the list")
    return float(pos[g == 0].mean()), float(pos[g == 1].mean())


def parity_gap(predictions, group_flag) -> float:
    p = np.asarray(predictions, dtype=float)
    g = np.asarray(group_flag)
    if not (g == 1).any() or not (g == 0).any():
        raise InestimableError("parity gap needs both groups")
    return float(abs(p[g == 1].mean() - p[g == 0].mean()))


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise DomainError("pearson_r needs two equal-length vectors of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise DomainError("pearson_r undefined for a zero-variance vector")
    r = np.dot(dx, dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))
