"""Record schema, treatment specification and CSV ingestion."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateGroupError, DomainError, IntegrityError, RowError, SchemaError

COLUMNS = ("id", "race", "gender", "country", "h_index", "prestige", "outcome")
ATTRIBUTES = ("race", "gender", "country")
BINARY = ATTRIBUTES
COVARIATE_CHOICES = ("h_index", "prestige") + ATTRIBUTES
OUTCOME_LEVELS = (1, 2, 3)

# Human-readable labels for the 0/1 coding of each sensitive attribute.
GROUP_LABELS = {
    "race": ("Majority", "Minority"),
    "gender": ("Male", "Female"),
    "country": ("Global North", "Global South"),
}


@dataclass(frozen=True)
class PaperRecord:
    id: str
    race: int
    gender: int
    country: int
    h_index: float
    prestige: float
    outcome: int

    def __post_init__(self):
        for name in BINARY:
            if getattr(self, name) not in (0, 1):
                raise DomainError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")
        if not (math.isfinite(self.h_index) and self.h_index >= 0):
            raise DomainError(f"h_index must be finite and >= 0, got {self.h_index!r}")
        if not (math.isfinite(self.prestige) and 0.0 <= self.prestige <= 1.0):
            raise DomainError(f"prestige must lie in [0, 1], got {self.prestige!r}")
        if self.outcome not in OUTCOME_LEVELS:
            raise DomainError(f"outcome must be one of 1, 2, 3, got {self.outcome!r}")


@dataclass(frozen=True)
class TreatmentSpec:
    """Role assignment: which attribute is treated, which columns adjust for confounding."""

    treatment_attr: str
    covariates: tuple[str, ...] = ("h_index", "prestige")
    outcome_attr: str = "outcome"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.treatment_attr not in ATTRIBUTES:
            raise DomainError(f"treatment_attr must be one of {ATTRIBUTES}, got {self.treatment_attr!r}")
        if self.treatment_attr in self.covariates:
            raise DomainError(f"treatment {self.treatment_attr!r} cannot also be a covariate")
        for c in self.covariates:
            if c not in COVARIATE_CHOICES:
                raise DomainError(f"unknown covariate {c!r}")
        if len(set(self.covariates)) != len(self.covariates):
            raise DomainError("covariates must be distinct")
        if self.outcome_attr != "outcome":
            raise DomainError("outcome_attr is fixed to 'outcome'")

    def to_dict(self) -> dict:
        return {"treatment_attr": self.treatment_attr, "covariates": list(self.covariates),
                "outcome_attr": self.outcome_attr}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable columnar collection of paper records.

    Columns are numpy arrays; ``records`` materialises :class:`PaperRecord`
    objects on demand. Bootstrap resamples built with :meth:`take` may repeat
    ids and skip validation.
    """

    ids: np.ndarray
    race: np.ndarray
    gender: np.ndarray
    country: np.ndarray
    h_index: np.ndarray
    prestige: np.ndarray
    outcome: np.ndarray
    provenance: str = "ingested"
    _extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in COLUMNS[1:]:
            arr = np.asarray(getattr(self, name), dtype=float if name in ("h_index", "prestige") else np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ids = np.asarray(self.ids, dtype=object)
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        n = len(ids)
        for name in COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise IntegrityError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if self.provenance not in ("synthetic", "ingested", "resample", "subset"):
            raise DomainError(f"unknown provenance {self.provenance!r}")

    @classmethod
    def from_records(cls, records: Iterable[PaperRecord], provenance: str = "ingested") -> "Dataset":
        records = list(records)
        ds = cls(
            ids=[r.id for r in records],
            race=[r.race for r in records],
            gender=[r.gender for r in records],
            country=[r.country for r in records],
            h_index=[r.h_index for r in records],
            prestige=[r.prestige for r in records],
            outcome=[r.outcome for r in records],
            provenance=provenance,
        )
        ds.validate()
        return ds

    def validate(self) -> None:
        for name in BINARY:
            col = getattr(self, name)
            bad = np.flatnonzero((col != 0) & (col != 1))
            if bad.size:
                raise RowError(int(bad[0]) + 1, f"{name} must be 0 or 1")
        bad = np.flatnonzero(~np.isfinite(self.h_index) | (self.h_index < 0))
        if bad.size:
            raise RowError(int(bad[0]) + 1, "h_index must be finite and >= 0")
        bad = np.flatnonzero(~np.isfinite(self.prestige) | (self.prestige < 0) | (self.prestige > 1))
        if bad.size:
            raise RowError(int(bad[0]) + 1, "prestige must lie in [0, 1]")
        bad = np.flatnonzero(~np.isin(self.outcome, OUTCOME_LEVELS))
        if bad.size:
            raise RowError(int(bad[0]) + 1, "outcome must be 1, 2 or 3")
        seen: set[str] = set()
        for i, rid in enumerate(self.ids):
            if rid in seen:
                raise IntegrityError(f"duplicate id {rid!r} at row {i + 1}")
            seen.add(rid)

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return len(self) == len(other) and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in ("ids",) + COLUMNS[1:]
        )

    __hash__ = None

    @property
    def records(self) -> list[PaperRecord]:
        return [
            PaperRecord(str(i), int(r), int(g), int(c), float(h), float(p), int(y))
            for i, r, g, c, h, p, y in zip(self.ids, self.race, self.gender, self.country,
                                           self.h_index, self.prestige, self.outcome)
        ]

    def column(self, name: str) -> np.ndarray:
        if name == "id":
            return self.ids
        if name not in COLUMNS:
            raise SchemaError(name, f"unknown column {name!r}")
        return getattr(self, name)

    def take(self, idx, provenance: str = "resample") -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            ids=self.ids[idx], race=self.race[idx], gender=self.gender[idx], country=self.country[idx],
            h_index=self.h_index[idx], prestige=self.prestige[idx], outcome=self.outcome[idx],
            provenance=provenance,
            _extra={k: v[idx] for k, v in self._extra.items()},
        )

    def with_outcome(self, outcome) -> "Dataset":
        """Copy with the outcome column replaced (no range check, used for model scores)."""
        return Dataset(
            ids=self.ids, race=self.race, gender=self.gender, country=self.country,
            h_index=self.h_index, prestige=self.prestige, outcome=self.outcome,
            provenance=self.provenance, _extra={"outcome": np.asarray(outcome, dtype=float)},
        )

    def outcome_values(self) -> np.ndarray:
        """Outcome as floats; honours a score override installed by :meth:`with_outcome`."""
        if "outcome" in self._extra:
            return self._extra["outcome"]
        return self.outcome.astype(float)


def treatment_arrays(ds: Dataset, spec: TreatmentSpec, require_covariates: bool = False):
    """Return ``(t, X, y)`` for the given role assignment.

    Raises :class:`DegenerateGroupError` when either treatment group is empty.
    """
    t = ds.column(spec.treatment_attr).astype(np.int64)
    n1 = int(t.sum())
    if n1 == 0 or n1 == len(t):
        which = "treated" if n1 == 0 else "control"
        raise DegenerateGroupError(f"no {which} units for treatment {spec.treatment_attr!r}")
    if require_covariates and not spec.covariates:
        raise DomainError("propensity estimation needs at least one covariate")
    if spec.covariates:
        X = np.column_stack([ds.column(c).astype(float) for c in spec.covariates])
    else:
        X = np.empty((len(t), 0))
    return t, X, ds.outcome_values()


# ---------------------------------------------------------------- CSV I/O


def _parse_binary(value: str, name: str, row: int) -> int:
    v = value.strip()
    if v not in ("0", "1"):
        raise RowError(row, f"{name} must be 0 or 1, got {value!r}")
    return int(v)


def _parse_real(value: str, name: str, row: int) -> float:
    v = value.strip()
    if v == "":
        raise RowError(row, f"missing value for {name}")
    try:
        x = float(v)
    except ValueError:
        raise RowError(row, f"{name} is not a number: {value!r}") from None
    if not math.isfinite(x):
        raise RowError(row, f"{name} must be finite, got {value!r}")
    return x


def parse_csv(source, provenance: str = "ingested") -> Dataset:
    """Read the canonical CSV schema from a path or text stream.

    Rows are numbered from 1 (the first data row) in error messages.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_csv(fh, provenance=provenance)

    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("id", "empty input: header row required") from None
    if header and header[0].startswith("﻿"):
        header[0] = header[0][1:]
    for col in COLUMNS:
        if col not in header:
            raise SchemaError(col)
    unknown = [h for h in header if h not in COLUMNS]
    if unknown:
        raise SchemaError(unknown[0], f"unexpected column {unknown[0]!r}")
    pos = {c: header.index(c) for c in COLUMNS}

    cols: dict[str, list] = {c: [] for c in COLUMNS}
    seen: dict[str, int] = {}
    for rownum, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and row[0].strip() == ""):
            continue
        if len(row) != len(header):
            raise RowError(rownum, f"expected {len(header)} fields, got {len(row)}")
        rid = row[pos["id"]].strip()
        if rid == "":
            raise RowError(rownum, "missing value for id")
        if rid in seen:
            raise IntegrityError(f"duplicate id {rid!r} at rows {seen[rid]} and {rownum}")
        seen[rid] = rownum
        h = _parse_real(row[pos["h_index"]], "h_index", rownum)
        if h < 0:
            raise RowError(rownum, f"h_index must be >= 0, got {h}")
        p = _parse_real(row[pos["prestige"]], "prestige", rownum)
        if not 0.0 <= p <= 1.0:
            raise RowError(rownum, f"prestige must lie in [0, 1], got {p}")
        y_raw = row[pos["outcome"]].strip()
        if y_raw not in ("1", "2", "3"):
            raise RowError(rownum, f"outcome must be 1, 2 or 3, got {y_raw!r}")
        cols["id"].append(rid)
        for name in BINARY:
            cols[name].append(_parse_binary(row[pos[name]], name, rownum))
        cols["h_index"].append(h)
        cols["prestige"].append(p)
        cols["outcome"].append(int(y_raw))

    return Dataset(
        ids=cols["id"], race=cols["race"], gender=cols["gender"], country=cols["country"],
        h_index=cols["h_index"], prestige=cols["prestige"], outcome=cols["outcome"],
        provenance=provenance,
    )


def _fmt_real(x: float) -> str:
    return repr(float(x))


def write_csv(ds: Dataset, target=None) -> str:
    """Serialise ``ds``; floats use shortest round-trip repr so parsing is exact."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for i in range(len(ds)):
        w.writerow([
            ds.ids[i], int(ds.race[i]), int(ds.gender[i]), int(ds.country[i]),
            _fmt_real(ds.h_index[i]), _fmt_real(ds.prestige[i]), int(ds.outcome[i]),
        ])
    text = buf.getvalue()
    if target is not None:
        if isinstance(target, (str, Path)):
            Path(target).write_text(text, encoding="utf-8")
        else:
            target.write(text)
    return text


# ---------------------------------------------------------------- summary


def _describe(x: np.ndarray) -> dict:
    q25, q50, q75 = np.percentile(x, [25, 50, 75])
    return {
        "mean": float(np.mean(x)),
        "sd": float(np.std(x, ddof=1)) if len(x) > 1 else 0.0,
        "median": float(q50),
        "iqr": float(q75 - q25),
        "min": float(np.min(x)),
        "max": float(np.max(x)),
    }


def summarize(ds: Dataset) -> dict:
    """Descriptive statistics in the layout of a dataset-overview table."""
    if len(ds) == 0:
        raise DomainError("cannot summarize an empty dataset")
    n = len(ds)
    shares = {}
    for attr in ATTRIBUTES:
        col = ds.column(attr)
        p1 = float(col.mean())
        lo, hi = GROUP_LABELS[attr]
        shares[attr] = {lo: 1.0 - p1, hi: p1}
    counts = {str(k): int((ds.outcome == k).sum()) for k in OUTCOME_LEVELS}
    return {
        "n": n,
        "shares": shares,
        "outcome_counts": counts,
        "h_index": _describe(ds.h_index),
        "prestige_mean": float(ds.prestige.mean()),
        "outcome": _describe(ds.outcome.astype(float)),
    }


def format_summary(summary: dict) -> str:
    """Aligned text rendering of :func:`summarize` output."""
    rows: list[tuple[str, str, str]] = [("Characteristic", "Category / Statistic", "Value")]
    n = summary["n"]
    for k in ("3", "2", "1"):
        c = summary["outcome_counts"][k]
        rows.append(("Outcome rank", f"Rank {k}", f"{c} ({100.0 * c / n:.1f}%)"))
    names = {"race": "Author Race", "gender": "Author Gender", "country": "Country of Affiliation"}
    for attr, label in names.items():
        for cat, share in summary["shares"][attr].items():
            rows.append((label, cat, f"{100.0 * share:.1f}%"))
    for key, label in (("h_index", "Max h-index"), ("outcome", "Acceptance Ranking")):
        d = summary[key]
        rows.append((label, "Mean (SD)", f"{d['mean']:.2f} ({d['sd']:.2f})"))
        rows.append((label, "Median (IQR)", f"{d['median']:.1f} ({d['iqr']:.1f})"))
        rows.append((label, "Range", f"{d['min']:g}-{d['max']:g}"))
    return align_table(rows)


def align_table(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for j, r in enumerate(rows):
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True)
