"""Tabular ingestion, distribution summaries and binarization into predicate columns."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DataError, StructuralError
from .formula import EQ, GT, Predicate

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
OTHER = "OTHER"
SUMMARY_QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_RARE_FRACTION = 0.05


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    kind: str
    description: str = ""
    unit: str = ""

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "description": self.description, "unit": self.unit}


@dataclass
class FeatureSummary:
    name: str
    kind: str
    count: int = 0
    missing: int = 0
    min: float | None = None
    max: float | None = None
    mean: float | None = None
    quantiles: dict = field(default_factory=dict)
    frequencies: dict = field(default_factory=dict)
    # sorted non-missing values; kept in memory for quantile_thresholds, never serialized
    values: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self):
        out = {"name": self.name, "kind": self.kind, "count": self.count, "missing": self.missing}
        if self.kind == NUMERIC:
            out.update(
                min=self.min,
                max=self.max,
                mean=self.mean,
                quantiles={f"{q:g}": v for q, v in self.quantiles.items()},
            )
        else:
            out["frequencies"] = dict(self.frequencies)
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(
            name=data["name"],
            kind=data["kind"],
            count=data.get("count", 0),
            missing=data.get("missing", 0),
            min=data.get("min"),
            max=data.get("max"),
            mean=data.get("mean"),
            quantiles={float(q): v for q, v in data.get("quantiles", {}).items()},
            frequencies=dict(data.get("frequencies", {})),
        )


@dataclass
class BinarizationSpec:
    """Thresholds per numeric feature and kept categories per categorical feature.

    ``categorical_plan`` maps a feature to ``{"keep": [...], "collapse_other": bool}``;
    ``keep`` is stored in column order (descending training frequency).
    """

    numeric_thresholds: dict = field(default_factory=dict)
    categorical_plan: dict = field(default_factory=dict)

    @property
    def features(self):
        return set(self.numeric_thresholds) | set(self.categorical_plan)

    def to_dict(self):
        return {
            "numeric_thresholds": {k: list(v) for k, v in self.numeric_thresholds.items()},
            "categorical_plan": {
                k: {"keep": list(v["keep"]), "collapse_other": bool(v["collapse_other"])}
                for k, v in self.categorical_plan.items()
            },
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            numeric_thresholds={
                k: sorted(float(t) for t in v) for k, v in data.get("numeric_thresholds", {}).items()
            },
            categorical_plan={
                k: {"keep": list(v.get("keep", [])), "collapse_other": bool(v.get("collapse_other", True))}
                for k, v in data.get("categorical_plan", {}).items()
            },
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def validate(self, schema, summaries=None):
        kinds = {f.name: f.kind for f in schema}
        by_name = {s.name: s for s in summaries or ()}
        for name, thresholds in self.numeric_thresholds.items():
            if kinds.get(name) != NUMERIC:
                raise DataError(f"binarization spec: {name!r} is not a numeric feature")
            if list(thresholds) != sorted(set(thresholds)):
                raise DataError(f"binarization spec: thresholds for {name!r} must ascend")
            s = by_name.get(name)
            if s is not None and s.min is not None:
                for t in thresholds:
                    if not s.min < t < s.max:
                        raise DataError(
                            f"binarization spec: threshold {t} for {name!r} outside ({s.min}, {s.max})"
                        )
        for name, plan in self.categorical_plan.items():
            if kinds.get(name) != CATEGORICAL:
                raise DataError(f"binarization spec: {name!r} is not a categorical feature")
            s = by_name.get(name)
            if s is not None:
                for c in plan["keep"]:
                    if c not in s.frequencies:
                        raise DataError(f"binarization spec: category {c!r} of {name!r} not in data")


@dataclass
class BinarizedDataset:
    predicates: tuple
    matrix: np.ndarray
    labels: np.ndarray
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        self.predicates = tuple(self.predicates)
        self.matrix = np.asarray(self.matrix, dtype=bool).reshape(-1, len(self.predicates))
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.matrix.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"matrix has {self.matrix.shape[0]} rows but there are {self.labels.shape[0]} labels"
            )

    def __len__(self):
        return self.labels.shape[0]

    @property
    def names(self):
        return [str(p) for p in self.predicates]

    @classmethod
    def from_boolean(cls, matrix, labels, names=None):
        matrix = np.asarray(matrix, dtype=bool)
        names = names or [f"f{i}" for i in range(matrix.shape[1])]
        return cls(tuple(Predicate(n) for n in names), matrix, labels)

    def subset(self, rows):
        rows = np.asarray(rows)
        ids = self.row_ids[rows] if self.row_ids is not None else rows
        return BinarizedDataset(self.predicates, self.matrix[rows], self.labels[rows], ids)

    def column_map(self, predicates):
        """Indices of ``predicates`` in this dataset's table."""
        own = {p.key: i for i, p in enumerate(self.predicates)}
        out = []
        for p in predicates:
            if p.key not in own:
                raise StructuralError(f"dataset has no column for predicate {p}")
            out.append(own[p.key])
        return out


# ---------------------------------------------------------------------------
# ingestion


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _sniff_delimiter(header_line):
    return ";" if header_line.count(";") > header_line.count(",") else ","


def load_csv(path, target_column, positive_label="yes", descriptions=None):
    """Read a comma- or semicolon-delimited file with a header row.

    Returns ``(rows, schema, labels)`` where ``rows`` is a DataFrame of the raw
    feature values (numeric columns as float, missing as NaN; categorical as
    str, missing as None).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    text = path.read_text(encoding="utf-8-sig")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DataError(f"{path} is empty")
    delimiter = _sniff_delimiter(lines[0])
    reader = csv.reader(lines, delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    if target_column not in header:
        raise DataError(f"target column {target_column!r} not found in {path}")
    records, bad = [], []
    for lineno, record in enumerate(reader, start=2):
        if not record or all(not c.strip() for c in record):
            continue
        if len(record) != len(header):
            bad.append(lineno)
            continue
        records.append([c.strip() for c in record])
    if bad:
        shown = ", ".join(map(str, bad[:10]))
        raise DataError(f"{path}: {len(bad)} malformed row(s) at line(s) {shown}")
    raw = pd.DataFrame(records, columns=header, dtype=object)
    labels = (raw[target_column] == str(positive_label)).to_numpy(dtype=bool) if len(raw) else np.zeros(0, bool)
    descriptions = descriptions or {}
    schema, columns = [], {}
    for name in header:
        if name == target_column:
            continue
        col = raw[name] if len(raw) else pd.Series([], dtype=object)
        present = [v for v in col if v != ""]
        if present and all(_is_number(v) for v in present):
            kind = NUMERIC
            columns[name] = pd.to_numeric(col.replace("", np.nan), errors="coerce").astype(float)
        else:
            kind = CATEGORICAL
            columns[name] = col.where(col != "", None)
        schema.append(FeatureSchema(name, kind, descriptions.get(name, "")))
    rows = pd.DataFrame(columns, index=pd.RangeIndex(len(raw)))
    logger.info("loaded %d rows, %d features from %s", len(rows), len(schema), path)
    return rows, schema, labels


def infer_schema(frame):
    schema = []
    for name in frame.columns:
        kind = NUMERIC if pd.api.types.is_numeric_dtype(frame[name]) and not pd.api.types.is_bool_dtype(frame[name]) else CATEGORICAL
        schema.append(FeatureSchema(str(name), kind))
    return schema


# ---------------------------------------------------------------------------
# summaries


def nearest_rank(sorted_values, q):
    n = len(sorted_values)
    rank = max(1, math.ceil(round(q * n, 9)))
    return float(sorted_values[min(rank, n) - 1])


def summarize(rows, schema):
    summaries = []
    if len(rows) == 0:
        return summaries
    for feat in schema:
        col = rows[feat.name]
        if feat.kind == NUMERIC:
            values = np.sort(col.dropna().to_numpy(dtype=float))
            s = FeatureSummary(feat.name, NUMERIC, count=len(col), missing=int(col.isna().sum()), values=values)
            if len(values):
                s.min, s.max, s.mean = float(values[0]), float(values[-1]), float(values.mean())
                s.quantiles = {q: nearest_rank(values, q) for q in SUMMARY_QUANTILES}
        else:
            filled = col.fillna(OTHER)
            counts = filled.value_counts()
            freq = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            s = FeatureSummary(
                feat.name, CATEGORICAL, count=len(col), missing=int(col.isna().sum()),
                frequencies={k: int(v) for k, v in freq},
            )
        summaries.append(s)
    return summaries


def quantile_thresholds(summary, count):
    """Cut points at the interior quantiles ``i / (count + 1)``, strictly inside the range."""
    if summary.kind != NUMERIC:
        raise DataError(f"{summary.name!r} is not numeric")
    if count < 1:
        raise ValueError("count must be >= 1")
    values = summary.values
    if values is None:
        raise DataError(f"summary of {summary.name!r} carries no values; recompute it from data")
    if len(values) == 0:
        return []
    lo, hi = values[0], values[-1]
    cuts = {nearest_rank(values, i / (count + 1)) for i in range(1, count + 1)}
    return sorted(t for t in cuts if lo < t < hi)


def default_spec(summaries, threshold_count=9, rare_fraction=DEFAULT_RARE_FRACTION, features=None):
    numeric, categorical = {}, {}
    for s in summaries:
        if features is not None and s.name not in features:
            continue
        if s.kind == NUMERIC:
            numeric[s.name] = quantile_thresholds(s, threshold_count)
        else:
            total = sum(s.frequencies.values())
            keep = [c for c, n in s.frequencies.items() if c != OTHER and total and n / total >= rare_fraction]
            categorical[s.name] = {"keep": keep, "collapse_other": len(keep) < len(s.frequencies)}
    return BinarizationSpec(numeric, categorical)


def merge_thresholds(spec, thresholds):
    """Replace the thresholds of covered features, leaving the rest untouched."""
    merged = {k: list(v) for k, v in spec.numeric_thresholds.items()}
    for name, values in thresholds.items():
        if name in merged:
            merged[name] = sorted(set(values))
    return BinarizationSpec(merged, {k: dict(v) for k, v in spec.categorical_plan.items()})


# ---------------------------------------------------------------------------
# binarization


def spec_predicates(spec, schema):
    preds = []
    for feat in schema:
        if feat.name in spec.numeric_thresholds:
            preds.extend(Predicate(feat.name, GT, t) for t in spec.numeric_thresholds[feat.name])
        elif feat.name in spec.categorical_plan:
            plan = spec.categorical_plan[feat.name]
            preds.extend(Predicate(feat.name, EQ, str(c)) for c in plan["keep"])
            if plan["collapse_other"]:
                preds.append(Predicate(feat.name, EQ, OTHER))
    return preds


def predicate_column(rows, predicate, spec=None):
    """Boolean column of one predicate over raw rows.

    Missing numerics fail every threshold. ``f=OTHER`` holds when the raw
    value is not among the categories the binarization spec keeps for ``f`` (missing
    categoricals count as OTHER).
    """
    name = predicate.feature
    if name not in rows.columns:
        raise StructuralError(f"data has no feature {name!r} (needed by {predicate})")
    col = rows[name]
    if predicate.comparator == GT:
        values = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
        with np.errstate(invalid="ignore"):
            return np.nan_to_num(values, nan=-np.inf) > predicate.value
    if predicate.comparator == EQ:
        raw = col.astype(object).where(col.notna(), None).to_numpy()
        if predicate.value == OTHER:
            plan = (spec.categorical_plan.get(name) if spec else None) or {"keep": []}
            kept = {str(c) for c in plan["keep"]}
            return np.array([v is None or str(v) not in kept for v in raw], dtype=bool)
        return np.array([v is not None and str(v) == predicate.value for v in raw], dtype=bool)
    if predicate.comparator is None:
        return col.fillna(False).to_numpy(dtype=bool)
    values = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
    with np.errstate(invalid="ignore"):
        return np.nan_to_num(values, nan=np.inf) <= predicate.value


def binarize_predicates(rows, predicates, labels=None, spec=None):
    predicates = tuple(predicates)
    n = len(rows)
    matrix = np.zeros((n, len(predicates)), dtype=bool)
    for j, p in enumerate(predicates):
        matrix[:, j] = predicate_column(rows, p, spec)
    labels = np.zeros(n, dtype=bool) if labels is None else np.asarray(labels, dtype=bool)
    return BinarizedDataset(predicates, matrix, labels, np.arange(n))


def apply_spec(rows, schema, spec, labels=None):
    known = {f.name for f in schema}
    for name in spec.features:
        if name not in known:
            raise DataError(f"binarization spec references unknown feature {name!r}")
    spec.validate(schema)
    for name, plan in spec.categorical_plan.items():
        present = set(rows[name].dropna().astype(str)) if len(rows) else set()
        missing = [c for c in plan["keep"] if str(c) not in present]
        if missing and len(rows):
            raise DataError(f"binarization spec keeps unknown categories {missing} of {name!r}")
    return binarize_predicates(rows, spec_predicates(spec, schema), labels, spec)


def split(dataset, test_fraction=0.25, seed=0):
    """Stratified, seeded train/test partition."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in (False, True):
        idx = np.flatnonzero(dataset.labels == cls)
        if len(idx) == 0:
            raise DataError(f"cannot stratify: no rows with label {int(cls)}")
        idx = rng.permutation(idx)
        n_test = int(round(len(idx) * test_fraction))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return dataset.subset(train), dataset.subset(test)


class Binarizer(BaseEstimator, TransformerMixin):
    """Learn a :class:`BinarizationSpec` from a DataFrame and emit predicate columns.

    ``thresholds`` overrides the quantile cut points for the features it names.
    The transformed frame has one Boolean column per predicate, named by its
    rule text (``duration>400``, ``month=mar``).
    """

    def __init__(self, n_thresholds=9, rare_fraction=DEFAULT_RARE_FRACTION, thresholds=None):
        self.n_thresholds = n_thresholds
        self.rare_fraction = rare_fraction
        self.thresholds = thresholds

    def fit(self, X, y=None):
        X = pd.DataFrame(X)
        self.schema_ = infer_schema(X)
        self.summaries_ = summarize(X, self.schema_)
        spec = default_spec(self.summaries_, self.n_thresholds, self.rare_fraction)
        if self.thresholds:
            spec = merge_thresholds(spec, self.thresholds)
        self.spec_ = spec
        self.predicates_ = tuple(spec_predicates(spec, self.schema_))
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = pd.DataFrame(X)
        data = binarize_predicates(X, self.predicates_, spec=self.spec_)
        return pd.DataFrame(data.matrix, columns=data.names, index=X.index)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "spec_")
        return np.array([str(p) for p in self.predicates_], dtype=object)
