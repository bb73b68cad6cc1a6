"""Binary classification datasets: CSV ingestion, splitting, scaling, synthesis."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

MISSING = ("", "?")


class DatasetError(ValueError):
    pass


class MissingFile(DatasetError, FileNotFoundError):
    pass


class BadLabelColumn(DatasetError):
    pass


class EmptyAfterCleaning(DatasetError):
    pass


class DegenerateSplit(DatasetError):
    pass


class TooManyFlips(DatasetError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Dense feature matrix with labels in {-1, +1}."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    categorical_map: dict[str, list[str]] = field(default_factory=dict)
    dropped_rows: int = 0

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels).astype(int)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DatasetError(f"shape mismatch: features {X.shape}, labels {y.shape}")
        if not np.isin(y, (-1, 1)).all():
            raise DatasetError("labels must be -1 or +1")
        if np.isnan(X).any():
            raise DatasetError("features contain missing values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", [f"x{j}" for j in range(X.shape[1])])

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, features=self.features[idx], labels=self.labels[idx], dropped_rows=0)

    def check_classes(self):
        if self.n < 2 or len(np.unique(self.labels)) < 2:
            raise DatasetError("dataset needs at least two rows and both classes")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 0


def _parse_float(v):
    try:
        return float(v)
    except ValueError:
        return None


def load_csv(path, label_column, positive_label, drop_columns=()) -> Dataset:
    """Read a headered CSV into a Dataset.

    Columns whose non-missing values do not all parse as numbers are one-hot
    encoded (one column per level, sorted). Rows with any missing field
    (empty or ``?``) are dropped; the count is kept in ``dropped_rows``.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise EmptyAfterCleaning(f"{path} is empty")
    header, body = [h.strip() for h in rows[0]], rows[1:]

    if isinstance(label_column, int):
        if not 0 <= label_column < len(header):
            raise BadLabelColumn(f"label column index {label_column} out of range")
        label_idx = label_column
    elif label_column in header:
        label_idx = header.index(label_column)
    else:
        raise BadLabelColumn(f"label column {label_column!r} not in header")

    body = [[v.strip() for v in r] for r in body]
    complete = [r for r in body if len(r) == len(header) and not any(v in MISSING for v in r)]
    dropped = len(body) - len(complete)
    if not complete:
        raise EmptyAfterCleaning(f"{path}: no complete rows")

    raw_labels = [r[label_idx] for r in complete]
    levels = sorted(set(raw_labels))
    if len(levels) != 2:
        raise BadLabelColumn(f"label column must have exactly 2 classes, found {levels}")
    if str(positive_label) not in levels:
        raise BadLabelColumn(f"positive label {positive_label!r} not among {levels}")
    y = np.array([1 if v == str(positive_label) else -1 for v in raw_labels])

    cols, names, cat_map = [], [], {}
    for j, name in enumerate(header):
        if j == label_idx or name in drop_columns:
            continue
        values = [r[j] for r in complete]
        parsed = [_parse_float(v) for v in values]
        if all(v is not None for v in parsed):
            cols.append(np.array(parsed))
            names.append(name)
            continue
        cats = sorted(set(values))
        cat_map[name] = [f"{name}={c}" for c in cats]
        for c in cats:
            cols.append(np.array([1.0 if v == c else 0.0 for v in values]))
            names.append(f"{name}={c}")

    X = np.column_stack(cols) if cols else np.empty((len(complete), 0))
    d = Dataset(X, y, names, cat_map, dropped_rows=dropped)
    d.check_classes()
    return d


def save_csv(d: Dataset, path, label_name="label"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(d.feature_names) + [label_name])
        for x, y in zip(d.features, d.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def split(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Unstratified random train/test split of ``round(n * fraction)`` rows."""
    if not 0.0 < spec.train_fraction < 1.0:
        raise DegenerateSplit("train_fraction must lie in (0, 1)")
    n_train = int(round(d.n * spec.train_fraction))
    if n_train < 1 or n_train > d.n - 1:
        raise DegenerateSplit(f"split of n={d.n} leaves an empty part")
    perm = np.random.default_rng(spec.seed).permutation(d.n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    train, test = d.subset(tr), d.subset(te)
    for part, name in ((train, "train"), (test, "test")):
        if len(np.unique(part.labels)) < 2:
            raise DegenerateSplit(f"{name} part lost a class")
    return train, test


def split_indices(d: Dataset, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(d.n * spec.train_fraction))
    perm = np.random.default_rng(spec.seed).permutation(d.n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def synth_diagonal(n: int, flips: int, seed: int) -> Dataset:
    """Uniform points on the unit square labelled by the side of x1 + x2 = 1.

    ``flips`` points drawn from the y = -1 side get their label set to +1.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, 2))
    s = X.sum(axis=1)
    y = np.where(s > 1.0, 1, -1)
    on_line = s == 1.0
    if on_line.any():
        y[on_line] = rng.choice((-1, 1), size=int(on_line.sum()))
    neg = np.flatnonzero(y == -1)
    if flips > len(neg):
        raise TooManyFlips(f"asked for {flips} flips but only {len(neg)} points have y=-1")
    if flips:
        y[rng.choice(neg, size=flips, replace=False)] = 1
    return Dataset(X, y, ["x1", "x2"])


@dataclass(frozen=True)
class UnitScaler:
    """Per-feature affine map onto [0, 1] fitted on one dataset."""

    low: np.ndarray
    span: np.ndarray
    constant: np.ndarray

    @classmethod
    def fit(cls, d: Dataset) -> "UnitScaler":
        low = d.features.min(axis=0)
        span = d.features.max(axis=0) - low
        constant = span <= 0
        return cls(low, np.where(constant, 1.0, span), constant)

    def transform(self, d: Dataset) -> Dataset:
        # constant columns pass through untouched; out-of-range values are not clipped
        X = np.where(self.constant, d.features, (d.features - self.low) / self.span)
        return replace(d, features=X)


def normalize_unit_interval(d: Dataset) -> tuple[Dataset, UnitScaler]:
    scaler = UnitScaler.fit(d)
    return scaler.transform(d), scaler


BUNDLED = {
    # name: (file, label column, positive label, dropped columns)
    "AU": ("australian.csv", "class", "1", ()),
    "BC": ("breast_cancer.csv", "class", "malignant", ()),
    "DIA": ("diabetes.csv", "class", "positive", ()),
    "SPL": ("splice.csv", "class", "junction", ()),
}


def load_bundled(name: str) -> Dataset:
    """Load one of the UCI datasets shipped with the package (AU, BC, DIA, SPL)."""
    if name not in BUNDLED:
        raise MissingFile(f"no bundled dataset {name!r}; choose from {', '.join(BUNDLED)}")
    fname, label, positive, drop = BUNDLED[name]
    with resources.as_file(resources.files("marginprune") / "data" / fname) as path:
        return load_csv(path, label, positive, drop_columns=drop)
