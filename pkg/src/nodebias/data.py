"""Tabular classification data: ingestion, statistics, ranking, splitting,
truncation, normalisation and a synthetic long-tail generator."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import DataError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labelled feature table.

    ``X`` has one row per example; ``y`` holds class indices into
    ``class_names``. Row ids are unique strings.
    """

    feature_names: tuple[str, ...]
    ids: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64).reshape(len(self.ids), len(self.feature_names))
        y = np.array(self.y, dtype=np.int64).reshape(len(self.ids))
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(set(self.ids)) != len(self.ids):
            raise DataError("row ids are not unique")
        if len(y) and (y.min() < 0 or y.max() >= len(self.class_names)):
            raise DataError("label index out of range")
        if not np.isfinite(X).all():
            raise DataError("non-finite feature value")

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and self.ids == other.ids
            and self.class_names == other.class_names
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def rows(self):
        return [(i, x, int(c)) for i, x, c in zip(self.ids, self.X, self.y)]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            self.feature_names,
            tuple(self.ids[i] for i in index),
            self.X[index],
            self.y[index],
            self.class_names,
        )

    def select_features(self, columns: Sequence[int]) -> "Dataset":
        columns = list(columns)
        return Dataset(
            tuple(self.feature_names[c] for c in columns),
            self.ids,
            self.X[:, columns],
            self.y,
            self.class_names,
        )

    def with_features(self, X) -> "Dataset":
        return Dataset(self.feature_names, self.ids, X, self.y, self.class_names)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", *self.feature_names, "label"])
        for i, x, c in zip(self.ids, self.X, self.y):
            writer.writerow([i, *(repr(float(v)) for v in x), self.class_names[c]])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")

    def fingerprint(self) -> str:
        """SHA-256 over the canonical CSV text plus class order."""
        h = hashlib.sha256()
        h.update(("\x1f".join(self.class_names) + "\n").encode())
        h.update(self.to_csv_text().encode())
        return h.hexdigest()


def load_csv(path, class_names: Sequence[str] | None = None) -> Dataset:
    """Read a CSV whose last column is the text class label.

    Without an ``id`` column, each row's id is its 1-based line number in
    the file. ``class_names`` pins the class order; otherwise classes are
    numbered by first appearance.
    """
    text = Path(path).read_text(encoding="utf-8-sig")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    if len(header) < 2:
        raise DataError(f"{path}: need at least one feature column and a label column")
    id_col = next((k for k, h in enumerate(header[:-1]) if h.lower() == "id"), None)
    feature_cols = [k for k in range(len(header) - 1) if k != id_col]
    if not feature_cols:
        raise DataError(f"{path}: no feature columns")

    names = list(class_names) if class_names is not None else []
    fixed = class_names is not None
    ids, X, y = [], [], []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataError(
                f"{path}: line {line_no} has {len(row)} cells, header has {len(header)}"
            )
        values = []
        for k in feature_cols:
            cell = row[k].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: line {line_no}, column {header[k]!r}: non-numeric value {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {line_no}, column {header[k]!r}: non-finite value")
            values.append(v)
        label = row[-1].strip()
        if label not in names:
            if fixed:
                raise DataError(f"{path}: line {line_no}: unknown class {label!r}")
            names.append(label)
        ids.append(row[id_col].strip() if id_col is not None else str(line_no))
        X.append(values)
        y.append(names.index(label))
    if not ids:
        raise DataError(f"{path}: no data rows")
    if len(set(y)) < 2 and not fixed:
        raise DataError(f"{path}: dataset has a single class")
    if len(names) < 2:
        raise DataError(f"{path}: dataset has a single class")
    return Dataset(tuple(header[k] for k in feature_cols), tuple(ids), X, y, tuple(names))


# -- statistics ---------------------------------------------------------------

@dataclass(frozen=True)
class ClassStats:
    """Per-(class, feature) summary; arrays are indexed ``[class, feature]``.

    ``variance`` uses the n-1 denominator and is NaN where a class has fewer
    than two rows (absent, not zero).
    """

    class_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    count: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    min: np.ndarray
    max: np.ndarray

    def variance_or_none(self, c: int, f: int) -> float | None:
        v = self.variance[c, f]
        return None if np.isnan(v) else float(v)


def class_stats(ds: Dataset) -> ClassStats:
    if len(ds) == 0:
        raise DataError("class_stats of an empty dataset")
    C, n = ds.n_classes, ds.n_features
    count = np.zeros((C, n), dtype=np.int64)
    mean = np.full((C, n), np.nan)
    var = np.full((C, n), np.nan)
    lo = np.full((C, n), np.nan)
    hi = np.full((C, n), np.nan)
    for c in range(C):
        Xc = ds.X[ds.y == c]
        count[c] = len(Xc)
        if len(Xc):
            mean[c] = Xc.mean(axis=0)
            lo[c] = Xc.min(axis=0)
            hi[c] = Xc.max(axis=0)
        if len(Xc) >= 2:
            var[c] = Xc.var(axis=0, ddof=1)
    return ClassStats(ds.class_names, ds.feature_names, count, mean, var, lo, hi)


def welch_statistics(X, y) -> np.ndarray:
    """Absolute Welch t statistic of each column for a two-class problem."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    a, b = X[y == 0], X[y == 1]
    if len(a) < 2 or len(b) < 2:
        raise DataError("feature ranking needs at least two rows per class")
    diff = np.abs(a.mean(axis=0) - b.mean(axis=0))
    spread = np.sqrt(a.var(axis=0, ddof=1) / len(a) + b.var(axis=0, ddof=1) / len(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(spread > 0, diff / spread, np.where(diff > 0, np.inf, 0.0))
    return stat


def rank_features(ds: Dataset, k: int) -> list[int]:
    """Indices of the ``k`` features with the largest |Welch t|, best first.

    Ties go to the lower column index.
    """
    if ds.n_classes != 2:
        raise DataError("feature ranking is defined for two-class data only")
    if not 1 <= k <= ds.n_features:
        raise DataError(f"cannot select {k} of {ds.n_features} features")
    stat = welch_statistics(ds.X, ds.y)
    order = sorted(range(ds.n_features), key=lambda j: (-stat[j], j))
    return order[:k]


class WelchSelector(SelectorMixin, BaseEstimator):
    """Keep the ``k`` columns with the largest two-sample Welch statistic."""

    def __init__(self, k=5):
        self.k = k

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        classes, y_idx = np.unique(y, return_inverse=True)
        if len(classes) != 2:
            raise DataError("WelchSelector needs exactly two classes")
        if not 1 <= self.k <= X.shape[1]:
            raise DataError(f"cannot select {self.k} of {X.shape[1]} features")
        self.scores_ = welch_statistics(X, y_idx)
        self.ranking_ = np.array(sorted(range(X.shape[1]), key=lambda j: (-self.scores_[j], j)))
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "ranking_")
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.ranking_[: self.k]] = True
        return mask


# -- splitting and truncation -------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError("train_fraction must lie strictly between 0 and 1")


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Deterministic train/test partition; row order is preserved in both parts."""
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        strata = [np.flatnonzero(ds.y == c) for c in range(ds.n_classes)]
    else:
        strata = [np.arange(len(ds))]
    train_idx = []
    for c, idx in enumerate(strata):
        if len(idx) == 0:
            continue
        take = _round_half_up(spec.train_fraction * len(idx))
        if take == 0 or take == len(idx):
            what = f"class {ds.class_names[c]!r}" if spec.stratified else "dataset"
            raise DataError(
                f"train_fraction {spec.train_fraction} leaves an empty stratum for {what}"
            )
        train_idx.extend(rng.permutation(idx)[:take].tolist())
    mask = np.zeros(len(ds), dtype=bool)
    mask[train_idx] = True
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


def truncate_to_balance(ds: Dataset, seed: int) -> Dataset:
    """Randomly delete rows of the larger classes until all classes are equal.

    Every class ends with the smallest class's count. Surviving rows keep
    their original order.
    """
    if len(ds) == 0:
        raise DataError("cannot truncate an empty dataset")
    if ds.n_classes < 2:
        raise DataError("truncation needs at least two classes")
    counts = ds.class_counts()
    target = int(counts.min())
    rng = np.random.default_rng(seed)
    keep = np.zeros(len(ds), dtype=bool)
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.y == c)
        if len(idx) > target:
            idx = rng.choice(idx, size=target, replace=False)
        keep[idx] = True
    return ds.subset(np.flatnonzero(keep))


# -- normalisation ------------------------------------------------------------

class ZScoreNormalizer(TransformerMixin, BaseEstimator):
    """Per-feature z-score using the n-1 standard deviation.

    Constant features are only centred. Raw per-feature minimum, maximum and
    range are kept so noise magnitudes can be reported in raw units.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0, ddof=1) if len(X) > 1 else np.zeros(X.shape[1])
        self.std_ = std
        self.scale_ = np.where(std > 0, std, 1.0)
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        self.range_ = self.max_ - self.min_
        return self

    def _check(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"is expecting {self.n_features_in_} features as input"
            )
        return X

    def transform(self, X):
        return (self._check(X) - self.mean_) / self.scale_

    def inverse_transform(self, X):
        return self._check(X) * self.scale_ + self.mean_

    def to_dict(self, feature_names=None) -> dict:
        check_is_fitted(self, "mean_")
        doc = {
            "mean": self.mean_.tolist(),
            "std": self.std_.tolist(),
            "scale": self.scale_.tolist(),
            "min": self.min_.tolist(),
            "max": self.max_.tolist(),
            "range": self.range_.tolist(),
        }
        if feature_names is not None:
            doc["feature_names"] = list(feature_names)
        return doc

    @classmethod
    def from_dict(cls, doc) -> "ZScoreNormalizer":
        nz = cls()
        nz.mean_ = np.array(doc["mean"], dtype=np.float64)
        nz.std_ = np.array(doc["std"], dtype=np.float64)
        nz.scale_ = np.array(doc["scale"], dtype=np.float64)
        nz.min_ = np.array(doc["min"], dtype=np.float64)
        nz.max_ = np.array(doc["max"], dtype=np.float64)
        nz.range_ = np.array(doc["range"], dtype=np.float64)
        nz.n_features_in_ = len(nz.mean_)
        return nz


Normalizer = ZScoreNormalizer


def normalize_fit(train: Dataset) -> ZScoreNormalizer:
    return ZScoreNormalizer().fit(train.X)


def normalize_apply(nz: ZScoreNormalizer, ds: Dataset) -> Dataset:
    return ds.with_features(nz.transform(ds.X))


# -- synthetic long-tail data -------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_features: int = 5
    head_count: int = 27
    tail_count: int = 11
    class_gap: float = 4.0
    spread: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.head_count < 2 or self.tail_count < 2:
            raise DataError("synthetic classes need at least two rows each")
        if self.n_features < 1:
            raise DataError("n_features must be positive")


def _direction(rng, n):
    u = rng.standard_normal(n)
    return u / np.linalg.norm(u)


def _clouds(rng, cfg, u, head, tail, id_prefix, start):
    half = 0.5 * cfg.class_gap * cfg.spread
    Xh = -half * u + cfg.spread * rng.standard_normal((head, cfg.n_features))
    Xt = half * u + cfg.spread * rng.standard_normal((tail, cfg.n_features))
    X = np.vstack([Xh, Xt])
    y = np.r_[np.zeros(head, dtype=np.int64), np.ones(tail, dtype=np.int64)]
    ids = tuple(f"{id_prefix}{start + k}" for k in range(head + tail))
    names = tuple(f"f{j + 1}" for j in range(cfg.n_features))
    return Dataset(names, ids, X, y, ("head", "tail"))


def synth_longtail(config: SynthConfig) -> Dataset:
    """Two Gaussian clouds with means ``class_gap * spread`` apart.

    The separation direction is a random unit vector; class 0 ("head") has
    ``head_count`` rows and class 1 ("tail") ``tail_count`` rows.
    """
    rng = np.random.default_rng(config.seed)
    u = _direction(rng, config.n_features)
    return _clouds(rng, config, u, config.head_count, config.tail_count, "", 1)


def synth_train_test(config: SynthConfig, test_head: int, test_tail: int) -> tuple[Dataset, Dataset]:
    """Training set as ``synth_longtail`` plus an independent test set from the
    same two clouds."""
    rng = np.random.default_rng(config.seed)
    u = _direction(rng, config.n_features)
    train = _clouds(rng, config, u, config.head_count, config.tail_count, "", 1)
    test = _clouds(rng, config, u, test_head, test_tail, "t", 1)
    return train, test
