"""Loading feature tables and emotion annotations, label normalization,
feature standardization and cross-validation folds."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import (
    ColumnMismatch,
    DegenerateRange,
    DuplicateSongId,
    InvalidK,
    MalformedRow,
    MissingColumn,
    MissingFile,
    NonNumericValue,
    NotFitted,
    ValidationError,
)

LABEL_COLUMNS = ("valence", "arousal")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Per-song feature vectors with column names and song ids."""

    song_ids: tuple
    columns: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        object.__setattr__(self, "song_ids", tuple(str(s) for s in self.song_ids))
        object.__setattr__(self, "columns", tuple(str(c) for c in self.columns))
        if values.ndim != 2:
            raise ValidationError(f"feature values must be 2-d, got shape {values.shape}")
        n, d = values.shape
        if n < 1 or d < 1:
            raise ValidationError(f"feature matrix must be non-empty, got {n}x{d}")
        if len(self.song_ids) != n:
            raise ValidationError(f"{len(self.song_ids)} song ids for {n} rows")
        if len(self.columns) != d:
            raise ColumnMismatch(f"{len(self.columns)} column names for {d} value columns")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise NonNumericValue(
                f"non-finite value at row {r} (song {self.song_ids[r]!r}), column {self.columns[c]!r}")
        _check_unique(self.song_ids)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix([self.song_ids[i] for i in rows], self.columns, self.values[rows])

    def with_values(self, values) -> "FeatureMatrix":
        return FeatureMatrix(self.song_ids, self.columns, values)

    def __len__(self):
        return len(self.song_ids)


@dataclass(frozen=True, eq=False)
class AnnotationTable:
    """Per-song valence/arousal labels."""

    song_ids: tuple
    valence: np.ndarray
    arousal: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "song_ids", tuple(str(s) for s in self.song_ids))
        for name in LABEL_COLUMNS:
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.shape[0] != len(self.song_ids):
                raise ValidationError(f"{name}: {arr.shape[0]} values for {len(self.song_ids)} songs")
            if not np.all(np.isfinite(arr)):
                raise NonNumericValue(f"non-finite {name} label")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _check_unique(self.song_ids)

    def target(self, name: str) -> np.ndarray:
        if name not in LABEL_COLUMNS:
            raise ValidationError(f"unknown target {name!r}; expected one of {LABEL_COLUMNS}")
        return getattr(self, name)

    def align(self, song_ids) -> "AnnotationTable":
        """Reorder (and subset) to match ``song_ids``; every id must be annotated."""
        index = {s: i for i, s in enumerate(self.song_ids)}
        missing = [s for s in song_ids if s not in index]
        if missing:
            raise ValidationError(
                f"{len(missing)} song ids have no annotation, e.g. {missing[0]!r}")
        rows = np.array([index[s] for s in song_ids], dtype=np.intp)
        return AnnotationTable(list(song_ids), self.valence[rows], self.arousal[rows], self.normalized)

    def __len__(self):
        return len(self.song_ids)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: np.ndarray = field(repr=False)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def splits(self):
        for fold in range(self.k):
            yield self.train_indices(fold), self.test_indices(fold)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def _check_unique(song_ids):
    seen = {}
    for row, sid in enumerate(song_ids):
        if sid in seen:
            raise DuplicateSongId(f"song id {sid!r} appears at rows {seen[sid]} and {row}")
        seen[sid] = row


def _read_rows(path):
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise MalformedRow(f"{path}: empty file, header row required")
    return [c.strip() for c in rows[0]], rows[1:]


def _parse_float(text, path, line, column):
    try:
        value = float(text)
    except ValueError:
        raise NonNumericValue(
            f"{path}: line {line}, column {column!r}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise NonNumericValue(f"{path}: line {line}, column {column!r}: non-finite value {text!r}")
    return value


def load_feature_table(path) -> FeatureMatrix:
    """Read a feature CSV: a ``song_id`` column followed by numeric feature columns."""
    path = os.fspath(path)
    header, rows = _read_rows(path)
    if header[0] != "song_id":
        raise MissingColumn("song_id", path)
    if len(header) < 2:
        raise MalformedRow(f"{path}: header has no feature columns")
    columns = header[1:]
    ids, values = [], []
    seen = {}
    for line, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise MalformedRow(
                f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
        sid = row[0].strip()
        if sid in seen:
            raise DuplicateSongId(f"{path}: song id {sid!r} at lines {seen[sid]} and {line}")
        seen[sid] = line
        ids.append(sid)
        values.append([_parse_float(cell, path, line, col) for cell, col in zip(row[1:], columns)])
    if not ids:
        raise MalformedRow(f"{path}: no data rows")
    return FeatureMatrix(ids, columns, np.array(values, dtype=np.float64))


def load_annotations(path) -> AnnotationTable:
    """Read an annotation CSV with ``song_id,valence,arousal`` columns (raw scale)."""
    path = os.fspath(path)
    header, rows = _read_rows(path)
    for name in ("song_id",) + LABEL_COLUMNS:
        if name not in header:
            raise MissingColumn(name, path)
    pos = {name: header.index(name) for name in ("song_id",) + LABEL_COLUMNS}
    ids, val, aro = [], [], []
    seen = {}
    for line, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise MalformedRow(
                f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
        sid = row[pos["song_id"]].strip()
        if sid in seen:
            raise DuplicateSongId(f"{path}: song id {sid!r} at lines {seen[sid]} and {line}")
        seen[sid] = line
        ids.append(sid)
        val.append(_parse_float(row[pos["valence"]], path, line, "valence"))
        aro.append(_parse_float(row[pos["arousal"]], path, line, "arousal"))
    return AnnotationTable(ids, val, aro, normalized=False)


def minmax_to_unit(values) -> np.ndarray:
    """Affine map sending min to -1 and max to +1."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if not hi > lo:
        raise DegenerateRange(f"all labels equal ({lo}); cannot normalize")
    out = 2.0 * (values - lo) / (hi - lo) - 1.0
    # pin the endpoints against rounding
    out[values == lo] = -1.0
    out[values == hi] = 1.0
    return out


def normalize_labels(table: AnnotationTable) -> AnnotationTable:
    """Min-max normalize valence and arousal independently onto [-1, 1].

    Statistics come from the whole table, so call this before splitting.
    An already-normalized table is returned as is.
    """
    if table.normalized:
        return table
    try:
        valence = minmax_to_unit(table.valence)
    except DegenerateRange:
        raise DegenerateRange("valence: all labels identical") from None
    try:
        arousal = minmax_to_unit(table.arousal)
    except DegenerateRange:
        raise DegenerateRange("arousal: all labels identical") from None
    return replace(table, valence=valence, arousal=arousal, normalized=True)


class Standardizer(TransformerMixin, BaseEstimator):
    """Column-wise z-score using population standard deviation.

    Zero-variance columns map to all zeros.
    """

    def fit(self, X, y=None):
        X = _as_matrix(X)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        # guard against spread that is pure rounding noise around a constant
        constant = std <= 1e-12 * np.maximum(np.abs(self.mean_), 1.0)
        self.scale_ = np.where(constant, 1.0, std)
        self.constant_ = constant
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "mean_"):
            raise NotFitted("Standardizer is not fitted")
        X = _as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ColumnMismatch(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        Z = (X - self.mean_) / self.scale_
        Z[:, self.constant_] = 0.0
        return Z


def _as_matrix(X):
    X = np.asarray(X.values if isinstance(X, FeatureMatrix) else X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"expected a 2-d array, got shape {X.shape}")
    return X


def standardize_features(train: FeatureMatrix, apply_to: FeatureMatrix) -> FeatureMatrix:
    """Z-score ``apply_to`` with column statistics computed on ``train`` only."""
    if tuple(train.columns) != tuple(apply_to.columns):
        extra = sorted(set(apply_to.columns) ^ set(train.columns))
        detail = f"differing columns {extra[:5]}" if extra else "column order differs"
        raise ColumnMismatch(f"train and apply_to columns differ: {detail}")
    scaler = Standardizer().fit(train.values)
    return apply_to.with_values(scaler.transform(apply_to.values))


def kfold_split(n: int, k: int, seed: int) -> FoldAssignment:
    """Shuffled k-fold assignment; fold sizes differ by at most one."""
    if not (isinstance(k, (int, np.integer)) and 2 <= k <= n):
        raise InvalidK(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}")
    order = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.intp)
    assignment[order] = np.arange(n) % k
    assignment.setflags(write=False)
    return FoldAssignment(int(k), assignment)
