"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DegenerateData, DimensionMismatch, NotFitted, ValidationError
from .ingest import FeatureMatrix


def check_matrix(X, n_features=None, min_samples=1, name="X"):
    """Return ``X`` as a finite float64 2-d array.

    A 1-d input is read as a single sample. Raises ``DimensionMismatch`` when
    the column count differs from ``n_features``.
    """
    if isinstance(X, FeatureMatrix):
        X = X.values
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    try:
        X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from None
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionMismatch(f"{name} has {X.shape[1]} features, expected {n_features}")
    return X


def check_target(y, n_samples, name="y"):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n_samples:
        raise DimensionMismatch(f"{name} has {y.shape[0]} values for {n_samples} samples")
    if not np.all(np.isfinite(y)):
        raise ValidationError(f"{name} contains non-finite values")
    return y


def check_xy(X, y, min_samples=1):
    X = check_matrix(X, min_samples=1)
    if X.shape[0] < min_samples:
        raise DegenerateData(f"need at least {min_samples} samples, got {X.shape[0]}")
    return X, check_target(y, X.shape[0])


def check_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFitted(f"{type(estimator).__name__} is not fitted yet; call fit first")
