"""Dimensionality reducers behind one fit/transform interface.

``TripletEmbedding`` is supervised (needs ``y`` in ``fit``); PCA, Gaussian
random projection and the autoencoder ignore labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import InvalidDims, NotFitted, ValidationError
from .neuralnet import EmbeddingModel, TnnTrainConfig, train_autoencoder, train_tnn
from .triplets import DEFAULT_DELTA_N, DEFAULT_DELTA_P, DEFAULT_MARGIN, MiningConfig
from .validation import check_fitted, check_matrix, check_target

REDUCER_KINDS = ("tnn", "pca", "rp", "ae")


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray


@dataclass(frozen=True, eq=False)
class RpModel:
    projection: np.ndarray
    seed: int


def fit_pca(X, k) -> PcaModel:
    """Top-``k`` principal directions from the SVD of the centered data.

    Each component is sign-fixed so that its largest-magnitude entry is
    positive. Explained variance uses the sample (n - 1) convention.
    """
    X = check_matrix(X)
    n, d = X.shape
    if n < 2:
        raise InvalidDims("PCA needs at least two samples")
    if not 1 <= k <= min(n - 1, d):
        raise InvalidDims(f"need 1 <= k <= min(n - 1, d) = {min(n - 1, d)}, got k={k}")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    components = vt[:k].copy()
    pivot = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(k), pivot])
    signs[signs == 0] = 1.0
    components *= signs[:, None]
    explained = s[:k] ** 2 / (n - 1)
    return PcaModel(mean, components, explained)


def fit_random_projection(d, k, seed=0) -> RpModel:
    """Dense Gaussian projection with i.i.d. N(0, 1/k) entries."""
    if not (isinstance(d, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise InvalidDims("d and k must be integers")
    if not 1 <= k <= d:
        raise InvalidDims(f"need 1 <= k <= d, got k={k}, d={d}")
    rng = np.random.default_rng(seed)
    return RpModel(rng.normal(0.0, 1.0 / np.sqrt(k), size=(k, d)), seed)


class PCAReducer(TransformerMixin, BaseEstimator):
    def __init__(self, n_components=600):
        self.n_components = n_components

    def fit(self, X, y=None):
        model = fit_pca(X, self.n_components)
        self.mean_ = model.mean
        self.components_ = model.components
        self.explained_variance_ = model.explained_variance
        self.n_features_in_ = self.components_.shape[1]
        return self

    def transform(self, X):
        check_fitted(self, "components_")
        X = check_matrix(X, self.n_features_in_)
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, Z):
        check_fitted(self, "components_")
        return np.asarray(Z, dtype=np.float64) @ self.components_ + self.mean_

    @property
    def model_(self):
        check_fitted(self, "components_")
        return PcaModel(self.mean_, self.components_, self.explained_variance_)


class GaussianRandomProjection(TransformerMixin, BaseEstimator):
    def __init__(self, n_components=600, random_state=0):
        self.n_components = n_components
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_matrix(X)
        model = fit_random_projection(X.shape[1], self.n_components, self.random_state)
        self.projection_ = model.projection
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_fitted(self, "projection_")
        X = check_matrix(X, self.n_features_in_)
        return X @ self.projection_.T


class TripletEmbedding(TransformerMixin, BaseEstimator):
    """Triplet-network embedding trained with gap-based mining on ``y``.

    Parameters
    ----------
    n_components : int
        Width of the ReLU embedding layer.
    delta_p, delta_n : float
        Positive and negative label thresholds (labels assumed in [-1, 1]).
    margin : float
        Triplet hinge margin.
    triplets_per_round, epochs_per_round, rounds : int
        Triplets are re-mined at the start of every round.
    """

    def __init__(self, n_components=600, delta_p=DEFAULT_DELTA_P, delta_n=DEFAULT_DELTA_N,
                 margin=DEFAULT_MARGIN, triplets_per_round=50_000, epochs_per_round=10,
                 rounds=25, batch_size=128, learning_rate=1e-3, n_layers=1,
                 max_attempts=10_000, random_state=0, verbose=False):
        self.n_components = n_components
        self.delta_p = delta_p
        self.delta_n = delta_n
        self.margin = margin
        self.triplets_per_round = triplets_per_round
        self.epochs_per_round = epochs_per_round
        self.rounds = rounds
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.n_layers = n_layers
        self.max_attempts = max_attempts
        self.random_state = random_state
        self.verbose = verbose

    def _configs(self):
        mining = MiningConfig(self.delta_p, self.delta_n, self.max_attempts)
        train = TnnTrainConfig(
            embedding_dim=self.n_components,
            triplets_per_round=self.triplets_per_round,
            epochs_per_round=self.epochs_per_round,
            rounds=self.rounds,
            batch_size=self.batch_size,
            margin=self.margin,
            learning_rate=self.learning_rate,
            n_layers=self.n_layers,
            seed=self.random_state,
        )
        return mining, train

    def fit(self, X, y):
        if y is None:
            raise ValidationError("TripletEmbedding.fit requires labels y")
        X = check_matrix(X)
        y = check_target(y, X.shape[0])
        if self.n_components > X.shape[1]:
            raise InvalidDims(f"n_components={self.n_components} exceeds {X.shape[1]} features")
        mining, train = self._configs()
        progress = _stderr_progress("tnn") if self.verbose else None
        self.model_ = train_tnn(X, y, mining, train, progress=progress)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_fitted(self, "model_")
        X = check_matrix(X, self.n_features_in_)
        return self.model_.transform(X)

    @property
    def training_log_(self):
        check_fitted(self, "model_")
        return self.model_.training_log


class AutoencoderReducer(TransformerMixin, BaseEstimator):
    """Encoder half of a one-hidden-layer autoencoder."""

    def __init__(self, n_components=600, epochs=100, batch_size=128, learning_rate=1e-3,
                 early_stopping=False, random_state=0, verbose=False):
        self.n_components = n_components
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.early_stopping = early_stopping
        self.random_state = random_state
        self.verbose = verbose

    def fit(self, X, y=None):
        X = check_matrix(X)
        progress = _stderr_progress("ae") if self.verbose else None
        self.model_ = train_autoencoder(
            X, self.n_components, epochs=self.epochs, seed=self.random_state,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            early_stopping=self.early_stopping, progress=progress)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_fitted(self, "model_")
        X = check_matrix(X, self.n_features_in_)
        return self.model_.transform(X)

    def inverse_transform(self, Z):
        check_fitted(self, "model_")
        return self.model_.decoder.forward(np.asarray(Z, dtype=np.float64))


def _stderr_progress(tag):
    import sys

    def report(epoch, loss):
        print(f"[{tag}] epoch {epoch + 1}: loss {loss:.6g}", file=sys.stderr, flush=True)
    return report


def make_reducer(kind, n_components, **params):
    """Build an unfitted reducer from its short kind tag."""
    kind = kind.lower()
    if kind == "pca":
        return PCAReducer(n_components)
    if kind == "rp":
        return GaussianRandomProjection(n_components, **params)
    if kind == "tnn":
        return TripletEmbedding(n_components, **params)
    if kind == "ae":
        return AutoencoderReducer(n_components, **params)
    raise ValidationError(f"unknown reducer kind {kind!r}; expected one of {REDUCER_KINDS}")


def transform(model, X):
    """Apply a fitted reducer (estimator or bare model record) to ``X``."""
    if isinstance(model, PcaModel):
        X = check_matrix(X, model.components.shape[1])
        return (X - model.mean) @ model.components.T
    if isinstance(model, RpModel):
        X = check_matrix(X, model.projection.shape[1])
        return X @ model.projection.T
    if isinstance(model, EmbeddingModel) or hasattr(model, "encoder"):
        X = check_matrix(X, model.input_dim)
        return model.transform(X)
    if hasattr(model, "transform"):
        return model.transform(X)
    raise NotFitted(f"cannot transform with {type(model).__name__}")
