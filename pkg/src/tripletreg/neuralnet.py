"""Small dense-network core in numpy: fully connected layers, Adam, the
triplet-network trainer and the autoencoder baseline.

Everything runs in float64 on the CPU so gradients can be checked against
finite differences and runs are bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch, NonFiniteLoss, ShapeMismatch, ValidationError
from .ingest import FeatureMatrix
from .triplets import MiningConfig, mine_triplets

log = logging.getLogger(__name__)

RELU = "relu"
LINEAR = "linear"


class DenseLayer:
    """Affine map ``x @ W.T + b`` followed by ReLU or identity.

    ``weights`` has shape (k, d): one row per output unit.
    """

    def __init__(self, weights, biases, activation=RELU):
        if activation not in (RELU, LINEAR):
            raise ValidationError(f"unknown activation {activation!r}")
        self.weights = np.array(weights, dtype=np.float64)
        self.biases = np.array(biases, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.biases.shape[0]:
            raise ShapeMismatch(
                f"weights {self.weights.shape} incompatible with biases {self.biases.shape}")
        self.activation = activation

    @classmethod
    def initialize(cls, d, k, activation, rng):
        # He-uniform for ReLU units, Glorot-uniform for linear outputs
        limit = np.sqrt(6.0 / d) if activation == RELU else np.sqrt(6.0 / (d + k))
        return cls(rng.uniform(-limit, limit, size=(k, d)), np.zeros(k), activation)

    @property
    def input_dim(self):
        return self.weights.shape[1]

    @property
    def output_dim(self):
        return self.weights.shape[0]

    @property
    def params(self):
        return [self.weights, self.biases]

    def preactivation(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.input_dim:
            raise DimensionMismatch(f"layer expects {self.input_dim} inputs, got {X.shape[-1]}")
        return X @ self.weights.T + self.biases

    def activate(self, Z):
        return np.maximum(Z, 0.0) if self.activation == RELU else Z

    def forward(self, X):
        return self.activate(self.preactivation(X))

    def backward(self, X, Z, grad_out):
        """Return (grad_X, grad_W, grad_b) given the cached input and preactivation."""
        if self.activation == RELU:
            grad_out = grad_out * (Z > 0.0)
        return grad_out @ self.weights, grad_out.T @ X, grad_out.sum(axis=0)

    def copy(self):
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)


def forward(layer: DenseLayer, x):
    return layer.forward(x)


def forward_stack(layers, X):
    for layer in layers:
        X = layer.forward(X)
    return X


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")


def adam_step(state: AdamState, params, grads):
    """Bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)``.
    """
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeMismatch(f"parameter shape {np.shape(p)} vs gradient shape {np.shape(g)}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    eps_t = state.epsilon * np.sqrt(1.0 - b2 ** t)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr_t * m / (np.sqrt(v) + eps_t)
    return params, state


# -- triplet network ----------------------------------------------------------

@dataclass(frozen=True)
class TnnTrainConfig:
    embedding_dim: int = 600
    triplets_per_round: int = 50_000
    epochs_per_round: int = 10
    rounds: int = 25
    batch_size: int = 128
    margin: float = 0.2
    learning_rate: float = 1e-3
    n_layers: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("embedding_dim", "triplets_per_round", "epochs_per_round",
                     "rounds", "batch_size", "n_layers"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if not (np.isfinite(self.margin) and self.margin > 0):
            raise ValidationError("margin must be finite and positive")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")

    @property
    def total_epochs(self):
        return self.epochs_per_round * self.rounds


@dataclass
class EmbeddingModel:
    layers: list
    training_log: list = field(default_factory=list)

    @property
    def layer(self):
        return self.layers[0]

    @property
    def input_dim(self):
        return self.layers[0].input_dim

    @property
    def output_dim(self):
        return self.layers[-1].output_dim

    def transform(self, X):
        return forward_stack(self.layers, X)


@dataclass
class AutoencoderModel:
    encoder: DenseLayer
    decoder: DenseLayer
    training_log: list = field(default_factory=list)

    @property
    def input_dim(self):
        return self.encoder.input_dim

    @property
    def output_dim(self):
        return self.encoder.output_dim

    def transform(self, X):
        return self.encoder.forward(X)

    def reconstruct(self, X):
        return self.decoder.forward(self.encoder.forward(X))


def _values(X):
    return X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)


def tnn_loss_and_grads(layers, XA, XP, XN, margin):
    """Mean triplet loss over a batch and its gradients w.r.t. every layer parameter.

    The three branches share ``layers``; their inputs are stacked and run
    through one forward pass.
    """
    b = XA.shape[0]
    H = np.concatenate([XA, XP, XN], axis=0)
    cache = []
    for layer in layers:
        Z = layer.preactivation(H)
        cache.append((H, Z))
        H = layer.activate(Z)
    ea, ep, en = H[:b], H[b:2 * b], H[2 * b:]
    d_ap = np.sum((ea - ep) ** 2, axis=1)
    d_an = np.sum((ea - en) ** 2, axis=1)
    hinge = d_ap - d_an + margin
    active = (hinge > 0.0)[:, None]
    loss = float(np.mean(np.maximum(hinge, 0.0)))
    scale = 2.0 / b
    grad_out = np.concatenate([
        np.where(active, scale * (en - ep), 0.0),
        np.where(active, scale * (ep - ea), 0.0),
        np.where(active, scale * (ea - en), 0.0),
    ], axis=0)
    grads = []
    for layer, (X_in, Z) in zip(reversed(layers), reversed(cache)):
        grad_out, gW, gb = layer.backward(X_in, Z, grad_out)
        grads.append((gW, gb))
    flat = []
    for gW, gb in reversed(grads):
        flat += [gW, gb]
    return loss, flat


def init_tnn(d, config: TnnTrainConfig, rng):
    layers, width = [], d
    for _ in range(config.n_layers):
        layers.append(DenseLayer.initialize(width, config.embedding_dim, RELU, rng))
        width = config.embedding_dim
    return layers


def train_tnn(features, labels, mining: MiningConfig | None = None,
              config: TnnTrainConfig | None = None, progress=None) -> EmbeddingModel:
    """Train a shared-weight triplet network.

    Each round mines ``triplets_per_round`` fresh triplets and then runs
    ``epochs_per_round`` shuffled mini-batch Adam epochs over them.
    ``progress`` is called as ``progress(epoch, mean_loss)`` after each epoch.
    """
    mining = mining or MiningConfig()
    config = config or TnnTrainConfig()
    X = _values(features)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if X.ndim != 2:
        raise ValidationError(f"features must be 2-d, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    rng = np.random.default_rng(config.seed)
    layers = init_tnn(X.shape[1], config, rng)
    params = [p for layer in layers for p in layer.params]
    adam = AdamState(learning_rate=config.learning_rate)
    history = []
    epoch = 0
    for _ in range(config.rounds):
        mine_seed = int(rng.integers(2 ** 63))
        batch = mine_triplets(y, config.triplets_per_round, mining, seed=mine_seed)
        m = batch.shape[0]
        for _ in range(config.epochs_per_round):
            perm = rng.permutation(m)
            total = 0.0
            for start in range(0, m, config.batch_size):
                rows = batch[perm[start:start + config.batch_size]]
                loss, grads = tnn_loss_and_grads(
                    layers, X[rows[:, 0]], X[rows[:, 1]], X[rows[:, 2]], config.margin)
                if not np.isfinite(loss):
                    raise NonFiniteLoss(epoch, loss)
                total += loss * rows.shape[0]
                adam_step(adam, params, grads)
            mean = total / m
            if not np.isfinite(mean):
                raise NonFiniteLoss(epoch, mean)
            history.append(mean)
            if progress is not None:
                progress(epoch, mean)
            log.debug("tnn epoch %d loss %.6g", epoch, mean)
            epoch += 1
    return EmbeddingModel(layers, history)


# -- autoencoder ----------------------------------------------------------------

def ae_loss_and_grads(encoder, decoder, X):
    """Mean squared reconstruction error over all entries, with parameter gradients."""
    Z1 = encoder.preactivation(X)
    H = encoder.activate(Z1)
    R = decoder.forward(H)
    diff = R - X
    loss = float(np.mean(diff * diff))
    grad_r = (2.0 / diff.size) * diff
    grad_h, gW2, gb2 = decoder.backward(H, R, grad_r)
    _, gW1, gb1 = encoder.backward(X, Z1, grad_h)
    return loss, [gW1, gb1, gW2, gb2]


def train_autoencoder(features, k, epochs=100, seed=0, batch_size=128, learning_rate=1e-3,
                      early_stopping=False, tol=1e-5, patience=10,
                      progress=None) -> AutoencoderModel:
    """Fit a one-hidden-layer autoencoder (ReLU encoder, linear decoder) with Adam.

    With ``early_stopping`` training halts once the epoch MSE has improved by
    less than ``tol`` (relative) over the last ``patience`` epochs.
    """
    X = _values(features)
    if X.ndim != 2:
        raise ValidationError(f"features must be 2-d, got shape {X.shape}")
    n, d = X.shape
    if not 1 <= k <= d:
        raise ValidationError(f"need 1 <= k <= d, got k={k}, d={d}")
    if epochs < 0 or batch_size < 1:
        raise ValidationError("epochs must be >= 0 and batch_size >= 1")
    rng = np.random.default_rng(seed)
    encoder = DenseLayer.initialize(d, k, RELU, rng)
    decoder = DenseLayer.initialize(k, d, LINEAR, rng)
    params = encoder.params + decoder.params
    adam = AdamState(learning_rate=learning_rate)
    history = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            rows = perm[start:start + batch_size]
            loss, grads = ae_loss_and_grads(encoder, decoder, X[rows])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
            total += loss * rows.shape[0]
            adam_step(adam, params, grads)
        mean = total / n
        history.append(mean)
        if progress is not None:
            progress(epoch, mean)
        log.debug("ae epoch %d mse %.6g", epoch, mean)
        if early_stopping and len(history) > patience:
            before = history[-1 - patience]
            if before - mean < tol * abs(before):
                break
    return AutoencoderModel(encoder, decoder, history)


def embed(model, X):
    """Embed rows of ``X`` with a triplet network or an autoencoder's encoder."""
    X = _values(X)
    squeeze = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.input_dim:
        raise DimensionMismatch(f"model expects {model.input_dim} features, got {X.shape[1]}")
    out = model.transform(X)
    return out[0] if squeeze else out
