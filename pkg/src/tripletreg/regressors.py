"""Epsilon-SVR with an RBF kernel (SMO solver) and least-squares gradient
boosted regression trees."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .exceptions import ConvergenceWarning, ValidationError
from .validation import check_fitted, check_matrix, check_xy

_TAU = 1e-12


def rbf_kernel(A, B, gamma):
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T))
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


# -- SVR ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SvrConfig:
    c: float = 1.0
    epsilon: float = 0.1
    gamma: float | str = "auto"
    tolerance: float = 1e-3
    max_passes: int = 200

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError("c must be positive")
        if not self.epsilon >= 0:
            raise ValidationError("epsilon must be non-negative")
        if self.gamma != "auto" and not float(self.gamma) > 0:
            raise ValidationError("gamma must be positive or 'auto'")
        if not self.tolerance > 0 or self.max_passes < 1:
            raise ValidationError("tolerance and max_passes must be positive")

    def resolve_gamma(self, d):
        return 1.0 / d if self.gamma == "auto" else float(self.gamma)


@dataclass(frozen=True, eq=False)
class SvrModel:
    support_vectors: np.ndarray
    dual_coefficients: np.ndarray
    bias: float
    gamma: float
    converged: bool = True
    iterations: int = 0


def _solve_svr_dual(K, z, c, epsilon, tol, max_iter):
    """SMO on the 2n-variable epsilon-SVR dual.

    Variables ``t < n`` are alpha (label +1), ``t >= n`` alpha* (label -1).
    Working pairs use the maximal violating ``i`` and a second-order choice of
    ``j``. Returns (alpha, gradient, labels, iterations, converged).
    """
    n = z.shape[0]
    y = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - z, epsilon + z])
    alpha = np.zeros(2 * n)
    G = p.copy()
    diag = np.diag(K)
    QD = np.concatenate([diag, diag])
    it = 0
    converged = False
    while it < max_iter:
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        minus_yG = -y * G
        score_up = np.where(up, minus_yG, -np.inf)
        i = int(np.argmax(score_up))
        g_max = score_up[i]
        score_low = np.where(low, -minus_yG, -np.inf)
        g_max2 = score_low.max()
        if g_max + g_max2 < tol:
            converged = True
            break
        Ki = K[i % n]
        Ki2 = np.concatenate([Ki, Ki])
        b = g_max - minus_yG
        quad = QD[i] + QD - 2.0 * Ki2
        quad = np.where(quad > 0, quad, _TAU)
        cand = low & (b > 0)
        obj = np.where(cand, -(b * b) / quad, np.inf)
        j = int(np.argmin(obj))
        if not np.isfinite(obj[j]):
            converged = True
            break
        Kj = K[j % n]
        Qi = y[i] * y * Ki2
        Qj = y[j] * y * np.concatenate([Kj, Kj])
        old_i, old_j = alpha[i], alpha[j]
        ai, aj = old_i, old_j
        if y[i] != y[j]:
            q = QD[i] + QD[j] + 2.0 * Qi[j]
            q = q if q > 0 else _TAU
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c:
                    ai, aj = c, c - diff
            elif aj > c:
                aj, ai = c, c + diff
        else:
            q = QD[i] + QD[j] - 2.0 * Qi[j]
            q = q if q > 0 else _TAU
            delta = (G[i] - G[j]) / q
            total = ai + aj
            ai -= delta
            aj += delta
            if total > c:
                if ai > c:
                    ai, aj = c, total - c
            elif aj < 0:
                aj, ai = 0.0, total
            if total > c:
                if aj > c:
                    aj, ai = c, total - c
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += Qi * (ai - old_i) + Qj * (aj - old_j)
        it += 1
    return alpha, G, y, it, converged


def _compute_rho(alpha, G, y, c):
    yG = y * G
    at_upper = alpha >= c
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        return float(yG[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2.0)


def fit_svr(X, y, config: SvrConfig | None = None) -> SvrModel:
    """Solve the epsilon-SVR dual with kernel ``exp(-gamma |x - z|^2)``.

    Only samples with a nonzero dual coefficient are kept. If the iteration
    bound (``max_passes * n``) is hit, the last iterate is returned with
    ``converged=False`` and a :class:`ConvergenceWarning`.
    """
    config = config or SvrConfig()
    X, y = check_xy(X, y, min_samples=2)
    n, d = X.shape
    gamma = config.resolve_gamma(d)
    K = rbf_kernel(X, X, gamma)
    alpha, G, ylab, iters, converged = _solve_svr_dual(
        K, y, config.c, config.epsilon, config.tolerance, config.max_passes * n)
    if not converged:
        warnings.warn(f"SVR solver stopped after {iters} iterations without reaching "
                      f"tolerance {config.tolerance}", ConvergenceWarning, stacklevel=2)
    rho = _compute_rho(alpha, G, ylab, config.c)
    coef = alpha[:n] - alpha[n:]
    keep = coef != 0.0
    return SvrModel(X[keep].copy(), coef[keep].copy(), -rho, gamma, converged, iters)


def predict_svr(model: SvrModel, X) -> np.ndarray:
    d = model.support_vectors.shape[1] if model.support_vectors.size else None
    X = check_matrix(X, d)
    if model.dual_coefficients.size == 0:
        return np.full(X.shape[0], model.bias)
    return rbf_kernel(X, model.support_vectors, model.gamma) @ model.dual_coefficients + model.bias


class SVR(RegressorMixin, BaseEstimator):
    """Epsilon-insensitive support vector regression, RBF kernel."""

    def __init__(self, C=1.0, epsilon=0.1, gamma="auto", tol=1e-3, max_passes=200):
        self.C = C
        self.epsilon = epsilon
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes

    def fit(self, X, y):
        X = check_matrix(X)
        with warnings.catch_warnings():
            warnings.simplefilter("always", ConvergenceWarning)
            model = fit_svr(X, y, SvrConfig(self.C, self.epsilon, self.gamma, self.tol,
                                            self.max_passes))
        self.support_vectors_ = model.support_vectors
        self.dual_coef_ = model.dual_coefficients
        self.intercept_ = model.bias
        self.gamma_ = model.gamma
        self.converged_ = model.converged
        self.n_iter_ = model.iterations
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def model_(self):
        check_fitted(self, "dual_coef_")
        return SvrModel(self.support_vectors_, self.dual_coef_, self.intercept_, self.gamma_,
                        self.converged_, self.n_iter_)

    def predict(self, X):
        check_fitted(self, "dual_coef_")
        X = check_matrix(X, self.n_features_in_)
        return predict_svr(self.model_, X)


# -- regression trees and boosting ---------------------------------------------

_TIE_RTOL = 1e-12


def split_threshold(lo, hi):
    """Midpoint strictly above ``lo`` and at most ``hi`` (so ``x < t`` separates them)."""
    t = lo / 2.0 + hi / 2.0
    return hi if t <= lo else t


def best_split(X, r, min_samples_leaf=1, order=None):
    """Greedy least-squares split of one node.

    Returns ``(feature, threshold, gain)`` with ``gain`` the reduction in sum
    of squared errors, or ``None`` when no admissible split reduces it. Ties go
    to the lowest feature index, then the lowest threshold. ``order`` may hold
    a precomputed per-column argsort of ``X``.
    """
    m, d = X.shape
    if m < 2 * min_samples_leaf or m < 2:
        return None
    r = r - r.mean()
    if order is None:
        order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    cs = np.cumsum(r[order], axis=0)[:-1]
    total = r.sum()
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    gain = cs ** 2 / n_left + (total - cs) ** 2 / (m - n_left) - total ** 2 / m
    valid = xs[1:] > xs[:-1]
    valid &= (n_left >= min_samples_leaf) & (m - n_left >= min_samples_leaf)
    gain = np.where(valid, gain, -np.inf)
    flat = gain.T.ravel()
    top = flat.max()
    # gains equal up to rounding count as ties: lowest feature, then lowest threshold
    scale = float(np.dot(r, r))
    if not top > _TIE_RTOL * scale:
        return None
    best = int(np.argmax(flat >= top - _TIE_RTOL * scale))
    f, pos = divmod(best, m - 1)
    return f, split_threshold(xs[pos, f], xs[pos + 1, f]), float(flat[best])


def _node_order(order, idx, n):
    """Restrict a global per-column argsort to the rows ``idx``, renumbered locally."""
    local = np.full(n, -1, dtype=np.intp)
    local[idx] = np.arange(idx.size)
    mapped = local[order]
    keep = mapped >= 0
    return mapped.T[keep.T].reshape(order.shape[1], idx.size).T


@dataclass
class RegressionTree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf.

    A sample goes left at node ``i`` when ``x[feature[i]] < threshold[i]``.
    """

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)
    n_samples: list = field(default_factory=list)

    def _add(self, value, n):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.n_samples.append(int(n))
        return len(self.value) - 1

    @classmethod
    def fit(cls, X, r, max_depth=3, min_samples_leaf=1, order=None):
        if order is None and max_depth > 0:
            order = np.argsort(X, axis=0, kind="stable")
        tree = cls()
        root = tree._add(r.mean(), r.shape[0])
        stack = [(root, np.arange(r.shape[0]), 0)]
        while stack:
            node, idx, depth = stack.pop()
            if depth >= max_depth:
                continue
            local = order if idx.size == r.shape[0] else _node_order(order, idx, r.shape[0])
            split = best_split(X[idx], r[idx], min_samples_leaf, local)
            if split is None:
                continue
            f, t, _ = split
            go_left = X[idx, f] < t
            li, ri = idx[go_left], idx[~go_left]
            tree.feature[node] = f
            tree.threshold[node] = t
            tree.left[node] = tree._add(r[li].mean(), li.size)
            tree.right[node] = tree._add(r[ri].mean(), ri.size)
            stack.append((tree.right[node], ri, depth + 1))
            stack.append((tree.left[node], li, depth + 1))
        return tree

    def as_arrays(self):
        return (np.asarray(self.feature, dtype=np.intp), np.asarray(self.threshold, dtype=np.float64),
                np.asarray(self.left, dtype=np.intp), np.asarray(self.right, dtype=np.intp),
                np.asarray(self.value, dtype=np.float64))

    def predict(self, X):
        feature, threshold, left, right, value = self.as_arrays()
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        while True:
            inner = feature[node] >= 0
            if not inner.any():
                break
            at = node[inner]
            go_left = X[rows[inner], feature[at]] < threshold[at]
            node[inner] = np.where(go_left, left[at], right[at])
        return value[node]

    def leaf_sizes(self):
        return [n for f, n in zip(self.feature, self.n_samples) if f == -1]


@dataclass(frozen=True)
class GbmConfig:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 0:
            raise ValidationError("n_trees and max_depth must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValidationError("learning_rate must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValidationError("min_samples_leaf must be >= 1")


@dataclass(eq=False)
class GbmModel:
    base_prediction: float
    learning_rate: float
    trees: list


def fit_gbm(X, y, config: GbmConfig | None = None) -> GbmModel:
    """Stagewise least-squares boosting; each tree fits the current residuals.

    Split ties are resolved deterministically, so ``config.seed`` never changes
    the result.
    """
    config = config or GbmConfig()
    X, y = check_xy(X, y, min_samples=1)
    base = float(y.mean())
    pred = np.full(y.shape[0], base)
    trees = []
    order = np.argsort(X, axis=0, kind="stable") if config.n_trees and config.max_depth else None
    for _ in range(config.n_trees):
        tree = RegressionTree.fit(X, y - pred, config.max_depth, config.min_samples_leaf, order)
        pred = pred + config.learning_rate * tree.predict(X)
        trees.append(tree)
    return GbmModel(base, config.learning_rate, trees)


def predict_gbm(model: GbmModel, X) -> np.ndarray:
    X = check_matrix(X)
    out = np.full(X.shape[0], model.base_prediction)
    for tree in model.trees:
        out += model.learning_rate * tree.predict(X)
    return out


class GradientBoostingRegressor(RegressorMixin, BaseEstimator):
    def __init__(self, n_estimators=100, max_depth=3, learning_rate=0.1, min_samples_leaf=1,
                 random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X)
        self.model_ = fit_gbm(X, y, GbmConfig(self.n_estimators, self.max_depth,
                                              self.learning_rate, self.min_samples_leaf,
                                              self.random_state))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_fitted(self, "model_")
        return predict_gbm(self.model_, check_matrix(X, self.n_features_in_))

    def staged_predict(self, X):
        check_fitted(self, "model_")
        X = check_matrix(X, self.n_features_in_)
        out = np.full(X.shape[0], self.model_.base_prediction)
        yield out.copy()
        for tree in self.model_.trees:
            out += self.model_.learning_rate * tree.predict(X)
            yield out.copy()


REGRESSOR_KINDS = ("svr", "gbm")


def make_regressor(kind, **params):
    kind = kind.lower()
    if kind == "svr":
        return SVR(**params)
    if kind == "gbm":
        return GradientBoostingRegressor(**params)
    raise ValidationError(f"unknown regressor kind {kind!r}; expected one of {REGRESSOR_KINDS}")
