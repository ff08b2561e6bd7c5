"""Gap-based triplet mining on continuous labels and the triplet hinge loss.

A sample is a *positive* for an anchor when its label lies within
``delta_p`` of the anchor's label and a *negative* when it lies at least
``delta_n`` away. Pairs falling strictly between the two thresholds are
discarded.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import DimensionMismatch, InfeasibleAnchor, ValidationError

DEFAULT_DELTA_P = 0.1
DEFAULT_DELTA_N = 0.5
DEFAULT_MARGIN = 0.2


class PairKind(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    GAP = "gap"


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


@dataclass(frozen=True)
class MiningConfig:
    delta_p: float = DEFAULT_DELTA_P
    delta_n: float = DEFAULT_DELTA_N
    max_attempts: int = 10_000

    def __post_init__(self):
        if not (0.0 <= self.delta_p < self.delta_n):
            raise ValidationError(
                f"need 0 <= delta_p < delta_n, got delta_p={self.delta_p}, delta_n={self.delta_n}")
        if self.max_attempts < 1:
            raise ValidationError("max_attempts must be positive")


@dataclass(frozen=True)
class TripletLossConfig:
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if not (np.isfinite(self.margin) and self.margin > 0):
            raise ValidationError(f"margin must be finite and positive, got {self.margin}")


def classify_pair(y_anchor: float, y_x: float, config: MiningConfig) -> PairKind:
    """Classify ``y_x`` relative to ``y_anchor``; both thresholds are inclusive."""
    diff = abs(y_x - y_anchor)
    if diff <= config.delta_p:
        return PairKind.POSITIVE
    if diff >= config.delta_n:
        return PairKind.NEGATIVE
    return PairKind.GAP


class _CandidateIndex:
    """Sorted-label view giving, per sample, its positive run and negative tails.

    In sorted order the positives of an anchor form one contiguous run and the
    negatives a prefix plus a suffix, because ``abs(y - y_a)`` is monotone on
    each side of ``y_a`` under IEEE rounding.
    """

    def __init__(self, labels, config: MiningConfig, chunk=512):
        y = np.asarray(labels, dtype=np.float64)
        n = y.shape[0]
        self.order = np.argsort(y, kind="stable")
        self.rank = np.empty(n, dtype=np.intp)
        self.rank[self.order] = np.arange(n)
        sy = y[self.order]
        self.pos_start = np.empty(n, dtype=np.intp)
        self.pos_count = np.empty(n, dtype=np.intp)
        self.neg_left = np.empty(n, dtype=np.intp)
        self.neg_right = np.empty(n, dtype=np.intp)
        for lo in range(0, n, chunk):
            ya = y[lo:lo + chunk, None]
            diff = np.abs(sy[None, :] - ya)
            pos = diff <= config.delta_p
            neg = diff >= config.delta_n
            left = sy[None, :] < ya
            self.pos_start[lo:lo + chunk] = np.argmax(pos, axis=1)
            self.pos_count[lo:lo + chunk] = pos.sum(axis=1)
            self.neg_left[lo:lo + chunk] = (neg & left).sum(axis=1)
            self.neg_right[lo:lo + chunk] = (neg & ~left).sum(axis=1)
        self.n = n
        # the anchor is always inside its own positive run
        self.feasible = (self.pos_count >= 2) & (self.neg_left + self.neg_right >= 1)


def mine_triplets(labels, count: int, config: MiningConfig | None = None, seed=0) -> np.ndarray:
    """Draw ``count`` triplets uniformly under the gap rule.

    Anchors are sampled uniformly with replacement; an anchor lacking either a
    positive or a negative is redrawn (up to ``config.max_attempts`` draws per
    triplet). Positive and negative are uniform over their qualifying sets.

    Returns an ``(count, 3)`` integer array of (anchor, positive, negative)
    indices into ``labels``.
    """
    config = config or MiningConfig()
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    if labels.shape[0] < 2 or not np.all(np.isfinite(labels)):
        raise InfeasibleAnchor("need at least two finite labels to mine triplets")
    rng = np.random.default_rng(seed)
    idx = _CandidateIndex(labels, config)
    if not idx.feasible.any():
        raise InfeasibleAnchor(
            f"no anchor has both a positive (<= {config.delta_p}) and a negative "
            f"(>= {config.delta_n}) candidate among {idx.n} labels")

    anchors = rng.integers(idx.n, size=count)
    bad = ~idx.feasible[anchors]
    attempts = 1
    while bad.any():
        if attempts >= config.max_attempts:
            raise InfeasibleAnchor(
                f"{int(bad.sum())} triplet slots found no feasible anchor in "
                f"{config.max_attempts} draws")
        anchors[bad] = rng.integers(idx.n, size=int(bad.sum()))
        bad = ~idx.feasible[anchors]
        attempts += 1

    # positive: uniform over the run minus the anchor itself
    r = (rng.random(count) * (idx.pos_count[anchors] - 1)).astype(np.intp)
    r = np.minimum(r, idx.pos_count[anchors] - 2)
    pos_sorted = idx.pos_start[anchors] + r
    pos_sorted += pos_sorted >= idx.rank[anchors]

    n_left = idx.neg_left[anchors]
    n_neg = n_left + idx.neg_right[anchors]
    r = (rng.random(count) * n_neg).astype(np.intp)
    r = np.minimum(r, n_neg - 1)
    neg_sorted = np.where(r < n_left, r, idx.n - idx.neg_right[anchors] + (r - n_left))

    out = np.empty((count, 3), dtype=np.intp)
    out[:, 0] = anchors
    out[:, 1] = idx.order[pos_sorted]
    out[:, 2] = idx.order[neg_sorted]
    return out


def as_triplets(batch) -> list:
    return [Triplet(int(a), int(p), int(n)) for a, p, n in np.asarray(batch)]


def write_triplets_csv(batch, path):
    """Debug dump of a mined batch."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["anchor_idx", "positive_idx", "negative_idx"])
        w.writerows(np.asarray(batch).tolist())


def _check_same_dim(v_a, v_p, v_n):
    v_a, v_p, v_n = (np.asarray(v, dtype=np.float64) for v in (v_a, v_p, v_n))
    if not (v_a.shape == v_p.shape == v_n.shape):
        raise DimensionMismatch(
            f"embedding shapes differ: {v_a.shape}, {v_p.shape}, {v_n.shape}")
    return v_a, v_p, v_n


def _margin(config):
    if config is None:
        return DEFAULT_MARGIN
    return config.margin if isinstance(config, TripletLossConfig) else float(config)


def triplet_loss(v_a, v_p, v_n, config: TripletLossConfig | float | None = None):
    """``max(|a - p|^2 - |a - n|^2 + margin, 0)``.

    Accepts single vectors or row-stacked batches (one loss per row).
    """
    v_a, v_p, v_n = _check_same_dim(v_a, v_p, v_n)
    d_ap = np.sum((v_a - v_p) ** 2, axis=-1)
    d_an = np.sum((v_a - v_n) ** 2, axis=-1)
    loss = np.maximum(d_ap - d_an + _margin(config), 0.0)
    return float(loss) if loss.ndim == 0 else loss


def triplet_loss_grad(v_a, v_p, v_n, config: TripletLossConfig | float | None = None):
    """Gradients of :func:`triplet_loss` w.r.t. the three embeddings.

    Inactive triplets, including the kink where the hinge argument is exactly
    zero, get zero gradients.
    """
    v_a, v_p, v_n = _check_same_dim(v_a, v_p, v_n)
    d_ap = np.sum((v_a - v_p) ** 2, axis=-1, keepdims=True)
    d_an = np.sum((v_a - v_n) ** 2, axis=-1, keepdims=True)
    active = (d_ap - d_an + _margin(config)) > 0.0
    grad_a = np.where(active, 2.0 * (v_n - v_p), 0.0)
    grad_p = np.where(active, 2.0 * (v_p - v_a), 0.0)
    grad_n = np.where(active, 2.0 * (v_a - v_n), 0.0)
    return grad_a, grad_p, grad_n
