"""Synthetic regression data with a low-dimensional latent cause.

Features are a fixed random sinusoidal lift of a 2-d latent variable plus
Gaussian noise; the label is a smooth function of the latent. With a high
lift frequency the latent manifold spreads evenly over all feature
directions, so variance-ranked projections (PCA) keep little of it while a
supervised embedding can still recover the label.
"""

import numpy as np

from .ingest import AnnotationTable, FeatureMatrix, minmax_to_unit


def latent_lift_dataset(n=1000, n_features=200, noise=0.1, frequency=20.0, seed=0,
                        lift_seed=12345):
    """Return ``(X, y, z)``.

    ``z ~ U[-1, 1]^2``, ``y = tanh(z1 + 0.5 z2^2)`` min-max rescaled to
    [-1, 1], and ``X = sin(z @ W + b) + noise * N(0, 1)`` where ``W`` has
    N(0, frequency^2) entries and ``b ~ U[-pi, pi]``, both drawn from
    ``lift_seed`` so the lift is identical across samples sets.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(n, 2))
    y = minmax_to_unit(np.tanh(z[:, 0] + 0.5 * z[:, 1] ** 2))
    lift = np.random.default_rng(lift_seed)
    W = lift.normal(0.0, frequency, size=(2, n_features))
    b = lift.uniform(-np.pi, np.pi, size=n_features)
    X = np.sin(z @ W + b) + noise * rng.normal(size=(n, n_features))
    return X, y, z


def as_tables(X, y, arousal=None, prefix="s"):
    """Wrap arrays as (FeatureMatrix, AnnotationTable); ``y`` fills valence."""
    ids = [f"{prefix}{i:05d}" for i in range(X.shape[0])]
    cols = [f"f{j}" for j in range(X.shape[1])]
    arousal = y if arousal is None else arousal
    return FeatureMatrix(ids, cols, X), AnnotationTable(ids, y, arousal)


def write_csvs(X, y, features_path, annotations_path, arousal=None):
    feats, ann = as_tables(X, y, arousal)
    with open(features_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(("song_id",) + feats.columns) + "\n")
        for sid, row in zip(feats.song_ids, feats.values):
            fh.write(sid + "," + ",".join(repr(float(v)) for v in row) + "\n")
    with open(annotations_path, "w", encoding="utf-8") as fh:
        fh.write("song_id,valence,arousal\n")
        for sid, v, a in zip(ann.song_ids, ann.valence, ann.arousal):
            fh.write(f"{sid},{float(v)!r},{float(a)!r}\n")
    return feats, ann
