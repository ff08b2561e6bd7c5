"""Model documents: one ``.npz`` container per fitted estimator.

The container holds a JSON header under ``__meta__`` (format version, kind
tag, constructor params, input/output dims, layer activations) and the raw
float64/int arrays, so save -> load -> transform is bit-exact.
"""

from __future__ import annotations

import json
import os
import zipfile

import numpy as np
from sklearn.pipeline import Pipeline

from .exceptions import MissingFile, NotFitted, ValidationError
from .ingest import Standardizer
from .neuralnet import AutoencoderModel, DenseLayer, EmbeddingModel
from .reducers import AutoencoderReducer, GaussianRandomProjection, PCAReducer, TripletEmbedding
from .regressors import SVR, GbmModel, GradientBoostingRegressor, RegressionTree

FORMAT = "tripletreg-model"
VERSION = 1

_KINDS = {
    PCAReducer: "pca",
    GaussianRandomProjection: "rp",
    TripletEmbedding: "tnn",
    AutoencoderReducer: "ae",
    SVR: "svr",
    GradientBoostingRegressor: "gbm",
    Standardizer: "standardizer",
}
_CLASSES = {v: k for k, v in _KINDS.items()}


def _layer_arrays(prefix, layer):
    return {f"{prefix}_weights": layer.weights, f"{prefix}_biases": layer.biases}


def _layer(arrays, prefix, activation):
    return DenseLayer(arrays[f"{prefix}_weights"], arrays[f"{prefix}_biases"], activation)


def _export(est):
    kind = _KINDS.get(type(est))
    if kind is None:
        raise ValidationError(f"cannot persist {type(est).__name__}")
    meta = {"format": FORMAT, "version": VERSION, "kind": kind, "params": est.get_params(),
            "input_dim": getattr(est, "n_features_in_", None)}
    if kind == "pca":
        arrays = {"mean": est.mean_, "components": est.components_,
                  "explained_variance": est.explained_variance_}
        meta["output_dim"] = est.components_.shape[0]
    elif kind == "rp":
        arrays = {"projection": est.projection_}
        meta["output_dim"] = est.projection_.shape[0]
    elif kind == "tnn":
        layers = est.model_.layers
        arrays = {}
        for i, layer in enumerate(layers):
            arrays.update(_layer_arrays(f"layer{i}", layer))
        arrays["training_log"] = np.asarray(est.model_.training_log, dtype=np.float64)
        meta["activations"] = [layer.activation for layer in layers]
        meta["output_dim"] = layers[-1].output_dim
    elif kind == "ae":
        m = est.model_
        arrays = {**_layer_arrays("encoder", m.encoder), **_layer_arrays("decoder", m.decoder),
                  "training_log": np.asarray(m.training_log, dtype=np.float64)}
        meta["activations"] = [m.encoder.activation, m.decoder.activation]
        meta["output_dim"] = m.encoder.output_dim
    elif kind == "svr":
        arrays = {"support_vectors": est.support_vectors_, "dual_coef": est.dual_coef_,
                  "intercept": np.array([est.intercept_]), "gamma": np.array([est.gamma_])}
        meta["converged"] = bool(est.converged_)
        meta["n_iter"] = int(est.n_iter_)
        meta["output_dim"] = 1
    elif kind == "gbm":
        m = est.model_
        parts = [t.as_arrays() + (np.asarray(t.n_samples, dtype=np.intp),) for t in m.trees]
        sizes = [len(t.value) for t in m.trees]
        names = ("feature", "threshold", "left", "right", "value", "n_samples")
        dtypes = (np.int64, np.float64, np.int64, np.int64, np.float64, np.int64)
        arrays = {f"tree_{name}": (np.concatenate([p[i] for p in parts]).astype(dt)
                                   if parts else np.zeros(0, dtype=dt))
                  for i, (name, dt) in enumerate(zip(names, dtypes))}
        arrays["tree_sizes"] = np.asarray(sizes, dtype=np.int64)
        arrays["base_prediction"] = np.array([m.base_prediction])
        arrays["learning_rate"] = np.array([m.learning_rate])
        meta["output_dim"] = 1
    else:
        arrays = {"mean": est.mean_, "scale": est.scale_, "constant": est.constant_}
        meta["output_dim"] = est.mean_.shape[0]
    return meta, arrays


def _export_any(est):
    if isinstance(est, Pipeline):
        meta = {"format": FORMAT, "version": VERSION, "kind": "pipeline", "steps": []}
        arrays = {}
        for name, step in est.steps:
            step_meta, step_arrays = _export(step)
            meta["steps"].append({"name": name, **step_meta})
            arrays.update({f"{name}/{k}": v for k, v in step_arrays.items()})
        meta["input_dim"] = meta["steps"][0]["input_dim"]
        meta["output_dim"] = meta["steps"][-1]["output_dim"]
        return meta, arrays
    return _export(est)


def save_model(estimator, path):
    """Write a fitted estimator or pipeline of estimators to ``path`` (any extension)."""
    try:
        meta, arrays = _export_any(estimator)
    except AttributeError as exc:
        raise NotFitted(f"{type(estimator).__name__} is not fitted: {exc}") from None
    header = json.dumps(meta, sort_keys=True)
    _write_npz(os.fspath(path), {"__meta__": np.array(header), **arrays})


def _write_npz(path, arrays):
    # fixed entry timestamps keep identical models byte-identical on disk
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arrays[name]), allow_pickle=False)


def load_model(path):
    """Inverse of :func:`save_model`."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile(f"no such model file: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (ValueError, OSError) as exc:
        raise ValidationError(f"{path}: not a model document ({exc})") from None
    meta = json.loads(str(arrays.pop("__meta__")))
    if meta.get("format") != FORMAT:
        raise ValidationError(f"{path}: unrecognized model format {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise ValidationError(f"{path}: unsupported model version {meta.get('version')!r}")
    if meta["kind"] == "pipeline":
        steps = []
        for step in meta["steps"]:
            prefix = step["name"] + "/"
            sub = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            steps.append((step["name"], _restore(step, sub)))
        return Pipeline(steps)
    return _restore(meta, arrays)


def _restore(meta, arrays):
    kind = meta["kind"]
    if kind not in _CLASSES:
        raise ValidationError(f"unknown model kind {kind!r}")
    est = _CLASSES[kind](**meta["params"])
    if meta.get("input_dim") is not None:
        est.n_features_in_ = int(meta["input_dim"])
    if kind == "pca":
        est.mean_, est.components_ = arrays["mean"], arrays["components"]
        est.explained_variance_ = arrays["explained_variance"]
    elif kind == "rp":
        est.projection_ = arrays["projection"]
    elif kind == "tnn":
        layers = [_layer(arrays, f"layer{i}", act) for i, act in enumerate(meta["activations"])]
        est.model_ = EmbeddingModel(layers, arrays["training_log"].tolist())
    elif kind == "ae":
        enc_act, dec_act = meta["activations"]
        est.model_ = AutoencoderModel(_layer(arrays, "encoder", enc_act),
                                      _layer(arrays, "decoder", dec_act),
                                      arrays["training_log"].tolist())
    elif kind == "svr":
        est.support_vectors_ = arrays["support_vectors"]
        est.dual_coef_ = arrays["dual_coef"]
        est.intercept_ = float(arrays["intercept"][0])
        est.gamma_ = float(arrays["gamma"][0])
        est.converged_ = meta["converged"]
        est.n_iter_ = meta["n_iter"]
    elif kind == "gbm":
        trees, start = [], 0
        for size in arrays["tree_sizes"].tolist():
            sl = slice(start, start + size)
            trees.append(RegressionTree(
                arrays["tree_feature"][sl].tolist(), arrays["tree_threshold"][sl].tolist(),
                arrays["tree_left"][sl].tolist(), arrays["tree_right"][sl].tolist(),
                arrays["tree_value"][sl].tolist(), arrays["tree_n_samples"][sl].tolist()))
            start += size
        est.model_ = GbmModel(float(arrays["base_prediction"][0]),
                              float(arrays["learning_rate"][0]), trees)
    else:
        est.mean_, est.scale_ = arrays["mean"], arrays["scale"]
        est.constant_ = arrays["constant"]
    return est


def model_input_dim(model):
    if isinstance(model, Pipeline):
        model = model.steps[0][1]
    return getattr(model, "n_features_in_", None)
