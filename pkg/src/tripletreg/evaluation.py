"""Cross-validated benchmark over (reducer x regressor x target) cells."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DegenerateTarget, NotFitted, ValidationError
from .ingest import (
    LABEL_COLUMNS,
    AnnotationTable,
    FeatureMatrix,
    Standardizer,
    kfold_split,
    load_annotations,
    load_feature_table,
    normalize_labels,
)
from .reducers import REDUCER_KINDS, make_reducer
from .regressors import REGRESSOR_KINDS, make_regressor

REPORT_FORMAT = "tripletreg-report"
MEDIAEVAL_SIZE = 744
MEDIAEVAL_EXTREME_COUNT = 100
CLASS_TAGS = ("low", "mid-low", "mid-high", "high")

# Published comparison rows; shown for context only, never recomputed.
LITERATURE = {
    "mediaeval2013": [
        ("SVR (Markov & Matsui 2013)", (0.112, None), (0.300, None)),
        ("GPR (Markov & Matsui 2013)", (0.170, None), (0.581, None)),
        ("GPR (Fukuyama & Goto 2016)", (0.413, 0.043), (0.636, 0.040)),
    ],
}


def r2_score(y_true, y_pred) -> float:
    """Coefficient of determination; negative when worse than predicting the mean."""
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ValidationError(f"{y_true.shape[0]} targets but {y_pred.shape[0]} predictions")
    if y_true.shape[0] < 2:
        raise DegenerateTarget("R^2 needs at least two targets")
    ss_tot = np.sum((y_true - y_true.mean()) ** 2)
    if ss_tot == 0.0:
        raise DegenerateTarget("R^2 undefined: all targets are identical")
    return float(1.0 - np.sum((y_true - y_pred) ** 2) / ss_tot)


# -- configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class CellSpec:
    regressor: str
    reducer: str | None = None
    dims: int | None = None
    reducer_params: dict = field(default_factory=dict)
    regressor_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regressor not in REGRESSOR_KINDS:
            raise ValidationError(f"unknown regressor {self.regressor!r}")
        if self.reducer is not None:
            if self.reducer not in REDUCER_KINDS:
                raise ValidationError(f"unknown reducer {self.reducer!r}")
            if not (isinstance(self.dims, int) and self.dims >= 1):
                raise ValidationError(f"reducer {self.reducer!r} needs a positive dims")

    @property
    def name(self):
        if self.reducer is None:
            return f"{self.regressor.upper()} (original features)"
        return f"{self.reducer.upper()}-{self.regressor.upper()} ({self.dims} features)"

    @property
    def reducer_key(self):
        if self.reducer is None:
            return "none"
        return json.dumps([self.reducer, self.dims, self.reducer_params], sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(d["regressor"], d.get("reducer"), d.get("dims"),
                   dict(d.get("reducer_params", {})), dict(d.get("regressor_params", {})))


@dataclass(frozen=True)
class ExperimentConfig:
    cells: tuple
    features: str | None = None
    annotations: str | None = None
    targets: tuple = LABEL_COLUMNS
    k_folds: int = 10
    seed: int = 0
    preset: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(
            c if isinstance(c, CellSpec) else CellSpec.from_dict(c) for c in self.cells))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.cells:
            raise ValidationError("experiment needs at least one cell")
        for t in self.targets:
            if t not in LABEL_COLUMNS:
                raise ValidationError(f"unknown target {t!r}")

    def to_dict(self):
        d = asdict(self)
        d["cells"] = [asdict(c) for c in self.cells]
        d["targets"] = list(self.targets)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {"cells", "features", "annotations", "targets", "k_folds", "seed", "preset"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown experiment config keys: {sorted(unknown)}")
        if "cells" not in d:
            raise ValidationError("experiment config needs a 'cells' list")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: invalid JSON ({exc})") from None

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def _tnn_params(triplets_per_round):
    return {"delta_p": 0.1, "delta_n": 0.5, "triplets_per_round": triplets_per_round,
            "epochs_per_round": 10, "rounds": 25, "learning_rate": 1e-5}


def _grid(dims, triplets_per_round):
    cells = []
    for regressor in ("gbm", "svr"):
        for k in dims:
            cells += [
                CellSpec(regressor, "pca", k),
                CellSpec(regressor, "rp", k, {"random_state": 50}),
                CellSpec(regressor, "ae", k, {"epochs": 100}),
                CellSpec(regressor, "tnn", k, _tnn_params(triplets_per_round)),
            ]
    return cells


def preset_config(name, data_dir=None, seed=0, features=None, annotations=None):
    """Experiment grids mirroring the MediaEval 2013 and DEAM result tables.

    Data files default to ``<data_dir>/features.csv`` and
    ``<data_dir>/annotations.csv``.
    """
    if data_dir is not None:
        features = features or os.path.join(data_dir, "features.csv")
        annotations = annotations or os.path.join(data_dir, "annotations.csv")
    if name == "mediaeval2013":
        cells = [CellSpec("gbm")] + _grid([600], 50_000)[:4] + [CellSpec("svr")] + _grid([600], 50_000)[4:]
    elif name == "deam":
        cells = [CellSpec("svr"), CellSpec("gbm")] + _grid([100, 50], 150_000)
    else:
        raise ValidationError(f"unknown preset {name!r}; expected mediaeval2013 or deam")
    return ExperimentConfig(tuple(cells), features, annotations, LABEL_COLUMNS, 10, seed, name)


PRESETS = ("mediaeval2013", "deam")


# -- running ------------------------------------------------------------------------

def derive_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def fit_fold_pipeline(X_train, y_train, cell: CellSpec, seed):
    """Fit standardizer, reducer and regressor on training rows only."""
    scaler = Standardizer().fit(X_train)
    Z = scaler.transform(X_train)
    reducer = fit_reducer(Z, y_train, cell, seed)
    if reducer is not None:
        Z = reducer.transform(Z)
    regressor = make_regressor(cell.regressor, **cell.regressor_params).fit(Z, y_train)
    return scaler, reducer, regressor


def fit_reducer(Z, y, cell: CellSpec, seed):
    if cell.reducer is None:
        return None
    params = dict(cell.reducer_params)
    if cell.reducer != "pca":
        params.setdefault("random_state", seed)
    return make_reducer(cell.reducer, cell.dims, **params).fit(Z, y)


def _error_tag(exc):
    return getattr(exc, "tag", type(exc).__name__)


def _run_job(X, y, train, test, cells, seed):
    """One (reducer, target, fold) job; returns one outcome per cell."""
    outcomes = []
    try:
        scaler = Standardizer().fit(X[train])
        A, B = scaler.transform(X[train]), scaler.transform(X[test])
        reducer = fit_reducer(A, y[train], cells[0], seed)
        if reducer is not None:
            A, B = reducer.transform(A), reducer.transform(B)
    except Exception as exc:  # noqa: BLE001 - isolate failures per cell
        return [("failed", _error_tag(exc), str(exc))] * len(cells)
    for cell in cells:
        try:
            reg = make_regressor(cell.regressor, **cell.regressor_params).fit(A, y[train])
            pred = reg.predict(B)
            try:
                score = r2_score(y[test], pred)
            except DegenerateTarget:
                score = None
            outcomes.append(("ok", score, np.asarray(pred, dtype=np.float64)))
        except Exception as exc:  # noqa: BLE001
            outcomes.append(("failed", _error_tag(exc), str(exc)))
    return outcomes


@dataclass
class ExperimentReport:
    config: dict
    config_hash: str
    seed: int
    k_folds: int
    cells: list
    metadata: dict = field(default_factory=dict)

    @property
    def failed(self):
        return any(r["status"] == "failed" for c in self.cells for r in c["results"].values())

    def to_dict(self, include_metadata=False):
        d = {"format": REPORT_FORMAT, "version": 1, "config": self.config,
             "config_hash": self.config_hash, "seed": self.seed, "k_folds": self.k_folds,
             "cells": self.cells}
        if include_metadata:
            d["metadata"] = self.metadata
        return d

    def to_json(self, include_metadata=False):
        return json.dumps(self.to_dict(include_metadata), indent=2, sort_keys=True) + "\n"

    def write(self, path):
        """Write the deterministic report to ``path`` and timing metadata beside it."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        root, _ = os.path.splitext(path)
        with open(root + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(d["config"], d["config_hash"], d["seed"], d["k_folds"], d["cells"],
                   d.get("metadata", {}))

    def cell(self, name):
        for c in self.cells:
            if c["name"] == name:
                return c
        raise KeyError(name)

    def mean(self, name, target):
        return self.cell(name)["results"][target]["mean"]


def _load_dataset(config, features, annotations):
    if features is None:
        if config.features is None:
            raise ValidationError("no feature file configured")
        features = load_feature_table(config.features)
    if annotations is None:
        if config.annotations is None:
            raise ValidationError("no annotation file configured")
        annotations = load_annotations(config.annotations)
    annotations = normalize_labels(annotations.align(features.song_ids))
    return features, annotations


def _aggregate(fold_scores):
    defined = [s for s in fold_scores if s is not None]
    if not defined:
        return None, None
    arr = np.asarray(defined)
    return float(arr.mean()), float(arr.std())


def run_experiment(config: ExperimentConfig, features: FeatureMatrix | None = None,
                   annotations: AnnotationTable | None = None, jobs=1,
                   progress=None) -> ExperimentReport:
    """Run every cell under k-fold CV.

    Labels are normalized once over the whole dataset; the standardizer,
    reducer (re-initialized per fold) and regressor are fitted on each
    training portion only. Cells sharing a reducer reuse the same fitted
    reducer within a fold. Per-fold R^2 is ``None`` when the test fold has
    fewer than two distinct targets; a pooled out-of-fold R^2 is always
    reported.
    """
    import datetime as _dt
    import time

    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    features, annotations = _load_dataset(config, features, annotations)
    X = features.values
    n = X.shape[0]
    for cell in config.cells:
        if cell.dims is not None and cell.dims > X.shape[1]:
            raise ValidationError(f"{cell.name}: dims {cell.dims} exceed {X.shape[1]} features")
    folds = kfold_split(n, config.k_folds, config.seed)

    groups = {}
    for ci, cell in enumerate(config.cells):
        groups.setdefault(cell.reducer_key, []).append(ci)

    jobs_spec = []
    for ti, target in enumerate(config.targets):
        y = annotations.target(target)
        for key, members in groups.items():
            for fold in range(config.k_folds):
                seed = derive_seed(config.seed, members[0], fold, ti)
                jobs_spec.append((ti, members, fold, (X, y, folds.train_indices(fold),
                                                      folds.test_indices(fold),
                                                      [config.cells[i] for i in members], seed)))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_job, *args) for *_, args in jobs_spec]
            results = [f.result() for f in futures]
    else:
        results = []
        for ti, members, fold, args in jobs_spec:
            results.append(_run_job(*args))
            if progress is not None:
                for ci, out in zip(members, results[-1]):
                    progress(config.cells[ci].name, config.targets[ti], fold, out)

    per = {(ci, ti): [None] * config.k_folds for ci in range(len(config.cells))
           for ti in range(len(config.targets))}
    for (ti, members, fold, _), outs in zip(jobs_spec, results):
        for ci, out in zip(members, outs):
            per[ci, ti][fold] = out

    cells = []
    for ci, cell in enumerate(config.cells):
        entry = {"name": cell.name, "index": ci, "reducer": cell.reducer, "dims": cell.dims,
                 "regressor": cell.regressor, "results": {}}
        for ti, target in enumerate(config.targets):
            outs = per[ci, ti]
            failed = [(f, o) for f, o in enumerate(outs) if o[0] == "failed"]
            if failed:
                fold, (_, tag, message) = failed[0]
                entry["results"][target] = {"status": "failed", "error": tag, "fold": fold,
                                            "message": message}
                continue
            scores = [o[1] for o in outs]
            mean, std = _aggregate(scores)
            y = annotations.target(target)
            oof = np.empty(n)
            for fold, o in enumerate(outs):
                oof[folds.test_indices(fold)] = o[2]
            entry["results"][target] = {
                "status": "ok", "folds": scores, "mean": mean, "std": std,
                "n_test": [int(folds.test_indices(f).size) for f in range(config.k_folds)],
                "pooled_r2": r2_score(y, oof),
            }
        cells.append(entry)

    meta = {"started": started, "elapsed_seconds": time.perf_counter() - t0,
            "n_samples": n, "n_features": int(X.shape[1]), "jobs": jobs}
    return ExperimentReport(config.to_dict(), config.digest(), config.seed, config.k_folds,
                            cells, meta)


# -- rendering ------------------------------------------------------------------------

def _fmt(mean, std, digits):
    if mean is None:
        return "n/a"
    if std is None:
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def summarize(report: ExperimentReport, digits=3, literature=True) -> str:
    """Render ``<cell> | valence mean±std | arousal mean±std`` rows in config order."""
    targets = list(report.config.get("targets", LABEL_COLUMNS))
    rows = []
    preset = report.config.get("preset")
    if literature and preset in LITERATURE:
        for name, *vals in LITERATURE[preset]:
            lookup = dict(zip(LABEL_COLUMNS, vals))
            rows.append([f"{name} [literature]"] + [_fmt(*lookup[t], digits) for t in targets])
    for cell in report.cells:
        row = [cell["name"]]
        for t in targets:
            r = cell["results"][t]
            row.append(f"FAILED({r['error']})" if r["status"] == "failed"
                       else _fmt(r["mean"], r["std"], digits))
        rows.append(row)
    header = ["cell"] + targets
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths)),
             "-+-".join("-" * w for w in widths)]
    lines += [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def print_progress(name, target, fold, outcome):
    status = outcome[0]
    detail = (f"r2={outcome[1]:.4f}" if status == "ok" and outcome[1] is not None
              else outcome[1] if status == "failed" else "r2=n/a")
    print(f"[{name}] {target} fold {fold + 1}: {detail}", file=sys.stderr, flush=True)


# -- embedding export -------------------------------------------------------------------

def quartile_classes(values, extreme_count=None):
    """Tag each sample low / mid-low / mid-high / high by label rank.

    The ``extreme_count`` highest and lowest samples form the high and low
    classes; the rest are split at their median. Defaults to 100 for the
    744-song MediaEval set and ``n // 4`` otherwise.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if extreme_count is None:
        extreme_count = MEDIAEVAL_EXTREME_COUNT if n == MEDIAEVAL_SIZE else n // 4
    if not 0 <= 2 * extreme_count <= n:
        raise ValidationError(f"extreme_count {extreme_count} too large for {n} samples")
    order = np.argsort(values, kind="stable")
    tags = np.empty(n, dtype=object)
    middle = order[extreme_count:n - extreme_count]
    n_mid_low = middle.size - middle.size // 2
    tags[order[:extreme_count]] = "low"
    tags[middle[:n_mid_low]] = "mid-low"
    tags[middle[n_mid_low:]] = "mid-high"
    tags[order[n - extreme_count:]] = "high"
    return tags.tolist()


def export_embeddings(model, X: FeatureMatrix, labels: AnnotationTable, path,
                      target="arousal", extreme_count=None):
    """Write ``song_id, e1..ek, <target>, class`` rows for external plotting."""
    if not hasattr(model, "transform"):
        raise NotFitted(f"{type(model).__name__} cannot transform")
    E = model.transform(X.values)
    labels = labels.align(X.song_ids)
    y = labels.target(target)
    classes = quartile_classes(y, extreme_count)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["song_id"] + [f"e{j + 1}" for j in range(E.shape[1])] + [target, "class"])
        for sid, row, label, tag in zip(X.song_ids, E, y, classes):
            w.writerow([sid] + [repr(float(v)) for v in row] + [repr(float(label)), tag])
    return E, classes
