import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn import metrics

from tripletreg.evaluation import (
    LITERATURE,
    CellSpec,
    ExperimentConfig,
    ExperimentReport,
    _run_job,
    derive_seed,
    export_embeddings,
    fit_fold_pipeline,
    preset_config,
    quartile_classes,
    r2_score,
    run_experiment,
    summarize,
)
from tripletreg.exceptions import DegenerateTarget, NotFitted, ValidationError
from tripletreg.ingest import kfold_split
from tripletreg.reducers import PCAReducer
from tripletreg.synthetic import as_tables

TNN_FAST = {"triplets_per_round": 300, "epochs_per_round": 2, "rounds": 2, "batch_size": 64}


class TestR2:
    def test_examples(self):
        y = np.array([0.3, -1.0, 2.0, 0.5])
        assert r2_score(y, y) == 1.0
        assert r2_score(y, np.full(4, y.mean())) == 0.0
        assert r2_score([0, 1], [1, 0]) == -3.0

    def test_degenerate(self):
        with pytest.raises(DegenerateTarget):
            r2_score([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateTarget):
            r2_score([1.0], [1.0])
        with pytest.raises(ValidationError):
            r2_score([1.0, 2.0], [1.0])

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, 10, elements=st.floats(-100, 100)),
           arrays(np.float64, 10, elements=st.floats(-100, 100)),
           st.floats(0.01, 100), st.floats(-100, 100))
    def test_affine_invariance_and_oracle(self, y, p, scale, shift):
        if np.ptp(y) < 1e-3:
            return
        base = r2_score(y, p)
        assert base == pytest.approx(metrics.r2_score(y, p), rel=1e-9, abs=1e-9)
        assert r2_score(scale * y + shift, scale * p + shift) == pytest.approx(
            base, rel=1e-7, abs=1e-7)


class TestConfig:
    def test_cell_names(self):
        assert CellSpec("svr", "tnn", 600).name == "TNN-SVR (600 features)"
        assert CellSpec("gbm").name == "GBM (original features)"

    def test_invalid_cells(self):
        with pytest.raises(ValidationError):
            CellSpec("knn")
        with pytest.raises(ValidationError):
            CellSpec("svr", "pca")
        with pytest.raises(ValidationError):
            ExperimentConfig(())
        with pytest.raises(ValidationError):
            ExperimentConfig.from_dict({"cells": [{"regressor": "svr"}], "bogus": 1})

    def test_roundtrip_and_digest(self, tmp_path):
        cfg = preset_config("deam", data_dir="D")
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg.to_dict()))
        again = ExperimentConfig.from_json(path)
        assert again == cfg and again.digest() == cfg.digest()

    def test_deam_preset_cells(self):
        names = [c.name for c in preset_config("deam").cells]
        assert names[:2] == ["SVR (original features)", "GBM (original features)"]
        for k in (100, 50):
            for red in ("PCA", "RP", "AE", "TNN"):
                for reg in ("SVR", "GBM"):
                    assert f"{red}-{reg} ({k} features)" in names
        assert len(names) == 18
        tnn = [c for c in preset_config("deam").cells if c.reducer == "tnn"][0]
        assert tnn.reducer_params["triplets_per_round"] == 150_000
        assert tnn.reducer_params["learning_rate"] == 1e-5

    def test_mediaeval_preset(self):
        cfg = preset_config("mediaeval2013", data_dir="D", seed=4)
        assert cfg.k_folds == 10 and cfg.seed == 4
        assert cfg.features.endswith("features.csv")
        rp = [c for c in cfg.cells if c.reducer == "rp"][0]
        assert rp.reducer_params["random_state"] == 50 and rp.dims == 600
        assert len(cfg.cells) == 10
        assert "mediaeval2013" in LITERATURE
        with pytest.raises(ValidationError):
            preset_config("unknown")

    def test_derive_seed(self):
        assert derive_seed(0, 1, 2, 0) == derive_seed(0, 1, 2, 0)
        assert derive_seed(0, 1, 2, 0) != derive_seed(0, 1, 3, 0)


def _dataset(n=60, d=6, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.tanh(X[:, 0] + 0.5 * X[:, 1])
    return as_tables(X, y, arousal=-y)


class TestRunExperiment:
    def test_gbm_linear(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(120, 3))
        y = X @ [1.0, -0.5, 0.25]
        feats, ann = as_tables(X, y)
        cfg = ExperimentConfig((CellSpec("gbm", regressor_params={"n_estimators": 300}),),
                               k_folds=5, targets=("valence",))
        report = run_experiment(cfg, feats, ann)
        assert report.mean("GBM (original features)", "valence") > 0.95

    def test_leave_one_out(self):
        feats, ann = _dataset(n=12)
        cfg = ExperimentConfig((CellSpec("svr"),), k_folds=12)
        res = run_experiment(cfg, feats, ann).cells[0]["results"]["valence"]
        assert res["status"] == "ok"
        assert res["n_test"] == [1] * 12
        assert res["folds"] == [None] * 12 and res["mean"] is None
        assert np.isfinite(res["pooled_r2"])

    def test_report_consistency_and_summary(self):
        feats, ann = _dataset()
        cfg = ExperimentConfig((CellSpec("svr"), CellSpec("svr", "pca", 3),
                                CellSpec("gbm", "pca", 3)), k_folds=4)
        report = run_experiment(cfg, feats, ann)
        assert not report.failed
        for cell in report.cells:
            for res in cell["results"].values():
                assert len(res["folds"]) == 4
                assert abs(res["mean"] - np.mean(res["folds"])) <= 1e-12
                assert abs(res["std"] - np.std(res["folds"])) <= 1e-12
        table = summarize(report)
        lines = table.splitlines()
        assert len(lines) == 2 + 3
        first = report.cells[0]["results"]
        assert f"{first['valence']['mean']:.3f}±{first['valence']['std']:.3f}" in lines[2]
        single = ExperimentReport.from_dict(report.to_dict())
        single.cells = single.cells[:1]
        assert len(summarize(single).splitlines()) == 3

    def test_failed_cell_isolated(self):
        feats, ann = _dataset()
        cfg = ExperimentConfig((CellSpec("svr"),
                                CellSpec("svr", "tnn", 2, {**TNN_FAST, "delta_n": 5.0})),
                               k_folds=3, targets=("valence",))
        report = run_experiment(cfg, feats, ann)
        assert report.failed
        assert report.cells[0]["results"]["valence"]["status"] == "ok"
        bad = report.cells[1]["results"]["valence"]
        assert bad["status"] == "failed" and bad["error"] == "InfeasibleAnchor"
        assert "FAILED(InfeasibleAnchor)" in summarize(report)

    def test_dims_too_large(self):
        feats, ann = _dataset(d=4)
        with pytest.raises(ValidationError):
            run_experiment(ExperimentConfig((CellSpec("svr", "pca", 5),)), feats, ann)

    def test_deterministic_json(self):
        feats, ann = _dataset(n=40)
        cfg = ExperimentConfig((CellSpec("svr", "tnn", 3, TNN_FAST), CellSpec("gbm", "rp", 3)),
                               k_folds=3, seed=5)
        a = run_experiment(cfg, feats, ann)
        b = run_experiment(cfg, feats, ann)
        assert a.to_json() == b.to_json()
        assert "elapsed_seconds" not in a.to_json()

    def test_parallel_matches_serial(self):
        feats, ann = _dataset(n=40)
        cfg = ExperimentConfig((CellSpec("svr", "pca", 2), CellSpec("gbm")), k_folds=3)
        assert (run_experiment(cfg, feats, ann, jobs=2).to_json()
                == run_experiment(cfg, feats, ann, jobs=1).to_json())

    def test_shared_reducer_reused(self):
        feats, ann = _dataset(n=40)
        tnn = CellSpec("svr", "tnn", 3, TNN_FAST)
        alone = run_experiment(ExperimentConfig((tnn,), k_folds=3), feats, ann)
        shared = run_experiment(ExperimentConfig((tnn, CellSpec("gbm", "tnn", 3, TNN_FAST)),
                                                  k_folds=3), feats, ann)
        assert alone.cells[0]["results"] == shared.cells[0]["results"]

    def test_progress_callback(self):
        feats, ann = _dataset(n=20)
        seen = []
        run_experiment(ExperimentConfig((CellSpec("svr"),), k_folds=2), feats, ann,
                       progress=lambda *a: seen.append(a[:3]))
        assert len(seen) == 4


class TestLeakage:
    @pytest.mark.parametrize("cell", [CellSpec("svr", "pca", 3),
                                      CellSpec("gbm", "tnn", 3, TNN_FAST),
                                      CellSpec("svr", "ae", 3, {"epochs": 2})])
    def test_test_rows_do_not_influence_fit(self, cell):
        feats, ann = _dataset(n=50)
        X, y = feats.values.copy(), ann.valence.copy()
        folds = kfold_split(50, 5, 0)
        train, test = folds.train_indices(2), folds.test_indices(2)
        seed = derive_seed(0, 0, 2, 0)
        (_, _, pred), = _run_job(X, y, train, test, [cell], seed)

        # refit from the training rows alone
        scaler, reducer, reg = fit_fold_pipeline(X[train], y[train], cell, seed)
        Z = reducer.transform(scaler.transform(X[test]))
        np.testing.assert_array_equal(reg.predict(Z), pred)

        # scramble held-out labels and features: training rows untouched, models identical
        X2, y2 = X.copy(), y.copy()
        X2[test] = 1e3 * np.random.default_rng(9).normal(size=X2[test].shape)
        y2[test] = -y2[test]
        s2, r2, g2 = fit_fold_pipeline(X2[train], y2[train], cell, seed)
        np.testing.assert_array_equal(s2.mean_, scaler.mean_)
        np.testing.assert_array_equal(r2.transform(s2.transform(X[test])), Z)
        np.testing.assert_array_equal(g2.predict(Z), pred)


class TestQuartiles:
    def test_mediaeval_size(self, rng):
        tags = quartile_classes(rng.normal(size=744))
        assert tags.count("high") == 100 and tags.count("low") == 100
        assert tags.count("mid-low") + tags.count("mid-high") == 544

    def test_small(self):
        v = [5, 1, 7, 3, 8, 2, 6, 4]
        tags = quartile_classes(v)
        assert [tags.count(t) for t in ("low", "mid-low", "mid-high", "high")] == [2, 2, 2, 2]
        assert tags[4] == "high" and tags[1] == "low"

    def test_too_many(self):
        with pytest.raises(ValidationError):
            quartile_classes([1, 2, 3], extreme_count=2)


def test_export_embeddings(tmp_path):
    feats, ann = _dataset(n=8)
    model = PCAReducer(2).fit(feats.values)
    path = tmp_path / "e.csv"
    E, classes = export_embeddings(model, feats, ann, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["song_id", "e1", "e2", "arousal", "class"]
    assert len(rows) == 9 and all(len(r) == 5 for r in rows)
    assert sorted(classes) == sorted(["low", "mid-low", "mid-high", "high"] * 2)
    with pytest.raises(NotFitted):
        export_embeddings(object(), feats, ann, path)
