import numpy as np
import pytest
from sklearn.pipeline import Pipeline

from tripletreg.exceptions import MissingFile, NotFitted, ValidationError
from tripletreg.ingest import Standardizer
from tripletreg.persistence import load_model, model_input_dim, save_model
from tripletreg.reducers import (
    AutoencoderReducer,
    GaussianRandomProjection,
    PCAReducer,
    TripletEmbedding,
)
from tripletreg.regressors import SVR, GradientBoostingRegressor

ESTIMATORS = {
    "pca": lambda: PCAReducer(3),
    "rp": lambda: GaussianRandomProjection(3, random_state=4),
    "tnn": lambda: TripletEmbedding(3, triplets_per_round=100, epochs_per_round=1, rounds=2,
                                    batch_size=32),
    "ae": lambda: AutoencoderReducer(3, epochs=2),
    "svr": lambda: SVR(C=2.0),
    "gbm": lambda: GradientBoostingRegressor(n_estimators=7, max_depth=2),
    "standardizer": Standardizer,
}


@pytest.fixture
def data(rng):
    X = rng.normal(size=(40, 6))
    X[:, 5] = 2.0  # constant column
    y = np.tanh(X[:, 0])
    return X, (y - y.min()) / np.ptp(y) * 2 - 1


def _apply(est, X):
    return est.predict(X) if hasattr(est, "predict") else est.transform(X)


@pytest.mark.parametrize("kind", sorted(ESTIMATORS))
def test_roundtrip_bit_exact(kind, data, tmp_path):
    X, y = data
    est = ESTIMATORS[kind]().fit(X, y)
    path = tmp_path / f"{kind}.npz"
    save_model(est, path)
    back = load_model(path)
    assert type(back) is type(est)
    assert back.get_params() == est.get_params()
    np.testing.assert_array_equal(_apply(back, X), _apply(est, X))
    assert model_input_dim(back) == 6


@pytest.mark.parametrize("kind", ["tnn", "gbm", "svr"])
def test_identical_models_identical_bytes(kind, data, tmp_path):
    X, y = data
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    save_model(ESTIMATORS[kind]().fit(X, y), a)
    save_model(ESTIMATORS[kind]().fit(X, y), b)
    assert a.read_bytes() == b.read_bytes()


def test_pipeline(data, tmp_path):
    X, y = data
    pipe = Pipeline([("standardize", Standardizer()), ("reduce", PCAReducer(2))]).fit(X)
    save_model(pipe, tmp_path / "p.bin")
    back = load_model(tmp_path / "p.bin")
    assert [n for n, _ in back.steps] == ["standardize", "reduce"]
    np.testing.assert_array_equal(back.transform(X), pipe.transform(X))
    assert model_input_dim(back) == 6


def test_training_log_preserved(data, tmp_path):
    X, y = data
    est = ESTIMATORS["tnn"]().fit(X, y)
    save_model(est, tmp_path / "t.npz")
    assert load_model(tmp_path / "t.npz").training_log_ == est.training_log_


def test_errors(tmp_path):
    with pytest.raises(MissingFile):
        load_model(tmp_path / "none.npz")
    bad = tmp_path / "bad.npz"
    bad.write_text("not a model")
    with pytest.raises(ValidationError):
        load_model(bad)
    with pytest.raises(NotFitted):
        save_model(PCAReducer(2), tmp_path / "x.npz")
    with pytest.raises(ValidationError):
        save_model(object(), tmp_path / "x.npz")
