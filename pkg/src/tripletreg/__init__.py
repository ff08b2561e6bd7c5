"""Triplet-network embeddings for regression targets, with PCA, random
projection and autoencoder baselines scored by SVR and GBM regressors."""

__version__ = "0.1.0"

from .evaluation import (  # noqa: E402
    CellSpec,
    ExperimentConfig,
    ExperimentReport,
    export_embeddings,
    preset_config,
    r2_score,
    run_experiment,
    summarize,
)
from .ingest import (  # noqa: E402
    AnnotationTable,
    FeatureMatrix,
    Standardizer,
    kfold_split,
    load_annotations,
    load_feature_table,
    normalize_labels,
    standardize_features,
)
from .neuralnet import TnnTrainConfig, train_autoencoder, train_tnn  # noqa: E402
from .persistence import load_model, save_model  # noqa: E402
from .reducers import (  # noqa: E402
    AutoencoderReducer,
    GaussianRandomProjection,
    PCAReducer,
    TripletEmbedding,
)
from .regressors import SVR, GradientBoostingRegressor  # noqa: E402
from .triplets import MiningConfig, classify_pair, mine_triplets, triplet_loss  # noqa: E402
