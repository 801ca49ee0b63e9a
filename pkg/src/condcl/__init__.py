"""Conditioned sentence-embedding projection over frozen encoders.

A condition embedding is mapped, by a learned affine generator, to a linear
operator that projects sentence embeddings into a condition-specific
subspace. The package covers training (contrastive + regression objectives
with analytic gradients), baselines (elementwise and concatenation
composers), operator/embedding caching with a cost simulator, and an
analysis toolkit (rank correlations, filtered ranking metrics, clustering
impurity, operator-norm variance).
"""

__version__ = "0.1.0"

from .encoder import EmbeddingStore, HashingProvider, StoreProvider, hash_encode, load_embeddings
from .hypernet import (
    ConditionOperator,
    HyperNetParams,
    generate_condition_matrix,
    init_params,
    load_checkpoint,
    param_count,
    project,
    save_checkpoint,
)
from .losses import CstsQuadruplet, KgTriple, LossConfig, grad_check
from .trainer import TrainConfig, TrainReport, fit, make_synthetic_csts, make_synthetic_kg, train

__all__ = [
    "__version__",
    "EmbeddingStore",
    "HashingProvider",
    "StoreProvider",
    "hash_encode",
    "load_embeddings",
    "ConditionOperator",
    "HyperNetParams",
    "generate_condition_matrix",
    "init_params",
    "load_checkpoint",
    "param_count",
    "project",
    "save_checkpoint",
    "CstsQuadruplet",
    "KgTriple",
    "LossConfig",
    "grad_check",
    "TrainConfig",
    "TrainReport",
    "fit",
    "train",
    "make_synthetic_csts",
    "make_synthetic_kg",
]
