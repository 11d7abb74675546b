"""Dual-stream pair verification with adaptive decision thresholds.

Two encoder towers map a commodity to a similarity embedding and a
threshold embedding; a pair is predicted identical when the similarity
inner product exceeds the threshold inner product. The difference is itself
one inner product over concatenated vectors, so scores stay indexable.
"""

from .data import Commodity, GenConfig, PairExample, gen_universe, sample_pairs, split_item_disjoint
from .errors import PairVerifyError
from .evaluation import Metrics, evaluate, kde, threshold_sweep
from .index import IndexStore, build_index, make_query, top_k
from .model import ModelConfig, ModelParams, encode, init_model, pair_loss, predict, score_pair
from .numerics import cosine_lr, seeded_rng
from .train import TrainConfig, load_checkpoint, run_ablation, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Commodity",
    "GenConfig",
    "IndexStore",
    "Metrics",
    "ModelConfig",
    "ModelParams",
    "PairExample",
    "PairVerifyError",
    "TrainConfig",
    "build_index",
    "cosine_lr",
    "encode",
    "evaluate",
    "gen_universe",
    "init_model",
    "kde",
    "load_checkpoint",
    "make_query",
    "pair_loss",
    "predict",
    "run_ablation",
    "sample_pairs",
    "save_checkpoint",
    "score_pair",
    "seeded_rng",
    "split_item_disjoint",
    "threshold_sweep",
    "top_k",
    "train",
]
