"""Shared small fixtures.

Everything here is sized for speed: a 40-product universe and a model a few
dozen steps in. The full-scale benchmark lives in test_acceptance only.
"""

import pytest

from pairverify.data import GenConfig, gen_universe, sample_pairs, split_item_disjoint
from pairverify.model import ModelConfig
from pairverify.numerics import seeded_rng
from pairverify.train import TrainConfig, train

TINY_GEN = GenConfig(
    n_products=40,
    variants_per_product=3,
    n_categories=4,
    n_attrs=4,
    attr_values=4,
    attrs_text_only=(0,),
    attrs_image_only=(1,),
    text_vocab=40,
    image_dim=20,
    noise_sigma=0.05,
    category_scale_spread=0.3,
    seed=7,
)

TINY_MODEL = ModelConfig(
    variant="sat",
    modality="both",
    commodity_dim=6,
    threshold_dim=6,
    text_vocab=TINY_GEN.text_vocab,
    image_dim=TINY_GEN.image_dim,
    hidden_dim=10,
)


@pytest.fixture(scope="session")
def tiny_universe():
    return gen_universe(TINY_GEN, seeded_rng(TINY_GEN.seed).substream("universe"))


@pytest.fixture(scope="session")
def tiny_pairs(tiny_universe):
    rng = seeded_rng(TINY_GEN.seed).substream("pairs")
    return sample_pairs(tiny_universe, n_pos=80, n_neg=200, hard_fraction=0.8, rng=rng)


@pytest.fixture(scope="session")
def tiny_split(tiny_pairs):
    rng = seeded_rng(TINY_GEN.seed).substream("split")
    return split_item_disjoint(tiny_pairs, 0.8, rng)


@pytest.fixture(scope="session")
def tiny_trained(tiny_universe, tiny_split):
    """A briefly trained sat model; quality is irrelevant, determinism is not."""
    train_pairs, val_pairs, _ = tiny_split
    cfg = TrainConfig(steps=120, batch_size=16, eval_every=60, seed=3, model=TINY_MODEL)
    params, history = train(cfg, train_pairs, val_pairs, tiny_universe)
    return params, history
