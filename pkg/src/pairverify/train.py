"""Training loop, checkpointing, and the scripted ablation grid.

One run is fully determined by its TrainConfig: parameter init, epoch
shuffles, and the cosine learning-rate schedule all derive from the config
seed. Evaluation happens every ``eval_every`` updates and once more after
the final update; the returned parameters are the final-step ones (no model
selection).

Default scales are sized for a laptop-class synthetic benchmark: small
encoders trained from scratch need a far larger learning rate and far fewer
steps than a finetuned pretrained model would.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import universe_by_id
from .errors import ConfigMismatchError, DataFormatError, DataIntegrityError, SchemaVersionError, UsageError
from .evaluation import Metrics, evaluate
from .model import (
    ModelConfig,
    ModelParams,
    all_blocks,
    batch_forward_backward,
    init_model,
    set_blocks,
    trainable_blocks,
)
from .numerics import adam_step, cosine_lr, init_adam_state, seeded_rng

SCHEMA_VERSION = 1

RESULTS_HEADER = "variant,modality,seed,f1,precision,recall,accuracy"
HISTORY_HEADER = "step,train_loss,lr,f1,precision,recall,accuracy"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 9000
    batch_size: int = 32
    lr_init: float = 3e-3
    lr_min: float = 1e-5
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 500
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise UsageError("steps must be >= 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise UsageError("eval_every must be >= 1")
        if not self.lr_init >= self.lr_min >= 0:
            raise UsageError("need lr_init >= lr_min >= 0")


@dataclass(frozen=True)
class HistoryRecord:
    step: int
    train_loss: float  # mean over updates since the previous record
    lr: float  # rate used by the update at this step
    val: Metrics


@dataclass
class TrainHistory:
    records: list


def _check_pair_ids(pairs: Sequence, table: dict, name: str) -> None:
    for p in pairs:
        for node in (p.a, p.b):
            if node not in table:
                raise DataIntegrityError(
                    f"{name} pair ({p.a}, {p.b}) references unknown commodity id {node}"
                )


def train(cfg: TrainConfig, train_pairs: Sequence, val_pairs: Sequence, universe) -> tuple:
    """Run ``cfg.steps`` Adam updates; returns ``(params, TrainHistory)``."""
    if not train_pairs or not val_pairs:
        raise UsageError("train and val pair lists must be non-empty")
    table = universe if isinstance(universe, dict) else universe_by_id(universe)
    _check_pair_ids(train_pairs, table, "train")
    _check_pair_ids(val_pairs, table, "val")

    rng = seeded_rng(cfg.seed)
    params = init_model(cfg.model, rng.substream("init"))
    blocks = trainable_blocks(params)
    state = init_adam_state(
        blocks,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )

    triples = [(table[p.a], table[p.b], p.y) for p in train_pairs]
    records = []
    loss_window: list = []
    step = 0
    epoch = 0
    while step < cfg.steps:
        order = rng.substream(f"epoch-{epoch}").permutation(len(triples))
        epoch += 1
        for start in range(0, len(order), cfg.batch_size):
            if step >= cfg.steps:
                break
            batch = [triples[i] for i in order[start:start + cfg.batch_size]]
            loss, grads = batch_forward_backward(params, batch)
            lr = cosine_lr(step, cfg.steps, cfg.lr_init, cfg.lr_min)
            state = adam_step(blocks, {k: grads[k] for k in blocks}, state, lr)
            step += 1
            loss_window.append(loss)
            if step % cfg.eval_every == 0 or step == cfg.steps:
                metrics, _ = evaluate(params, val_pairs, table)
                records.append(HistoryRecord(
                    step=step,
                    train_loss=float(np.mean(loss_window)),
                    lr=lr,
                    val=metrics,
                ))
                loss_window = []
    return params, TrainHistory(records=records)


def _checkpoint_header(config: ModelConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "variant": config.variant,
        "modality": config.modality,
        "d1": config.commodity_dim,
        "d2": config.threshold_dim,
        "text_vocab": config.text_vocab,
        "image_dim": config.image_dim,
        "hidden_dim": config.hidden_dim,
        "fixed_threshold": config.fixed_threshold,
    }


def save_checkpoint(path: str, params: ModelParams) -> None:
    """Header line then one line per named block: name, shape, flat values."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_checkpoint_header(params.config)) + "\n")
        for name, arr in all_blocks(params).items():
            shape = ",".join(str(d) for d in arr.shape) or "scalar"
            flat = " ".join(repr(float(v)) for v in np.ravel(arr))
            fh.write(f"{name} {shape} {flat}".rstrip() + "\n")


def load_checkpoint(path: str, expected: ModelConfig = None) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file, missing header")
    try:
        header = json.loads(lines[0])
        version = header["schema_version"]
        config = ModelConfig(
            variant=header["variant"],
            modality=header["modality"],
            commodity_dim=int(header["d1"]),
            threshold_dim=int(header["d2"]),
            text_vocab=int(header["text_vocab"]),
            image_dim=int(header["image_dim"]),
            hidden_dim=int(header["hidden_dim"]),
            fixed_threshold=float(header.get("fixed_threshold", 0.0)),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}:1: malformed checkpoint header: {e}") from e
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: unsupported schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    if expected is not None and config != expected:
        raise ConfigMismatchError(
            f"{path}: checkpoint config {config} does not match expected {expected}"
        )

    params = init_model(config, seeded_rng(0))
    want = all_blocks(params)
    loaded: dict = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(" ", 2)
        if len(parts) < 2:
            raise DataFormatError(f"{path}:{lineno}: malformed block line")
        name, shape_s = parts[0], parts[1]
        if name not in want:
            raise DataFormatError(f"{path}:{lineno}: unknown block '{name}'")
        shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split(","))
        expected_shape = want[name].shape
        if shape != expected_shape:
            raise ConfigMismatchError(
                f"{path}:{lineno}: block '{name}' has shape {shape}, expected {expected_shape}"
            )
        values_s = parts[2] if len(parts) == 3 else ""
        try:
            values = np.array([float(v) for v in values_s.split()], dtype=np.float64)
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: block '{name}': {e}") from e
        if values.size != want[name].size:
            raise DataFormatError(
                f"{path}:{lineno}: block '{name}' has {values.size} values, "
                f"expected {want[name].size}"
            )
        loaded[name] = values.reshape(expected_shape)
    missing = set(want) - set(loaded)
    if missing:
        raise DataFormatError(f"{path}: missing blocks {sorted(missing)}")
    set_blocks(params, loaded)
    return params


@dataclass(frozen=True)
class AblationRow:
    variant: str
    modality: str
    seed: int
    metrics: Metrics


def run_ablation(grid: Sequence, universe, train_pairs, val_pairs,
                 base_cfg: TrainConfig) -> list:
    """Train and evaluate every (variant, modality, seed) cell on the same
    splits; rows come back sorted by (variant, modality, seed)."""
    table = universe if isinstance(universe, dict) else universe_by_id(universe)
    rows = []
    for variant, modality, seed in sorted(grid):
        cfg = replace(
            base_cfg,
            seed=int(seed),
            model=replace(base_cfg.model, variant=variant, modality=modality),
        )
        params, _ = train(cfg, train_pairs, val_pairs, table)
        metrics, _ = evaluate(params, val_pairs, table)
        rows.append(AblationRow(variant=variant, modality=modality, seed=int(seed),
                                metrics=metrics))
    return rows


def default_grid(seeds: Sequence[int]) -> list:
    """Variant sweep on both modalities plus a modality sweep for sat."""
    grid = [(variant, "both", s) for variant in ("baseline", "lt", "sat") for s in seeds]
    grid += [("sat", modality, s) for modality in ("text", "image") for s in seeds]
    return grid


def write_results_csv(path: str, rows: Sequence[AblationRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RESULTS_HEADER + "\n")
        for r in rows:
            m = r.metrics
            fh.write(
                f"{r.variant},{r.modality},{r.seed},"
                f"{m.f1:.4f},{m.precision:.4f},{m.recall:.4f},{m.accuracy:.4f}\n"
            )


def read_results_csv(path: str) -> list:
    """Rows as (variant, modality, seed, f1, precision, recall, accuracy)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != RESULTS_HEADER:
        raise DataFormatError(f"{path}:1: expected header '{RESULTS_HEADER}'")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 7:
            raise DataFormatError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
        try:
            rows.append((parts[0], parts[1], int(parts[2]),
                         float(parts[3]), float(parts[4]), float(parts[5]), float(parts[6])))
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: malformed results row: {e}") from e
    return rows


def write_history_csv(path: str, history: TrainHistory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for r in history.records:
            m = r.val
            fh.write(
                f"{r.step},{r.train_loss!r},{r.lr!r},"
                f"{m.f1:.4f},{m.precision:.4f},{m.recall:.4f},{m.accuracy:.4f}\n"
            )
