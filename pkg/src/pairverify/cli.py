"""Command-line entry point.

Subcommands cover the full pipeline: ``gen`` builds a synthetic benchmark,
``train`` fits one model, ``eval`` scores a checkpoint, ``dist`` analyzes a
scores file, ``index`` builds/queries the retrieval index, and ``ablate``
runs the scripted variant/modality grid.

Configuration is a flat key=value text file; the flags --seed, --variant and
--modality override their keys. Every subcommand echoes the configuration it
actually used into the output directory, and re-running from that echo
reproduces the outputs byte for byte.

Exit codes: 0 success, 2 usage/config error, 3 missing file, 4 malformed or
mismatched data file, 5 dataset integrity error, 1 anything else.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields

from . import data as data_mod
from . import evaluation as eval_mod
from . import index as index_mod
from .train import (
    TrainConfig,
    default_grid,
    load_checkpoint,
    run_ablation,
    save_checkpoint,
    train,
    write_history_csv,
    write_results_csv,
)
from .errors import (
    ConfigMismatchError,
    DataFormatError,
    DataIntegrityError,
    PairVerifyError,
    SchemaVersionError,
    UsageError,
)
from .model import ModelConfig
from .numerics import seeded_rng

EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_DATA = 4
EXIT_INTEGRITY = 5


@dataclass(frozen=True)
class RunConfig:
    """Union of generation, model, and training settings."""

    seed: int = 0
    # benchmark generation
    n_products: int = 2400
    variants_per_product: int = 3
    n_categories: int = 6
    n_attrs: int = 6
    attr_values: int = 5
    attrs_text_only: tuple = (0, 1)
    attrs_image_only: tuple = (2, 3)
    text_vocab: int = 128
    image_dim: int = 40
    noise_sigma: float = 0.02
    category_scale_spread: float = 0.2
    n_pos: int = 5200
    n_neg: int = 14000
    hard_fraction: float = 0.8
    train_ratio: float = data_mod.DEFAULT_TRAIN_RATIO
    # model
    variant: str = "sat"
    modality: str = "both"
    commodity_dim: int = 32
    threshold_dim: int = 32
    hidden_dim: int = 48
    fixed_threshold: float = 0.0
    # training
    steps: int = 9000
    batch_size: int = 32
    lr_init: float = 3e-3
    lr_min: float = 1e-5
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 500
    # ablation grid / analysis
    seeds: tuple = (1, 2, 3)
    grid_points: int = 256

    def gen_config(self) -> data_mod.GenConfig:
        return data_mod.GenConfig(
            n_products=self.n_products,
            variants_per_product=self.variants_per_product,
            n_categories=self.n_categories,
            n_attrs=self.n_attrs,
            attr_values=self.attr_values,
            attrs_text_only=self.attrs_text_only,
            attrs_image_only=self.attrs_image_only,
            text_vocab=self.text_vocab,
            image_dim=self.image_dim,
            noise_sigma=self.noise_sigma,
            category_scale_spread=self.category_scale_spread,
            seed=self.seed,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.variant,
            modality=self.modality,
            commodity_dim=self.commodity_dim,
            threshold_dim=self.threshold_dim,
            text_vocab=self.text_vocab,
            image_dim=self.image_dim,
            hidden_dim=self.hidden_dim,
            fixed_threshold=self.fixed_threshold,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr_init=self.lr_init,
            lr_min=self.lr_min,
            weight_decay=self.weight_decay,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            eval_every=self.eval_every,
            seed=self.seed,
            model=self.model_config(),
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            raw = raw.strip()
            return tuple(int(v) for v in raw.split(",")) if raw else ()
        return raw
    except ValueError as e:
        raise UsageError(f"config key '{key}': {e}") from e


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_run_config(path: str = None, overrides: dict = None) -> RunConfig:
    """Defaults, then file keys, then CLI overrides; unknown keys rejected."""
    values: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, raw = line.partition("=")
                key = key.strip()
                if key not in _FIELD_TYPES:
                    raise UsageError(f"{path}:{lineno}: unknown config key '{key}'")
                values[key] = _parse_value(key, raw.strip())
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise UsageError(f"unknown config key '{key}'")
        values[key] = value
    return RunConfig(**values)


def write_run_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in fields(RunConfig):
            fh.write(f"{f.name}={_format_value(getattr(cfg, f.name))}\n")


def _echo(out_dir: str, cfg: RunConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_run_config(os.path.join(out_dir, "config.txt"), cfg)


def _generate(cfg: RunConfig):
    gen_cfg = cfg.gen_config()
    rng = seeded_rng(cfg.seed)
    universe = data_mod.gen_universe(gen_cfg, rng.substream("universe"))
    pairs = data_mod.sample_pairs(
        universe, cfg.n_pos, cfg.n_neg, cfg.hard_fraction, rng.substream("pairs")
    )
    train_pairs, val_pairs, dropped = data_mod.split_item_disjoint(
        pairs, cfg.train_ratio, rng.substream("split")
    )
    return gen_cfg, universe, train_pairs, val_pairs, dropped


def cmd_gen(args) -> int:
    cfg = load_run_config(args.config, {"seed": args.seed})
    gen_cfg, universe, train_pairs, val_pairs, dropped = _generate(cfg)
    out = args.out
    _echo(out, cfg)
    data_mod.write_universe(os.path.join(out, "universe.jsonl"), universe, gen_cfg)
    data_mod.write_pairs(os.path.join(out, "pairs_train.jsonl"), train_pairs, gen_cfg)
    data_mod.write_pairs(os.path.join(out, "pairs_val.jsonl"), val_pairs, gen_cfg)
    eval_mod.write_stats(os.path.join(out, "gen_stats.txt"), [
        ("commodities", len(universe)),
        ("train_pairs", len(train_pairs)),
        ("val_pairs", len(val_pairs)),
        ("dropped_straddling_pairs", dropped),
    ])
    print(f"wrote {len(universe)} commodities, {len(train_pairs)} train / "
          f"{len(val_pairs)} val pairs ({dropped} dropped) to {out}")
    return 0


def _read_data_dir(data_dir: str):
    universe, gen_cfg = data_mod.read_universe(os.path.join(data_dir, "universe.jsonl"))
    train_pairs, _ = data_mod.read_pairs(os.path.join(data_dir, "pairs_train.jsonl"))
    val_pairs, _ = data_mod.read_pairs(os.path.join(data_dir, "pairs_val.jsonl"))
    return universe, gen_cfg, train_pairs, val_pairs


def _check_feature_dims(cfg: RunConfig, gen_cfg: data_mod.GenConfig) -> None:
    if cfg.text_vocab != gen_cfg.text_vocab or cfg.image_dim != gen_cfg.image_dim:
        raise ConfigMismatchError(
            f"config expects text_vocab={cfg.text_vocab}, image_dim={cfg.image_dim} "
            f"but dataset has text_vocab={gen_cfg.text_vocab}, image_dim={gen_cfg.image_dim}"
        )


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, {
        "seed": args.seed, "variant": args.variant, "modality": args.modality,
    })
    universe, gen_cfg, train_pairs, val_pairs = _read_data_dir(args.data)
    _check_feature_dims(cfg, gen_cfg)
    out = args.out
    _echo(out, cfg)
    params, history = train(cfg.train_config(), train_pairs, val_pairs, universe)
    save_checkpoint(os.path.join(out, "checkpoint.txt"), params)
    write_history_csv(os.path.join(out, "history.csv"), history)
    final = history.records[-1]
    print(f"trained {cfg.variant}/{cfg.modality} for {cfg.steps} steps: "
          f"val f1={final.val.f1:.4f} loss={final.train_loss:.4f}")
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    universe, _, _, val_pairs = _read_data_dir(args.data)
    out = args.out
    os.makedirs(out, exist_ok=True)
    eval_mod.write_stats(os.path.join(out, "eval_config.txt"), [
        ("checkpoint", args.checkpoint),
        ("data", args.data),
        ("variant", params.config.variant),
        ("modality", params.config.modality),
    ])
    metrics, records = eval_mod.evaluate(params, val_pairs, universe)
    eval_mod.write_stats(os.path.join(out, "metrics.txt"), eval_mod.metrics_items(metrics))
    eval_mod.write_scores_csv(os.path.join(out, "scores.csv"), records)
    print(f"evaluated {len(records)} pairs: f1={metrics.f1:.4f} "
          f"precision={metrics.precision:.4f} recall={metrics.recall:.4f}")
    return 0


def cmd_dist(args) -> int:
    records = eval_mod.read_scores_csv(args.scores)
    curve = eval_mod.make_density_curve(records, grid_points=args.grid_points)
    stats = eval_mod.stats_from_density_curve(curve, records)
    sensitivity, _ = eval_mod.threshold_sensitivity(records)
    out = args.out
    os.makedirs(out, exist_ok=True)
    eval_mod.write_density_tsv(os.path.join(out, "density.tsv"), curve, stats)
    eval_mod.write_stats(
        os.path.join(out, "dist_stats.txt"),
        [("scores", args.scores), ("grid_points", args.grid_points)]
        + eval_mod.stats_items(stats)
        + [("threshold_sensitivity_f1_drop", sensitivity)],
    )
    print(f"near-threshold fraction {stats.near_threshold_fraction:.4f}, "
          f"max f1 drop {sensitivity:.4f}")
    return 0


def cmd_index(args) -> int:
    params = load_checkpoint(args.checkpoint)
    universe, _, _, _ = _read_data_dir(args.data)
    store = index_mod.build_index(params, universe)
    out = args.out
    os.makedirs(out, exist_ok=True)
    index_mod.write_index(os.path.join(out, "index.txt"), store)
    message = f"indexed {len(store.ids)} commodities"
    if args.query_id is not None:
        table = data_mod.universe_by_id(universe)
        if args.query_id not in table:
            raise DataIntegrityError(f"query id {args.query_id} not in the universe")
        from .model import encode  # local import keeps module load light

        query = index_mod.make_query(encode(params, table[args.query_id]))
        ranked = index_mod.top_k(store, query, args.k)
        index_mod.write_topk_csv(os.path.join(out, "topk.csv"), ranked)
        message += f", wrote top-{args.k} for id {args.query_id}"
    print(message)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, {"seed": args.seed})
    _, universe, train_pairs, val_pairs, _ = _generate(cfg)
    out = args.out
    _echo(out, cfg)
    grid = default_grid(cfg.seeds)
    rows = run_ablation(grid, universe, train_pairs, val_pairs, cfg.train_config())
    write_results_csv(os.path.join(out, "results.csv"), rows)
    print(f"ablation grid of {len(rows)} cells written to {out}/results.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairverify",
        description="dual-stream pair verification on a synthetic commodity benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", help="flat key=value config file")
            p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")

    p_gen = sub.add_parser("gen", help="generate benchmark data files")
    add_common(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train one model on generated data")
    add_common(p_train)
    p_train.add_argument("--data", required=True, help="directory written by gen")
    p_train.add_argument("--variant", choices=["baseline", "lt", "sat"])
    p_train.add_argument("--modality", choices=["text", "image", "both"])
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the validation pairs")
    add_common(p_eval, config=False)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_dist = sub.add_parser("dist", help="score-distribution analysis of a scores CSV")
    add_common(p_dist, config=False)
    p_dist.add_argument("--scores", required=True)
    p_dist.add_argument("--grid-points", type=int, default=256)
    p_dist.set_defaults(func=cmd_dist)

    p_index = sub.add_parser("index", help="build the retrieval index, optionally query it")
    add_common(p_index, config=False)
    p_index.add_argument("--checkpoint", required=True)
    p_index.add_argument("--data", required=True)
    p_index.add_argument("--k", type=int, default=10)
    p_index.add_argument("--query-id", type=int)
    p_index.set_defaults(func=cmd_index)

    p_ablate = sub.add_parser("ablate", help="run the variant/modality ablation grid")
    add_common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    return parser


def _fail(kind: str, message: str, code: int) -> int:
    one_line = " ".join(str(message).split())
    print(f"pairverify: error kind={kind} msg={one_line}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_USAGE)
    except FileNotFoundError as e:
        return _fail("missing-file", f"{e.filename or e}", EXIT_MISSING_FILE)
    except (DataFormatError, SchemaVersionError, ConfigMismatchError) as e:
        return _fail(type(e).__name__, str(e), EXIT_BAD_DATA)
    except DataIntegrityError as e:
        return _fail("integrity", str(e), EXIT_INTEGRITY)
    except PairVerifyError as e:
        return _fail(type(e).__name__, str(e), 1)


if __name__ == "__main__":
    sys.exit(main())
