"""Synthetic commodity universe and pair datasets.

Products are defined by a category and a fixed-length vector of key
attributes; every product is emitted as several noisy variants. Two
commodities are labeled identical exactly when their key attribute vectors
are equal element-wise, which by construction happens only between variants
of the same product.

Three properties are deliberately engineered into the generator:

  * hard negatives exist: products are grown in mutation chains, so most
    products have a same-category sibling differing in exactly one key
    attribute;
  * some attributes are expressed only in text and some only in the image
    vector, so neither modality alone can resolve every pair;
  * image features are scaled by a random per-category factor, which makes
    raw inner-product magnitudes category-dependent and a single global
    decision threshold suboptimal.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataFormatError, SchemaVersionError, UsageError
from .numerics import RngState

SCHEMA_VERSION = 1
# extra random tokens per commodity; text-side analogue of feature noise
FILLER_TOKENS_PER_ITEM = 3
# train fraction that yields roughly a 5.6:1 train/validation pair ratio
DEFAULT_TRAIN_RATIO = 5.6 / 6.6

_MAX_DRAW_ATTEMPTS = 1000


@dataclass(frozen=True)
class GenConfig:
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
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attrs_text_only", tuple(self.attrs_text_only))
        object.__setattr__(self, "attrs_image_only", tuple(self.attrs_image_only))
        for name in ("n_products", "variants_per_product", "n_categories", "n_attrs", "image_dim"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.attr_values < 2:
            raise UsageError("attr_values must be >= 2")
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be >= 0")
        if not 0 <= self.category_scale_spread < 1:
            raise UsageError("category_scale_spread must be in [0, 1)")
        text_only = set(self.attrs_text_only)
        image_only = set(self.attrs_image_only)
        if text_only & image_only:
            raise UsageError("attrs_text_only and attrs_image_only must be disjoint")
        for idx in text_only | image_only:
            if not 0 <= idx < self.n_attrs:
                raise UsageError(f"attribute index {idx} outside [0, {self.n_attrs})")
        if self.text_vocab < self.n_symbols:
            raise UsageError(
                f"text_vocab must cover {self.n_symbols} symbol tokens, got {self.text_vocab}"
            )
        if self.image_dim < self.n_symbols:
            raise UsageError(
                f"image_dim must be >= {self.n_symbols} so prototype codes can be "
                f"orthonormal, got {self.image_dim}"
            )

    @property
    def n_symbols(self) -> int:
        """Token ids below this are reserved for category/attribute symbols."""
        return self.n_categories + self.n_attrs * self.attr_values


@dataclass(eq=False)
class Commodity:
    id: int
    category: int
    key_attrs: tuple
    text_tokens: np.ndarray  # dense count vector, length text_vocab
    image_feat: np.ndarray


@dataclass(frozen=True)
class PairExample:
    a: int
    b: int
    y: int

    def __post_init__(self):
        if self.a == self.b:
            raise UsageError("pair endpoints must differ")
        if self.y not in (0, 1):
            raise UsageError(f"label must be 0 or 1, got {self.y!r}")


def _attr_token(cfg: GenConfig, attr_index: int, value: int) -> int:
    return cfg.n_categories + attr_index * cfg.attr_values + value


def _draw_product_attrs(cfg: GenConfig, by_category: dict, seen: set, category: int, rng) -> tuple:
    """One key-attribute vector, unique across the universe.

    The first product of a category gets uniform attributes; later ones copy
    a same-category parent and change exactly one position, so Hamming-1
    siblings exist for hard-negative mining.
    """
    parents = by_category.get(category, ())
    for _ in range(_MAX_DRAW_ATTEMPTS):
        if not parents:
            attrs = tuple(int(v) for v in rng.integers(0, cfg.attr_values, size=cfg.n_attrs))
        else:
            parent = parents[int(rng.integers(0, len(parents)))]
            pos = int(rng.integers(0, cfg.n_attrs))
            shift = int(rng.integers(1, cfg.attr_values))
            attrs = list(parent)
            attrs[pos] = (attrs[pos] + shift) % cfg.attr_values
            attrs = tuple(attrs)
        if attrs not in seen:
            return attrs
    raise UsageError(
        "could not draw a unique key-attribute vector; "
        "attr space too small for n_products"
    )


def gen_universe(cfg: GenConfig, rng: RngState) -> list:
    """All commodities of the universe, in ascending id order.

    Ids are assigned product-major: product p, variant v gets
    ``p * variants_per_product + v``.
    """
    proto_rng = rng.substream("prototypes")
    # orthonormal prototype codes: inner products between commodities then
    # count exact category/attribute agreement instead of random overlaps
    raw = proto_rng.normal(size=(cfg.image_dim, cfg.n_symbols))
    q, r = np.linalg.qr(raw)
    protos = q * np.sign(np.diag(r))
    cat_protos = [protos[:, c] for c in range(cfg.n_categories)]
    attr_protos = {
        (i, v): protos[:, cfg.n_categories + i * cfg.attr_values + v]
        for i in range(cfg.n_attrs)
        for v in range(cfg.attr_values)
    }
    cat_scales = [
        float(proto_rng.uniform(1.0 - cfg.category_scale_spread, 1.0 + cfg.category_scale_spread))
        for _ in range(cfg.n_categories)
    ]

    product_rng = rng.substream("products")
    by_category: dict = {}
    seen: set = set()
    products = []
    for _ in range(cfg.n_products):
        category = int(product_rng.integers(0, cfg.n_categories))
        attrs = _draw_product_attrs(cfg, by_category, seen, category, product_rng)
        seen.add(attrs)
        by_category.setdefault(category, []).append(attrs)
        products.append((category, attrs))

    image_only = set(cfg.attrs_image_only)
    text_only = set(cfg.attrs_text_only)
    universe = []
    for p, (category, attrs) in enumerate(products):
        base_tokens = np.zeros(cfg.text_vocab)
        base_tokens[category] += 1.0
        for i, v in enumerate(attrs):
            if i not in image_only:
                base_tokens[_attr_token(cfg, i, v)] += 1.0
        base_image = cat_protos[category].copy()
        for i, v in enumerate(attrs):
            if i not in text_only:
                base_image += attr_protos[(i, v)]

        variant_rng = rng.substream(f"product-{p}")
        for v_idx in range(cfg.variants_per_product):
            noise = variant_rng.normal(size=cfg.image_dim) * cfg.noise_sigma
            image = (base_image + noise) * cat_scales[category]
            tokens = base_tokens.copy()
            if cfg.text_vocab > cfg.n_symbols and FILLER_TOKENS_PER_ITEM > 0:
                fillers = variant_rng.integers(
                    cfg.n_symbols, cfg.text_vocab, size=FILLER_TOKENS_PER_ITEM
                )
                for tok in fillers:
                    tokens[int(tok)] += 1.0
            universe.append(
                Commodity(
                    id=p * cfg.variants_per_product + v_idx,
                    category=category,
                    key_attrs=attrs,
                    text_tokens=tokens,
                    image_feat=image,
                )
            )
    return universe


def universe_by_id(universe: Sequence[Commodity]) -> dict:
    table = {}
    for c in universe:
        if c.id in table:
            raise UsageError(f"duplicate commodity id {c.id}")
        table[c.id] = c
    return table


def _products_of(universe: Sequence[Commodity]) -> list:
    """(key_attrs, category, [ids]) per product, in first-seen order."""
    groups: dict = {}
    for c in universe:
        groups.setdefault(c.key_attrs, (c.category, []))[1].append(c.id)
    return [(attrs, cat, ids) for attrs, (cat, ids) in groups.items()]


def _hamming(a: tuple, b: tuple) -> int:
    return sum(x != y for x, y in zip(a, b))


def sample_pairs(
    universe: Sequence[Commodity],
    n_pos: int,
    n_neg: int,
    hard_fraction: float,
    rng: RngState,
) -> list:
    """Labeled pairs: positives are two variants of one product, negatives
    span two products. A ``hard_fraction`` share of negatives pairs a product
    with its most similar same-category rival (attribute Hamming distance 1
    when such a sibling exists)."""
    products = _products_of(universe)
    if len(products) < 2:
        raise UsageError("universe must contain at least 2 products")
    if not 0 <= hard_fraction <= 1:
        raise UsageError("hard_fraction must be in [0, 1]")
    if n_pos < 0 or n_neg < 0:
        raise UsageError("pair counts must be >= 0")

    pos_combos = []
    for _, _, ids in products:
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                pos_combos.append((ids[i], ids[j]))
    if n_pos > len(pos_combos):
        raise UsageError(
            f"requested {n_pos} positives but only {len(pos_combos)} distinct "
            "positive pairs exist"
        )

    pairs = []
    if n_pos:
        chosen = rng.choice(len(pos_combos), size=n_pos, replace=False)
        for idx in chosen:
            a, b = pos_combos[int(idx)]
            pairs.append(PairExample(a=a, b=b, y=1))

    by_category: dict = {}
    for p_idx, (_, cat, _) in enumerate(products):
        by_category.setdefault(cat, []).append(p_idx)

    def rival_of(p_idx: int) -> int:
        attrs, cat, _ = products[p_idx]
        pool = [q for q in by_category[cat] if q != p_idx]
        if not pool:
            pool = [q for q in range(len(products)) if q != p_idx]
        dists = [_hamming(attrs, products[q][0]) for q in pool]
        best = min(dists)
        candidates = [q for q, d in zip(pool, dists) if d == best]
        return candidates[int(rng.integers(0, len(candidates)))]

    def random_variant(p_idx: int) -> int:
        ids = products[p_idx][2]
        return ids[int(rng.integers(0, len(ids)))]

    n_hard = int(round(hard_fraction * n_neg))
    for k in range(n_neg):
        if k < n_hard:
            p1 = int(rng.integers(0, len(products)))
            p2 = rival_of(p1)
        else:
            p1 = int(rng.integers(0, len(products)))
            p2 = int(rng.integers(0, len(products) - 1))
            if p2 >= p1:
                p2 += 1
        pairs.append(PairExample(a=random_variant(p1), b=random_variant(p2), y=0))
    return pairs


def split_item_disjoint(pairs: Sequence[PairExample], ratio: float, rng: RngState):
    """Partition commodities, not pairs.

    Commodities are grouped into connected components under positive pairs,
    components are assigned whole to the train side until the train pair
    count reaches ``ratio`` of all pairs, and every pair straddling the two
    sides is dropped. Returns ``(train_pairs, val_pairs, dropped_count)``.
    """
    if not 0 < ratio < 1:
        raise UsageError("ratio must be in (0, 1)")
    if not pairs:
        raise UsageError("cannot split an empty pair list")

    parent: dict = {}

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for p in pairs:
        for node in (p.a, p.b):
            parent.setdefault(node, node)
        if p.y == 1:
            parent[find(p.a)] = find(p.b)

    groups: dict = {}
    for node in parent:
        groups.setdefault(find(node), []).append(node)
    group_list = [sorted(members) for _, members in sorted(groups.items())]

    order = rng.permutation(len(group_list))
    incident: dict = {}
    for idx, p in enumerate(pairs):
        incident.setdefault(p.a, []).append(idx)
        incident.setdefault(p.b, []).append(idx)

    # Move whole groups to the train side until train pairs reach `ratio` of
    # the pairs that survive (straddlers drop out of the denominator too).
    outside = [2] * len(pairs)  # endpoints not yet on the train side
    train_ids: set = set()
    train_count = 0
    val_count = len(pairs)
    for gi in order:
        if val_count + train_count > 0 and train_count >= ratio * (train_count + val_count):
            break
        for node in group_list[int(gi)]:
            train_ids.add(node)
            for idx in incident[node]:
                outside[idx] -= 1
                if outside[idx] == 1:
                    val_count -= 1
                elif outside[idx] == 0:
                    train_count += 1

    train, val = [], []
    dropped = 0
    for p in pairs:
        in_a, in_b = p.a in train_ids, p.b in train_ids
        if in_a and in_b:
            train.append(p)
        elif not in_a and not in_b:
            val.append(p)
        else:
            dropped += 1
    if not train or not val:
        raise UsageError(
            f"ratio {ratio} left an empty side (train={len(train)}, val={len(val)})"
        )
    return train, val, dropped


def _config_from_params(params: dict) -> GenConfig:
    known = set(GenConfig.__dataclass_fields__)
    unknown = set(params) - known
    if unknown:
        raise DataFormatError(f"unknown GenConfig keys in header: {sorted(unknown)}")
    return GenConfig(**params)


def _read_header(line: str, path: str, expected_kind: str) -> GenConfig:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}:1: malformed header: {e}") from e
    if not isinstance(header, dict):
        raise DataFormatError(f"{path}:1: header must be an object")
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: unsupported schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    if header.get("kind") != expected_kind:
        raise DataFormatError(
            f"{path}: kind is {header.get('kind')!r}, expected {expected_kind!r}"
        )
    return _config_from_params(header.get("params", {}))


def write_universe(path: str, universe: Sequence[Commodity], cfg: GenConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {"schema_version": SCHEMA_VERSION, "kind": "universe", "params": asdict(cfg)}
        fh.write(json.dumps(header) + "\n")
        for c in universe:
            sparse = [
                [int(tok), int(count)]
                for tok, count in enumerate(c.text_tokens)
                if count
            ]
            record = {
                "id": c.id,
                "category": c.category,
                "key_attrs": list(c.key_attrs),
                "text_tokens": sparse,
                "image_feat": [float(x) for x in c.image_feat],
            }
            fh.write(json.dumps(record) + "\n")


def read_universe(path: str):
    """Returns ``(universe, cfg)``; raises with a line number on bad input."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file, missing header")
    cfg = _read_header(lines[0], path, "universe")
    universe = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            tokens = np.zeros(cfg.text_vocab)
            for tok, count in rec["text_tokens"]:
                tokens[tok] += count
            commodity = Commodity(
                id=int(rec["id"]),
                category=int(rec["category"]),
                key_attrs=tuple(int(v) for v in rec["key_attrs"]),
                text_tokens=tokens,
                image_feat=np.asarray(rec["image_feat"], dtype=np.float64),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as e:
            raise DataFormatError(f"{path}:{lineno}: malformed universe record: {e}") from e
        if len(commodity.key_attrs) != cfg.n_attrs:
            raise DataFormatError(
                f"{path}:{lineno}: key_attrs length {len(commodity.key_attrs)}, "
                f"expected {cfg.n_attrs}"
            )
        if len(commodity.image_feat) != cfg.image_dim:
            raise DataFormatError(
                f"{path}:{lineno}: image_feat length {len(commodity.image_feat)}, "
                f"expected {cfg.image_dim}"
            )
        universe.append(commodity)
    ids = [c.id for c in universe]
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"{path}: duplicate commodity ids")
    return universe, cfg


def write_pairs(path: str, pairs: Sequence[PairExample], cfg: GenConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {"schema_version": SCHEMA_VERSION, "kind": "pairs", "params": asdict(cfg)}
        fh.write(json.dumps(header) + "\n")
        for p in pairs:
            fh.write(json.dumps({"a": p.a, "b": p.b, "y": p.y}) + "\n")


def read_pairs(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file, missing header")
    cfg = _read_header(lines[0], path, "pairs")
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            pairs.append(PairExample(a=int(rec["a"]), b=int(rec["b"]), y=int(rec["y"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, UsageError) as e:
            raise DataFormatError(f"{path}:{lineno}: malformed pair record: {e}") from e
    return pairs, cfg


def write_dataset(dir_path: str, universe, pairs, cfg: GenConfig) -> None:
    """Universe plus one pair list under ``dir_path`` as two files."""
    os.makedirs(dir_path, exist_ok=True)
    write_universe(os.path.join(dir_path, "universe.jsonl"), universe, cfg)
    write_pairs(os.path.join(dir_path, "pairs.jsonl"), pairs, cfg)


def read_dataset(dir_path: str):
    universe, cfg = read_universe(os.path.join(dir_path, "universe.jsonl"))
    pairs, _ = read_pairs(os.path.join(dir_path, "pairs.jsonl"))
    return universe, pairs, cfg
