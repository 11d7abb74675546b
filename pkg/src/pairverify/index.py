"""Exact top-k retrieval over complete embeddings.

A pair's score decomposes into one inner product in the concatenated space:
with stored vector z = [p, q] and query vector [p, -q], the dot product is
p1.p2 - q1.q2, exactly the pair score. Stored vectors stay un-flipped; the
sign lives on the query side only.

For the lt variant the threshold is a scalar outside the embedding, so the
index inner product equals the similarity alone; this shifts every score by
the same constant and leaves rankings unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataFormatError, SchemaVersionError, ShapeError, UsageError
from .model import EmbeddingPair, ModelParams, concat_embedding, encode, score_pair

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class IndexStore:
    ids: np.ndarray  # ascending commodity ids
    vectors: np.ndarray  # one z = [p, q] row per id
    commodity_dim: int
    threshold_dim: int

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.commodity_dim + self.threshold_dim:
            raise ShapeError(
                f"vectors must be (n, {self.commodity_dim + self.threshold_dim}), "
                f"got {self.vectors.shape}"
            )
        if len(self.ids) != len(self.vectors):
            raise ShapeError("ids and vectors disagree on row count")
        if len(set(self.ids.tolist())) != len(self.ids):
            raise UsageError("index ids must be unique")
        self.ids.setflags(write=False)
        self.vectors.setflags(write=False)


@dataclass(frozen=True)
class QueryVector:
    values: np.ndarray  # [p, -q]


@dataclass(frozen=True)
class ConsistencyReport:
    max_abs_diff: float
    worst_pair: Optional[tuple]  # (a, b) achieving the max, None when empty


def build_index(params: ModelParams, universe: Sequence) -> IndexStore:
    """Encode every commodity once; rows in ascending id order."""
    ordered = sorted(universe, key=lambda c: c.id)
    q_dim = params.config.threshold_dim if params.config.variant == "sat" else 0
    width = params.config.commodity_dim + q_dim
    vectors = np.empty((len(ordered), width))
    for i, c in enumerate(ordered):
        vectors[i] = concat_embedding(encode(params, c))
    return IndexStore(
        ids=np.array([c.id for c in ordered], dtype=np.int64),
        vectors=vectors,
        commodity_dim=params.config.commodity_dim,
        threshold_dim=q_dim,
    )


def make_query(e: EmbeddingPair) -> QueryVector:
    return QueryVector(values=np.concatenate([e.commodity, -e.threshold]))


def top_k(store: IndexStore, query: QueryVector, k: int) -> list:
    """The k ids with the largest query dot product, descending; ties break
    toward the smaller id. Returns ``[(id, score), ...]``."""
    n = len(store.ids)
    if not 1 <= k <= n:
        raise UsageError(f"k must be in [1, {n}], got {k}")
    if query.values.shape != (store.vectors.shape[1],):
        raise ShapeError(
            f"query has shape {query.values.shape}, index rows have "
            f"{store.vectors.shape[1]} components"
        )
    scores = store.vectors @ query.values
    order = np.lexsort((store.ids, -scores))
    return [(int(store.ids[i]), float(scores[i])) for i in order[:k]]


def verify_index_consistency(store: IndexStore, params: ModelParams,
                             pairs: Sequence, universe) -> ConsistencyReport:
    """Max discrepancy between direct pair scoring and the index inner
    product, over sample pairs of indexed ids.

    Exact (up to float reassociation) for sat and for baseline at threshold
    0; for lt it reports the scalar threshold magnitude, since that constant
    is not representable in the concatenated space.
    """
    row_of = {int(cid): i for i, cid in enumerate(store.ids)}
    table = universe if isinstance(universe, dict) else {c.id: c for c in universe}
    for p in pairs:
        for node in (p.a, p.b):
            if node not in row_of:
                raise UsageError(f"pair references id {node} not present in the index")
            if node not in table:
                raise UsageError(f"pair references id {node} not present in the universe")
    cache: dict = {}

    def embed(cid: int) -> EmbeddingPair:
        if cid not in cache:
            cache[cid] = encode(params, table[cid])
        return cache[cid]

    worst = 0.0
    worst_pair = None
    for p in pairs:
        direct = score_pair(embed(p.a), embed(p.b), params).score
        via_index = float(make_query(embed(p.a)).values @ store.vectors[row_of[p.b]])
        diff = abs(direct - via_index)
        if diff > worst:
            worst = diff
            worst_pair = (p.a, p.b)
    return ConsistencyReport(max_abs_diff=worst, worst_pair=worst_pair)


def write_index(path: str, store: IndexStore) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "schema_version": SCHEMA_VERSION,
            "d1": store.commodity_dim,
            "d2": store.threshold_dim,
            "n": len(store.ids),
        }
        fh.write(json.dumps(header) + "\n")
        for cid, row in zip(store.ids, store.vectors):
            fh.write(str(int(cid)) + " " + " ".join(repr(float(v)) for v in row) + "\n")


def read_index(path: str) -> IndexStore:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file, missing header")
    try:
        header = json.loads(lines[0])
        version = header["schema_version"]
        d1, d2, n = int(header["d1"]), int(header["d2"]), int(header["n"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}:1: malformed index header: {e}") from e
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: unsupported schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    if len(lines) - 1 != n:
        raise DataFormatError(f"{path}: header says {n} rows, file has {len(lines) - 1}")
    ids = np.empty(n, dtype=np.int64)
    vectors = np.empty((n, d1 + d2))
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        parts = line.split()
        if len(parts) != 1 + d1 + d2:
            raise DataFormatError(
                f"{path}:{lineno}: expected {1 + d1 + d2} fields, got {len(parts)}"
            )
        try:
            ids[i] = int(parts[0])
            vectors[i] = [float(v) for v in parts[1:]]
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: malformed index row: {e}") from e
    return IndexStore(ids=ids, vectors=vectors, commodity_dim=d1, threshold_dim=d2)


def write_topk_csv(path: str, ranked: Sequence) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rank,id,score\n")
        for rank, (cid, score) in enumerate(ranked, start=1):
            fh.write(f"{rank},{cid},{score!r}\n")
