import numpy as np
import pytest

from conftest import TINY_MODEL

from pairverify.data import PairExample
from pairverify.errors import DataFormatError, SchemaVersionError, ShapeError, UsageError
from pairverify.index import (
    IndexStore,
    QueryVector,
    build_index,
    make_query,
    read_index,
    top_k,
    verify_index_consistency,
    write_index,
    write_topk_csv,
)
from pairverify.model import ModelConfig, encode, init_model, score_pair
from pairverify.numerics import seeded_rng

from dataclasses import replace


def tie_store():
    # three rows share a vector so a matching query produces exact ties
    ids = np.array([2, 5, 7, 9], dtype=np.int64)
    vectors = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    return IndexStore(ids=ids, vectors=vectors, commodity_dim=2, threshold_dim=0)


class TestScoreIdentity:
    def test_sat_query_dot_equals_pair_score(self, tiny_universe):
        params = init_model(TINY_MODEL, seeded_rng(5))
        store = build_index(params, tiny_universe)
        row_of = {int(c): i for i, c in enumerate(store.ids)}
        rng = seeded_rng(11)
        n = len(tiny_universe)
        worst = 0.0
        for _ in range(200):
            a, b = (int(v) for v in rng.choice(n, size=2, replace=False))
            direct = score_pair(
                encode(params, tiny_universe[a]), encode(params, tiny_universe[b]), params
            ).score
            q = make_query(encode(params, tiny_universe[a]))
            via = float(q.values @ store.vectors[row_of[tiny_universe[b].id]])
            worst = max(worst, abs(direct - via))
        assert worst < 1e-9

    def test_consistency_report_sat(self, tiny_universe):
        params = init_model(TINY_MODEL, seeded_rng(5))
        store = build_index(params, tiny_universe)
        pairs = [PairExample(a=0, b=1, y=1), PairExample(a=2, b=9, y=0)]
        report = verify_index_consistency(store, params, pairs, tiny_universe)
        assert report.max_abs_diff < 1e-9
        assert report.worst_pair in [(0, 1), (2, 9), None]

    def test_lt_index_omits_scalar_threshold(self, tiny_universe):
        cfg = replace(TINY_MODEL, variant="lt")
        params = init_model(cfg, seeded_rng(5))
        params.scalar_threshold[...] = 0.7
        store = build_index(params, tiny_universe)
        assert store.threshold_dim == 0
        assert store.vectors.shape[1] == cfg.commodity_dim
        pairs = [PairExample(a=0, b=1, y=1)]
        report = verify_index_consistency(store, params, pairs, tiny_universe)
        # the scalar shifts every score identically, and the report says by
        # exactly how much
        assert report.max_abs_diff == pytest.approx(0.7, abs=1e-12)

    def test_consistency_rejects_unknown_ids(self, tiny_universe):
        params = init_model(TINY_MODEL, seeded_rng(5))
        store = build_index(params, tiny_universe)
        bad = [PairExample(a=0, b=424242, y=0)]
        with pytest.raises(UsageError, match="424242"):
            verify_index_consistency(store, params, bad, tiny_universe)

    def test_consistency_empty_pairs(self, tiny_universe):
        params = init_model(TINY_MODEL, seeded_rng(5))
        store = build_index(params, tiny_universe)
        report = verify_index_consistency(store, params, [], tiny_universe)
        assert report.max_abs_diff == 0.0 and report.worst_pair is None


class TestBuildAndStore:
    def test_rows_in_ascending_id_order(self, tiny_universe):
        params = init_model(TINY_MODEL, seeded_rng(5))
        shuffled = list(tiny_universe)
        seeded_rng(1).shuffle(shuffled)
        store = build_index(params, shuffled)
        assert np.all(np.diff(store.ids) > 0)
        reference = build_index(params, tiny_universe)
        assert np.array_equal(store.vectors, reference.vectors)

    def test_store_arrays_are_read_only(self):
        store = tie_store()
        with pytest.raises(ValueError):
            store.vectors[0, 0] = 9.0
        with pytest.raises(ValueError):
            store.ids[0] = 1

    def test_store_validation(self):
        ids = np.array([1, 2], dtype=np.int64)
        with pytest.raises(ShapeError):
            IndexStore(ids=ids, vectors=np.zeros((2, 3)), commodity_dim=2, threshold_dim=0)
        with pytest.raises(ShapeError):
            IndexStore(ids=np.array([1, 2, 3]), vectors=np.zeros((2, 2)),
                       commodity_dim=2, threshold_dim=0)
        with pytest.raises(UsageError):
            IndexStore(ids=np.array([1, 1]), vectors=np.zeros((2, 2)),
                       commodity_dim=2, threshold_dim=0)


class TestTopK:
    def test_exact_ties_break_toward_smaller_id(self):
        store = tie_store()
        got = top_k(store, QueryVector(values=np.array([1.0, 0.0])), k=4)
        assert got == [(2, 1.0), (5, 1.0), (9, 1.0), (7, 0.0)]

    def test_k_limits(self):
        store = tie_store()
        q = QueryVector(values=np.array([1.0, 0.0]))
        with pytest.raises(UsageError):
            top_k(store, q, k=0)
        with pytest.raises(UsageError):
            top_k(store, q, k=5)
        assert len(top_k(store, q, k=1)) == 1

    def test_dim_mismatch(self):
        store = tie_store()
        with pytest.raises(ShapeError):
            top_k(store, QueryVector(values=np.array([1.0, 0.0, 0.0])), k=1)

    def test_matches_brute_force_on_random_data(self):
        rng = seeded_rng(3)
        vectors = rng.normal(size=(50, 4))
        ids = np.arange(100, 150, dtype=np.int64)
        store = IndexStore(ids=ids, vectors=vectors, commodity_dim=4, threshold_dim=0)
        q = rng.normal(size=4)
        got = top_k(store, QueryVector(values=q), k=50)
        scores = vectors @ q
        expected = [
            (int(ids[i]), float(scores[i]))
            for i in sorted(range(50), key=lambda i: (-scores[i], ids[i]))
        ]
        assert got == expected


class TestIndexIO:
    def test_round_trip_exact(self, tiny_universe, tmp_path):
        params = init_model(TINY_MODEL, seeded_rng(5))
        store = build_index(params, tiny_universe)
        path = str(tmp_path / "index.txt")
        write_index(path, store)
        loaded = read_index(path)
        assert np.array_equal(loaded.ids, store.ids)
        assert np.array_equal(loaded.vectors, store.vectors)
        assert loaded.commodity_dim == store.commodity_dim
        assert loaded.threshold_dim == store.threshold_dim

    def test_row_count_mismatch(self, tmp_path):
        path = str(tmp_path / "index.txt")
        write_index(path, tie_store())
        lines = open(path).read().splitlines()
        open(path, "w").write("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataFormatError, match="header says"):
            read_index(path)

    def test_field_count_reports_line(self, tmp_path):
        path = str(tmp_path / "index.txt")
        write_index(path, tie_store())
        lines = open(path).read().splitlines()
        lines[2] = lines[2] + " 0.25"
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match=r":3:"):
            read_index(path)

    def test_schema_version_gate(self, tmp_path):
        path = str(tmp_path / "index.txt")
        write_index(path, tie_store())
        lines = open(path).read().splitlines()
        lines[0] = lines[0].replace('"schema_version": 1', '"schema_version": 99')
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(SchemaVersionError):
            read_index(path)

    def test_empty_and_malformed_header(self, tmp_path):
        path = str(tmp_path / "index.txt")
        open(path, "w").write("")
        with pytest.raises(DataFormatError):
            read_index(path)
        open(path, "w").write("not json\n")
        with pytest.raises(DataFormatError, match=r":1:"):
            read_index(path)

    def test_topk_csv_layout(self, tmp_path):
        path = str(tmp_path / "topk.csv")
        write_topk_csv(path, [(9, 1.5), (4, 0.25)])
        lines = open(path).read().splitlines()
        assert lines[0] == "rank,id,score"
        assert lines[1] == "1,9,1.5"
        assert lines[2] == "2,4,0.25"
