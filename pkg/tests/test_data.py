import json

import numpy as np
import pytest

from pairverify.data import (
    FILLER_TOKENS_PER_ITEM,
    GenConfig,
    PairExample,
    gen_universe,
    read_dataset,
    read_pairs,
    read_universe,
    sample_pairs,
    split_item_disjoint,
    universe_by_id,
    write_dataset,
    write_pairs,
    write_universe,
)
from pairverify.errors import DataFormatError, SchemaVersionError, UsageError
from pairverify.numerics import seeded_rng

from conftest import TINY_GEN


def hamming(a, b):
    return sum(x != y for x, y in zip(a, b))


class TestGenConfig:
    def test_default_is_valid(self):
        cfg = GenConfig()
        assert cfg.n_symbols == cfg.n_categories + cfg.n_attrs * cfg.attr_values

    def test_modality_sets_must_be_disjoint(self):
        with pytest.raises(UsageError):
            GenConfig(attrs_text_only=(0, 1), attrs_image_only=(1, 2))

    def test_attr_index_in_range(self):
        with pytest.raises(UsageError):
            GenConfig(attrs_text_only=(99,))

    def test_vocab_must_cover_symbols(self):
        with pytest.raises(UsageError, match="text_vocab"):
            GenConfig(text_vocab=10)

    def test_image_dim_must_cover_symbols(self):
        # orthonormal prototype codes need one dimension per symbol
        with pytest.raises(UsageError, match="image_dim"):
            GenConfig(image_dim=8)

    def test_spread_range(self):
        with pytest.raises(UsageError):
            GenConfig(category_scale_spread=1.0)

    def test_pair_endpoints_and_labels_validated(self):
        with pytest.raises(UsageError):
            PairExample(a=3, b=3, y=0)
        with pytest.raises(UsageError):
            PairExample(a=1, b=2, y=5)


class TestUniverse:
    def test_deterministic(self):
        a = gen_universe(TINY_GEN, seeded_rng(7).substream("universe"))
        b = gen_universe(TINY_GEN, seeded_rng(7).substream("universe"))
        assert len(a) == len(b)
        for ca, cb in zip(a, b):
            assert ca.id == cb.id and ca.category == cb.category
            assert ca.key_attrs == cb.key_attrs
            assert np.array_equal(ca.text_tokens, cb.text_tokens)
            assert np.array_equal(ca.image_feat, cb.image_feat)

    def test_seed_changes_output(self):
        a = gen_universe(TINY_GEN, seeded_rng(7).substream("universe"))
        b = gen_universe(TINY_GEN, seeded_rng(8).substream("universe"))
        assert not np.array_equal(a[0].image_feat, b[0].image_feat)

    def test_ids_are_product_major(self, tiny_universe):
        v = TINY_GEN.variants_per_product
        assert [c.id for c in tiny_universe] == list(range(TINY_GEN.n_products * v))
        for p in range(TINY_GEN.n_products):
            group = tiny_universe[p * v:(p + 1) * v]
            assert len({c.category for c in group}) == 1
            assert len({c.key_attrs for c in group}) == 1

    def test_key_attrs_unique_across_products(self, tiny_universe):
        v = TINY_GEN.variants_per_product
        attrs = [tiny_universe[p * v].key_attrs for p in range(TINY_GEN.n_products)]
        assert len(set(attrs)) == TINY_GEN.n_products

    def test_mutation_chain_leaves_hamming_1_sibling(self, tiny_universe):
        v = TINY_GEN.variants_per_product
        by_cat = {}
        for p in range(TINY_GEN.n_products):
            c = tiny_universe[p * v]
            earlier = by_cat.setdefault(c.category, [])
            if earlier:
                assert min(hamming(c.key_attrs, e) for e in earlier) == 1
            earlier.append(c.key_attrs)

    def test_token_bag_structure(self, tiny_universe):
        cfg = TINY_GEN
        image_only = set(cfg.attrs_image_only)
        for c in tiny_universe[:30]:
            tokens = c.text_tokens
            assert tokens[c.category] >= 1
            for i, val in enumerate(c.key_attrs):
                tok = cfg.n_categories + i * cfg.attr_values + val
                if i in image_only:
                    assert tokens[tok] == 0
                else:
                    assert tokens[tok] >= 1
            visible = cfg.n_attrs - len(image_only)
            assert tokens.sum() == 1 + visible + FILLER_TOKENS_PER_ITEM
            assert tokens[:cfg.n_symbols].sum() >= 1 + visible

    def test_noiseless_geometry_is_orthonormal(self):
        # with no noise and no scale spread, the squared norm of an image
        # vector counts its prototype components exactly
        cfg = GenConfig(
            n_products=30, n_categories=3, n_attrs=4, attr_values=3,
            attrs_text_only=(0,), attrs_image_only=(1,),
            text_vocab=20, image_dim=15, noise_sigma=0.0,
            category_scale_spread=0.0,
        )
        universe = gen_universe(cfg, seeded_rng(5).substream("universe"))
        image_visible = 3  # attrs 1 (image-only), 2 and 3 (shared)
        for c in universe:
            assert float(c.image_feat @ c.image_feat) == pytest.approx(
                1 + image_visible, abs=1e-9
            )
        # variants of one product coincide when noise is off
        v = cfg.variants_per_product
        assert np.allclose(universe[0].image_feat, universe[v - 1].image_feat)
        # same-category products differing in exactly one image-visible
        # attribute overlap in all but one component
        by_product = [universe[p * v] for p in range(cfg.n_products)]
        checked = 0
        for a in by_product:
            for b in by_product:
                if a.id >= b.id or a.category != b.category:
                    continue
                diff = [i for i in range(cfg.n_attrs)
                        if a.key_attrs[i] != b.key_attrs[i]]
                if diff == [2] or diff == [3] or diff == [1]:
                    dot = float(a.image_feat @ b.image_feat)
                    assert dot == pytest.approx(image_visible, abs=1e-9)
                    checked += 1
        assert checked > 0


class TestSamplePairs:
    def test_counts_and_label_soundness(self, tiny_universe, tiny_pairs):
        table = universe_by_id(tiny_universe)
        assert len(tiny_pairs) == 280
        assert sum(p.y for p in tiny_pairs) == 80
        for p in tiny_pairs:
            same = table[p.a].key_attrs == table[p.b].key_attrs
            assert p.y == int(same)

    def test_positive_pairs_distinct(self, tiny_pairs):
        positives = [(p.a, p.b) for p in tiny_pairs if p.y == 1]
        assert len(set(positives)) == len(positives)

    def test_hard_negatives_are_minimal_rivals(self, tiny_universe, tiny_pairs):
        table = universe_by_id(tiny_universe)
        products = {}
        for c in tiny_universe:
            products.setdefault(c.key_attrs, (c.category, []))[1].append(c.id)
        n_hard = int(round(0.8 * 200))
        hard = [p for p in tiny_pairs if p.y == 0][:n_hard]
        for p in hard:
            a, b = table[p.a], table[p.b]
            same_cat = [attrs for attrs, (cat, _) in products.items()
                        if cat == a.category and attrs != a.key_attrs]
            pool = same_cat if same_cat else [
                attrs for attrs in products if attrs != a.key_attrs
            ]
            best = min(hamming(a.key_attrs, attrs) for attrs in pool)
            assert hamming(a.key_attrs, b.key_attrs) == best

    def test_deterministic(self, tiny_universe):
        a = sample_pairs(tiny_universe, 20, 50, 0.5, seeded_rng(3).substream("pairs"))
        b = sample_pairs(tiny_universe, 20, 50, 0.5, seeded_rng(3).substream("pairs"))
        assert a == b

    def test_too_many_positives_rejected(self, tiny_universe):
        with pytest.raises(UsageError, match="positive"):
            sample_pairs(tiny_universe, 10_000, 0, 0.5, seeded_rng(0))

    def test_bad_hard_fraction_rejected(self, tiny_universe):
        with pytest.raises(UsageError):
            sample_pairs(tiny_universe, 1, 1, 1.5, seeded_rng(0))


class TestSplit:
    def test_sides_are_item_disjoint(self, tiny_split):
        train, val, _ = tiny_split
        train_ids = {n for p in train for n in (p.a, p.b)}
        val_ids = {n for p in val for n in (p.a, p.b)}
        assert not train_ids & val_ids

    def test_pair_conservation(self, tiny_pairs, tiny_split):
        train, val, dropped = tiny_split
        assert len(train) + len(val) + dropped == len(tiny_pairs)

    def test_positives_never_dropped(self, tiny_pairs, tiny_split):
        # positive pairs live inside one connected component, which moves
        # whole, so only negatives can straddle the cut
        train, val, _ = tiny_split
        kept = {(p.a, p.b, p.y) for p in train} | {(p.a, p.b, p.y) for p in val}
        for p in tiny_pairs:
            if p.y == 1:
                assert (p.a, p.b, p.y) in kept

    def test_ratio_close_to_target(self):
        cfg = GenConfig(
            n_products=300, n_categories=5, n_attrs=5, attr_values=4,
            attrs_text_only=(0,), attrs_image_only=(1,),
            text_vocab=40, image_dim=25,
        )
        universe = gen_universe(cfg, seeded_rng(0).substream("universe"))
        pairs = sample_pairs(universe, 700, 1800, 0.8, seeded_rng(0).substream("pairs"))
        target = 5.6 / 6.6
        train, val, _ = split_item_disjoint(pairs, target, seeded_rng(0).substream("split"))
        ratio = len(train) / len(val)
        assert 3.5 < ratio < 9.0

    def test_deterministic(self, tiny_pairs):
        a = split_item_disjoint(tiny_pairs, 0.8, seeded_rng(1).substream("split"))
        b = split_item_disjoint(tiny_pairs, 0.8, seeded_rng(1).substream("split"))
        assert a == b

    def test_bad_ratio_rejected(self, tiny_pairs):
        with pytest.raises(UsageError):
            split_item_disjoint(tiny_pairs, 1.0, seeded_rng(0))

    def test_empty_pairs_rejected(self):
        with pytest.raises(UsageError):
            split_item_disjoint([], 0.5, seeded_rng(0))


class TestRoundTrips:
    def test_universe_round_trip(self, tmp_path, tiny_universe):
        path = str(tmp_path / "universe.jsonl")
        write_universe(path, tiny_universe, TINY_GEN)
        loaded, cfg = read_universe(path)
        assert cfg == TINY_GEN
        assert len(loaded) == len(tiny_universe)
        for a, b in zip(tiny_universe, loaded):
            assert (a.id, a.category, a.key_attrs) == (b.id, b.category, b.key_attrs)
            assert np.array_equal(a.text_tokens, b.text_tokens)
            assert np.array_equal(a.image_feat, b.image_feat)

    def test_pairs_round_trip(self, tmp_path, tiny_pairs):
        path = str(tmp_path / "pairs.jsonl")
        write_pairs(path, tiny_pairs, TINY_GEN)
        loaded, cfg = read_pairs(path)
        assert cfg == TINY_GEN
        assert loaded == list(tiny_pairs)

    def test_dataset_round_trip(self, tmp_path, tiny_universe, tiny_pairs):
        d = str(tmp_path / "ds")
        write_dataset(d, tiny_universe, tiny_pairs, TINY_GEN)
        universe, pairs, cfg = read_dataset(d)
        assert cfg == TINY_GEN
        assert len(universe) == len(tiny_universe)
        assert pairs == list(tiny_pairs)


class TestReadErrors:
    def _write_universe(self, tmp_path, tiny_universe):
        path = str(tmp_path / "u.jsonl")
        write_universe(path, tiny_universe[:6], TINY_GEN)
        return path

    def test_corrupt_record_reports_line(self, tmp_path, tiny_universe):
        path = self._write_universe(tmp_path, tiny_universe)
        lines = open(path).read().splitlines()
        lines[2] = "{not json"
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match=r":3:"):
            read_universe(path)

    def test_schema_version_checked(self, tmp_path, tiny_universe):
        path = self._write_universe(tmp_path, tiny_universe)
        lines = open(path).read().splitlines()
        header = json.loads(lines[0])
        header["schema_version"] = 99
        lines[0] = json.dumps(header)
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(SchemaVersionError):
            read_universe(path)

    def test_wrong_kind_rejected(self, tmp_path, tiny_pairs):
        path = str(tmp_path / "p.jsonl")
        write_pairs(path, tiny_pairs[:3], TINY_GEN)
        with pytest.raises(DataFormatError, match="kind"):
            read_universe(path)

    def test_unknown_header_key_rejected(self, tmp_path, tiny_universe):
        path = self._write_universe(tmp_path, tiny_universe)
        lines = open(path).read().splitlines()
        header = json.loads(lines[0])
        header["params"]["mystery_knob"] = 1
        lines[0] = json.dumps(header)
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match="mystery_knob"):
            read_universe(path)

    def test_duplicate_ids_rejected(self, tmp_path, tiny_universe):
        path = self._write_universe(tmp_path, tiny_universe)
        lines = open(path).read().splitlines()
        lines.append(lines[1])
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match="duplicate"):
            read_universe(path)

    def test_empty_file_rejected(self, tmp_path):
        path = str(tmp_path / "empty.jsonl")
        open(path, "w").close()
        with pytest.raises(DataFormatError, match="empty"):
            read_universe(path)

    def test_wrong_attr_length_reports_line(self, tmp_path, tiny_universe):
        path = self._write_universe(tmp_path, tiny_universe)
        lines = open(path).read().splitlines()
        rec = json.loads(lines[1])
        rec["key_attrs"] = rec["key_attrs"][:-1]
        lines[1] = json.dumps(rec)
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(DataFormatError, match=r":2:"):
            read_universe(path)
