import numpy as np
import pytest
from conftest import dfs_path_types, random_graph

from pathcomp import extract, kb
from pathcomp.extract import (
    PathDataset,
    WalkConfig,
    collect_path_dataset,
    extract_paths,
    join_path_names,
    load_dataset,
    sample_negatives,
    save_dataset,
    split_path_string,
    top_k_paths,
)


def exhaustive_cfg(max_len=2):
    return WalkConfig(max_len=max_len, walks_per_node=1, exhaustive=True, seed=0)


class TestExtractPaths:
    def test_chain_yields_composed_path(self, chain_graph):
        g = chain_graph
        pair = (g.entity_id("A"), g.entity_id("C"))
        tgt = g.relation_id("/tgt")
        found = extract_paths(g, pair, tgt, exhaustive_cfg(2))
        r1, r2 = g.relation_id("/r1"), g.relation_id("/r2")
        assert (r1, r2) in found

    def test_no_connection_within_budget(self, chain_graph):
        g = chain_graph
        pair = (g.entity_id("A"), g.entity_id("C"))
        tgt = g.relation_id("/tgt")
        found = extract_paths(g, pair, tgt, exhaustive_cfg(1))
        assert found == {}  # only the direct edge connects at length 1; excluded

    def test_self_evidence_excluded(self, chain_graph):
        g = chain_graph
        pair = (g.entity_id("A"), g.entity_id("C"))
        tgt = g.relation_id("/tgt")
        found = extract_paths(g, pair, tgt, exhaustive_cfg(3))
        assert (tgt,) not in found
        assert (g.inverse(tgt),) not in found
        # the inverse direction is excluded too
        found_rev = extract_paths(g, (pair[1], pair[0]), tgt, exhaustive_cfg(1))
        assert (g.inverse(tgt),) not in found_rev

    def test_unknown_entity_rejected(self, chain_graph):
        with pytest.raises(KeyError):
            extract_paths(chain_graph, (0, 99), 0, exhaustive_cfg())

    def test_exhaustive_matches_dfs_oracle(self):
        for seed in range(8):
            g = random_graph(seed, n_entities=12, n_relations=3, n_edges=30)
            rng = np.random.default_rng(1000 + seed)
            src, dst = rng.integers(0, g.num_entities, size=2)
            tgt = int(rng.integers(0, g.num_relations)) & ~1
            for max_len in (1, 2, 3, 4):
                cfg = WalkConfig(max_len=max_len, walks_per_node=1,
                                 exhaustive=True, max_paths_per_pair=10**6)
                got = extract_paths(g, (int(src), int(dst)), tgt, cfg)
                want = dfs_path_types(g, int(src), int(dst), max_len, exclude_target=tgt)
                assert got == want, (seed, max_len)

    def test_sampled_paths_are_sound(self):
        # every sampled path type must replay through the adjacency
        g = random_graph(3, n_entities=15, n_relations=3, n_edges=45)
        cfg = WalkConfig(max_len=3, walks_per_node=50, seed=9)
        rng = np.random.default_rng(7)
        for _ in range(10):
            src, dst = (int(x) for x in rng.integers(0, g.num_entities, size=2))
            found = extract_paths(g, (src, dst), 0, cfg)
            oracle = dfs_path_types(g, src, dst, 3, exclude_target=0)
            for ptype in found:
                assert ptype in oracle

    def test_sampled_subset_of_exhaustive_with_counts(self):
        g = random_graph(4, n_entities=10, n_relations=2, n_edges=25)
        cfg_s = WalkConfig(max_len=4, walks_per_node=30, seed=2)
        cfg_e = WalkConfig(max_len=4, walks_per_node=1, exhaustive=True,
                           max_paths_per_pair=10**6)
        found_s = extract_paths(g, (0, 1), 0, cfg_s)
        found_e = extract_paths(g, (0, 1), 0, cfg_e)
        for ptype, count in found_s.items():
            assert count <= found_e[ptype]

    def test_deterministic_given_seed(self):
        g = random_graph(5, n_entities=15, n_edges=50)
        cfg = WalkConfig(max_len=3, walks_per_node=40, seed=123)
        a = extract_paths(g, (1, 2), 0, cfg)
        b = extract_paths(g, (1, 2), 0, cfg)
        assert a == b

    def test_max_paths_per_pair_cap(self):
        g = random_graph(6, n_entities=8, n_relations=4, n_edges=60)
        cfg_all = WalkConfig(max_len=4, exhaustive=True, max_paths_per_pair=10**6)
        cfg_cap = WalkConfig(max_len=4, exhaustive=True, max_paths_per_pair=5)
        everything = extract_paths(g, (0, 1), 0, cfg_all)
        capped = extract_paths(g, (0, 1), 0, cfg_cap)
        assert len(capped) == min(5, len(everything))
        kept_counts = sorted(capped.values(), reverse=True)
        all_counts = sorted(everything.values(), reverse=True)
        assert kept_counts[-1] >= all_counts[min(5, len(all_counts)) - 1]


class TestSampleNegatives:
    def _tiny_graph(self):
        return kb.build_graph(
            [("a", "/t", "x"), ("b", "/t", "y"), ("q", "/other", "z")],
            min_textual_freq=1,
        )

    def test_brute_force_pool(self):
        g = self._tiny_graph()
        tgt = g.relation_id("/t")
        positives = [(g.entity_id("a"), g.entity_id("x")), (g.entity_id("b"), g.entity_id("y"))]
        negs = sample_negatives(g, tgt, positives, ratio=4, seed=0)
        pool = {
            (g.entity_id("a"), g.entity_id("y")),
            (g.entity_id("b"), g.entity_id("x")),
        }
        assert set(negs) <= pool
        assert len(negs) == len(set(negs))

    def test_known_facts_excluded(self):
        g = kb.build_graph(
            [("a", "/t", "x"), ("b", "/t", "y"), ("a", "/t", "y")],
            min_textual_freq=1,
        )
        tgt = g.relation_id("/t")
        positives = [(g.entity_id("a"), g.entity_id("x")), (g.entity_id("b"), g.entity_id("y"))]
        negs = sample_negatives(g, tgt, positives, ratio=4, seed=0)
        assert (g.entity_id("a"), g.entity_id("y")) not in negs

    def test_ratio_zero_rejected(self):
        g = self._tiny_graph()
        with pytest.raises(ValueError):
            sample_negatives(g, 0, [(0, 1)], ratio=0, seed=0)

    def test_exhausted_pool_returns_empty(self, caplog):
        g = kb.build_graph(
            [("a", "/t", "x"), ("b", "/t", "y"), ("a", "/t", "y"), ("b", "/t", "x")],
            min_textual_freq=1,
        )
        tgt = g.relation_id("/t")
        positives = [
            (g.entity_id("a"), g.entity_id("x")),
            (g.entity_id("b"), g.entity_id("y")),
        ]
        with caplog.at_level("WARNING"):
            negs = sample_negatives(g, tgt, positives, ratio=2, seed=0)
        assert negs == []
        assert any("pool empty" in rec.message for rec in caplog.records)

    def test_exclude_set_respected(self):
        g = self._tiny_graph()
        tgt = g.relation_id("/t")
        positives = [(g.entity_id("a"), g.entity_id("x")), (g.entity_id("b"), g.entity_id("y"))]
        banned = {(g.entity_id("a"), g.entity_id("y"))}
        negs = sample_negatives(g, tgt, positives, ratio=4, seed=0, exclude=banned)
        assert banned.isdisjoint(negs)

    def test_deterministic(self):
        g = self._tiny_graph()
        tgt = g.relation_id("/t")
        positives = [(g.entity_id("a"), g.entity_id("x")), (g.entity_id("b"), g.entity_id("y"))]
        assert sample_negatives(g, tgt, positives, 1, seed=5) == sample_negatives(
            g, tgt, positives, 1, seed=5
        )


class TestTopKPaths:
    def _ds(self):
        return PathDataset(
            target=0,
            positives=[((0, 1), {(2,): 3, (2, 4): 5}), ((0, 2), {(6,): 10})],
            negatives=[((1, 2), {(2, 4): 2})],
            vocabulary={(2,): 5, (2, 4): 5, (6,): 10},
        )

    def test_count_then_lexicographic_tiebreak(self):
        ds = top_k_paths(self._ds(), 2)
        assert set(ds.vocabulary) == {(6,), (2,)}  # (2,) wins the 5-5 tie over (2,4)

    def test_k_at_least_vocab_size_is_identity(self):
        ds = self._ds()
        assert top_k_paths(ds, 3) is ds
        assert top_k_paths(ds, 100) is ds

    def test_emptied_instances_dropped(self):
        ds = top_k_paths(self._ds(), 1)  # keeps only (6,)
        assert len(ds.positives) == 1
        assert len(ds.negatives) == 0

    def test_k_below_one_rejected(self):
        with pytest.raises(ValueError):
            top_k_paths(self._ds(), 0)

    def test_sort_oracle(self):
        rng = np.random.default_rng(0)
        vocab = {}
        for i in range(30):
            vocab[(int(rng.integers(0, 6)), i)] = int(rng.integers(1, 8))
        ds = PathDataset(target=0, positives=[((0, 1), dict(vocab))], negatives=[],
                         vocabulary=dict(vocab))
        k = 7
        trimmed = top_k_paths(ds, k)
        expected = sorted(vocab.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        assert set(trimmed.vocabulary) == {p for p, _ in expected}


class TestCollectPathDataset:
    def test_planted_rule_paths_present(self):
        triples = []
        for i in range(30):
            triples.append((f"s{i}", "/r1", f"m{i}"))
            triples.append((f"m{i}", "/r2", f"t{i}"))
            triples.append((f"s{i}", "/head", f"t{i}"))
        g = kb.build_graph(triples, min_textual_freq=1)
        head = g.relation_id("/head")
        pairs = [(g.entity_id(f"s{i}"), g.entity_id(f"t{i}")) for i in range(30)]
        cfg = WalkConfig(max_len=2, exhaustive=True, seed=1)
        ds = collect_path_dataset(g, head, pairs, cfg, neg_ratio=1)
        rule = (g.relation_id("/r1"), g.relation_id("/r2"))
        assert len(ds.positives) == 30
        for _, paths in ds.positives:
            assert rule in paths
        for ptype in ds.vocabulary:
            assert all(0 <= r < g.num_relations for r in ptype)

    def test_instance_paths_always_in_vocabulary(self):
        g = random_graph(8, n_entities=12, n_edges=40)
        pairs = [(0, 1), (2, 3), (4, 5)]
        cfg = WalkConfig(max_len=3, walks_per_node=30, seed=3)
        ds = collect_path_dataset(g, 0, pairs, cfg, neg_ratio=1)
        for _, paths in ds.positives + ds.negatives:
            for p in paths:
                assert p in ds.vocabulary

    def test_empty_positives_rejected(self, chain_graph):
        with pytest.raises(ValueError):
            collect_path_dataset(chain_graph, 0, [], WalkConfig(), neg_ratio=1)

    def test_same_seed_identical(self):
        g = random_graph(9, n_entities=15, n_edges=50)
        pairs = [(0, 1), (2, 3), (4, 5), (6, 7)]
        cfg = WalkConfig(max_len=3, walks_per_node=25, seed=11)
        a = collect_path_dataset(g, 0, pairs, cfg, neg_ratio=2)
        b = collect_path_dataset(g, 0, pairs, cfg, neg_ratio=2)
        assert a.positives == b.positives
        assert a.negatives == b.negatives
        assert a.vocabulary == b.vocabulary


class TestPathStrings:
    def test_quoted_names_survive_round_trip(self):
        names = ['"was,born,in"', "/location/contains", '"works,at"^-1']
        joined = join_path_names(names)
        assert split_path_string(joined) == names

    def test_forbidden_characters_rejected(self):
        with pytest.raises(ValueError):
            join_path_names(["bad;name"])
        with pytest.raises(ValueError):
            join_path_names(["bad\tname"])


class TestDatasetFiles:
    def test_round_trip(self, tmp_path):
        triples = [("a", "/r1", "b"), ("b", "was born in", "c"), ("a", "/head", "c")]
        g = kb.build_graph(triples, min_textual_freq=1)
        head = g.relation_id("/head")
        pairs = [(g.entity_id("a"), g.entity_id("c"))]
        cfg = WalkConfig(max_len=2, exhaustive=True, seed=0)
        ds = collect_path_dataset(g, head, pairs, cfg, neg_ratio=1)
        data, vocab = tmp_path / "d.paths", tmp_path / "d.vocab"
        save_dataset(ds, g, data, vocab)
        loaded = load_dataset(data, vocab, g, head)
        assert loaded.target == head
        assert [(p, sorted(d)) for p, d in loaded.positives] == [
            (p, sorted(d)) for p, d in ds.positives
        ]
        assert loaded.vocabulary == ds.vocabulary

    def test_file_bytes_deterministic(self, tmp_path):
        g = random_graph(10, n_entities=12, n_edges=35)
        cfg = WalkConfig(max_len=3, walks_per_node=20, seed=4)
        ds = collect_path_dataset(g, 0, [(0, 1), (2, 3)], cfg, neg_ratio=1)
        for name in ("x", "y"):
            save_dataset(ds, g, tmp_path / f"{name}.paths", tmp_path / f"{name}.vocab")
        assert (tmp_path / "x.paths").read_bytes() == (tmp_path / "y.paths").read_bytes()
        assert (tmp_path / "x.vocab").read_bytes() == (tmp_path / "y.vocab").read_bytes()
