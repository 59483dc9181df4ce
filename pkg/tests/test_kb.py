import pytest

from pathcomp import kb
from pathcomp.kb import (
    ParseError,
    build_graph,
    canonical_relation_name,
    normalize_textual_relation,
    parse_triple_line,
)


class TestParseTripleLine:
    def test_plain_triple(self):
        assert parse_triple_line("microsoft\tIsBasedIn\tseattle") == (
            "microsoft", "IsBasedIn", "seattle",
        )

    def test_two_fields_rejected(self):
        with pytest.raises(ParseError, match="3 tab-separated"):
            parse_triple_line("a\tb")

    def test_fields_trimmed(self):
        assert parse_triple_line("x\t was born in \ty") == ("x", "was born in", "y")

    def test_empty_field_rejected(self):
        with pytest.raises(ParseError, match="line 12"):
            parse_triple_line("a\t\tb", lineno=12)

    def test_four_fields_rejected(self):
        with pytest.raises(ParseError):
            parse_triple_line("a\tb\tc\td")


class TestNormalizeTextualRelation:
    def test_short_phrase_kept_whole(self):
        assert normalize_textual_relation(["was", "born", "in"]) == "was,born,in"

    def test_long_phrase_truncated_to_first_and_last_two(self):
        words = ["decided", "to", "move", "its", "headquarters", "to"]
        assert normalize_textual_relation(words) == "decided,to,headquarters,to"

    def test_boundary_length_four_unchanged(self):
        assert normalize_textual_relation(["a", "b", "c", "d"]) == "a,b,c,d"

    def test_five_words(self):
        assert normalize_textual_relation(list("abcde")) == "a,b,d,e"

    def test_single_word(self):
        assert normalize_textual_relation(["near"]) == "near"

    def test_empty_phrase_rejected(self):
        with pytest.raises(ValueError):
            normalize_textual_relation([])


class TestCanonicalRelationName:
    def test_kb_relation_verbatim(self):
        assert canonical_relation_name("/people/person/nationality") == (
            "/people/person/nationality", kb.KIND_KB,
        )

    def test_phrase_normalized_and_quoted(self):
        assert canonical_relation_name("was born in") == ('"was,born,in"', kb.KIND_TEXTUAL)

    def test_prequoted_passthrough(self):
        assert canonical_relation_name('"was,born,in"') == ('"was,born,in"', kb.KIND_TEXTUAL)


class TestBuildGraph:
    def test_type_facts_dropped(self):
        g = build_graph(
            [("a", "/r", "b"), ("b", "/type/object/type", "c"), ("c", "/r", "a")],
            min_textual_freq=1,
        )
        assert g.forward_edges.shape[0] == 2
        assert "/type/object/type" not in {r.name for r in g.relations}

    def test_textual_frequency_threshold(self):
        triples = [(f"s{i}", "works at", f"t{i}") for i in range(49)]
        g = build_graph(triples, min_textual_freq=50)
        assert g.forward_edges.shape[0] == 0
        g2 = build_graph(triples + [("s49", "works at", "t49")], min_textual_freq=50)
        assert g2.forward_edges.shape[0] == 50

    def test_kb_relations_exempt_from_threshold(self):
        g = build_graph([("a", "/rare", "b")], min_textual_freq=50)
        assert g.forward_edges.shape[0] == 1

    def test_inverse_edge_materialized(self):
        g = build_graph([("A", "/r", "B")], min_textual_freq=1)
        a, b = g.entity_id("A"), g.entity_id("B")
        r = g.relation_id("/r")
        rels, dsts = g.out_edges(a)
        assert (r, b) in set(zip(rels.tolist(), dsts.tolist()))
        rels_b, dsts_b = g.out_edges(b)
        assert (g.inverse(r), a) in set(zip(rels_b.tolist(), dsts_b.tolist()))

    def test_inverse_is_involution_and_queryable(self):
        g = build_graph([("x", "/r", "y"), ("y", "/q", "z")], min_textual_freq=1)
        for rel in g.relations:
            assert g.inverse(g.inverse(rel.id)) == rel.id
        x, y = g.entity_id("x"), g.entity_id("y")
        r = g.relation_id("/r")
        assert g.has_fact(x, r, y)
        assert g.has_fact(y, g.inverse(r), x)

    def test_inverse_closure_full_scan(self):
        from conftest import random_graph

        g = random_graph(11, n_entities=15, n_edges=40)
        for s, r, t in g.fact_set:
            assert (t, r ^ 1, s) in g.fact_set

    def test_unknown_relation_id_rejected(self):
        g = build_graph([("a", "/r", "b")], min_textual_freq=1)
        with pytest.raises(KeyError):
            g.inverse(99)

    def test_empty_input(self):
        g = build_graph([], min_textual_freq=50)
        assert g.num_entities == 0
        assert g.num_relations == 0

    def test_rebuild_determinism(self):
        triples = [("a", "/r", "b"), ("b", "likes to eat", "c"), ("a", "likes to eat", "c")]
        g1 = build_graph(triples, min_textual_freq=1)
        g2 = build_graph(triples, min_textual_freq=1)
        assert g1.entity_names == g2.entity_names
        assert [r.name for r in g1.relations] == [r.name for r in g2.relations]
        assert (g1.forward_edges == g2.forward_edges).all()

    def test_frequency_filter_independent_of_order(self):
        common = [(f"s{i}", "works at", f"t{i}") for i in range(50)]
        rare = [("x", "lives in", "y")]
        g1 = build_graph(rare + common, min_textual_freq=50)
        g2 = build_graph(common + rare, min_textual_freq=50)
        names1 = {r.name for r in g1.relations}
        names2 = {r.name for r in g2.relations}
        assert names1 == names2
        assert '"lives,in"' not in names1

    def test_duplicate_facts_stored_once(self):
        g = build_graph([("a", "/r", "b"), ("a", "/r", "b")], min_textual_freq=1)
        assert g.forward_edges.shape[0] == 1


class TestTripleFileRoundTrip:
    def test_comments_and_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "triples.tsv"
        path.write_text("# header\na\t/r\tb\n\nc\t/r\td\n", encoding="utf-8")
        triples = list(kb.iter_triple_file(path))
        assert triples == [("a", "/r", "b"), ("c", "/r", "d")]

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "triples.tsv"
        path.write_text("a\t/r\tb\nbroken line\n", encoding="utf-8")
        with pytest.raises(ParseError, match="line 2"):
            list(kb.iter_triple_file(path))

    def test_export_reingest_identity(self, tmp_path):
        g = build_graph(
            [("a", "/r", "b"), ("b", "was born in", "c"), ("b", "was born in", "a")],
            min_textual_freq=2,
        )
        out = tmp_path / "export.tsv"
        kb.write_triple_file(out, g)
        g2 = kb.ingest_file(out, min_textual_freq=1)
        assert sorted(g.entity_names) == sorted(g2.entity_names)
        assert {r.name for r in g.relations} == {r.name for r in g2.relations}


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        g = build_graph(
            [("a", "/r", "b"), ("b", "was born in", "c")], min_textual_freq=1
        )
        path = tmp_path / "graph.bin"
        kb.save_graph(g, path)
        g2 = kb.load_graph(path)
        assert g2.entity_names == g.entity_names
        assert [(r.name, r.kind) for r in g2.relations] == [
            (r.name, r.kind) for r in g.relations
        ]
        assert (g2.forward_edges == g.forward_edges).all()
        assert g2.fact_set == g.fact_set

    def test_snapshot_bytes_deterministic(self, tmp_path):
        g = build_graph([("a", "/r", "b"), ("c", "/q", "d")], min_textual_freq=1)
        p1, p2 = tmp_path / "g1.bin", tmp_path / "g2.bin"
        kb.save_graph(g, p1)
        kb.save_graph(g, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE1234")
        with pytest.raises(ValueError, match="not a graph snapshot"):
            kb.load_graph(path)
