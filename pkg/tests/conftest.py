import numpy as np
import pytest

from pathcomp import kb


def dfs_path_types(graph, src, dst, max_len, exclude_target=None):
    """Independent oracle: exhaustive DFS enumeration of path types src -> dst.

    Walks the adjacency directly (never through the extraction code) and
    returns every distinct relation sequence of length <= max_len, minus the
    length-1 self-evidence paths for ``exclude_target`` when given.
    """
    found = {}

    def go(ent, rels):
        if rels and ent == dst:
            found[rels] = found.get(rels, 0) + 1
        if len(rels) == max_len:
            return
        out_r, out_d = graph.out_edges(ent)
        for rel, nxt in zip(out_r.tolist(), out_d.tolist()):
            go(nxt, rels + (rel,))

    go(src, ())
    if exclude_target is not None:
        found.pop((exclude_target,), None)
        found.pop((exclude_target ^ 1,), None)
    return found


def random_graph(seed, n_entities=20, n_relations=4, n_edges=60):
    """Small random multigraph for oracle-equivalence tests."""
    rng = np.random.default_rng(seed)
    entities = [f"n{i}" for i in range(n_entities)]
    triples = []
    for _ in range(n_edges):
        s = entities[rng.integers(n_entities)]
        t = entities[rng.integers(n_entities)]
        r = f"/rel/{rng.integers(n_relations)}"
        triples.append((s, r, t))
    return kb.build_graph(triples, min_textual_freq=1)


@pytest.fixture
def chain_graph():
    """A -r1-> B -r2-> C plus a direct target edge A -tgt-> C."""
    return kb.build_graph(
        [("A", "/r1", "B"), ("B", "/r2", "C"), ("A", "/tgt", "C")],
        min_textual_freq=1,
    )
