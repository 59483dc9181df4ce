"""Path-type extraction between entity pairs, negative sampling, datasets.

Path types are tuples of relation ids. Extraction samples forward walks
from both endpoints of a pair and joins them at shared intermediate
entities; walk probabilities are discarded, only path-type identities and
realization counts are kept. An exhaustive mode enumerates every walk up to
the hop caps, which on small graphs yields exactly the set of all path
types up to the configured length.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import kb
from .kb import KBGraph

log = logging.getLogger(__name__)

PathType = tuple[int, ...]

_MASK64 = (1 << 64) - 1
_NEGATIVE_STREAM_SALT = 0x6E65676174697665  # distinct stream for corruption sampling


def _mix64(x: int) -> int:
    """splitmix64 finalizer; exact integer arithmetic keeps every backend identical."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(*parts: int) -> int:
    """Deterministically fold integers into one 64-bit stream seed."""
    state = 0x8F1BBCDCBFA53E0B
    for p in parts:
        state = _mix64((state ^ (int(p) & _MASK64)) + 0x9E3779B97F4A7C15)
    return state


class SplitMix64:
    """Tiny deterministic RNG used for walks and shuffles."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        return _mix64(self.state)

    def randint(self, n: int) -> int:
        """Uniform-ish integer in [0, n); modulo bias is irrelevant at these scales."""
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]


@dataclass(frozen=True)
class WalkConfig:
    """Knobs for bidirectional path finding."""

    max_len: int = 4
    walks_per_node: int = 100
    max_paths_per_pair: int = 200
    seed: int = 0
    exhaustive: bool = False  # enumerate all walks instead of sampling

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be >= 1")
        if self.max_paths_per_pair < 1:
            raise ValueError("max_paths_per_pair must be >= 1")


def _enumerate_walks(graph: KBGraph, start: int, max_hops: int) -> dict[int, dict]:
    """All walks from ``start`` up to ``max_hops``, grouped by hop count.

    Returns {length: {(endpoint, rel_seq): realization_count}}. The empty
    walk at ``start`` is included at length 0.
    """
    by_len: dict[int, dict] = {0: {(start, ()): 1}}
    frontier: dict[tuple[int, tuple], int] = {(start, ()): 1}
    for hops in range(1, max_hops + 1):
        nxt: dict[tuple[int, tuple], int] = {}
        for (ent, rels), count in frontier.items():
            out_r, out_d = graph.out_edges(ent)
            for rel, dst in zip(out_r.tolist(), out_d.tolist()):
                key = (dst, rels + (rel,))
                nxt[key] = nxt.get(key, 0) + count
        by_len[hops] = nxt
        frontier = nxt
        if not nxt:
            break
    return by_len


def _sample_walks(
    graph: KBGraph, start: int, max_hops: int, budget: int, rng: SplitMix64
) -> dict[int, dict]:
    """Sampled counterpart of :func:`_enumerate_walks`.

    Each walk steps uniformly over outgoing edges; every prefix of every
    walk is recorded. Counts are distinct entity-level realizations, so
    repeat visits along the same trace do not inflate them.
    """
    seen: set[tuple] = set()
    by_len: dict[int, dict] = {h: {} for h in range(max_hops + 1)}
    by_len[0][(start, ())] = 1
    for _ in range(budget):
        ent = start
        rels: tuple[int, ...] = ()
        trace: tuple[int, ...] = (start,)
        for _hop in range(max_hops):
            deg = graph.out_degree(ent)
            if deg == 0:
                break
            lo = graph.adj_offsets[ent]
            pick = lo + rng.randint(deg)
            rel = int(graph.adj_rel[pick])
            ent = int(graph.adj_dst[pick])
            rels = rels + (rel,)
            trace = trace + (rel, ent)
            if trace in seen:
                continue
            seen.add(trace)
            key = (ent, rels)
            level = by_len[len(rels)]
            level[key] = level.get(key, 0) + 1
    return by_len


def extract_paths(
    graph: KBGraph,
    pair: tuple[int, int],
    target: int,
    cfg: WalkConfig,
    seed: int | None = None,
) -> dict[PathType, int]:
    """Path types connecting ``pair`` with realization counts.

    Forward walks from the source meet walks from the target (recorded as
    inverted suffixes) at shared intermediate entities; each combined length
    uses a fixed split point so no realization is counted twice. The
    length-1 path equal to the target relation or its inverse is excluded.
    """
    src, dst = pair
    for ent in (src, dst):
        if not 0 <= ent < graph.num_entities:
            raise KeyError(f"unknown entity id {ent}")
    max_len = cfg.max_len
    fwd_hops = (max_len + 1) // 2
    bwd_hops = max_len // 2
    if seed is None:
        seed = cfg.seed
    if cfg.exhaustive:
        fwd = _enumerate_walks(graph, src, fwd_hops)
        bwd = _enumerate_walks(graph, dst, bwd_hops)
    else:
        rng_f = SplitMix64(derive_seed(seed, 0))
        rng_b = SplitMix64(derive_seed(seed, 1))
        fwd = _sample_walks(graph, src, fwd_hops, cfg.walks_per_node, rng_f)
        bwd = _sample_walks(graph, dst, bwd_hops, cfg.walks_per_node, rng_b)

    # index suffix walks by (length, endpoint)
    bwd_at: dict[tuple[int, int], list] = {}
    for length, level in bwd.items():
        for (ent, rels), count in level.items():
            bwd_at.setdefault((length, ent), []).append((rels, count))

    found: dict[PathType, int] = {}
    for length in range(1, max_len + 1):
        a = (length + 1) // 2
        b = length - a
        for (ent, prefix), c_pre in fwd.get(a, {}).items():
            for suffix, c_suf in bwd_at.get((b, ent), ()):
                rels = prefix + tuple(r ^ 1 for r in reversed(suffix))
                found[rels] = found.get(rels, 0) + c_pre * c_suf

    found.pop((target,), None)
    found.pop((target ^ 1,), None)

    if len(found) > cfg.max_paths_per_pair:
        ranked = sorted(found.items(), key=lambda kv: (-kv[1], kv[0]))
        found = dict(ranked[: cfg.max_paths_per_pair])
    return found


def sample_negatives(
    graph: KBGraph,
    target: int,
    positives: Sequence[tuple[int, int]],
    ratio: int,
    seed: int = 0,
    exclude: set | None = None,
) -> list[tuple[int, int]]:
    """Corrupt positive pairs by swapping in targets observed for other sources.

    Candidates (s, t') keep the source of some positive and pick t' from the
    target relation's observed range, skipping known facts, the positives
    themselves, and anything in ``exclude``. Returns about ``ratio`` times
    the positive count, fewer if the pool runs dry.
    """
    if ratio < 1:
        raise ValueError("negative ratio must be >= 1")
    pos_set = set(positives)
    sources: list[int] = []
    seen_src = set()
    targets_by_source: dict[int, set] = {}
    for s, t in positives:
        if s not in seen_src:
            seen_src.add(s)
            sources.append(s)
        targets_by_source.setdefault(s, set()).add(t)

    pool: list[tuple[int, int]] = []
    for s in sources:
        others = set()
        for s2, t2 in positives:
            if s2 != s:
                others.add(t2)
        for t2 in sorted(others):
            if (s, t2) in pos_set:
                continue
            if graph.has_fact(s, target, t2):
                continue
            if exclude and (s, t2) in exclude:
                continue
            pool.append((s, t2))

    if not pool:
        log.warning("negative sampling: candidate pool empty for relation %d", target)
        return []
    rng = SplitMix64(derive_seed(seed, _NEGATIVE_STREAM_SALT))
    rng.shuffle(pool)
    want = ratio * len(positives)
    return pool[:want]


@dataclass
class PathDataset:
    """Per-target-relation training/eval material.

    ``positives``/``negatives`` hold ((source, target_entity), {path: count})
    in a stable order; ``vocabulary`` sums realization counts over all pairs.
    """

    target: int
    positives: list[tuple[tuple[int, int], dict]]
    negatives: list[tuple[tuple[int, int], dict]]
    vocabulary: dict = field(default_factory=dict)

    def labeled_pairs(self) -> list[tuple[tuple[int, int], int, tuple[PathType, ...]]]:
        """(pair, label, lexicographically sorted path types) for every instance."""
        out = []
        for pair, paths in self.positives:
            out.append((pair, 1, tuple(sorted(paths))))
        for pair, paths in self.negatives:
            out.append((pair, 0, tuple(sorted(paths))))
        return out

    def num_instances(self) -> int:
        return len(self.positives) + len(self.negatives)


def collect_path_dataset(
    graph: KBGraph,
    target: int,
    positive_pairs: Sequence[tuple[int, int]],
    cfg: WalkConfig,
    neg_ratio: int = 1,
    exclude: set | None = None,
) -> PathDataset:
    """Sample negatives, extract paths for every pair, build the dataset.

    Pairs with no extracted paths are dropped. Each pair's walks use an
    independent random stream derived from (cfg.seed, pair index), so
    extraction order and parallelism cannot change the result.
    """
    if not positive_pairs:
        raise ValueError("positive pair list is empty")
    negatives = sample_negatives(
        graph, target, positive_pairs, neg_ratio, seed=cfg.seed, exclude=exclude
    )
    all_pairs = [(pair, 1) for pair in positive_pairs] + [(pair, 0) for pair in negatives]
    pos_out: list[tuple[tuple[int, int], dict]] = []
    neg_out: list[tuple[tuple[int, int], dict]] = []
    vocab: dict[PathType, int] = {}
    for index, (pair, label) in enumerate(all_pairs):
        paths = extract_paths(graph, pair, target, cfg, seed=derive_seed(cfg.seed, index))
        if not paths:
            continue
        for ptype, count in paths.items():
            vocab[ptype] = vocab.get(ptype, 0) + count
        (pos_out if label else neg_out).append((pair, paths))
    return PathDataset(target=target, positives=pos_out, negatives=neg_out, vocabulary=vocab)


def top_k_paths(ds: PathDataset, k: int) -> PathDataset:
    """Restrict the dataset to its k most frequent path types.

    Ties break lexicographically on the relation-id tuple. Instances whose
    path sets become empty are dropped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ds.vocabulary) <= k:
        return ds
    ranked = sorted(ds.vocabulary.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = {ptype for ptype, _ in ranked[:k]}

    def filter_side(side):
        out = []
        for pair, paths in side:
            trimmed = {p: c for p, c in paths.items() if p in kept}
            if trimmed:
                out.append((pair, trimmed))
        return out

    return PathDataset(
        target=ds.target,
        positives=filter_side(ds.positives),
        negatives=filter_side(ds.negatives),
        vocabulary={p: c for p, c in ds.vocabulary.items() if p in kept},
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def join_path_names(names: Sequence[str]) -> str:
    for name in names:
        if "\t" in name or ";" in name or "\n" in name:
            raise ValueError(f"relation name {name!r} cannot be serialized")
    return ",".join(names)


def split_path_string(text: str) -> list[str]:
    """Split a comma-joined path string, ignoring commas inside quotes."""
    parts: list[str] = []
    cur: list[str] = []
    in_quote = False
    for ch in text:
        if ch == '"':
            in_quote = not in_quote
            cur.append(ch)
        elif ch == "," and not in_quote:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def path_to_string(ptype: PathType, graph: KBGraph) -> str:
    return join_path_names([graph.relation_name(r) for r in ptype])


def path_from_string(text: str, graph: KBGraph) -> PathType:
    return tuple(graph.relation_id(name) for name in split_path_string(text))


def save_dataset(ds: PathDataset, graph: KBGraph, data_path, vocab_path) -> None:
    """Write instance records and the companion vocabulary file."""
    lines = []
    for pair, label, ptypes in ds.labeled_pairs():
        src_name = graph.entity_name(pair[0])
        dst_name = graph.entity_name(pair[1])
        path_field = ";".join(path_to_string(p, graph) for p in ptypes)
        lines.append(f"{src_name}\t{dst_name}\t{label}\t{path_field}\n")
    kb._atomic_write_text(data_path, "".join(lines))

    vocab_lines = []
    for ptype, count in sorted(ds.vocabulary.items(), key=lambda kv: (-kv[1], kv[0])):
        vocab_lines.append(f"{path_to_string(ptype, graph)}\t{count}\n")
    kb._atomic_write_text(vocab_path, "".join(vocab_lines))


def load_dataset(data_path, vocab_path, graph: KBGraph, target: int) -> PathDataset:
    """Read a dataset written by :func:`save_dataset`.

    Per-pair realization counts are not stored in the file; restored
    instances carry count 1 per path type (training and evaluation only use
    the type sets; ranking decisions use the persisted vocabulary).
    """
    positives: list[tuple[tuple[int, int], dict]] = []
    negatives: list[tuple[tuple[int, int], dict]] = []
    with open(data_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            fields = raw.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise ValueError(f"{data_path}:{lineno}: expected 4 fields")
            src, dst, label_s, path_field = fields
            pair = (graph.entity_id(src), graph.entity_id(dst))
            paths = {path_from_string(p, graph): 1 for p in path_field.split(";") if p}
            if label_s == "1":
                positives.append((pair, paths))
            elif label_s == "0":
                negatives.append((pair, paths))
            else:
                raise ValueError(f"{data_path}:{lineno}: bad label {label_s!r}")
    vocab: dict[PathType, int] = {}
    if os.path.exists(vocab_path):
        with open(vocab_path, "r", encoding="utf-8") as fh:
            for raw in fh:
                if not raw.strip():
                    continue
                pstr, count = raw.rstrip("\n").split("\t")
                vocab[path_from_string(pstr, graph)] = int(count)
    else:
        for _, paths in positives + negatives:
            for p in paths:
                vocab[p] = vocab.get(p, 0) + 1
    return PathDataset(target=target, positives=positives, negatives=negatives, vocabulary=vocab)
