"""Knowledge-base graph: triple ingestion, normalization, inverse edges.

Triples come in as tab-separated ``subject<TAB>relation<TAB>object`` lines.
Relation surfaces starting with ``/`` are KB-schema relations; anything else
is treated as a textual (OpenIE-style) phrase, normalized to at most four
words and stored quoted. Every stored edge gets a materialized inverse edge
whose relation id is the forward id XOR 1, so inversion is O(1).
"""

from __future__ import annotations

import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

TYPE_FACT_RELATION = "/type/object/type"
INVERSE_SUFFIX = "^-1"
KIND_KB = "kb"
KIND_TEXTUAL = "textual"

_SNAPSHOT_MAGIC = b"PKBG"
_SNAPSHOT_VERSION = 1


class ParseError(ValueError):
    """Raised for malformed triple lines; message names the line number."""


@dataclass(frozen=True)
class Relation:
    id: int
    name: str
    kind: str  # KIND_KB or KIND_TEXTUAL

    @property
    def inverse_id(self) -> int:
        return self.id ^ 1

    @property
    def is_inverse(self) -> bool:
        return bool(self.id & 1)


def parse_triple_line(line: str, lineno: int | None = None) -> tuple[str, str, str]:
    """Split one triple line into (subject, relation, object) surface strings.

    Requires exactly three tab-separated, non-empty fields; fields are
    whitespace-trimmed.
    """
    where = f" at line {lineno}" if lineno is not None else ""
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 3:
        raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}{where}")
    subj, rel, obj = (f.strip() for f in fields)
    if not subj or not rel or not obj:
        raise ParseError(f"empty field in triple{where}")
    return subj, rel, obj


def normalize_textual_relation(words: Sequence[str]) -> str:
    """Collapse a relation phrase to a comma-joined name.

    Phrases of up to four words are kept whole; longer phrases keep only the
    first two and last two words.
    """
    if len(words) == 0:
        raise ValueError("empty relation phrase")
    if len(words) > 4:
        words = list(words[:2]) + list(words[-2:])
    return ",".join(words)


def canonical_relation_name(surface: str) -> tuple[str, str]:
    """Map a relation surface string to its stored (name, kind).

    Slash-prefixed surfaces are KB relations kept verbatim. An already-quoted
    surface is taken as a pre-normalized textual name. Any other surface is a
    raw phrase: whitespace-split, normalized, and quoted.
    """
    if surface.startswith("/"):
        return surface, KIND_KB
    if len(surface) >= 2 and surface.startswith('"') and surface.endswith('"'):
        return surface, KIND_TEXTUAL
    return '"' + normalize_textual_relation(surface.split()) + '"', KIND_TEXTUAL


def iter_triple_file(path: str | os.PathLike) -> Iterator[tuple[str, str, str]]:
    """Yield parsed triples from a TSV file, skipping comments and blank lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield parse_triple_line(raw, lineno)


@dataclass
class KBGraph:
    """Immutable multigraph over dense entity/relation ids.

    Relation ids come in (forward, inverse) pairs allocated as (2k, 2k+1);
    adjacency covers both directions. ``fact_set`` holds every stored edge,
    inverses included.
    """

    entity_names: list[str]
    relations: list[Relation]
    adj_offsets: np.ndarray  # (n_entities + 1,) int64
    adj_rel: np.ndarray      # (n_edges_total,) int32, sorted per entity
    adj_dst: np.ndarray      # (n_edges_total,) int32
    forward_edges: np.ndarray  # (n_forward, 3) int32 rows (src, rel, dst), canonical order
    fact_set: frozenset = field(repr=False)
    _entity_ids: dict = field(repr=False)
    _relation_ids: dict = field(repr=False)

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise KeyError(f"unknown entity {name!r}") from None

    def entity_name(self, eid: int) -> str:
        return self.entity_names[eid]

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise KeyError(f"unknown relation {name!r}") from None

    def relation(self, rid: int) -> Relation:
        if not 0 <= rid < len(self.relations):
            raise KeyError(f"unknown relation id {rid}")
        return self.relations[rid]

    def relation_name(self, rid: int) -> str:
        return self.relation(rid).name

    def inverse(self, rid: int) -> int:
        """Inverse relation id; an involution by construction."""
        if not 0 <= rid < len(self.relations):
            raise KeyError(f"unknown relation id {rid}")
        return rid ^ 1

    def has_fact(self, src: int, rel: int, dst: int) -> bool:
        return (src, rel, dst) in self.fact_set

    def out_edges(self, eid: int) -> tuple[np.ndarray, np.ndarray]:
        """(relation ids, neighbor ids) leaving ``eid``, both directions included."""
        lo, hi = self.adj_offsets[eid], self.adj_offsets[eid + 1]
        return self.adj_rel[lo:hi], self.adj_dst[lo:hi]

    def out_degree(self, eid: int) -> int:
        return int(self.adj_offsets[eid + 1] - self.adj_offsets[eid])

    def textual_forward_ids(self) -> list[int]:
        return [r.id for r in self.relations if r.kind == KIND_TEXTUAL and not r.is_inverse]


def _inverse_name(name: str) -> str:
    return name + INVERSE_SUFFIX


def build_graph(
    triples: Iterable[tuple[str, str, str]],
    min_textual_freq: int = 50,
) -> KBGraph:
    """Build a KBGraph from parsed (subject, relation, object) surface triples.

    Facts with the ``/type/object/type`` relation are dropped. Textual
    relations occurring fewer than ``min_textual_freq`` times (counting
    forward occurrences over the whole stream, before any filtering) are
    dropped. Ids are assigned in first-appearance order over the surviving
    triples; duplicate facts are stored once.
    """
    staged: list[tuple[str, str, str, str]] = []
    textual_counts: Counter = Counter()
    for subj, rel_surface, obj in triples:
        name, kind = canonical_relation_name(rel_surface)
        if kind == KIND_TEXTUAL:
            textual_counts[name] += 1
        staged.append((subj, name, kind, obj))

    entity_ids: dict[str, int] = {}
    entity_names: list[str] = []
    relation_ids: dict[str, int] = {}
    relations: list[Relation] = []
    edge_set: set[tuple[int, int, int]] = set()

    def entity(name: str) -> int:
        eid = entity_ids.get(name)
        if eid is None:
            eid = len(entity_names)
            entity_ids[name] = eid
            entity_names.append(name)
        return eid

    def forward_relation(name: str, kind: str) -> int:
        rid = relation_ids.get(name)
        if rid is None:
            rid = len(relations)
            relations.append(Relation(rid, name, kind))
            relations.append(Relation(rid + 1, _inverse_name(name), kind))
            relation_ids[name] = rid
            relation_ids[_inverse_name(name)] = rid + 1
        return rid

    for subj, name, kind, obj in staged:
        if kind == KIND_KB and name == TYPE_FACT_RELATION:
            continue
        if kind == KIND_TEXTUAL and textual_counts[name] < min_textual_freq:
            continue
        src = entity(subj)
        dst = entity(obj)
        rid = forward_relation(name, kind)
        edge_set.add((src, rid, dst))

    return _assemble_graph(entity_names, entity_ids, relations, relation_ids, edge_set)


def _assemble_graph(entity_names, entity_ids, relations, relation_ids, edge_set) -> KBGraph:
    forward = np.array(sorted(edge_set), dtype=np.int32).reshape(-1, 3)
    n_entities = len(entity_names)

    if forward.size:
        inv = np.stack([forward[:, 2], forward[:, 1] ^ 1, forward[:, 0]], axis=1)
        all_edges = np.concatenate([forward, inv], axis=0)
    else:
        all_edges = np.zeros((0, 3), dtype=np.int32)
    order = np.lexsort((all_edges[:, 2], all_edges[:, 1], all_edges[:, 0]))
    all_edges = all_edges[order]

    adj_offsets = np.zeros(n_entities + 1, dtype=np.int64)
    np.add.at(adj_offsets, all_edges[:, 0] + 1, 1)
    np.cumsum(adj_offsets, out=adj_offsets)

    fact_set = frozenset((int(s), int(r), int(t)) for s, r, t in all_edges)
    return KBGraph(
        entity_names=entity_names,
        relations=relations,
        adj_offsets=adj_offsets,
        adj_rel=np.ascontiguousarray(all_edges[:, 1]),
        adj_dst=np.ascontiguousarray(all_edges[:, 2]),
        forward_edges=forward,
        fact_set=fact_set,
        _entity_ids=entity_ids,
        _relation_ids=relation_ids,
    )


def graph_from_edges(
    entity_names: list[str],
    relation_specs: list[tuple[str, str]],
    edges: Iterable[tuple[int, int, int]],
) -> KBGraph:
    """Assemble a graph from pre-assigned ids.

    ``relation_specs`` lists (name, kind) for forward relations in pair
    order; ``edges`` are forward (src, rel, dst) rows with even relation ids.
    """
    entity_ids = {n: i for i, n in enumerate(entity_names)}
    relations: list[Relation] = []
    relation_ids: dict[str, int] = {}
    for k, (name, kind) in enumerate(relation_specs):
        relations.append(Relation(2 * k, name, kind))
        relations.append(Relation(2 * k + 1, _inverse_name(name), kind))
        relation_ids[name] = 2 * k
        relation_ids[_inverse_name(name)] = 2 * k + 1
    edge_set = {(int(s), int(r), int(t)) for s, r, t in edges}
    for s, r, t in edge_set:
        if r % 2 or r < 0 or r >= len(relations):
            raise ValueError(f"edge relation id {r} is not a forward relation")
        if not (0 <= s < len(entity_names) and 0 <= t < len(entity_names)):
            raise ValueError(f"edge endpoint out of range: {(s, r, t)}")
    return _assemble_graph(entity_names, entity_ids, relations, relation_ids, edge_set)


def ingest_file(path: str | os.PathLike, min_textual_freq: int = 50) -> KBGraph:
    return build_graph(iter_triple_file(path), min_textual_freq=min_textual_freq)


def write_triple_file(path: str | os.PathLike, graph: KBGraph) -> None:
    """Export forward edges as a triple TSV (round-trips through ingest)."""
    lines = []
    for src, rel, dst in graph.forward_edges:
        lines.append(
            f"{graph.entity_name(src)}\t{graph.relation_name(rel)}\t{graph.entity_name(dst)}\n"
        )
    _atomic_write_text(path, "".join(lines))


def _atomic_write_text(path: str | os.PathLike, text: str) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_write_bytes(path: str | os.PathLike, blob: bytes) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def save_graph(graph: KBGraph, path: str | os.PathLike) -> None:
    """Persist the graph as a versioned binary snapshot (deterministic bytes)."""
    parts = [
        _SNAPSHOT_MAGIC,
        struct.pack("<IIIQ", _SNAPSHOT_VERSION, graph.num_entities,
                    graph.num_relations // 2, graph.forward_edges.shape[0]),
    ]
    for name in graph.entity_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    for rel in graph.relations[::2]:
        raw = rel.name.encode("utf-8")
        parts.append(struct.pack("<IB", len(raw), 0 if rel.kind == KIND_KB else 1))
        parts.append(raw)
    parts.append(np.ascontiguousarray(graph.forward_edges, dtype=np.int32).tobytes())
    _atomic_write_bytes(path, b"".join(parts))


def load_graph(path: str | os.PathLike) -> KBGraph:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a graph snapshot")
    version, n_ent, n_pairs, n_fwd = struct.unpack_from("<IIIQ", blob, 4)
    if version != _SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    off = 4 + struct.calcsize("<IIIQ")

    entity_names: list[str] = []
    for _ in range(n_ent):
        (ln,) = struct.unpack_from("<I", blob, off)
        off += 4
        entity_names.append(blob[off:off + ln].decode("utf-8"))
        off += ln
    relation_specs: list[tuple[str, str]] = []
    for _ in range(n_pairs):
        ln, kind_byte = struct.unpack_from("<IB", blob, off)
        off += 5
        name = blob[off:off + ln].decode("utf-8")
        off += ln
        relation_specs.append((name, KIND_KB if kind_byte == 0 else KIND_TEXTUAL))
    edges = np.frombuffer(blob, dtype=np.int32, count=3 * n_fwd, offset=off).reshape(-1, 3)
    return graph_from_edges(entity_names, relation_specs, map(tuple, edges.tolist()))
