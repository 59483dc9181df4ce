"""Synthetic knowledge bases with planted multi-hop inference rules.

Desk-scale stand-in for a real corpus: entity chains realize each rule's
body, head facts are added for every body-connected pair (minus noise
drops), and distractor edges provide background connectivity so corrupted
pairs still have paths. Relation synonym groups share a planted embedding
direction, giving models with pre-trained vectors the semantic
neighborhoods they rely on.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kb
from .extract import derive_seed
from .kb import INVERSE_SUFFIX, KIND_KB, KIND_TEXTUAL, _atomic_write_text

_FORBIDDEN = ("\t", ";", "|", "\n")


@dataclass
class RuleSpec:
    head: str
    body: tuple  # slot names: declared relations or synonym-group labels
    noise: float = 0.0

    def __post_init__(self):
        if not 2 <= len(self.body) <= 4:
            raise ValueError("rule bodies must have 2 to 4 slots")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must be in [0, 1)")


@dataclass
class SynonymGroup:
    label: str
    members: tuple


@dataclass
class SynthConfig:
    num_entities: int
    relations: list  # (name, kind) pairs
    rules: list  # RuleSpec
    synonym_groups: list = field(default_factory=list)  # SynonymGroup
    negatives_ratio: int = 1
    seed: int = 0
    dim: int = 50
    chains_per_rule: int = 100
    distractor_multiplier: float = 3.0

    def __post_init__(self):
        if self.num_entities < 3:
            raise ValueError("need at least 3 entities")
        if not self.rules:
            raise ValueError("need at least one rule")
        if self.negatives_ratio < 1:
            raise ValueError("negatives_ratio must be >= 1")


@dataclass
class SynthManifest:
    config: SynthConfig
    entity_names: list
    graph_triples: list  # (src, relation, dst) canonical names; no head facts
    head_facts: dict  # head relation name -> list of (src, dst) entity names
    rules: list  # RuleSpec with canonical names
    vector_names: list
    vectors: np.ndarray
    splits: dict = field(default_factory=dict)  # head -> {"train": [...], ...}


def _canonical(name: str, kind: str) -> str:
    for ch in _FORBIDDEN:
        if ch in name:
            raise ValueError(f"relation name {name!r} contains forbidden character")
    canon, detected = kb.canonical_relation_name(name)
    if detected != kind:
        raise ValueError(f"relation {name!r} declared {kind} but parses as {detected}")
    return canon


def _plant_vectors(
    canonical_names: Sequence[str],
    groups: dict,
    dim: int,
    seed: int,
) -> tuple[list, np.ndarray]:
    """Unit group directions plus small per-member gaussian offsets (sigma 0.05).

    Every relation gets a vector for both its forward and inverse name;
    inverse directions are planted independently per group.
    """
    rng = np.random.default_rng(derive_seed(seed, 0x7EC70))

    def direction() -> np.ndarray:
        v = rng.normal(size=dim)
        return v / np.linalg.norm(v)

    names: list = []
    rows: list = []
    group_dirs: dict = {}
    for name in canonical_names:
        for variant in (name, name + INVERSE_SUFFIX):
            label = groups.get(name)
            if label is not None:
                key = (label, variant.endswith(INVERSE_SUFFIX))
                if key not in group_dirs:
                    group_dirs[key] = direction()
                base = group_dirs[key]
                vec = base + 0.05 * rng.normal(size=dim)
            else:
                vec = direction()
            names.append(variant)
            rows.append(vec)
    return names, np.array(rows)


def generate_synthetic_kb(cfg: SynthConfig) -> SynthManifest:
    """Sample chains for each rule, derive head facts, plant embeddings.

    Head facts cover every pair connected by a full body path (any synonym
    combination), each kept with probability 1 - noise, so at noise 0 the
    body path logically implies the head. Deterministic per seed.
    """
    declared = {}
    for name, kind in cfg.relations:
        canon = _canonical(name, kind)
        if canon in declared:
            raise ValueError(f"relation {name!r} declared twice")
        declared[canon] = kind

    groups: dict = {}  # member canonical name -> group label
    members_of: dict = {}
    for g in cfg.synonym_groups:
        members = tuple(_canonical(m, declared_kind_of(declared, m)) for m in g.members)
        for m in members:
            groups[m] = g.label
        members_of[g.label] = members

    rules: list = []
    body_relations: set = set()
    heads: set = set()
    for rule in cfg.rules:
        head = _canonical(rule.head, declared_kind_of(declared, rule.head))
        slots = []
        for slot in rule.body:
            if slot in members_of:
                slots.append(slot)
                body_relations.update(members_of[slot])
            else:
                canon = _canonical(slot, declared_kind_of(declared, slot))
                slots.append(canon)
                body_relations.add(canon)
        heads.add(head)
        rules.append(RuleSpec(head=head, body=tuple(slots), noise=rule.noise))

    # distractor relations: declared relations unused by rules, else synthetic ones
    distractor_pool = [
        name for name in declared if name not in body_relations and name not in heads
    ]
    if not distractor_pool:
        distractor_pool = ["/distractor/0", "/distractor/1", "/distractor/2"]
        for name in distractor_pool:
            declared[name] = KIND_KB

    entity_names = [f"e{i:05d}" for i in range(cfg.num_entities)]
    rng_chain = np.random.default_rng(derive_seed(cfg.seed, 0xC0A1))
    edges: set = set()
    for rule in rules:
        member_lists = [
            members_of.get(slot, (slot,)) for slot in rule.body
        ]
        for _ in range(cfg.chains_per_rule):
            nodes = rng_chain.integers(0, cfg.num_entities, size=len(rule.body) + 1)
            for i, members in enumerate(member_lists):
                rel = members[int(rng_chain.integers(0, len(members)))]
                edges.add((int(nodes[i]), rel, int(nodes[i + 1])))

    n_rule_edges = len(edges)
    rng_noise_edges = np.random.default_rng(derive_seed(cfg.seed, 0xD157))
    n_distract = int(round(cfg.distractor_multiplier * n_rule_edges))
    attempts = 0
    while len(edges) < n_rule_edges + n_distract and attempts < 50 * (n_distract + 1):
        attempts += 1
        s = int(rng_noise_edges.integers(0, cfg.num_entities))
        t = int(rng_noise_edges.integers(0, cfg.num_entities))
        rel = distractor_pool[int(rng_noise_edges.integers(0, len(distractor_pool)))]
        edges.add((s, rel, t))

    # adjacency per relation name, for body-path joins
    adj: dict = {}
    for s, rel, t in edges:
        adj.setdefault(rel, {}).setdefault(s, set()).add(t)

    head_facts: dict = {h: [] for h in sorted(heads)}
    rng_drop = np.random.default_rng(derive_seed(cfg.seed, 0xD20B))
    connected_by_head: dict = {h: set() for h in heads}
    for rule in rules:
        member_lists = [members_of.get(slot, (slot,)) for slot in rule.body]
        reach: dict = {}
        for members in member_lists:
            step: dict = {}
            for rel in members:
                for s, ts in adj.get(rel, {}).items():
                    step.setdefault(s, set()).update(ts)
            if not reach:
                reach = {s: set(ts) for s, ts in step.items()}
            else:
                nxt: dict = {}
                for s, mids in reach.items():
                    for m in mids:
                        if m in step:
                            nxt.setdefault(s, set()).update(step[m])
                reach = nxt
        pairs = sorted((s, t) for s, ts in reach.items() for t in ts)
        for s, t in pairs:
            if (s, t) in connected_by_head[rule.head]:
                continue
            connected_by_head[rule.head].add((s, t))
            if rng_drop.random() < 1.0 - rule.noise:
                head_facts[rule.head].append((entity_names[s], entity_names[t]))

    graph_triples = sorted(
        (entity_names[s], rel, entity_names[t]) for s, rel, t in edges
    )
    all_names = sorted(declared)
    vector_names, vectors = _plant_vectors(all_names, groups, cfg.dim, cfg.seed)
    return SynthManifest(
        config=cfg,
        entity_names=entity_names,
        graph_triples=graph_triples,
        head_facts=head_facts,
        rules=rules,
        vector_names=vector_names,
        vectors=vectors,
    )


def declared_kind_of(declared: dict, name: str) -> str:
    """Kind of a declared relation, accepting raw or canonical spellings."""
    if name in declared:
        return declared[name]
    if name.startswith("/"):
        return KIND_KB
    canon = kb.canonical_relation_name(name)[0]
    if canon in declared:
        return declared[canon]
    raise ValueError(f"relation {name!r} is not declared")


def split_facts(
    manifest: SynthManifest, ratios: tuple, seed: int = 0
) -> dict:
    """Partition head facts per relation into train/dev/test lists.

    Ratios must sum to 1. The result is stored on the manifest and returned;
    downstream graph assembly keeps only train head facts, so dev/test facts
    stay hidden from path extraction.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    train_r, dev_r, _ = ratios
    splits: dict = {}
    for idx, head in enumerate(sorted(manifest.head_facts)):
        facts = list(manifest.head_facts[head])
        rng = np.random.default_rng(derive_seed(seed, 0x591D, idx))
        order = rng.permutation(len(facts))
        n = len(facts)
        n_train = int(round(train_r * n))
        n_dev = int(round((train_r + dev_r) * n)) - n_train
        shuffled = [facts[i] for i in order]
        splits[head] = {
            "train": shuffled[:n_train],
            "dev": shuffled[n_train : n_train + n_dev],
            "test": shuffled[n_train + n_dev :],
        }
    manifest.splits = splits
    return splits


def training_graph_triples(manifest: SynthManifest) -> list:
    """Graph edges plus train-split head facts (all head facts if unsplit)."""
    triples = list(manifest.graph_triples)
    if manifest.splits:
        for head in sorted(manifest.splits):
            for s, t in manifest.splits[head]["train"]:
                triples.append((s, head, t))
    else:
        for head in sorted(manifest.head_facts):
            for s, t in manifest.head_facts[head]:
                triples.append((s, head, t))
    return triples


# ---------------------------------------------------------------------------
# file emission / parsing
# ---------------------------------------------------------------------------

def write_manifest_files(manifest: SynthManifest, out_dir) -> dict:
    """Emit graph.tsv, vectors.txt and manifest.kv into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "graph": os.path.join(out_dir, "graph.tsv"),
        "vectors": os.path.join(out_dir, "vectors.txt"),
        "manifest": os.path.join(out_dir, "manifest.kv"),
    }
    lines = [f"{s}\t{r}\t{t}\n" for s, r, t in training_graph_triples(manifest)]
    _atomic_write_text(paths["graph"], "".join(lines))

    from .model import save_vectors_text

    save_vectors_text(paths["vectors"], manifest.vector_names, manifest.vectors)

    kv = [
        f"config\tseed\t{manifest.config.seed}\n",
        f"config\tnum_entities\t{manifest.config.num_entities}\n",
        f"config\tdim\t{manifest.config.dim}\n",
        f"config\tnegatives_ratio\t{manifest.config.negatives_ratio}\n",
    ]
    for rule in manifest.rules:
        kv.append(f"rule\t{rule.head}\t{rule.noise!r}\t{'|'.join(rule.body)}\n")
    if manifest.splits:
        for head in sorted(manifest.splits):
            for split_name in ("train", "dev", "test"):
                for s, t in manifest.splits[head][split_name]:
                    kv.append(f"split\t{head}\t{s}\t{t}\t{split_name}\n")
    else:
        for head in sorted(manifest.head_facts):
            for s, t in manifest.head_facts[head]:
                kv.append(f"split\t{head}\t{s}\t{t}\ttrain\n")
    _atomic_write_text(paths["manifest"], "".join(kv))
    return paths


def read_split_records(manifest_path) -> dict:
    """{head relation name: {split: [(src, dst), ...]}} from a manifest.kv file."""
    out: dict = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for raw in fh:
            if not raw.startswith("split\t"):
                continue
            _, head, s, t, split_name = raw.rstrip("\n").split("\t")
            out.setdefault(head, {}).setdefault(split_name, []).append((s, t))
    return out


def load_synth_config(path, overrides: dict | None = None) -> SynthConfig:
    """Parse the flat key=value synth description.

    Repeatable keys: ``relation=<name>|<kind>``,
    ``group=<label>|<member>|<member>...``,
    ``rule=<head>|<noise>|<slot>|<slot>...``. Scalar keys: entities, dim,
    seed, chains, distractors, neg-ratio.
    """
    scalars: dict = {}
    relations: list = []
    rule_specs: list = []
    group_specs: list = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "relation":
                name, _, kind = value.rpartition("|")
                relations.append((name, kind))
            elif key == "group":
                parts = value.split("|")
                group_specs.append(SynonymGroup(label=parts[0], members=tuple(parts[1:])))
            elif key == "rule":
                parts = value.split("|")
                rule_specs.append(
                    RuleSpec(head=parts[0], body=tuple(parts[2:]), noise=float(parts[1]))
                )
            else:
                scalars[key] = value
    if overrides:
        scalars.update(overrides)
    return SynthConfig(
        num_entities=int(scalars.get("entities", 300)),
        relations=relations,
        rules=rule_specs,
        synonym_groups=group_specs,
        negatives_ratio=int(scalars.get("neg-ratio", 1)),
        seed=int(scalars.get("seed", 0)),
        dim=int(scalars.get("dim", 50)),
        chains_per_rule=int(scalars.get("chains", 100)),
        distractor_multiplier=float(scalars.get("distractors", 3.0)),
    )
