"""Atomic-path classifiers, bigram extensions, and relation clustering.

The classifier route treats every path type connecting a pair as a binary
indicator feature for a logistic regression model, optionally extended with
path bigrams over start/stop-padded relation sequences. The cluster variant
replaces textual relations with k-means cluster ids before path finding,
collapsing synonymous phrases into one relation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kb
from .extract import PathDataset, PathType, derive_seed
from .kb import KBGraph, KIND_KB, KIND_TEXTUAL
from .model import TrainConfig

START_SYMBOL = -1
STOP_SYMBOL = -2

# feature keys: ("path", ptype) or ("bigram", (left, right))
FeatureKey = tuple


def path_feature_keys(paths: Iterable[PathType]) -> set:
    return {("path", tuple(p)) for p in paths}


def path_bigrams(path: PathType) -> list[tuple[int, int]]:
    """Adjacent relation pairs with start/stop padding; len(path) + 1 bigrams."""
    padded = (START_SYMBOL,) + tuple(path) + (STOP_SYMBOL,)
    return list(zip(padded[:-1], padded[1:]))


def bigram_feature_keys(paths: Iterable[PathType]) -> set:
    """Bigram indicators unioned with the plain path-type indicators."""
    keys = path_feature_keys(paths)
    for p in paths:
        for bg in path_bigrams(tuple(p)):
            keys.add(("bigram", bg))
    return keys


@dataclass
class FeatureVocab:
    """Stable feature-key -> column index mapping built from training data."""

    index: dict = field(default_factory=dict)

    @classmethod
    def build(cls, instance_paths: Sequence[Iterable[PathType]], bigrams: bool) -> "FeatureVocab":
        keys = set()
        extractor = bigram_feature_keys if bigrams else path_feature_keys
        for paths in instance_paths:
            keys |= extractor(paths)
        return cls(index={k: i for i, k in enumerate(sorted(keys))})

    def __len__(self) -> int:
        return len(self.index)


def path_type_features(paths: Iterable[PathType], vocab: FeatureVocab) -> dict:
    """Binary indicators for path types present; unseen types are dropped."""
    out = {}
    for key in path_feature_keys(paths):
        col = vocab.index.get(key)
        if col is not None:
            out[col] = 1.0
    return out


def bigram_features(paths: Iterable[PathType], vocab: FeatureVocab) -> dict:
    """Path-type indicators plus bigram indicators (a strict superset)."""
    out = {}
    for key in bigram_feature_keys(paths):
        col = vocab.index.get(key)
        if col is not None:
            out[col] = 1.0
    return out


@dataclass
class SparseLinearModel:
    weights: np.ndarray  # (n_features,)
    bias: float
    vocab: FeatureVocab
    bigrams: bool
    training_loss: list = field(default_factory=list)

    def features(self, paths: Iterable[PathType]) -> dict:
        fn = bigram_features if self.bigrams else path_type_features
        return fn(paths, self.vocab)

    def decision(self, feats: dict) -> float:
        return float(sum(self.weights[c] * v for c, v in feats.items()) + self.bias)

    def predict_proba(self, paths: Iterable[PathType]) -> float:
        from .kernels import sigmoid_scalar

        return float(sigmoid_scalar(self.decision(self.features(paths))))


def _logreg_loss_grad(X_cols, labels, weights, bias, l2):
    """Loss and gradient over one batch of sparse rows (column-index lists)."""
    from .kernels import sigmoid_scalar

    g_w = np.zeros_like(weights)
    g_b = 0.0
    loss = 0.0
    eps = 1e-12
    for cols, y in zip(X_cols, labels):
        z = bias + sum(weights[c] for c in cols)
        p = sigmoid_scalar(z)
        pc = min(max(p, eps), 1.0 - eps)
        loss += -(y * np.log(pc) + (1 - y) * np.log(1.0 - pc))
        g = p - y
        for c in cols:
            g_w[c] += g
        g_b += g
    loss += l2 * (float(weights @ weights) + bias * bias)
    g_w += 2.0 * l2 * weights
    g_b += 2.0 * l2 * bias
    return loss, g_w, g_b


def train_logreg(
    instances: Sequence[tuple[dict, int]], cfg: TrainConfig, vocab: FeatureVocab, bigrams: bool
) -> SparseLinearModel:
    """L2-regularized logistic regression with minibatch AdaGrad.

    Uses the same schedule constants as the composition models: per-epoch
    shuffling, updates every ``batch_size`` rows plus remainder, learning
    rate halved every ``lr_halving_period`` epochs.
    """
    labels = [y for _, y in instances]
    if not instances or len(set(labels)) < 2:
        raise ValueError("need at least one instance of each label")
    weights = np.zeros(len(vocab), dtype=np.float64)
    bias = 0.0
    acc_w = np.zeros_like(weights)
    acc_b = 0.0
    eps = 1e-8
    rows = [sorted(feats.keys()) for feats, _ in instances]
    ys = np.array(labels, dtype=np.float64)
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, 0x10C))
    losses = []
    n = len(instances)
    for t in range(1, cfg.iterations + 1):
        lr = cfg.learning_rate * 0.5 ** ((t - 1) // cfg.lr_halving_period)
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            loss, g_w, g_b = _logreg_loss_grad(
                [rows[i] for i in chunk], ys[chunk], weights, bias, cfg.l2
            )
            acc_w += g_w * g_w
            acc_b += g_b * g_b
            weights -= lr * g_w / (np.sqrt(acc_w) + eps)
            bias -= lr * g_b / (np.sqrt(acc_b) + eps)
            epoch_loss += loss
        losses.append(epoch_loss)
    return SparseLinearModel(
        weights=weights, bias=bias, vocab=vocab, bigrams=bigrams, training_loss=losses
    )


def train_path_classifier(
    ds: PathDataset, cfg: TrainConfig, bigrams: bool = False
) -> SparseLinearModel:
    """Fit the PRA-style classifier on a path dataset."""
    labeled = ds.labeled_pairs()
    vocab = FeatureVocab.build([ptypes for _, _, ptypes in labeled], bigrams)
    extractor = bigram_features if bigrams else path_type_features
    instances = [(extractor(ptypes, vocab), label) for _, label, ptypes in labeled]
    return train_logreg(instances, cfg, vocab, bigrams)


# ---------------------------------------------------------------------------
# k-means over relation embeddings
# ---------------------------------------------------------------------------

@dataclass
class ClusterAssignment:
    assignment: dict  # relation id -> cluster id
    centroids: np.ndarray  # (k, dim)


def kmeans(
    vectors: np.ndarray, k: int, iters: int = 50, seed: int = 0, plusplus: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm from seeded random-point initialization.

    Returns (labels, centroids). Empty clusters are re-seeded from the point
    farthest from its centroid, so all k clusters stay populated.
    """
    n = vectors.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds number of vectors ({n})")
    rng = np.random.default_rng(seed)
    if plusplus:
        centroids = _kmeanspp_init(vectors, k, rng)
    else:
        centroids = vectors[rng.choice(n, size=k, replace=False)].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dists = ((vectors[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        for c in range(k):
            members = new_labels == c
            if members.any():
                centroids[c] = vectors[members].mean(axis=0)
            else:
                farthest = int(dists[np.arange(n), new_labels].argmax())
                centroids[c] = vectors[farthest]
                new_labels[farthest] = c
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centroids


def _kmeanspp_init(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    centroids = np.empty((k, vectors.shape[1]))
    centroids[0] = vectors[rng.integers(n)]
    d2 = ((vectors - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[c] = vectors[rng.integers(n)]
        else:
            centroids[c] = vectors[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((vectors - centroids[c]) ** 2).sum(axis=1))
    return centroids


def cluster_textual_relations(
    graph: KBGraph,
    vector_names: Sequence[str],
    vectors: np.ndarray,
    k: int = 25,
    iters: int = 50,
    seed: int = 0,
    plusplus: bool = False,
) -> ClusterAssignment:
    """Cluster the graph's forward textual relations by their embeddings."""
    textual = graph.textual_forward_ids()
    if not textual:
        return ClusterAssignment(assignment={}, centroids=np.zeros((0, vectors.shape[1])))
    lookup = {n: i for i, n in enumerate(vector_names)}
    rows = []
    for rid in textual:
        name = graph.relation_name(rid)
        if name not in lookup:
            raise KeyError(f"no embedding for textual relation {name!r}")
        rows.append(vectors[lookup[name]])
    mat = np.array(rows)
    k = min(k, mat.shape[0])
    labels, centroids = kmeans(mat, k, iters=iters, seed=seed, plusplus=plusplus)
    return ClusterAssignment(
        assignment={rid: int(c) for rid, c in zip(textual, labels)}, centroids=centroids
    )


def clusterize_graph(graph: KBGraph, assignment: ClusterAssignment) -> KBGraph:
    """Replace textual relations with their cluster relation before path finding.

    KB-schema relations keep their identity. Inverse structure is preserved:
    the cluster of an inverse relation is the inverse of the cluster
    relation. Synonym edges that collapse onto the same cluster edge are
    stored once.
    """
    for rid in graph.textual_forward_ids():
        if rid not in assignment.assignment:
            raise KeyError(
                f"cluster assignment missing textual relation {graph.relation_name(rid)!r}"
            )

    relation_specs: list[tuple[str, str]] = []
    fwd_map: dict[int, int] = {}  # old forward id -> new forward id
    spec_index: dict[str, int] = {}

    def new_forward(name: str, kind: str) -> int:
        if name not in spec_index:
            spec_index[name] = 2 * len(relation_specs)
            relation_specs.append((name, kind))
        return spec_index[name]

    for rel in graph.relations:
        if rel.is_inverse:
            continue
        if rel.kind == KIND_KB:
            fwd_map[rel.id] = new_forward(rel.name, KIND_KB)
        else:
            cid = assignment.assignment[rel.id]
            fwd_map[rel.id] = new_forward(f"cluster:{cid}", KIND_TEXTUAL)

    edges = [(int(s), fwd_map[int(r)], int(t)) for s, r, t in graph.forward_edges]
    return kb.graph_from_edges(list(graph.entity_names), relation_specs, edges)


def map_relation_through_clusters(graph: KBGraph, clustered: KBGraph,
                                  assignment: ClusterAssignment, rid: int) -> int:
    """Relation id in the clustered graph corresponding to ``rid`` (inverse-aware)."""
    forward = rid & ~1
    rel = graph.relation(forward)
    if rel.kind == KIND_KB:
        new_fwd = clustered.relation_id(rel.name)
    else:
        new_fwd = clustered.relation_id(f"cluster:{assignment.assignment[forward]}")
    return new_fwd | (rid & 1)


def save_cluster_assignment(path, graph: KBGraph, assignment: ClusterAssignment) -> None:
    lines = [
        f"{graph.relation_name(rid)}\t{cid}\n"
        for rid, cid in sorted(assignment.assignment.items())
    ]
    kb._atomic_write_text(path, "".join(lines))


def load_cluster_assignment(path, graph: KBGraph) -> ClusterAssignment:
    assignment = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            if not raw.strip():
                continue
            name, cid = raw.rstrip("\n").split("\t")
            assignment[graph.relation_id(name)] = int(cid)
    return ClusterAssignment(assignment=assignment, centroids=np.zeros((0, 0)))


# ---------------------------------------------------------------------------
# linear model persistence
# ---------------------------------------------------------------------------

def _feature_key_to_string(key: FeatureKey, graph: KBGraph) -> str:
    from .extract import join_path_names

    kind, payload = key
    if kind == "path":
        return "P:" + join_path_names([graph.relation_name(r) for r in payload])
    left, right = payload
    lname = "<START>" if left == START_SYMBOL else graph.relation_name(left)
    rname = "<STOP>" if right == STOP_SYMBOL else graph.relation_name(right)
    return "B:" + join_path_names([lname, rname])


def _feature_key_from_string(text: str, graph: KBGraph) -> FeatureKey:
    from .extract import split_path_string

    kind, _, payload = text.partition(":")
    names = split_path_string(payload)
    if kind == "P":
        return ("path", tuple(graph.relation_id(n) for n in names))
    if kind != "B" or len(names) != 2:
        raise ValueError(f"bad feature string {text!r}")

    def rel_of(name):
        if name == "<START>":
            return START_SYMBOL
        if name == "<STOP>":
            return STOP_SYMBOL
        return graph.relation_id(name)

    return ("bigram", (rel_of(names[0]), rel_of(names[1])))


def save_linear_model(path, lm: SparseLinearModel, graph: KBGraph) -> None:
    """Text dump: bias line, then feature_string<TAB>weight per feature."""
    bias_tag = "<BIAS:bigrams>" if lm.bigrams else "<BIAS>"
    lines = [f"{bias_tag}\t{float(lm.bias)!r}\n"]
    for key, col in sorted(lm.vocab.index.items(), key=lambda kv: kv[1]):
        lines.append(f"{_feature_key_to_string(key, graph)}\t{float(lm.weights[col])!r}\n")
    kb._atomic_write_text(path, "".join(lines))


def load_linear_model(path, graph: KBGraph) -> SparseLinearModel:
    bias = 0.0
    bigrams = False
    keys = []
    weights = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            if not raw.strip():
                continue
            name, value = raw.rstrip("\n").split("\t")
            if name.startswith("<BIAS"):
                bias = float(value)
                bigrams = name == "<BIAS:bigrams>"
                continue
            keys.append(_feature_key_from_string(name, graph))
            weights.append(float(value))
    vocab = FeatureVocab(index={k: i for i, k in enumerate(keys)})
    return SparseLinearModel(
        weights=np.array(weights, dtype=np.float64), bias=bias, vocab=vocab, bigrams=bigrams
    )
