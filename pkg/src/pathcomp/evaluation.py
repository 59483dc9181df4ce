"""Ranking metrics, rank-sum ensembling, and paired significance testing.

Average precision is computed per target relation over a pool of scored
positive and negative test facts, and MAP macro-averages over relations.
Two models are combined by summing each fact's ascending-order ranks. The
significance test is a two-sided sign-flip permutation test on paired
per-relation AP differences (the stand-in test; reports label it as such).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kb import KBGraph, _atomic_write_text


@dataclass
class EvalRanking:
    """Scored, labeled test facts for one target relation."""

    relation: int
    scores: np.ndarray  # float64
    labels: np.ndarray  # int, 0/1
    fact_ids: np.ndarray | None = None  # defaults to positional ids

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must align")
        if self.fact_ids is None:
            self.fact_ids = np.arange(self.scores.shape[0], dtype=np.int64)
        else:
            self.fact_ids = np.asarray(self.fact_ids, dtype=np.int64)
            if len(set(self.fact_ids.tolist())) != self.fact_ids.shape[0]:
                raise ValueError("fact ids must be unique")


def average_precision(ranking: EvalRanking) -> float:
    """Mean over positive ranks of (positives seen so far / rank).

    Sorting is by descending score with ties broken by ascending fact id,
    so results are reproducible under score ties.
    """
    n_pos = int(ranking.labels.sum())
    if n_pos == 0:
        raise ValueError("average precision undefined without positives")
    order = np.lexsort((ranking.fact_ids, -ranking.scores))
    sorted_labels = ranking.labels[order]
    hits = np.cumsum(sorted_labels)
    ranks = np.arange(1, sorted_labels.shape[0] + 1)
    precisions = hits[sorted_labels == 1] / ranks[sorted_labels == 1]
    return float(precisions.mean())


def mean_average_precision(rankings: Sequence[EvalRanking]) -> float:
    """Unweighted mean of per-relation AP (macro average over relation types)."""
    if not rankings:
        raise ValueError("no rankings")
    return float(np.mean([average_precision(r) for r in rankings]))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """Ascending 1..n ranks with ties averaged."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.shape[0]:
        j = i
        while j + 1 < scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_sum_ensemble(scores_a: np.ndarray, scores_b: np.ndarray) -> np.ndarray:
    """Combined score per fact: sum of ascending-order ranks in both models.

    Ranks are 1..n by ascending score with ties averaged; a higher combined
    score is a stronger prediction.
    """
    scores_a = np.asarray(scores_a, dtype=np.float64)
    scores_b = np.asarray(scores_b, dtype=np.float64)
    if scores_a.shape != scores_b.shape:
        raise ValueError("ensemble inputs must cover the same facts")
    return _average_ranks(scores_a) + _average_ranks(scores_b)


def paired_permutation_test(
    ap_a: Sequence[float],
    ap_b: Sequence[float],
    permutations: int = 10000,
    seed: int = 0,
) -> float:
    """Two-sided sign-flip permutation test on paired AP differences.

    Exact enumeration of all 2^n sign assignments when n <= 20, Monte Carlo
    with the given permutation count otherwise.
    """
    a = np.asarray(ap_a, dtype=np.float64)
    b = np.asarray(ap_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired AP lists must have equal length")
    diffs = a - b
    n = diffs.shape[0]
    observed = abs(diffs.mean())
    if n <= 20:
        hits = 0
        total = 1 << n
        chunk = 1 << 16
        idx = np.arange(n, dtype=np.uint64)
        for start in range(0, total, chunk):
            codes = np.arange(start, min(start + chunk, total), dtype=np.uint64)
            signs = (((codes[:, None] >> idx[None, :]) & 1) * 2 - 1).astype(np.float64)
            stats = np.abs(signs @ diffs) / n
            hits += int((stats >= observed - 1e-15).sum())
        return hits / total
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=(permutations, n)) * 2 - 1
    stats = np.abs(signs @ diffs) / n
    hits = int((stats >= observed - 1e-15).sum())
    return (1 + hits) / (1 + permutations)


# ---------------------------------------------------------------------------
# prediction records and report files
# ---------------------------------------------------------------------------

@dataclass
class PredictionSet:
    """Scored test facts grouped by relation, in file order."""

    # relation id -> list of (source, target, label, score)
    by_relation: dict = field(default_factory=dict)

    def add(self, relation: int, source: int, target: int, label: int, score: float):
        self.by_relation.setdefault(relation, []).append((source, target, label, score))

    def rankings(self) -> list[EvalRanking]:
        out = []
        for rel in sorted(self.by_relation):
            rows = self.by_relation[rel]
            out.append(
                EvalRanking(
                    relation=rel,
                    scores=np.array([r[3] for r in rows]),
                    labels=np.array([r[2] for r in rows]),
                )
            )
        return out

    def per_relation_ap(self) -> dict:
        return {r.relation: average_precision(r) for r in self.rankings()}


def save_predictions(path, preds: PredictionSet, graph: KBGraph) -> None:
    lines = []
    for rel in sorted(preds.by_relation):
        rel_name = graph.relation_name(rel)
        for source, target, label, score in preds.by_relation[rel]:
            lines.append(
                f"{rel_name}\t{graph.entity_name(source)}\t{graph.entity_name(target)}"
                f"\t{label}\t{score!r}\n"
            )
    _atomic_write_text(path, "".join(lines))


def load_predictions(path, graph: KBGraph) -> PredictionSet:
    preds = PredictionSet()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            fields = raw.rstrip("\n").split("\t")
            if len(fields) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields")
            rel_name, src, dst, label, score = fields
            preds.add(
                graph.relation_id(rel_name),
                graph.entity_id(src),
                graph.entity_id(dst),
                int(label),
                float(score),
            )
    return preds


def ensemble_predictions(a: PredictionSet, b: PredictionSet) -> PredictionSet:
    """Rank-sum combine two prediction sets over identical fact ids, per relation."""
    if set(a.by_relation) != set(b.by_relation):
        raise ValueError("prediction sets cover different relations")
    out = PredictionSet()
    for rel in sorted(a.by_relation):
        rows_a = a.by_relation[rel]
        rows_b = b.by_relation[rel]
        key = lambda row: (row[0], row[1], row[2])
        if sorted(map(key, rows_a)) != sorted(map(key, rows_b)):
            raise ValueError(f"misaligned fact ids for relation {rel}")
        lookup_b = {key(row): row[3] for row in rows_b}
        scores_a = np.array([row[3] for row in rows_a])
        scores_b = np.array([lookup_b[key(row)] for row in rows_a])
        combined = rank_sum_ensemble(scores_a, scores_b)
        for row, score in zip(rows_a, combined):
            out.add(rel, row[0], row[1], row[2], float(score))
    return out


def write_report(
    path,
    preds: PredictionSet,
    graph: KBGraph,
    compare: PredictionSet | None = None,
    permutations: int = 10000,
    seed: int = 0,
) -> dict:
    """Aligned per-relation AP table plus machine-readable key-value records.

    With ``compare`` given, appends a paired sign-flip permutation test
    between the two prediction sets' per-relation APs.
    """
    aps = preds.per_relation_ap()
    map_score = float(np.mean(list(aps.values())))
    named = sorted((graph.relation_name(rel), ap) for rel, ap in aps.items())
    width = max(len(name) for name, _ in named)

    lines = [f"{'relation'.ljust(width)}  {'AP':>8}\n"]
    for name, ap in named:
        lines.append(f"{name.ljust(width)}  {ap:8.4f}\n")
    lines.append(f"\nMAP {map_score:.4f} over {len(named)} relations\n")

    result = {"map": map_score, "relations": len(named)}
    p_value = None
    if compare is not None:
        aps_b = compare.per_relation_ap()
        if set(aps_b) != set(aps):
            raise ValueError("compare predictions cover different relations")
        keys = sorted(aps)
        p_value = paired_permutation_test(
            [aps[k] for k in keys], [aps_b[k] for k in keys], permutations, seed
        )
        map_b = float(np.mean(list(aps_b.values())))
        lines.append(
            f"compare MAP {map_b:.4f}; paired sign-flip permutation test p={p_value:.6g}\n"
        )
        result["compare_map"] = map_b
        result["p_value"] = p_value

    lines.append("\n")
    for name, ap in named:
        lines.append(f"ap\t{name}\t{ap!r}\n")
    lines.append(f"map\t{map_score!r}\n")
    if p_value is not None:
        lines.append(f"pvalue\tsign-flip-permutation\t{p_value!r}\n")
    _atomic_write_text(path, "".join(lines))
    return result
