import numpy as np
import pytest

from pathcomp import kb, model as M
from pathcomp.evaluation import EvalRanking, average_precision
from pathcomp.extract import PathDataset, WalkConfig, collect_path_dataset
from pathcomp.model import TrainConfig, train_relation_model, train_zero_shot


def planted_rule_graph(n_chains=60, n_entities=120, seed=0):
    """Chains s -r1-> m -r2-> t with head facts, plus background edges."""
    rng = np.random.default_rng(seed)
    triples = []
    head_pairs = []
    for _ in range(n_chains):
        s, m_, t = (int(x) for x in rng.integers(0, n_entities, size=3))
        triples.append((f"e{s}", "/r1", f"e{m_}"))
        triples.append((f"e{m_}", "/r2", f"e{t}"))
        head_pairs.append((f"e{s}", f"e{t}"))
    for _ in range(3 * n_chains):
        a, b = (int(x) for x in rng.integers(0, n_entities, size=2))
        triples.append((f"e{a}", f"/noise{int(rng.integers(0, 3))}", f"e{b}"))
    # head facts for train pairs only; the held-out ones stay out of the graph
    n_train = int(0.7 * len(head_pairs))
    for s, t in head_pairs[:n_train]:
        triples.append((s, "/head", t))
    g = kb.build_graph(triples, min_textual_freq=1)
    to_ids = lambda pairs: [(g.entity_id(s), g.entity_id(t)) for s, t in pairs]
    return g, to_ids(head_pairs[:n_train]), to_ids(head_pairs[n_train:])


def quick_cfg(**kw):
    base = dict(iterations=40, batch_size=20, learning_rate=0.1,
                lr_halving_period=60, l2=1e-4, dim=8, seed=7)
    base.update(kw)
    return TrainConfig(**base)


def _extract(g, target, pairs, neg_ratio, seed):
    cfg = WalkConfig(max_len=2, exhaustive=True, seed=seed, max_paths_per_pair=200)
    return collect_path_dataset(g, target, pairs, cfg, neg_ratio=neg_ratio)


class TestTrainRelationModel:
    def test_zero_iterations_returns_initialization(self):
        g, train_pairs, _ = planted_rule_graph(30)
        head = g.relation_id("/head")
        ds = _extract(g, head, train_pairs, 1, 3)
        cfg = quick_cfg(iterations=0)
        m = train_relation_model(ds, cfg, num_relations=g.num_relations)
        fresh = M.init_model(g.num_relations, cfg, targets=[head])
        assert np.array_equal(m.vectors, fresh.vectors)
        assert np.array_equal(m.matrices[head], fresh.matrices[head])

    def test_same_seed_bitwise_identical(self):
        g, train_pairs, _ = planted_rule_graph(30)
        head = g.relation_id("/head")
        ds = _extract(g, head, train_pairs, 1, 3)
        m1 = train_relation_model(ds, quick_cfg(), num_relations=g.num_relations)
        m2 = train_relation_model(ds, quick_cfg(), num_relations=g.num_relations)
        assert np.array_equal(m1.vectors, m2.vectors)
        assert np.array_equal(m1.matrices[head], m2.matrices[head])
        assert m1.training_loss == m2.training_loss

    def test_planted_rule_recovery_quick(self):
        g, train_pairs, test_pairs = planted_rule_graph(60)
        head = g.relation_id("/head")
        train_ds = _extract(g, head, train_pairs, 1, 3)
        m = train_relation_model(train_ds, quick_cfg(), num_relations=g.num_relations)
        test_ds = _extract(g, head, test_pairs, 5, 4)
        scores, labels = [], []
        for pair, label, ptypes in test_ds.labeled_pairs():
            scores.append(M.predict_instance(m, ptypes, head))
            labels.append(label)
        ap = average_precision(EvalRanking(relation=head, scores=np.array(scores),
                                           labels=np.array(labels)))
        assert ap >= 0.9

    def test_needs_both_labels(self):
        ds = PathDataset(target=0, positives=[((0, 1), {(2,): 1})], negatives=[],
                         vocabulary={(2,): 1})
        with pytest.raises(ValueError):
            train_relation_model(ds, quick_cfg())

    def test_empty_dataset_rejected(self):
        ds = PathDataset(target=0, positives=[], negatives=[], vocabulary={})
        with pytest.raises(ValueError):
            train_relation_model(ds, quick_cfg())

    def test_loss_non_increasing_on_separable_single_path_data(self):
        # one path type that perfectly separates labels: latent selection is
        # constant and the objective should descend steadily
        positives = [((0, i), {(2, 4): 1}) for i in range(1, 21)]
        negatives = [((1, i), {(3,): 1}) for i in range(1, 21)]
        vocab = {(2, 4): 20, (3,): 20}
        ds = PathDataset(target=0, positives=positives, negatives=negatives,
                         vocabulary=vocab)
        m = train_relation_model(ds, quick_cfg(iterations=30), num_relations=6)
        losses = m.training_loss
        for t in range(5, len(losses) - 1):
            assert losses[t + 1] <= losses[t] + 1e-9, (t, losses[t], losses[t + 1])

    def test_add_composition_trains(self):
        g, train_pairs, test_pairs = planted_rule_graph(60)
        head = g.relation_id("/head")
        ds = _extract(g, head, train_pairs, 1, 3)
        m = train_relation_model(ds, quick_cfg(), composition=M.COMP_ADD,
                                 num_relations=g.num_relations)
        assert m.composition == M.COMP_ADD
        assert not m.matrices


class TestTrainZeroShot:
    def test_requires_freeze(self):
        ds = PathDataset(target=0, positives=[((0, 1), {(2,): 1})],
                         negatives=[((0, 2), {(3,): 1})], vocabulary={(2,): 1, (3,): 1})
        with pytest.raises(ValueError, match="freeze"):
            train_zero_shot([ds], np.zeros((4, 8)), quick_cfg())

    def test_vectors_never_move(self):
        pretrained = np.random.default_rng(0).normal(size=(6, 8))
        ds = PathDataset(target=0, positives=[((0, 1), {(2,): 1}), ((0, 3), {(2, 4): 1})],
                         negatives=[((0, 2), {(3,): 1})],
                         vocabulary={(2,): 1, (2, 4): 1, (3,): 1})
        cfg = quick_cfg(iterations=10, freeze_relation_vectors=True)
        m = train_zero_shot([ds], pretrained, cfg)
        assert np.array_equal(m.vectors, pretrained)
        assert m.score == M.SCORE_SOFTMAX
        assert m.candidates == (0,)

    def test_candidates_default_to_training_targets(self):
        pretrained = np.random.default_rng(1).normal(size=(8, 8))
        def mk(target):
            return PathDataset(target=target,
                               positives=[((0, 1), {(2,): 1})],
                               negatives=[((0, 2), {(3,): 1})],
                               vocabulary={(2,): 1, (3,): 1})
        cfg = quick_cfg(iterations=3, freeze_relation_vectors=True)
        m = train_zero_shot([mk(4), mk(6)], pretrained, cfg)
        assert m.candidates == (4, 6)
