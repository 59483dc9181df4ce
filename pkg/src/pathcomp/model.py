"""Recurrent composition of relation vectors, scoring, and training.

A path's vector is built left to right: the first relation's vector seeds
the state, and each further relation is folded in through
``sigmoid(W @ [state; relation_vector; 1])`` with a d x (2d+1) composition
matrix. Facts are scored by a sigmoid over the dot product between the
composed path vector and the target relation's vector (or a softmax over a
candidate relation set in the shared zero-shot variant). Training follows a
minibatch AdaGrad loop where the single predictive path per instance is a
latent variable resolved by argmax under the current parameters.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .extract import PathDataset, PathType, derive_seed
from .kb import KBGraph, _atomic_write_bytes, _atomic_write_text

COMP_PER_RELATION = "per_relation"
COMP_SHARED = "shared"
COMP_ADD = "add"
SCORE_SIGMOID = "sigmoid"
SCORE_SOFTMAX = "softmax"

PROB_EPS = 1e-12

_MODEL_MAGIC = b"PRNN"
_MODEL_VERSION = 1
_COMP_CODES = {COMP_PER_RELATION: 0, COMP_SHARED: 1, COMP_ADD: 2}
_SCORE_CODES = {SCORE_SIGMOID: 0, SCORE_SOFTMAX: 1}


@dataclass
class TrainConfig:
    iterations: int = 150
    batch_size: int = 20
    learning_rate: float = 0.1
    lr_halving_period: int = 60
    l2: float = 1e-4
    dim: int = 50
    seed: int = 0
    freeze_relation_vectors: bool = False
    shuffle: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1 or self.lr_halving_period < 1 or self.dim < 1:
            raise ValueError("batch_size, lr_halving_period and dim must be positive")
        if self.learning_rate <= 0 or self.l2 < 0:
            raise ValueError("learning_rate must be > 0 and l2 >= 0")


@dataclass
class FactInstance:
    pair: tuple[int, int]
    target: int
    label: int
    paths: tuple[PathType, ...]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if not self.paths:
            raise ValueError("instance has no paths")


@dataclass
class RnnModel:
    dim: int
    vectors: np.ndarray  # (num_relations, dim) float64
    composition: str = COMP_PER_RELATION
    matrices: dict = field(default_factory=dict)  # target relation id -> (d, 2d+1)
    shared_matrix: np.ndarray | None = None
    score: str = SCORE_SIGMOID
    candidates: tuple | None = None  # softmax support, relation ids
    relation_names: list | None = None
    training_loss: list = field(default_factory=list)

    def matrix_for(self, target: int | None) -> np.ndarray | None:
        if self.composition == COMP_ADD:
            return None
        if self.composition == COMP_SHARED:
            return self.shared_matrix
        if target not in self.matrices:
            raise KeyError(f"no composition matrix for relation {target}")
        return self.matrices[target]

    def num_relations(self) -> int:
        return self.vectors.shape[0]

    def relation_label(self, rid: int) -> str:
        if self.relation_names and 0 <= rid < len(self.relation_names):
            return self.relation_names[rid]
        return str(rid)


@dataclass
class Gradients:
    vec: np.ndarray
    mats: dict
    shared: np.ndarray | None

    @classmethod
    def zeros_like(cls, model: RnnModel) -> "Gradients":
        return cls(
            vec=np.zeros_like(model.vectors),
            mats={t: np.zeros_like(w) for t, w in model.matrices.items()},
            shared=None if model.shared_matrix is None else np.zeros_like(model.shared_matrix),
        )


@dataclass
class AdaGradState:
    vec: np.ndarray
    mats: dict
    shared: np.ndarray | None
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, model: RnnModel, epsilon: float = 1e-8) -> "AdaGradState":
        return cls(
            vec=np.zeros_like(model.vectors),
            mats={t: np.zeros_like(w) for t, w in model.matrices.items()},
            shared=None if model.shared_matrix is None else np.zeros_like(model.shared_matrix),
            epsilon=epsilon,
        )


def _uniform_init(rng: np.random.Generator, shape, dim: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=shape)


def init_model(
    num_relations: int,
    cfg: TrainConfig,
    composition: str = COMP_PER_RELATION,
    score: str = SCORE_SIGMOID,
    targets: Sequence[int] = (),
    init_vectors: np.ndarray | None = None,
    candidates: Sequence[int] | None = None,
) -> RnnModel:
    """Seeded random initialization; entries uniform in [-1/sqrt(d), 1/sqrt(d)]."""
    d = cfg.dim
    rng = np.random.default_rng(cfg.seed)
    if init_vectors is not None:
        if init_vectors.shape[1] != d:
            raise ValueError(
                f"pre-trained vectors have dim {init_vectors.shape[1]}, expected {d}"
            )
        num_relations = max(num_relations, init_vectors.shape[0])
    vectors = _uniform_init(rng, (num_relations, d), d)
    if init_vectors is not None:
        vectors[: init_vectors.shape[0]] = init_vectors
    matrices = {}
    shared = None
    if composition == COMP_PER_RELATION:
        for t in targets:
            matrices[int(t)] = _uniform_init(rng, (d, 2 * d + 1), d)
    elif composition == COMP_SHARED:
        shared = _uniform_init(rng, (d, 2 * d + 1), d)
    elif composition != COMP_ADD:
        raise ValueError(f"unknown composition {composition!r}")
    return RnnModel(
        dim=d,
        vectors=vectors,
        composition=composition,
        matrices=matrices,
        shared_matrix=shared,
        score=score,
        candidates=None if candidates is None else tuple(int(c) for c in candidates),
    )


# ---------------------------------------------------------------------------
# composition and scoring
# ---------------------------------------------------------------------------

def _paths_to_arrays(paths: Sequence[PathType]) -> tuple[np.ndarray, np.ndarray]:
    offsets = np.zeros(len(paths) + 1, dtype=np.int64)
    for i, p in enumerate(paths):
        offsets[i + 1] = offsets[i] + len(p)
    rels = np.fromiter(
        (r for p in paths for r in p), dtype=np.int32, count=int(offsets[-1])
    )
    return rels, offsets


def _check_coverage(model: RnnModel, paths: Iterable[PathType], target: int | None = None):
    limit = model.num_relations()
    for p in paths:
        for r in p:
            if not 0 <= r < limit:
                raise KeyError(f"no vector for relation {model.relation_label(r)}")
    if target is not None and not 0 <= target < limit:
        raise KeyError(f"no vector for relation {model.relation_label(target)}")


def compose_paths(
    paths: Sequence[PathType], model: RnnModel, target: int | None = None
) -> np.ndarray:
    """Composed vectors for a batch of paths, one row per path."""
    _check_coverage(model, paths, target)
    rels, offsets = _paths_to_arrays(paths)
    if model.composition == COMP_ADD:
        return kernels.add_compose_batch(model.vectors, rels, offsets)
    W = model.matrix_for(target)
    return kernels.rnn_compose_batch(model.vectors, W, rels, offsets)


def compose_path(path: PathType, model: RnnModel, target: int | None = None) -> np.ndarray:
    """Vector for one path; a length-1 path returns the relation vector itself."""
    return compose_paths([tuple(path)], model, target)[0]


def compose_add(path: PathType, model: RnnModel) -> np.ndarray:
    """Additive-composition variant: h_i = sigmoid(h_{i-1} + v_i)."""
    _check_coverage(model, [path])
    rels, offsets = _paths_to_arrays([tuple(path)])
    return kernels.add_compose_batch(model.vectors, rels, offsets)[0]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def score_fact(path_vec: np.ndarray, target: int, model: RnnModel) -> float:
    """Probability that the fact holds given the composed path vector."""
    if model.score == SCORE_SIGMOID:
        return float(kernels.sigmoid_scalar(float(path_vec @ model.vectors[target])))
    if model.candidates is None:
        raise ValueError("softmax scoring requires a candidate relation set")
    cand = np.asarray(model.candidates, dtype=np.int64)
    probs = _softmax(model.vectors[cand] @ path_vec)
    where = np.nonzero(cand == target)[0]
    if where.size == 0:
        raise ValueError(f"target {model.relation_label(target)} not in candidate set")
    return float(probs[where[0]])


def select_latent_path(
    paths: Sequence[PathType], model: RnnModel, target: int
) -> PathType:
    """The path whose composed vector has maximal dot product with the target.

    Ties break toward the lexicographically smallest relation-id tuple; the
    same rule applies to positive and negative instances.
    """
    ordered = sorted(tuple(p) for p in paths)
    if not ordered:
        raise ValueError("empty path set")
    H = compose_paths(ordered, model, target)
    dots = H @ model.vectors[target]
    return ordered[int(np.argmax(dots))]


def _select_with_vec(
    ordered_paths: Sequence[PathType],
    rels: np.ndarray,
    offsets: np.ndarray,
    model: RnnModel,
    target: int,
) -> tuple[PathType, np.ndarray]:
    if model.composition == COMP_ADD:
        H = kernels.add_compose_batch(model.vectors, rels, offsets)
    else:
        H = kernels.rnn_compose_batch(model.vectors, model.matrix_for(target), rels, offsets)
    j = int(np.argmax(H @ model.vectors[target]))
    return ordered_paths[j], H[j]


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

def _clamp(p: float) -> float:
    return min(max(p, PROB_EPS), 1.0 - PROB_EPS)


def _instance_loss_grad(
    inst: FactInstance,
    mu: PathType,
    model: RnnModel,
    grads: Gradients | None,
) -> float:
    """Cross-entropy for one instance; accumulates parameter gradients in place."""
    h = compose_path(mu, model, inst.target)
    y = inst.label
    if model.score == SCORE_SIGMOID:
        v_t = model.vectors[inst.target]
        p = kernels.sigmoid_scalar(float(h @ v_t))
        pc = _clamp(p)
        loss = -(y * np.log(pc) + (1 - y) * np.log(1.0 - pc))
        if grads is None:
            return float(loss)
        g = p - y  # d loss / d logit
        grads.vec[inst.target] += g * h
        d_h = g * v_t
    else:
        if model.candidates is None:
            raise ValueError("softmax scoring requires a candidate relation set")
        cand = np.asarray(model.candidates, dtype=np.int64)
        where = np.nonzero(cand == inst.target)[0]
        if where.size == 0:
            raise ValueError(f"target {model.relation_label(inst.target)} not in candidates")
        ti = int(where[0])
        probs = _softmax(model.vectors[cand] @ h)
        p = float(probs[ti])
        pc = _clamp(p)
        loss = -(y * np.log(pc) + (1 - y) * np.log(1.0 - pc))
        if grads is None:
            return float(loss)
        if y == 1:
            d_logits = probs.copy()
            d_logits[ti] -= 1.0
        else:
            onehot = np.zeros_like(probs)
            onehot[ti] = 1.0
            d_logits = p * (onehot - probs) / max(1.0 - p, PROB_EPS)
        np.add.at(grads.vec, cand, d_logits[:, None] * h[None, :])
        d_h = model.vectors[cand].T @ d_logits

    path = np.asarray(mu, dtype=np.int32)
    if model.composition == COMP_ADD:
        kernels.add_path_backward(model.vectors, path, d_h, grads.vec)
    else:
        W = model.matrix_for(inst.target)
        g_w = grads.shared if model.composition == COMP_SHARED else grads.mats[inst.target]
        kernels.rnn_path_backward(model.vectors, W, path, d_h, grads.vec, g_w)
    return float(loss)


def _regularizer(model: RnnModel, l2: float, freeze: bool) -> float:
    if l2 == 0.0:
        return 0.0
    total = 0.0
    if not freeze:
        total += float(np.sum(model.vectors**2))
    for w in model.matrices.values():
        total += float(np.sum(w**2))
    if model.shared_matrix is not None:
        total += float(np.sum(model.shared_matrix**2))
    return l2 * total


def loss_and_gradients(
    batch: Sequence[tuple[FactInstance, PathType]],
    model: RnnModel,
    l2: float = 0.0,
    freeze_relation_vectors: bool = False,
) -> tuple[float, Gradients]:
    """Batch cross-entropy plus L2 penalty, with gradients for all parameters.

    Each batch element carries its already-selected latent path. The latent
    argmax itself receives no gradient. With frozen relation vectors the
    vector gradient block is exactly zero.
    """
    grads = Gradients.zeros_like(model)
    total = 0.0
    for inst, mu in batch:
        total += _instance_loss_grad(inst, tuple(mu), model, grads)
    total += _regularizer(model, l2, freeze_relation_vectors)
    if l2 > 0.0:
        if not freeze_relation_vectors:
            grads.vec += 2.0 * l2 * model.vectors
        for t, w in model.matrices.items():
            grads.mats[t] += 2.0 * l2 * w
        if model.shared_matrix is not None:
            grads.shared += 2.0 * l2 * model.shared_matrix
    if freeze_relation_vectors:
        grads.vec[:] = 0.0
    return total, grads


def batch_loss(
    batch: Sequence[tuple[FactInstance, PathType]],
    model: RnnModel,
    l2: float = 0.0,
    freeze_relation_vectors: bool = False,
) -> float:
    total = 0.0
    for inst, mu in batch:
        total += _instance_loss_grad(inst, tuple(mu), model, None)
    return total + _regularizer(model, l2, freeze_relation_vectors)


def adagrad_update(
    model: RnnModel, grads: Gradients, state: AdaGradState, lr: float
) -> tuple[RnnModel, AdaGradState]:
    """Per-coordinate AdaGrad step: acc += g^2; p -= lr * g / (sqrt(acc) + eps)."""
    eps = state.epsilon

    def step(param, grad, acc):
        acc += grad * grad
        param -= lr * grad / (np.sqrt(acc) + eps)

    step(model.vectors, grads.vec, state.vec)
    for t, g in grads.mats.items():
        step(model.matrices[t], g, state.mats[t])
    if grads.shared is not None:
        step(model.shared_matrix, grads.shared, state.shared)
    return model, state


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _dataset_instances(ds: PathDataset) -> list[FactInstance]:
    return [
        FactInstance(pair=pair, target=ds.target, label=label, paths=ptypes)
        for pair, label, ptypes in ds.labeled_pairs()
    ]


def _train_loop(instances: list[FactInstance], model: RnnModel, cfg: TrainConfig) -> RnnModel:
    """Minibatch AdaGrad over epochs with per-instance latent path selection."""
    prepared = []
    for inst in instances:
        ordered = sorted(inst.paths)
        rels, offsets = _paths_to_arrays(ordered)
        prepared.append((inst, ordered, rels, offsets))
        _check_coverage(model, ordered, inst.target)

    state = AdaGradState.zeros_like(model)
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, 0x5B0FF1E))
    n = len(prepared)
    for t in range(1, cfg.iterations + 1):
        lr = cfg.learning_rate * 0.5 ** ((t - 1) // cfg.lr_halving_period)
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            batch = []
            for idx in chunk:
                inst, ordered, rels, offsets = prepared[idx]
                mu, _ = _select_with_vec(ordered, rels, offsets, model, inst.target)
                batch.append((inst, mu))
            loss, grads = loss_and_gradients(
                batch, model, cfg.l2, cfg.freeze_relation_vectors
            )
            adagrad_update(model, grads, state, lr)
            epoch_loss += loss
        model.training_loss.append(epoch_loss)
    return model


def train_relation_model(
    ds: PathDataset,
    cfg: TrainConfig,
    composition: str = COMP_PER_RELATION,
    init_vectors: np.ndarray | None = None,
    num_relations: int | None = None,
) -> RnnModel:
    """Train one model for the dataset's target relation.

    Per epoch: shuffle instances, re-select each instance's latent path
    under the current parameters, accumulate gradients, and apply an AdaGrad
    update every ``batch_size`` instances plus once for any remainder. The
    learning rate halves every ``lr_halving_period`` epochs.
    """
    if ds.num_instances() == 0:
        raise ValueError("empty dataset")
    if not ds.positives or not ds.negatives:
        raise ValueError("training needs at least one positive and one negative")
    instances = _dataset_instances(ds)
    if num_relations is None:
        num_relations = 1 + max(
            (r for inst in instances for p in inst.paths for r in p),
            default=-1,
        )
        num_relations = max(num_relations, ds.target + 1)
    model = init_model(
        num_relations,
        cfg,
        composition=composition,
        targets=[ds.target],
        init_vectors=init_vectors,
    )
    return _train_loop(instances, model, cfg)


def train_zero_shot(
    datasets: Sequence[PathDataset],
    pretrained: np.ndarray,
    cfg: TrainConfig,
    candidates: Sequence[int] | None = None,
) -> RnnModel:
    """Train the shared composition matrix over several relations jointly.

    Relation vectors are fixed to the supplied pre-trained vectors and never
    updated; probabilities come from a softmax over the candidate relation
    set (the training targets by default). Only the shared matrix learns.
    """
    if not cfg.freeze_relation_vectors:
        raise ValueError("zero-shot training requires freeze_relation_vectors")
    if not datasets:
        raise ValueError("no datasets")
    instances: list[FactInstance] = []
    for ds in datasets:
        instances.extend(_dataset_instances(ds))
    if candidates is None:
        candidates = sorted({ds.target for ds in datasets})
    model = init_model(
        pretrained.shape[0],
        cfg,
        composition=COMP_SHARED,
        score=SCORE_SOFTMAX,
        init_vectors=pretrained,
        candidates=candidates,
    )
    for inst in instances:
        _check_coverage(model, inst.paths, inst.target)
    return _train_loop(instances, model, cfg)


def predict_instance(model: RnnModel, paths: Sequence[PathType], target: int) -> float:
    """Score one fact: select the latent path, then score it against the target."""
    mu = select_latent_path(paths, model, target)
    return score_fact(compose_path(mu, model, target), target, model)


def predict_zero_shot(
    paths: Sequence[PathType],
    shared_matrix: np.ndarray,
    pretrained: np.ndarray,
    target: int,
    candidates: Sequence[int],
) -> float:
    """Softmax probability of ``target`` among ``candidates`` for unseen relations."""
    model = RnnModel(
        dim=pretrained.shape[1],
        vectors=pretrained,
        composition=COMP_SHARED,
        shared_matrix=shared_matrix,
        score=SCORE_SOFTMAX,
        candidates=tuple(int(c) for c in candidates),
    )
    return predict_instance(model, paths, target)


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def gradient_check(
    model: RnnModel,
    batch: Sequence[tuple[FactInstance, PathType]],
    step: float = 1e-5,
    l2: float = 0.0,
    freeze_relation_vectors: bool = False,
) -> float:
    """Max relative error between analytic gradients and central differences.

    Compares every coordinate of every trainable parameter. With frozen
    relation vectors the analytic vector block must be exactly zero and is
    not perturbed.
    """
    if not batch:
        return 0.0
    _, grads = loss_and_gradients(batch, model, l2, freeze_relation_vectors)

    def loss() -> float:
        return batch_loss(batch, model, l2, freeze_relation_vectors)

    worst = 0.0

    def sweep(param: np.ndarray, grad: np.ndarray):
        nonlocal worst
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + step
            hi = loss()
            flat_p[i] = orig - step
            lo = loss()
            flat_p[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            analytic = flat_g[i]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)

    if freeze_relation_vectors:
        if np.any(grads.vec != 0.0):
            raise AssertionError("frozen relation vectors received non-zero gradient")
    else:
        sweep(model.vectors, grads.vec)
    for t, g in grads.mats.items():
        sweep(model.matrices[t], g)
    if grads.shared is not None:
        sweep(model.shared_matrix, grads.shared)
    return worst


def gradient_check_sweep(
    count: int = 100,
    dims: Sequence[int] = (2, 4, 8),
    step: float = 1e-5,
    seed: int = 0,
    max_path_len: int = 4,
) -> float:
    """Worst finite-difference error over seeded random configurations.

    Cycles through embedding sizes, path lengths 1..max_path_len, the
    per-relation sigmoid / shared softmax / additive variants, and frozen
    and unfrozen vectors. Runs at zero L2: the regularizer's gradient is
    linear and verified exactly elsewhere, and its tiny contributions on
    otherwise-unused coordinates would only measure finite-difference
    cancellation noise, not backpropagation correctness.
    """
    worst = 0.0
    variants = (COMP_PER_RELATION, COMP_SHARED, COMP_ADD)
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, 0x96AD, i))
        d = dims[i % len(dims)]
        composition = variants[(i // len(dims)) % len(variants)]
        freeze = composition != COMP_ADD and (i // (len(dims) * len(variants))) % 2 == 1
        l2 = 0.0
        n_rel = 6
        target = int(rng.integers(0, n_rel))
        score = SCORE_SOFTMAX if composition == COMP_SHARED else SCORE_SIGMOID
        candidates = None
        if score == SCORE_SOFTMAX:
            others = [r for r in range(n_rel) if r != target]
            extra = list(rng.choice(others, size=2, replace=False))
            candidates = sorted([target] + [int(x) for x in extra])
        cfg = TrainConfig(dim=d, seed=int(rng.integers(0, 2**31)), l2=l2)
        m = init_model(
            n_rel, cfg, composition=composition, score=score,
            targets=[target], candidates=candidates,
        )
        batch = []
        for b in range(3):
            length = 1 + (i + b) % max_path_len
            path = tuple(int(x) for x in rng.integers(0, n_rel, size=length))
            inst = FactInstance(pair=(0, 1), target=target, label=(i + b) % 2, paths=(path,))
            batch.append((inst, path))
        err = gradient_check(m, batch, step=step, l2=l2, freeze_relation_vectors=freeze)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_model(model: RnnModel, path) -> None:
    """Versioned binary dump with deterministic bytes."""
    d = model.dim
    R = model.num_relations()
    names = model.relation_names or []
    parts = [
        _MODEL_MAGIC,
        struct.pack(
            "<IBBII",
            _MODEL_VERSION,
            _COMP_CODES[model.composition],
            _SCORE_CODES[model.score],
            d,
            R,
        ),
        struct.pack("<I", len(names)),
    ]
    for name in names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(struct.pack("<I", len(model.matrices)))
    for t in sorted(model.matrices):
        parts.append(struct.pack("<I", t))
        parts.append(np.ascontiguousarray(model.matrices[t], dtype=np.float64).tobytes())
    parts.append(struct.pack("<B", 0 if model.shared_matrix is None else 1))
    if model.shared_matrix is not None:
        parts.append(np.ascontiguousarray(model.shared_matrix, dtype=np.float64).tobytes())
    cands = model.candidates or ()
    parts.append(struct.pack("<I", len(cands)))
    for c in cands:
        parts.append(struct.pack("<I", c))
    parts.append(np.ascontiguousarray(model.vectors, dtype=np.float64).tobytes())
    _atomic_write_bytes(path, b"".join(parts))


def load_model(path) -> RnnModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    version, comp_code, score_code, d, R = struct.unpack_from("<IBBII", blob, 4)
    if version != _MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    off = 4 + struct.calcsize("<IBBII")
    (n_names,) = struct.unpack_from("<I", blob, off)
    off += 4
    names = []
    for _ in range(n_names):
        (ln,) = struct.unpack_from("<I", blob, off)
        off += 4
        names.append(blob[off : off + ln].decode("utf-8"))
        off += ln
    (n_mats,) = struct.unpack_from("<I", blob, off)
    off += 4
    mat_bytes = d * (2 * d + 1) * 8
    matrices = {}
    for _ in range(n_mats):
        (t,) = struct.unpack_from("<I", blob, off)
        off += 4
        matrices[t] = (
            np.frombuffer(blob, dtype=np.float64, count=d * (2 * d + 1), offset=off)
            .reshape(d, 2 * d + 1)
            .copy()
        )
        off += mat_bytes
    (has_shared,) = struct.unpack_from("<B", blob, off)
    off += 1
    shared = None
    if has_shared:
        shared = (
            np.frombuffer(blob, dtype=np.float64, count=d * (2 * d + 1), offset=off)
            .reshape(d, 2 * d + 1)
            .copy()
        )
        off += mat_bytes
    (n_cands,) = struct.unpack_from("<I", blob, off)
    off += 4
    cands = []
    for _ in range(n_cands):
        (c,) = struct.unpack_from("<I", blob, off)
        off += 4
        cands.append(c)
    vectors = (
        np.frombuffer(blob, dtype=np.float64, count=R * d, offset=off).reshape(R, d).copy()
    )
    comp = {v: k for k, v in _COMP_CODES.items()}[comp_code]
    score = {v: k for k, v in _SCORE_CODES.items()}[score_code]
    return RnnModel(
        dim=d,
        vectors=vectors,
        composition=comp,
        matrices=matrices,
        shared_matrix=shared,
        score=score,
        candidates=tuple(cands) if cands else None,
        relation_names=names or None,
    )


def save_vectors_text(path, names: Sequence[str], vectors: np.ndarray) -> None:
    """One relation per line: name, tab, space-joined float components."""
    if len(names) != vectors.shape[0]:
        raise ValueError("name count does not match vector rows")
    lines = []
    for name, row in zip(names, vectors):
        lines.append(name + "\t" + " ".join(repr(float(x)) for x in row) + "\n")
    _atomic_write_text(path, "".join(lines))


def load_vectors_text(path) -> tuple[list[str], np.ndarray]:
    names = []
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                name, payload = raw.rstrip("\n").split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected name<TAB>components") from None
            names.append(name)
            rows.append([float(x) for x in payload.split()])
    if not rows:
        raise ValueError(f"{path}: no vectors")
    return names, np.array(rows, dtype=np.float64)


def vectors_for_graph(names: Sequence[str], vectors: np.ndarray, graph: KBGraph) -> np.ndarray:
    """Re-index a named vector table to the graph's relation ids."""
    lookup: Mapping[str, int] = {n: i for i, n in enumerate(names)}
    out = np.zeros((graph.num_relations, vectors.shape[1]), dtype=np.float64)
    for rel in graph.relations:
        try:
            out[rel.id] = vectors[lookup[rel.name]]
        except KeyError:
            raise KeyError(f"no pre-trained vector for relation {rel.name!r}") from None
    return out
