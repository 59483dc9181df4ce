"""Hot numeric kernels: path composition forward/backward passes.

Two interchangeable backends: numba ``@njit`` loops (default when numba is
importable) and a pure-numpy fallback. Selection is controlled by the
``PATHCOMP_BACKEND`` environment variable: ``auto`` (default), ``numba``, or
``numpy``. Both implementations stay importable so tests and the benchmark
in ``benchmarks/bench_kernels.py`` can compare them.

Path batches use a ragged layout: ``rels`` is the int32 concatenation of all
relation ids, ``offsets`` the int64 prefix bounds, so path ``j`` is
``rels[offsets[j]:offsets[j + 1]]``.
"""

from __future__ import annotations

import os

import numpy as np

BACKEND_ENV_VAR = "PATHCOMP_BACKEND"


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable element-wise logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_scalar(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


# ---------------------------------------------------------------------------
# pure-numpy backend
# ---------------------------------------------------------------------------

def rnn_compose_batch_np(V, W, rels, offsets):
    """Compose each path with the sigmoid recurrence; returns (n_paths, d).

    h_1 = V[r_1]; h_i = sigmoid(W @ [h_{i-1}; V[r_i]; 1]).
    """
    d = V.shape[1]
    n = offsets.shape[0] - 1
    H = np.empty((n, d), dtype=np.float64)
    W_h = W[:, :d]
    W_v = W[:, d:2 * d]
    W_b = W[:, 2 * d]
    for j in range(n):
        lo, hi = offsets[j], offsets[j + 1]
        h = V[rels[lo]]
        for i in range(lo + 1, hi):
            h = sigmoid(W_h @ h + W_v @ V[rels[i]] + W_b)
        H[j] = h
    return H


def add_compose_batch_np(V, rels, offsets):
    """Compose each path with the additive recurrence h_i = sigmoid(h_{i-1} + v_i)."""
    d = V.shape[1]
    n = offsets.shape[0] - 1
    H = np.empty((n, d), dtype=np.float64)
    for j in range(n):
        lo, hi = offsets[j], offsets[j + 1]
        h = V[rels[lo]]
        for i in range(lo + 1, hi):
            h = sigmoid(h + V[rels[i]])
        H[j] = h
    return H


def rnn_path_backward_np(V, W, path, d_h, g_v, g_w):
    """Backprop d_h (gradient w.r.t. the composed vector) through one path.

    Recomputes the forward states, then accumulates into ``g_v`` (relation
    vector gradients, same shape as V) and ``g_w`` (composition matrix
    gradient, same shape as W).
    """
    d = V.shape[1]
    L = path.shape[0]
    hs = np.empty((L, d), dtype=np.float64)
    hs[0] = V[path[0]]
    W_h = W[:, :d]
    W_v = W[:, d:2 * d]
    W_b = W[:, 2 * d]
    for i in range(1, L):
        hs[i] = sigmoid(W_h @ hs[i - 1] + W_v @ V[path[i]] + W_b)
    d_cur = d_h.astype(np.float64).copy()
    for i in range(L - 1, 0, -1):
        dz = d_cur * hs[i] * (1.0 - hs[i])
        g_w[:, :d] += np.outer(dz, hs[i - 1])
        g_w[:, d:2 * d] += np.outer(dz, V[path[i]])
        g_w[:, 2 * d] += dz
        g_v[path[i]] += W_v.T @ dz
        d_cur = W_h.T @ dz
    g_v[path[0]] += d_cur


def add_path_backward_np(V, path, d_h, g_v):
    """Backprop through the additive recurrence, accumulating into ``g_v``."""
    d = V.shape[1]
    L = path.shape[0]
    hs = np.empty((L, d), dtype=np.float64)
    hs[0] = V[path[0]]
    for i in range(1, L):
        hs[i] = sigmoid(hs[i - 1] + V[path[i]])
    d_cur = d_h.astype(np.float64).copy()
    for i in range(L - 1, 0, -1):
        d_cur = d_cur * hs[i] * (1.0 - hs[i])
        g_v[path[i]] += d_cur
    g_v[path[0]] += d_cur


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised via PATHCOMP_BACKEND=numpy
    njit = None
    NUMBA_AVAILABLE = False


if NUMBA_AVAILABLE:

    @njit(cache=True, nogil=True)
    def _sig(z):
        if z >= 0.0:
            return 1.0 / (1.0 + np.exp(-z))
        ez = np.exp(z)
        return ez / (1.0 + ez)

    @njit(cache=True, nogil=True)
    def rnn_compose_batch_nb(V, W, rels, offsets):
        d = V.shape[1]
        n = offsets.shape[0] - 1
        H = np.empty((n, d), dtype=np.float64)
        tmp = np.empty(d, dtype=np.float64)
        for j in range(n):
            lo = offsets[j]
            hi = offsets[j + 1]
            for c in range(d):
                H[j, c] = V[rels[lo], c]
            for i in range(lo + 1, hi):
                rel = rels[i]
                for r in range(d):
                    z = W[r, 2 * d]
                    for c in range(d):
                        z += W[r, c] * H[j, c] + W[r, d + c] * V[rel, c]
                    tmp[r] = _sig(z)
                for c in range(d):
                    H[j, c] = tmp[c]
        return H

    @njit(cache=True, nogil=True)
    def add_compose_batch_nb(V, rels, offsets):
        d = V.shape[1]
        n = offsets.shape[0] - 1
        H = np.empty((n, d), dtype=np.float64)
        for j in range(n):
            lo = offsets[j]
            hi = offsets[j + 1]
            for c in range(d):
                H[j, c] = V[rels[lo], c]
            for i in range(lo + 1, hi):
                rel = rels[i]
                for c in range(d):
                    H[j, c] = _sig(H[j, c] + V[rel, c])
        return H

    @njit(cache=True, nogil=True)
    def rnn_path_backward_nb(V, W, path, d_h, g_v, g_w):
        d = V.shape[1]
        L = path.shape[0]
        hs = np.empty((L, d), dtype=np.float64)
        for c in range(d):
            hs[0, c] = V[path[0], c]
        for i in range(1, L):
            rel = path[i]
            for r in range(d):
                z = W[r, 2 * d]
                for c in range(d):
                    z += W[r, c] * hs[i - 1, c] + W[r, d + c] * V[rel, c]
                hs[i, r] = _sig(z)
        d_cur = np.empty(d, dtype=np.float64)
        d_prev = np.empty(d, dtype=np.float64)
        dz = np.empty(d, dtype=np.float64)
        for c in range(d):
            d_cur[c] = d_h[c]
        for i in range(L - 1, 0, -1):
            rel = path[i]
            for r in range(d):
                dz[r] = d_cur[r] * hs[i, r] * (1.0 - hs[i, r])
            for r in range(d):
                dzr = dz[r]
                for c in range(d):
                    g_w[r, c] += dzr * hs[i - 1, c]
                    g_w[r, d + c] += dzr * V[rel, c]
                g_w[r, 2 * d] += dzr
            for c in range(d):
                acc_h = 0.0
                acc_v = 0.0
                for r in range(d):
                    acc_h += W[r, c] * dz[r]
                    acc_v += W[r, d + c] * dz[r]
                d_prev[c] = acc_h
                g_v[rel, c] += acc_v
            for c in range(d):
                d_cur[c] = d_prev[c]
        p0 = path[0]
        for c in range(d):
            g_v[p0, c] += d_cur[c]

    @njit(cache=True, nogil=True)
    def add_path_backward_nb(V, path, d_h, g_v):
        d = V.shape[1]
        L = path.shape[0]
        hs = np.empty((L, d), dtype=np.float64)
        for c in range(d):
            hs[0, c] = V[path[0], c]
        for i in range(1, L):
            rel = path[i]
            for c in range(d):
                hs[i, c] = _sig(hs[i - 1, c] + V[rel, c])
        d_cur = np.empty(d, dtype=np.float64)
        for c in range(d):
            d_cur[c] = d_h[c]
        for i in range(L - 1, 0, -1):
            rel = path[i]
            for c in range(d):
                d_cur[c] = d_cur[c] * hs[i, c] * (1.0 - hs[i, c])
                g_v[rel, c] += d_cur[c]
        p0 = path[0]
        for c in range(d):
            g_v[p0, c] += d_cur[c]


def _resolve_backend() -> str:
    choice = os.environ.get(BACKEND_ENV_VAR, "auto").strip().lower() or "auto"
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{BACKEND_ENV_VAR} must be 'auto', 'numba' or 'numpy', got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    if NUMBA_AVAILABLE:
        return "numba"
    if choice == "numba":
        raise ImportError(f"{BACKEND_ENV_VAR}=numba but numba is not installed")
    return "numpy"


BACKEND = _resolve_backend()

if BACKEND == "numba":
    rnn_compose_batch = rnn_compose_batch_nb
    add_compose_batch = add_compose_batch_nb
    rnn_path_backward = rnn_path_backward_nb
    add_path_backward = add_path_backward_nb
else:
    rnn_compose_batch = rnn_compose_batch_np
    add_compose_batch = add_compose_batch_np
    rnn_path_backward = rnn_path_backward_np
    add_path_backward = add_path_backward_np


def implementations() -> dict[str, dict[str, object]]:
    """All available backend implementations, keyed by backend name."""
    impls = {
        "numpy": {
            "rnn_compose_batch": rnn_compose_batch_np,
            "add_compose_batch": add_compose_batch_np,
            "rnn_path_backward": rnn_path_backward_np,
            "add_path_backward": add_path_backward_np,
        }
    }
    if NUMBA_AVAILABLE:
        impls["numba"] = {
            "rnn_compose_batch": rnn_compose_batch_nb,
            "add_compose_batch": add_compose_batch_nb,
            "rnn_path_backward": rnn_path_backward_nb,
            "add_path_backward": add_path_backward_nb,
        }
    return impls
