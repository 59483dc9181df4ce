import subprocess
import sys

import numpy as np
import pytest

from pathcomp import kernels


def _random_batch(seed, d=8, n_rel=12, n_paths=25, max_len=5):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(n_rel, d))
    W = rng.normal(size=(d, 2 * d + 1))
    paths = [
        tuple(int(x) for x in rng.integers(0, n_rel, size=rng.integers(1, max_len + 1)))
        for _ in range(n_paths)
    ]
    offsets = np.zeros(n_paths + 1, dtype=np.int64)
    for i, p in enumerate(paths):
        offsets[i + 1] = offsets[i] + len(p)
    rels = np.fromiter((r for p in paths for r in p), dtype=np.int32)
    return V, W, rels, offsets, paths


def test_sigmoid_matches_direct_formula():
    z = np.array([-700.0, -5.0, 0.0, 5.0, 700.0])
    out = kernels.sigmoid(z)
    assert out[2] == 0.5
    assert 0.0 <= out[0] < 1e-300
    assert out[4] == 1.0  # saturated but finite
    assert np.allclose(out[1], 1 / (1 + np.exp(5.0)))


def test_numpy_compose_length_one_is_row_copy():
    V, W, rels, offsets, paths = _random_batch(0)
    H = kernels.rnn_compose_batch_np(V, W, rels, offsets)
    for j, p in enumerate(paths):
        if len(p) == 1:
            assert np.array_equal(H[j], V[p[0]])


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")
class TestBackendEquivalence:
    def test_rnn_compose(self):
        for seed in range(5):
            V, W, rels, offsets, _ = _random_batch(seed)
            a = kernels.rnn_compose_batch_np(V, W, rels, offsets)
            b = kernels.rnn_compose_batch_nb(V, W, rels, offsets)
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_add_compose(self):
        for seed in range(5):
            V, _, rels, offsets, _ = _random_batch(seed)
            a = kernels.add_compose_batch_np(V, rels, offsets)
            b = kernels.add_compose_batch_nb(V, rels, offsets)
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_rnn_backward(self):
        for seed in range(5):
            V, W, _, _, paths = _random_batch(seed)
            rng = np.random.default_rng(100 + seed)
            d_h = rng.normal(size=V.shape[1])
            path = np.asarray(paths[0], dtype=np.int32)
            gV1, gW1 = np.zeros_like(V), np.zeros_like(W)
            gV2, gW2 = np.zeros_like(V), np.zeros_like(W)
            kernels.rnn_path_backward_np(V, W, path, d_h, gV1, gW1)
            kernels.rnn_path_backward_nb(V, W, path, d_h, gV2, gW2)
            np.testing.assert_allclose(gV1, gV2, rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(gW1, gW2, rtol=1e-12, atol=1e-14)

    def test_add_backward(self):
        for seed in range(5):
            V, _, _, _, paths = _random_batch(seed)
            rng = np.random.default_rng(200 + seed)
            d_h = rng.normal(size=V.shape[1])
            path = np.asarray(paths[1], dtype=np.int32)
            gV1, gV2 = np.zeros_like(V), np.zeros_like(V)
            kernels.add_path_backward_np(V, path, d_h, gV1)
            kernels.add_path_backward_nb(V, path, d_h, gV2)
            np.testing.assert_allclose(gV1, gV2, rtol=1e-12, atol=1e-14)

    def test_empty_batch(self):
        V, W, _, _, _ = _random_batch(0)
        offsets = np.zeros(1, dtype=np.int64)
        rels = np.zeros(0, dtype=np.int32)
        for fn in (kernels.rnn_compose_batch_np, kernels.rnn_compose_batch_nb):
            out = fn(V, W, rels, offsets)
            assert out.shape == (0, V.shape[1])


class TestBackendSelection:
    def _backend_in_subprocess(self, env_value):
        code = "import pathcomp.kernels as K; print(K.BACKEND)"
        import os

        env = dict(os.environ)
        if env_value is None:
            env.pop(kernels.BACKEND_ENV_VAR, None)
        else:
            env[kernels.BACKEND_ENV_VAR] = env_value
        out = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, env=env
        )
        return out.returncode, out.stdout.strip(), out.stderr

    def test_numpy_forced(self):
        rc, backend, _ = self._backend_in_subprocess("numpy")
        assert rc == 0 and backend == "numpy"

    @pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")
    def test_auto_prefers_numba(self):
        rc, backend, _ = self._backend_in_subprocess(None)
        assert rc == 0 and backend == "numba"

    def test_bad_value_rejected(self):
        rc, _, err = self._backend_in_subprocess("cuda")
        assert rc != 0
        assert "PATHCOMP_BACKEND" in err
