import numpy as np
import pytest

from seedstab import _kernels

pytestmark = pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")


@pytest.mark.parametrize("seed", range(5))
def test_numba_and_numpy_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    V, d, B = 40, 7, 25
    emb = rng.normal(size=(V, d))
    lengths = rng.integers(1, 9, size=B)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    tokens = rng.integers(0, V, size=offsets[-1]).astype(np.int64)
    np.testing.assert_allclose(
        _kernels.bag_mean_numba(emb, tokens, offsets),
        _kernels.bag_mean_numpy(emb, tokens, offsets),
        rtol=1e-12, atol=1e-12,
    )
    g = rng.normal(size=(B, d))
    a = _kernels.bag_mean_backward_numba(g, tokens, offsets, np.zeros((V, d)))
    b = _kernels.bag_mean_backward_numpy(g, tokens, offsets, np.zeros((V, d)))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_backend_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("SEEDSTAB_DISABLE_NUMBA", "1")
    mod = importlib.reload(_kernels)
    try:
        assert mod.BACKEND == "numpy"
        assert mod.bag_mean is mod.bag_mean_numpy
    finally:
        monkeypatch.delenv("SEEDSTAB_DISABLE_NUMBA")
        importlib.reload(_kernels)
