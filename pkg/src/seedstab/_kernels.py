"""Embedding-bag kernels used by the text model.

Two implementations live side by side: a numba ``@njit`` loop and a pure
numpy path. The numba path is used when numba imports and the environment
variable ``SEEDSTAB_DISABLE_NUMBA`` is unset (or ``0``/``false``). Both
paths accept a CSR-style batch: a flat ``int64`` token array plus an
``offsets`` array of length ``B + 1``.
"""
import os

import numpy as np

_FLAG = os.environ.get("SEEDSTAB_DISABLE_NUMBA", "").strip().lower()

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and _FLAG in ("", "0", "false", "no")
BACKEND = "numba" if USE_NUMBA else "numpy"


def bag_mean_numpy(emb, tokens, offsets):
    lengths = np.diff(offsets)
    sums = np.add.reduceat(emb[tokens], offsets[:-1], axis=0)
    return sums / lengths[:, None]


def bag_mean_backward_numpy(grad_out, tokens, offsets, out):
    """Accumulate d(loss)/d(embedding) into ``out`` (shape V x d) in place."""
    lengths = np.diff(offsets)
    per_token = np.repeat(grad_out / lengths[:, None], lengths, axis=0)
    np.add.at(out, tokens, per_token)
    return out


if NUMBA_AVAILABLE:

    @njit(cache=True, nogil=True)
    def bag_mean_numba(emb, tokens, offsets):
        n_rows = offsets.shape[0] - 1
        dim = emb.shape[1]
        res = np.zeros((n_rows, dim))
        for b in range(n_rows):
            start = offsets[b]
            stop = offsets[b + 1]
            for t in range(start, stop):
                row = tokens[t]
                for j in range(dim):
                    res[b, j] += emb[row, j]
            inv = 1.0 / (stop - start)
            for j in range(dim):
                res[b, j] *= inv
        return res

    @njit(cache=True, nogil=True)
    def bag_mean_backward_numba(grad_out, tokens, offsets, out):
        n_rows = offsets.shape[0] - 1
        dim = grad_out.shape[1]
        for b in range(n_rows):
            start = offsets[b]
            stop = offsets[b + 1]
            inv = 1.0 / (stop - start)
            for t in range(start, stop):
                row = tokens[t]
                for j in range(dim):
                    out[row, j] += grad_out[b, j] * inv
        return out

else:  # pragma: no cover
    bag_mean_numba = None
    bag_mean_backward_numba = None


if USE_NUMBA:
    bag_mean = bag_mean_numba
    bag_mean_backward = bag_mean_backward_numba
else:
    bag_mean = bag_mean_numpy
    bag_mean_backward = bag_mean_backward_numpy
