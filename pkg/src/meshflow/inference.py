"""Tape-free forward primitives for evaluation and benchmarking.

Per-row linear maps are computed on fixed-size zero-padded chunks so that the
result for a given row is a pure function of that row's values: independent of
how many other rows are in the batch, of their order, and of which chunk the
row lands in. That is what makes encoder permutation invariance and flow
resolution independence exact (bitwise), not just approximate.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 1024


def linear_rows(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """x @ weight (+ bias), evaluated in fixed 1024-row chunks."""
    n = x.shape[0]
    out = np.empty((n, weight.shape[1]), dtype=x.dtype)
    for start in range(0, n, _CHUNK):
        k = min(_CHUNK, n - start)
        if k == _CHUNK:
            np.matmul(x[start:start + _CHUNK], weight, out=out[start:start + _CHUNK])
        else:
            buf = np.zeros((_CHUNK, x.shape[1]), dtype=x.dtype)
            buf[:k] = x[start:start + k]
            out[start:start + k] = (buf @ weight)[:k]
    if bias is not None:
        out += bias
    return out


def bn_eval_rows(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 eps: float) -> np.ndarray:
    """Eval-mode batchnorm: per-point affine map using the stored statistics."""
    inv_std = 1.0 / np.sqrt(running_var + eps)
    return (x - running_mean) * inv_std * gamma + beta


def relu_rows(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)
