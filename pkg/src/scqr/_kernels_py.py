"""NumPy implementations of the pairwise convexity kernels.

Rows are processed in blocks so the n x n violation matrix is never held
in memory at once.
"""

import numpy as np

_BLOCK_ENTRIES = 1 << 22


def _block_rows(n: int) -> int:
    return max(1, min(n, _BLOCK_ENTRIES // max(n, 1)))


def separation_argmax(X, theta, beta):
    """Per-row argmax of ``theta_i + beta_i'(x_k - x_i) - theta_k`` over k.

    Returns ``(j, v)``: the first maximizing index and the maximal value.
    """
    X = np.ascontiguousarray(X, dtype=float)
    theta = np.ascontiguousarray(theta, dtype=float)
    beta = np.ascontiguousarray(beta, dtype=float)
    n = X.shape[0]
    offset = theta - np.einsum("ij,ij->i", beta, X)
    j_out = np.empty(n, dtype=np.int64)
    v_out = np.empty(n)
    step = _block_rows(n)
    for s in range(0, n, step):
        e = min(n, s + step)
        V = beta[s:e] @ X.T
        V += offset[s:e, None]
        V -= theta[None, :]
        j = np.argmax(V, axis=1)
        j_out[s:e] = j
        v_out[s:e] = V[np.arange(e - s), j]
    return j_out, v_out


def violation_sumsq(X, theta, beta):
    """Sum of squared positive parts of all pairwise convexity violations."""
    X = np.ascontiguousarray(X, dtype=float)
    theta = np.ascontiguousarray(theta, dtype=float)
    beta = np.ascontiguousarray(beta, dtype=float)
    n = X.shape[0]
    offset = theta - np.einsum("ij,ij->i", beta, X)
    total = 0.0
    step = _block_rows(n)
    for s in range(0, n, step):
        e = min(n, s + step)
        V = beta[s:e] @ X.T
        V += offset[s:e, None]
        V -= theta[None, :]
        np.maximum(V, 0.0, out=V)
        total += float(np.einsum("ij,ij->", V, V))
    return total
