"""Prefill token importance from the last query window, and Top-K selection."""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError
from .numerics import as_matrix, masked_softmax_rows


def importance_scores(q_last_w, k_all, *, heads=(), causal: bool = True) -> np.ndarray:
    """Attention mass each key receives from the last ``w`` queries.

    ``q_last_w`` holds the queries of the final ``w`` prompt positions, so
    with ``causal`` the i-th of them sees keys up to position ``n - w + i``.
    Extra ``(q, k)`` pairs in ``heads`` are scored the same way and summed in.
    """
    total = None
    for q, k in [(q_last_w, k_all), *heads]:
        q = as_matrix(q, "q_last_w")
        k = as_matrix(k, "k_all")
        w, n = q.shape[0], k.shape[0]
        if w == 0:
            raise ValueError("importance window is empty")
        if q.shape[1] != k.shape[1]:
            raise DimensionError(f"query width {q.shape[1]} != key width {k.shape[1]}")
        if w > n:
            raise ValueError(f"window {w} longer than the prompt {n}")
        a = masked_softmax_rows(q @ k.T, 1.0 / math.sqrt(q.shape[1]), n - w if causal else None)
        s = a.sum(axis=0)
        if total is None:
            total = s
        elif total.shape != s.shape:
            raise DimensionError("heads disagree on prompt length")
        else:
            total = total + s
    return total


def topk_count(n: int, fraction: float) -> int:
    """``ceil(fraction * n)``, at least 1 and at most ``n``."""
    # round first so 0.05 * 60 = 3.0000000000000004 stays 3
    return max(1, min(n, math.ceil(round(fraction * n, 9))))


def select_topk(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ascending.

    Ties go to the later position.
    """
    s = np.asarray(scores, dtype=np.float64)
    n = s.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    idx = np.arange(n)
    # primary key: score descending; secondary: position descending
    order = np.lexsort((-idx, -s))
    return np.sort(order[:k])
