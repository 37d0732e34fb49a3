"""Composition of low-rank projection with token selection.

Tokens are rows here (``n x d_h`` blocks), so a selector keeping ``m`` of
``n`` tokens is a row gather. For the contraction bound the selector is read
as the in-place mask ``diag(keep)``: ``K - K S`` is the block of evicted rows
with kept rows zeroed, which is what makes the two sides comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DimensionError
from .metrics import exact
from .numerics import as_matrix, project_rows


@dataclass(frozen=True)
class Selector:
    kept_indices: tuple
    n: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.kept_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("selector indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.n):
            raise IndexError(f"selector index out of range [0, {self.n})")
        object.__setattr__(self, "kept_indices", idx)

    @classmethod
    def keep_all(cls, n: int) -> "Selector":
        return cls(tuple(range(n)), n)

    @property
    def m(self) -> int:
        return len(self.kept_indices)

    def mask(self) -> np.ndarray:
        keep = np.zeros(self.n, dtype=bool)
        keep[list(self.kept_indices)] = True
        return keep

    def as_matrix(self) -> np.ndarray:
        """Explicit ``n x m`` 0/1 selector."""
        s = np.zeros((self.n, self.m))
        s[list(self.kept_indices), np.arange(self.m)] = 1.0
        return s


def apply_selector(x, sel: Selector, axis: int = 0) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[axis] != sel.n:
        raise DimensionError(f"axis {axis} has length {x.shape[axis]}, selector expects {sel.n}")
    return np.take(x, np.asarray(sel.kept_indices, dtype=np.int64), axis=axis)


def commutation_gap(k, basis, sel: Selector) -> float:
    """``max |project(select(K)) - select(project(K))|``; exactly 0.

    Uses the row-stable projection kernel, so this really is pure reindexing.
    """
    k = as_matrix(k, "k")
    u = np.asarray(getattr(basis, "u", basis))
    a = project_rows(apply_selector(k, sel), u)
    b = apply_selector(project_rows(k, u), sel)
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def contraction_check(k, basis, sel: Selector) -> tuple[float, float]:
    """``(||K_ev U||_F, ||K_ev||_F)`` for the evicted-row block ``K_ev``."""
    k = as_matrix(k, "k")
    u = np.asarray(getattr(basis, "u", basis))
    if k.shape[0] != sel.n:
        raise DimensionError(f"{k.shape[0]} tokens, selector expects {sel.n}")
    dropped = k * (~sel.mask())[:, None]
    return float(np.linalg.norm(dropped @ u)), float(np.linalg.norm(dropped))


def compounded_ratio(d_h, r, n, m) -> Fraction:
    """Total compression ``(d_h / r) * (n / m)`` as an exact fraction."""
    d_h, r, n, m = (exact(x) for x in (d_h, r, n, m))
    if r <= 0 or m <= 0:
        raise ZeroDivisionError("rank and kept-token count must be positive")
    if d_h <= 0 or n <= 0:
        raise ValueError("dimensions must be positive")
    if r > d_h or m > n:
        raise ValueError("need r <= d_h and m <= n")
    return (d_h / r) * (n / m)


def combined_memory_fraction(rank_fraction, keep_fraction) -> Fraction:
    """Fraction of full KV memory left after rank and token compression."""
    return exact(rank_fraction) * exact(keep_fraction)
