"""Quality and cost diagnostics.

RER (residual-energy ratio) is defined here as the fraction of a block's
Frobenius energy left outside the span of a basis::

    RER(X, U) = ||X - X U U^T||_F^2 / ||X||_F^2

so 0 means the basis captures the block exactly and 1 means it captures
nothing. SO (subspace overlap) is ``Tr(U1^T U2 U2^T U1) / r``; for unequal
ranks the smaller rank is used as ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np

from .errors import DimensionError

REGIMES = ("full", "kernel", "reconstruct")


def _basis_matrix(b) -> np.ndarray:
    return np.asarray(getattr(b, "u", b), dtype=np.float64)


def rer(x, basis) -> float:
    x = np.asarray(x, dtype=np.float64)
    u = _basis_matrix(basis)
    if x.ndim != 2 or x.shape[1] != u.shape[0]:
        raise DimensionError(f"rows of width {u.shape[0]} expected, got {x.shape}")
    total = float(np.sum(x * x))
    if total == 0.0:
        raise ValueError("RER of a zero-energy block is undefined")
    resid = x - (x @ u) @ u.T
    return min(1.0, max(0.0, float(np.sum(resid * resid)) / total))


def subspace_overlap(u1, u2) -> float:
    a = _basis_matrix(u1)
    b = _basis_matrix(u2)
    if a.shape[0] != b.shape[0]:
        raise DimensionError("bases live in different ambient dimensions")
    cross = a.T @ b
    r = min(a.shape[1], b.shape[1])
    return min(1.0, max(0.0, float(np.sum(cross * cross)) / r))


@dataclass(frozen=True)
class FlopEstimate:
    """Flop counts (one multiply-add = 2 flops) split by term.

    ``expand`` is the output expansion for the low-rank kernel and the K/V
    reconstruction GEMMs for the reconstruct path; zero for full attention.
    """

    regime: str
    logits: int
    weighted_sum: int
    expand: int

    @property
    def total(self) -> int:
        return self.logits + self.weighted_sum + self.expand

    def __add__(self, other: "FlopEstimate") -> "FlopEstimate":
        if not isinstance(other, FlopEstimate):
            return NotImplemented
        regime = self.regime if self.regime == other.regime else "mixed"
        return FlopEstimate(
            regime,
            self.logits + other.logits,
            self.weighted_sum + other.weighted_sum,
            self.expand + other.expand,
        )


def flops(regime: str, m: int, n: int, d_h: int, r_k: int, r_v: int) -> FlopEstimate:
    if regime == "full":
        return FlopEstimate(regime, 2 * m * n * d_h, 2 * m * n * d_h, 0)
    if regime == "kernel":
        return FlopEstimate(regime, 2 * m * n * r_k, 2 * m * n * r_v, 2 * m * r_v * d_h)
    if regime == "reconstruct":
        return FlopEstimate(
            regime, 2 * m * n * d_h, 2 * m * n * d_h, 2 * n * r_k * d_h + 2 * n * r_v * d_h
        )
    raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def exact(x) -> Fraction:
    """Exact rational for ints, Fractions and floats (floats by their shortest
    decimal form, so ``0.8 * 128`` is taken as 102.4)."""
    if isinstance(x, Rational):
        return Fraction(x)
    return Fraction(repr(float(x)))


def _maybe_int(x: Fraction):
    return int(x) if x.denominator == 1 else x


def deployment_memory(B, seq_T, L, H_kv, d_h, b, r_k, r_v):
    """KV bytes at deployment scale: ``(M_full, M_low, saving)``.

    Exact rational arithmetic; byte totals come back as ``int`` when integral.
    """
    params = [exact(p) for p in (B, seq_T, L, H_kv, d_h, b)]
    if any(p <= 0 for p in params):
        raise ValueError("deployment parameters must be positive")
    rk, rv = exact(r_k), exact(r_v)
    B_, T_, L_, H_, d_, b_ = params
    if not (0 <= rk <= d_ and 0 <= rv <= d_):
        raise ValueError(f"ranks must lie in [0, d_h={d_}]")
    scale = B_ * T_ * L_ * H_ * b_
    m_full = scale * 2 * d_
    m_low = scale * (rk + rv)
    saving = 1 - (rk + rv) / (2 * d_)
    return _maybe_int(m_full), _maybe_int(m_low), saving


def hybrid_flops(m: int, n: int, n_comp: int, d_h: int, r_k: int, r_v: int) -> FlopEstimate:
    """Reconstruct path over a hybrid cache: only the ``n_comp`` compressed rows
    of the ``n`` attended rows pay the reconstruction GEMMs."""
    return FlopEstimate(
        "hybrid", 2 * m * n * d_h, 2 * m * n * d_h, 2 * n_comp * r_k * d_h + 2 * n_comp * r_v * d_h
    )
