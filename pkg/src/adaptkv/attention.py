"""Reference single-head attention in the three cost regimes, plus the
hybrid decode path over a :class:`~adaptkv.cache.HybridKvCache`.

All regimes use the softmax scale ``1/sqrt(d_h)``, including the low-rank
kernel whose operands only have ``r`` columns. Each call tallies the flops
of its GEMMs (2 per multiply-add) so the analytic model in
:mod:`adaptkv.metrics` can be checked against what actually ran.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .metrics import FlopEstimate
from .numerics import as_matrix, masked_softmax_rows


@dataclass(frozen=True)
class AttentionOutput:
    o: np.ndarray
    regime: str
    flops: FlopEstimate

    @property
    def flop_count(self) -> int:
        return self.flops.total


def _mm(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
    return a @ b, 2 * a.shape[0] * a.shape[1] * b.shape[1]


def _causal_offset(m: int, n: int, causal: bool):
    # queries are the last m positions of the n-long sequence
    return n - m if causal else None


def _attend(q, k, v, d_h: int, causal: bool):
    logits, f_logits = _mm(q, k.T)
    weights = masked_softmax_rows(logits, 1.0 / math.sqrt(d_h), _causal_offset(q.shape[0], k.shape[0], causal))
    out, f_sum = _mm(weights, v)
    return out, f_logits, f_sum


def attend_full(q, k, v, causal: bool = False) -> AttentionOutput:
    """``softmax(Q K^T / sqrt(d_h)) V``."""
    q, k, v = as_matrix(q, "q"), as_matrix(k, "k"), as_matrix(v, "v")
    d_h = q.shape[1]
    if k.shape[1] != d_h or v.shape[1] != d_h or k.shape[0] != v.shape[0]:
        raise DimensionError(f"incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    o, fl, fs = _attend(q, k, v, d_h, causal)
    return AttentionOutput(o, "full", FlopEstimate("full", fl, fs, 0))


def attend_lowrank_kernel(q_tilde, k_tilde, v_tilde, vb, causal: bool = False) -> AttentionOutput:
    """Attention computed on coordinates, then expanded: ``softmax(Q~ K~^T / sqrt(d_h)) V~ U_v^T``."""
    q, k, v = as_matrix(q_tilde, "q_tilde"), as_matrix(k_tilde, "k_tilde"), as_matrix(v_tilde, "v_tilde")
    u_v = np.asarray(vb.u)
    d_h = u_v.shape[0]
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"query/key ranks differ: {q.shape[1]} vs {k.shape[1]}")
    if v.shape[1] != u_v.shape[1] or k.shape[0] != v.shape[0]:
        raise DimensionError(f"value coordinates {v.shape} do not match basis {u_v.shape}")
    o_tilde, fl, fs = _attend(q, k, v, d_h, causal)
    o, fe = _mm(o_tilde, u_v.T)
    return AttentionOutput(o, "kernel", FlopEstimate("kernel", fl, fs, fe))


def attend_reconstruct(q, k_hat, v_hat, causal: bool = False) -> AttentionOutput:
    """Standard attention on already-reconstructed keys and values.

    Only the attention GEMMs are tallied; see :func:`attend_compressed` for
    the full reconstruct-then-compute cost.
    """
    q, k, v = as_matrix(q, "q"), as_matrix(k_hat, "k_hat"), as_matrix(v_hat, "v_hat")
    d_h = q.shape[1]
    if k.shape[1] != d_h or v.shape[1] != d_h or k.shape[0] != v.shape[0]:
        raise DimensionError(f"incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    o, fl, fs = _attend(q, k, v, d_h, causal)
    return AttentionOutput(o, "reconstruct", FlopEstimate("reconstruct", fl, fs, 0))


def attend_compressed(q, k_tilde, v_tilde, kb, vb, causal: bool = False) -> AttentionOutput:
    """Reconstruct ``K^ = K~ U_k^T`` and ``V^ = V~ U_v^T``, then attend with the
    original queries."""
    k_tilde, v_tilde = as_matrix(k_tilde, "k_tilde"), as_matrix(v_tilde, "v_tilde")
    k_hat, fk = _mm(k_tilde, np.asarray(kb.u).T)
    v_hat, fv = _mm(v_tilde, np.asarray(vb.u).T)
    out = attend_reconstruct(q, k_hat, v_hat, causal)
    f = out.flops
    return AttentionOutput(out.o, "reconstruct", FlopEstimate("reconstruct", f.logits, f.weighted_sum, fk + fv))


def logit_gap(q, k_hat, q_tilde, k_tilde) -> float:
    """``max |Q K^^T - Q~ K~^T|``; zero in exact arithmetic."""
    a = as_matrix(q, "q") @ as_matrix(k_hat, "k_hat").T
    b = as_matrix(q_tilde, "q_tilde") @ as_matrix(k_tilde, "k_tilde").T
    if a.shape != b.shape:
        raise DimensionError(f"logit shapes differ: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def decode_step(q_t, cache, causal_position: int | None = None) -> AttentionOutput:
    """Attend one query over everything stored in ``cache``.

    Rows are taken in position order; only positions ``<= causal_position``
    are visible (all rows when ``None``). Compressed rows are reconstructed
    first, so the result is a ``(1, d_h)`` output of the hybrid regime.
    """
    q = as_matrix(np.reshape(q_t, (1, -1)), "q_t")
    if q.shape[1] != cache.d_h:
        raise DimensionError(f"query width {q.shape[1]} != d_h {cache.d_h}")
    if len(cache) == 0:
        raise ValueError("decode over an empty cache")
    k, v, pos, f_recon = cache.materialize_with_positions()
    if causal_position is not None:
        visible = int(np.searchsorted(pos, causal_position, side="right"))
        if visible == 0:
            raise ValueError(f"no cached position <= {causal_position}")
        k, v = k[:visible], v[:visible]
    o, fl, fs = _attend(q, k, v, cache.d_h, causal=False)
    return AttentionOutput(o, "hybrid", FlopEstimate("hybrid", fl, fs, f_recon))
