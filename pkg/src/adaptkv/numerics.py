"""Dense float64 kernels: products, QR, thin SVD and masked softmax.

Matrices are plain 2-D ``numpy.float64`` arrays. Every entry point checks
its inputs and outputs for non-finite values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import DegenerateBasisError, DimensionError, NumericalFailure

QR_PIVOT_TOL = 1e-12
SVD_MAX_SWEEPS = 100
SVD_OFFDIAG_TOL = 1e-12

_kernels = _backend.kernels


def backend() -> str:
    """Name of the active kernel backend (``"compiled"`` or ``"python"``)."""
    return "compiled" if _kernels is not _backend._kernels_py else "python"


def set_backend(name: str) -> None:
    """Switch kernel backend for the whole process."""
    global _kernels
    found = _backend.available_backends()
    if name not in found:
        raise ValueError(f"backend {name!r} not available (have {sorted(found)})")
    _kernels = found[name]


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    _require_finite(a, name)
    return a


def _require_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericalFailure(f"{name} contains non-finite entries")


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    _require_finite(out, "product")
    return out


def project_rows(x, u) -> np.ndarray:
    """Row-stable ``x @ u``.

    Each output row is a function of its input row alone, so projecting a
    subset of rows gives bit-identical results to slicing the full product.
    """
    x = as_matrix(x, "x")
    u = as_matrix(u, "u")
    if x.shape[1] != u.shape[0]:
        raise DimensionError(f"cannot project {x.shape} onto {u.shape}")
    out = _kernels.project_rows(x, u)
    _require_finite(out, "projection")
    return out


def _qr(m: np.ndarray):
    with np.errstate(all="ignore"):
        q, r, min_pivot = _kernels.householder_qr(m)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(r))):
        raise NumericalFailure("QR overflowed; input magnitude too large")
    return q, r, min_pivot


def householder_qr(m) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR (``q``: rows x cols, ``r``: cols x cols), diag(r) >= 0.

    Unlike :func:`qr_orthonormalize` this accepts rank-deficient input.
    """
    m = as_matrix(m, "m")
    if m.shape[0] < m.shape[1]:
        raise DimensionError(f"QR needs rows >= cols, got {m.shape}")
    q, r, _ = _qr(m)
    return q, r


def qr_orthonormalize(m) -> np.ndarray:
    """Orthonormal basis for the column span of ``m``.

    Householder QR with the sign of each column of Q chosen so that R has a
    non-negative diagonal, which makes the output unique.

    Raises:
        DegenerateBasisError: a sub-column norm fell below ``QR_PIVOT_TOL``.
    """
    m = as_matrix(m, "m")
    if m.shape[0] < m.shape[1]:
        raise DimensionError(f"QR needs rows >= cols, got {m.shape}")
    if m.shape[1] == 0:
        raise DimensionError("QR of a matrix with no columns")
    q, _, min_pivot = _qr(m)
    if min_pivot < QR_PIVOT_TOL:
        raise DegenerateBasisError(
            f"rank-deficient input: pivot norm {min_pivot:.3e} < {QR_PIVOT_TOL:g}"
        )
    _require_finite(q, "Q")
    return q


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def _complete_columns(w: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of square orthogonal-ish ``w`` not in ``keep`` with an
    orthonormal completion (Gram-Schmidt over the standard basis)."""
    n = w.shape[0]
    basis = [w[:, j] for j in range(w.shape[1]) if keep[j]]
    fill = []
    for e in np.eye(n):
        if len(basis) + len(fill) == w.shape[1]:
            break
        v = e.copy()
        for _ in range(2):
            for b in basis + fill:
                v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            fill.append(v / nv)
    out = w.copy()
    it = iter(fill)
    for j in range(w.shape[1]):
        if not keep[j]:
            out[:, j] = next(it)
    return out


def thin_svd(m) -> SvdResult:
    """Thin SVD via QR preconditioning and one-sided Jacobi.

    Singular values come back non-increasing. Each left singular vector is
    signed so that its largest-magnitude entry is positive (first such entry
    on ties); the matching right vector is flipped with it.

    Raises:
        NumericalFailure: Jacobi did not converge within ``SVD_MAX_SWEEPS``.
    """
    m = as_matrix(m, "m")
    rows, cols = m.shape
    if rows == 0 or cols == 0:
        raise DimensionError("thin_svd of an empty matrix")
    if rows < cols:
        t = thin_svd(m.T)
        u, vt = t.vt.T.copy(), t.u.T.copy()
        return _fix_signs(u, t.sigma, vt)

    q, r, _ = _qr(m)
    w, v, sweeps = _kernels.jacobi_svd_square(r, SVD_MAX_SWEEPS, SVD_OFFDIAG_TOL)
    if sweeps < 0:
        raise NumericalFailure(f"Jacobi SVD did not converge in {SVD_MAX_SWEEPS} sweeps")
    sigma = np.sqrt(np.einsum("ij,ij->j", w, w))
    order = np.argsort(-sigma, kind="stable")
    sigma, w, v = sigma[order], w[:, order], v[:, order]

    smax = sigma[0] if sigma.size else 0.0
    keep = sigma > smax * max(rows, cols) * np.finfo(float).eps
    ur = np.zeros_like(w)
    ur[:, keep] = w[:, keep] / sigma[keep]
    if not np.all(keep):
        ur = _complete_columns(ur, keep)
    u = q @ ur
    res = _fix_signs(u, sigma, v.T.copy())
    for name in ("u", "sigma", "vt"):
        _require_finite(getattr(res, name), name)
    return res


def _fix_signs(u: np.ndarray, sigma: np.ndarray, vt: np.ndarray) -> SvdResult:
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u = u.copy()
    vt = vt.copy()
    u[:, flip] *= -1.0
    vt[flip, :] *= -1.0
    return SvdResult(u=u, sigma=sigma, vt=vt)


def masked_softmax_rows(logits, scale: float, causal_offset: int | None = None) -> np.ndarray:
    """Softmax of ``scale * logits`` along each row.

    With ``causal_offset`` set, row ``i`` only sees keys ``0..causal_offset+i``
    and masked weights are exactly zero. ``None`` means no mask.

    Raises:
        ValueError: non-positive scale, or a row with no visible key.
    """
    logits = as_matrix(logits, "logits")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if logits.shape[1] == 0:
        raise ValueError("softmax over zero keys")
    out, bad = _kernels.masked_softmax_rows(logits, float(scale), causal_offset)
    if bad >= 0:
        raise ValueError(f"row {bad} has every key masked")
    _require_finite(out, "softmax")
    return out
