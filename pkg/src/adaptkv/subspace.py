"""Projection bases: offline SVD initialization and two-phase Oja adaptation."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numerics import as_matrix, qr_orthonormalize, thin_svd

ORTHO_TOL = 1e-10
BASIS_HEADER = "adaptkv-basis v1"


@dataclass(frozen=True)
class ProjectionBasis:
    """Orthonormal ``d_h x r`` basis with an update counter."""

    u: np.ndarray
    version: int = 0

    def __post_init__(self):
        u = as_matrix(self.u, "basis")
        d_h, r = u.shape
        if not 1 <= r <= d_h:
            raise DimensionError(f"basis rank must satisfy 1 <= r <= d_h, got {u.shape}")
        err = np.linalg.norm(u.T @ u - np.eye(r))
        if err > ORTHO_TOL:
            raise ValueError(f"basis columns not orthonormal (||U^T U - I||_F = {err:.3e})")
        u = u.copy()
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def d_h(self) -> int:
        return self.u.shape[0]

    @property
    def r(self) -> int:
        return self.u.shape[1]

    def orthonormality_error(self) -> float:
        return float(np.linalg.norm(self.u.T @ self.u - np.eye(self.r)))


@dataclass(frozen=True)
class OjaConfig:
    """Scalar hyperparameters of the adaptive cache.

    ``topk_fraction`` is relative to the prompt length. ``eta_dec`` may be zero
    (a frozen decode phase) but must not exceed ``eta_pre``.
    """

    eta_pre: float = 0.10
    eta_dec: float = 0.05
    buffer_period: int = 32
    n_start: int = 32
    n_recent: int = 32
    window: int = 32
    topk_fraction: float = 0.05
    energy_threshold: float = 0.9

    def __post_init__(self):
        if not 0 <= self.eta_dec <= self.eta_pre:
            raise ValueError(
                f"need 0 <= eta_dec <= eta_pre, got eta_dec={self.eta_dec}, eta_pre={self.eta_pre}"
            )
        if self.buffer_period < 1:
            raise ValueError("buffer_period must be >= 1")
        if self.n_start < 0 or self.n_recent < 0:
            raise ValueError("exemption sizes must be non-negative")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0 < self.topk_fraction <= 1:
            raise ValueError("topk_fraction must lie in (0, 1]")
        if not 0 < self.energy_threshold <= 1:
            raise ValueError("energy_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class BasisTransition:
    """``m = U_old^T U_new``; maps old coordinates to new ones (``c @ m``)."""

    m: np.ndarray
    from_version: int
    to_version: int

    @classmethod
    def between(cls, old: ProjectionBasis, new: ProjectionBasis) -> "BasisTransition":
        return cls(old.u.T @ new.u, old.version, new.version)

    @classmethod
    def identity(cls, basis: ProjectionBasis) -> "BasisTransition":
        return cls(np.eye(basis.r), basis.version, basis.version)

    def apply(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape[0] == 0:
            return np.zeros((0, self.m.shape[1]))
        return coords @ self.m


def energy_rank(sigma: np.ndarray, eps_th: float) -> int:
    """Smallest r whose leading singular values hold ``eps_th`` of the energy."""
    if not 0 < eps_th <= 1:
        raise ValueError(f"energy threshold must lie in (0, 1], got {eps_th}")
    energy = np.asarray(sigma, dtype=np.float64) ** 2
    total = energy.sum()
    if total == 0:
        raise ValueError("samples carry no energy")
    cum = np.cumsum(energy)
    # relative slack so that eps_th = 1 is reachable despite rounding
    return int(np.searchsorted(cum, (eps_th - 1e-12) * total, side="left")) + 1


def _init_from(samples: np.ndarray, eps_th: float, rank: int | None):
    if samples.shape[0] == 0:
        raise ValueError("no samples")
    svd = thin_svd(samples)
    r = energy_rank(svd.sigma, eps_th) if rank is None else int(rank)
    if not 1 <= r <= svd.vt.shape[0]:
        raise ValueError(f"rank {r} not attainable from {samples.shape} samples")
    return ProjectionBasis(svd.vt[:r].T.copy()), r


def init_basis_qk(q_samples, k_samples, eps_th: float, rank: int | None = None):
    """Shared query/key basis from stacked query and key samples.

    Queries and keys are stacked along the sample axis and the top right
    singular vectors are kept. ``rank`` overrides the energy criterion (used
    after layer-wise harmonization).
    """
    q = as_matrix(q_samples, "q_samples")
    k = as_matrix(k_samples, "k_samples")
    if q.shape[1] != k.shape[1]:
        raise DimensionError("query and key samples disagree on d_h")
    return _init_from(np.vstack([q, k]), eps_th, rank)


def init_basis_v(v_samples, eps_th: float, rank: int | None = None):
    return _init_from(as_matrix(v_samples, "v_samples"), eps_th, rank)


def harmonize_layer_rank(per_head_ranks) -> int:
    ranks = list(per_head_ranks)
    if not ranks:
        raise ValueError("no ranks to harmonize")
    return max(ranks)


def oja_batch_update(basis: ProjectionBasis, x_batch, eta: float) -> np.ndarray:
    """One batch Oja step, ``U + eta (X^T - U Y) Y^T`` with ``Y = U^T X^T``.

    Rows of ``x_batch`` are samples. Returns the raw matrix; it must be
    orthonormalized before it becomes a basis again.
    """
    x = as_matrix(x_batch, "x_batch")
    if x.shape[1] != basis.d_h:
        raise DimensionError(f"batch width {x.shape[1]} != d_h {basis.d_h}")
    if eta < 0:
        raise ValueError("learning rate must be non-negative")
    u = np.array(basis.u)
    y = u.T @ x.T
    return u + eta * (x.T - u @ y) @ y.T


def _adapt(basis: ProjectionBasis, rows, eta: float):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.size == 0:
        return basis, BasisTransition.identity(basis)
    new = ProjectionBasis(qr_orthonormalize(oja_batch_update(basis, rows, eta)), basis.version + 1)
    return new, BasisTransition.between(basis, new)


def adapt_prefill(kb, vb, k_selected, v_selected, cfg: OjaConfig):
    """Prefill update on the saliency-selected prompt rows at ``eta_pre``.

    Returns ``(kb, vb, k_transition, v_transition)``. Empty selections leave
    the bases (and versions) untouched.
    """
    kb2, tk = _adapt(kb, k_selected, cfg.eta_pre)
    vb2, tv = _adapt(vb, v_selected, cfg.eta_pre)
    return kb2, vb2, tk, tv


def adapt_decode_flush(kb, vb, k_buffer, v_buffer, cfg: OjaConfig):
    """Periodic decode update on the buffered rows at ``eta_dec``."""
    kb2, tk = _adapt(kb, k_buffer, cfg.eta_dec)
    vb2, tv = _adapt(vb, v_buffer, cfg.eta_dec)
    return kb2, vb2, tk, tv


def save_basis(basis: ProjectionBasis, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_basis(basis))


def dumps_basis(basis: ProjectionBasis) -> str:
    lines = [f"{BASIS_HEADER} d_h={basis.d_h} r={basis.r} version={basis.version}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in basis.u]
    return "\n".join(lines) + "\n"


def loads_basis(text: str) -> ProjectionBasis:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(BASIS_HEADER + " "):
        raise ValueError("not an adaptkv basis checkpoint")
    fields = dict(tok.split("=", 1) for tok in lines[0][len(BASIS_HEADER) :].split())
    try:
        d_h, r, version = int(fields["d_h"]), int(fields["r"]), int(fields["version"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad basis header: {lines[0]!r}") from exc
    rows = [[float(tok) for tok in ln.split()] for ln in lines[1:]]
    if len(rows) != d_h or any(len(row) != r for row in rows):
        raise ValueError(f"basis body does not match header d_h={d_h} r={r}")
    return ProjectionBasis(np.array(rows, dtype=np.float64), version)


def load_basis(path: str | os.PathLike) -> ProjectionBasis:
    with open(path, encoding="utf-8") as fh:
        return loads_basis(fh.read())
