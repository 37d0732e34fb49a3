"""Seeded synthetic activation streams with low-rank structure and drift.

A row at global position ``p`` is ``x = c B_p^T + e``: ``B_p`` is the true
``d_h x true_rank`` orthonormal basis after every drift event with
``step <= p`` has been applied, ``c`` has independent Gaussian entries with
standard deviations ``spectrum``, and ``e`` is isotropic Gaussian noise.

Each drift event rotates the whole space in one plane spanned by a unit
vector inside the current true subspace and one orthogonal to it, both drawn
from ``plane_seed``. An event may also replace the spectrum.

Randomness: NumPy's PCG64 bit generator seeded through ``SeedSequence``
with entropy ``seed``; Gaussians come from ``Generator.standard_normal``.
Spawn keys: ``(0, role)`` for the true basis, ``(1, role)`` for drift planes
(entropy ``plane_seed``), ``(2, kind, block, zigzag(offset))`` for rows.
Keys and queries share one true basis (role 0); values get their own (role 1).
Positions may be negative; calibration blocks conventionally live there,
before any drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import qr_orthonormalize, thin_svd
from .subspace import ProjectionBasis

KINDS = {"k": 0, "q": 1, "v": 2}


@dataclass(frozen=True)
class DriftEvent:
    step: int
    angle: float
    plane_seed: int
    spectrum: tuple | None = None


@dataclass(frozen=True)
class StreamSpec:
    d_h: int
    true_rank: int
    spectrum: tuple | float = 0.8
    noise_sigma: float = 0.0
    drift: tuple = ()
    seed: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if not 1 <= self.true_rank <= self.d_h:
            raise ValueError(f"need 1 <= true_rank <= d_h, got {self.true_rank}, {self.d_h}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        events = tuple(e if isinstance(e, DriftEvent) else DriftEvent(*e) for e in self.drift)
        steps = [e.step for e in events]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("drift steps must be strictly increasing")
        object.__setattr__(self, "drift", events)
        if not isinstance(self.spectrum, (int, float)):
            object.__setattr__(self, "spectrum", tuple(float(s) for s in self.spectrum))
        for e in events:
            if e.spectrum is not None:
                _spectrum_values(e.spectrum, self.true_rank)
        _spectrum_values(self.spectrum, self.true_rank)

    def with_seed(self, seed: int) -> "StreamSpec":
        return StreamSpec(self.d_h, self.true_rank, self.spectrum, self.noise_sigma, self.drift, seed, self.scale)


def _spectrum_values(spec, r: int) -> np.ndarray:
    if isinstance(spec, (int, float)):
        return float(spec) ** np.arange(r)
    vals = np.asarray(spec, dtype=np.float64)
    if vals.shape != (r,) or np.any(vals < 0):
        raise ValueError(f"explicit spectrum must list {r} non-negative values")
    return vals


def _zigzag(x: int) -> int:
    return 2 * x if x >= 0 else -2 * x - 1


def _rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


def _initial_basis(spec: StreamSpec, kind: str) -> np.ndarray:
    role = 1 if kind == "v" else 0
    g = _rng(spec.seed, 0, role)
    return qr_orthonormalize(g.standard_normal((spec.d_h, spec.true_rank)))


def plane_rotation(b: np.ndarray, angle: float, plane_seed: int, role: int) -> np.ndarray:
    """Full-space rotation in the plane of (unit vector in span(b), unit
    vector orthogonal to it)."""
    d, r = b.shape
    g = _rng(plane_seed, 1, role)
    a = b @ g.standard_normal(r)
    a /= np.linalg.norm(a)
    if r == d:
        return np.eye(d)
    w = g.standard_normal(d)
    w -= b @ (b.T @ w)
    w -= b @ (b.T @ w)
    w /= np.linalg.norm(w)
    c, s = np.cos(angle), np.sin(angle)
    return (
        np.eye(d)
        + (c - 1.0) * (np.outer(a, a) + np.outer(w, w))
        + s * (np.outer(w, a) - np.outer(a, w))
    )


def _phases(spec: StreamSpec, kind: str):
    """List of (start_step, basis, sigma); first phase starts at -inf."""
    role = 1 if kind == "v" else 0
    b = _initial_basis(spec, kind)
    sig = _spectrum_values(spec.spectrum, spec.true_rank)
    out = [(None, b, sig)]
    for e in spec.drift:
        b = plane_rotation(b, e.angle, e.plane_seed, role) @ b
        if e.spectrum is not None:
            sig = _spectrum_values(e.spectrum, spec.true_rank)
        out.append((e.step, b, sig))
    return out


def true_basis(spec: StreamSpec, position: int, kind: str = "k") -> np.ndarray:
    """The true basis active at ``position``."""
    phases = _phases(spec, kind)
    active = phases[0][1]
    for start, b, _ in phases[1:]:
        if position >= start:
            active = b
    return active


def generate(spec: StreamSpec, n_rows: int, phase_offset: int = 0, kind: str = "k", block: int = 0) -> np.ndarray:
    """``n_rows`` rows at positions ``phase_offset, phase_offset + 1, ...``.

    ``kind`` is ``"k"``, ``"q"`` or ``"v"``; ``block`` separates independent
    draws over the same positions (e.g. different heads).
    """
    if n_rows <= 0:
        raise ValueError("n_rows must be positive")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {sorted(KINDS)}")
    g = _rng(spec.seed, 2, KINDS[kind], block, _zigzag(int(phase_offset)))
    raw = g.standard_normal((n_rows, spec.true_rank + spec.d_h))
    coeff, noise = raw[:, : spec.true_rank], raw[:, spec.true_rank :]
    pos = phase_offset + np.arange(n_rows)
    out = spec.noise_sigma * noise
    phases = _phases(spec, kind)
    for i, (start, b, sig) in enumerate(phases):
        end = phases[i + 1][0] if i + 1 < len(phases) else None
        sel = np.ones(n_rows, dtype=bool)
        if start is not None:
            sel &= pos >= start
        if end is not None:
            sel &= pos < end
        if np.any(sel):
            out[sel] += (coeff[sel] * sig) @ b.T
    return spec.scale * out


def oracle_basis(x, r: int) -> ProjectionBasis:
    """Top-``r`` right singular vectors of ``x`` (batch PCA without centering)."""
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= r <= x.shape[1]:
        raise ValueError(f"rank {r} outside [1, {x.shape[1]}]")
    svd = thin_svd(x)
    if r > svd.vt.shape[0]:
        raise ValueError(f"rank {r} exceeds the {svd.vt.shape[0]} available directions")
    return ProjectionBasis(svd.vt[:r].T.copy())


@dataclass
class ActivationBank:
    """Query/key/value blocks per phase name (``calibration``, ``prefix``, ``test``...)."""

    blocks: dict = field(default_factory=dict)

    def add(self, phase: str, q, k, v) -> None:
        widths = {np.shape(a)[1] for a in (q, k, v)}
        widths |= {np.shape(b[0])[1] for b in self.blocks.values()}
        if len(widths) != 1:
            raise ValueError("blocks disagree on d_h")
        self.blocks[phase] = (np.asarray(q), np.asarray(k), np.asarray(v))

    def __getitem__(self, phase: str):
        return self.blocks[phase]
