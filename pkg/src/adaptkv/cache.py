"""Hybrid KV store: full-rank exempt head and tail, low-rank middle, and a
full-rank decode buffer that is compressed every ``buffer_period`` steps.

Compressed coordinates always refer to the live basis. When a flush adapts
the bases, every existing coordinate block is re-expressed through the
basis transition ``U_old^T U_new``, which is the same as reconstructing with
the old basis and compressing again with the new one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .numerics import as_matrix, project_rows
from .subspace import OjaConfig, ProjectionBasis, adapt_decode_flush

SEGMENTS = ("head", "comp", "tail", "buffer")
SNAPSHOT_HEADER = "adaptkv-snapshot v1"


@dataclass(frozen=True)
class Deployment:
    batch: int = 1
    layers: int = 1
    kv_heads: int = 1
    bytes_per_scalar: int = 2

    def __post_init__(self):
        for name in ("batch", "layers", "kv_heads", "bytes_per_scalar"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def scale(self) -> int:
        return self.batch * self.layers * self.kv_heads * self.bytes_per_scalar


@dataclass(frozen=True)
class MemoryReport:
    bytes_full_equivalent: int
    bytes_actual: int
    fractional_saving: float
    breakdown: dict = field(default_factory=dict)


class _Segment:
    """Rows plus their global positions."""

    def __init__(self, width_k: int, width_v: int):
        self.k = np.zeros((0, width_k))
        self.v = np.zeros((0, width_v))
        self.pos = np.zeros(0, dtype=np.int64)

    def __len__(self):
        return self.pos.shape[0]

    def append(self, k, v, pos):
        self.k = np.vstack([self.k, k])
        self.v = np.vstack([self.v, v])
        self.pos = np.concatenate([self.pos, np.asarray(pos, dtype=np.int64)])

    def keep(self, mask):
        self.k, self.v, self.pos = self.k[mask], self.v[mask], self.pos[mask]

    def clear(self):
        self.keep(np.zeros(len(self), dtype=bool))


class HybridKvCache:
    """Single-head hybrid cache.

    ``adaptive=False`` freezes the bases (static baselines): flushes still
    compress the buffer, but with the initial basis.
    """

    def __init__(self, kb: ProjectionBasis, vb: ProjectionBasis, cfg: OjaConfig, adaptive: bool = True):
        if kb.d_h != vb.d_h:
            raise DimensionError("key and value bases disagree on d_h")
        self.kb = kb
        self.vb = vb
        self.cfg = cfg
        self.adaptive = adaptive
        d = kb.d_h
        self.head = _Segment(d, d)
        self.comp = _Segment(kb.r, vb.r)
        self.tail = _Segment(d, d)
        self.buffer = _Segment(d, d)
        self.comp_version = (kb.version, vb.version)
        self.next_position = 0
        self.n_evicted = 0
        self.flush_count = 0

    @property
    def d_h(self) -> int:
        return self.kb.d_h

    def segment_rows(self) -> dict:
        return {name: len(getattr(self, name)) for name in SEGMENTS}

    def __len__(self):
        return sum(self.segment_rows().values())

    def _check_rows(self, k, v):
        k = as_matrix(k, "k")
        v = as_matrix(v, "v")
        if k.shape != v.shape or k.shape[1] != self.d_h:
            raise DimensionError(f"expected matching (n, {self.d_h}) blocks, got {k.shape} and {v.shape}")
        return k, v

    def ingest_prompt(self, k_prompt, v_prompt) -> None:
        """Store a prompt: first ``n_start`` and last ``n_recent`` rows full
        rank, the rest compressed. Prompts no longer than ``n_start + n_recent``
        are stored entirely full rank."""
        k, v = self._check_rows(k_prompt, v_prompt)
        n = k.shape[0]
        pos = self.next_position + np.arange(n)
        n_head = min(self.cfg.n_start, n)
        n_tail = min(self.cfg.n_recent, n - n_head)
        mid = slice(n_head, n - n_tail)
        self.head.append(k[:n_head], v[:n_head], pos[:n_head])
        self.comp.append(
            project_rows(k[mid], self.kb.u), project_rows(v[mid], self.vb.u), pos[mid]
        )
        self.tail.append(k[n - n_tail :], v[n - n_tail :], pos[n - n_tail :])
        self.next_position += n

    def append_decode(self, k_t, v_t) -> bool:
        """Buffer one decode row; True when the buffer has reached ``buffer_period``."""
        k, v = self._check_rows(np.reshape(k_t, (1, -1)), np.reshape(v_t, (1, -1)))
        self.buffer.append(k, v, [self.next_position])
        self.next_position += 1
        return len(self.buffer) >= self.cfg.buffer_period

    def flush_and_adapt(self) -> None:
        """Adapt the bases on the buffer (if adaptive), re-project existing
        coordinates, compress the buffer with the new bases, clear it."""
        if len(self.buffer) == 0:
            raise ValueError("flush with an empty buffer")
        if self.adaptive:
            kb, vb, tk, tv = adapt_decode_flush(self.kb, self.vb, self.buffer.k, self.buffer.v, self.cfg)
            self.comp.k = tk.apply(self.comp.k)
            self.comp.v = tv.apply(self.comp.v)
            self.kb, self.vb = kb, vb
            self.comp_version = (kb.version, vb.version)
        self.comp.append(
            project_rows(self.buffer.k, self.kb.u),
            project_rows(self.buffer.v, self.vb.u),
            self.buffer.pos,
        )
        self.buffer.clear()
        self.flush_count += 1

    def materialize_with_positions(self):
        """``(k_hat, v_hat, positions, reconstruct_flops)`` in position order."""
        k_comp = self.comp.k @ self.kb.u.T if len(self.comp) else np.zeros((0, self.d_h))
        v_comp = self.comp.v @ self.vb.u.T if len(self.comp) else np.zeros((0, self.d_h))
        ks = [self.head.k, k_comp, self.tail.k, self.buffer.k]
        vs = [self.head.v, v_comp, self.tail.v, self.buffer.v]
        ps = [self.head.pos, self.comp.pos, self.tail.pos, self.buffer.pos]
        pos = np.concatenate(ps)
        order = np.argsort(pos, kind="stable")
        n_comp = len(self.comp)
        recon = 2 * n_comp * self.kb.r * self.d_h + 2 * n_comp * self.vb.r * self.d_h
        return np.vstack(ks)[order], np.vstack(vs)[order], pos[order], recon

    def materialize(self):
        k, v, _, _ = self.materialize_with_positions()
        return k, v

    def positions(self) -> np.ndarray:
        return np.sort(np.concatenate([getattr(self, s).pos for s in SEGMENTS]))

    def evict(self, kept_positions) -> int:
        """Delete every stored row whose position is not in ``kept_positions``.
        Returns the number of rows removed."""
        kept = np.asarray(sorted(set(int(p) for p in kept_positions)), dtype=np.int64)
        removed = 0
        for name in SEGMENTS:
            seg = getattr(self, name)
            mask = np.isin(seg.pos, kept)
            removed += int(np.sum(~mask))
            seg.keep(mask)
        self.n_evicted += removed
        return removed

    def memory_report(self, deploy: Deployment | None = None) -> MemoryReport:
        """Bytes for this cache scaled by batch, layers and KV heads.

        The full-equivalent figure counts every token ever ingested, evicted
        ones included, so eviction shows up as saving.
        """
        deploy = deploy or Deployment()
        d = self.d_h
        rows = self.segment_rows()
        per_full = 2 * d * deploy.scale
        per_comp = (self.kb.r + self.vb.r) * deploy.scale
        breakdown = {
            name: rows[name] * (per_comp if name == "comp" else per_full) for name in SEGMENTS
        }
        actual = sum(breakdown.values())
        full = (len(self) + self.n_evicted) * per_full
        saving = 1.0 - actual / full if full else 0.0
        return MemoryReport(full, actual, saving, breakdown)

    def snapshot(self, deploy: Deployment | None = None) -> str:
        rep = self.memory_report(deploy)
        rows = self.segment_rows()
        lines = [
            SNAPSHOT_HEADER,
            f"d_h={self.d_h} r_k={self.kb.r} r_v={self.vb.r}",
            f"basis_k_version={self.kb.version} basis_v_version={self.vb.version}",
            f"comp_k_version={self.comp_version[0]} comp_v_version={self.comp_version[1]}",
        ]
        lines += [f"segment {name} rows={rows[name]} bytes={rep.breakdown[name]}" for name in SEGMENTS]
        lines += [
            f"tokens total={len(self) + self.n_evicted} stored={len(self)} evicted={self.n_evicted}",
            f"flushes={self.flush_count}",
            f"memory bytes_full={rep.bytes_full_equivalent} bytes_actual={rep.bytes_actual} "
            f"saving={rep.fractional_saving!r}",
        ]
        return "\n".join(lines) + "\n"


def parse_snapshot(text: str) -> dict:
    """Parse :meth:`HybridKvCache.snapshot` output into a nested dict."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != SNAPSHOT_HEADER:
        raise ValueError("not an adaptkv cache snapshot")
    out: dict = {"segments": {}}
    for ln in lines[1:]:
        head, _, rest = ln.partition(" ")
        if head == "segment":
            name, _, kvs = rest.partition(" ")
            out["segments"][name] = {k: int(v) for k, v in (t.split("=") for t in kvs.split())}
        elif head in ("memory", "tokens"):
            out[head] = {k: _num(v) for k, v in (t.split("=") for t in rest.split())}
        else:
            for tok in ln.split():
                k, _, v = tok.partition("=")
                if not _:
                    raise ValueError(f"malformed snapshot line: {ln!r}")
                out[k] = _num(v)
    missing = set(SEGMENTS) - set(out["segments"])
    if missing or "memory" not in out:
        raise ValueError(f"snapshot incomplete (missing {sorted(missing) or 'memory'})")
    return out


def _num(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)

