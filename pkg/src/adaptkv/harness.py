"""End-to-end scenarios, the randomized equivalence suite and report files.

A scenario runs ``heads`` independent single-head caches over one synthetic
stream. An uncompressed shadow store sees exactly the same tokens (and the
same evictions), so the deviation column isolates the cost of low-rank
storage.

Phases, per head:

1. calibration rows at negative positions, before any drift;
2. initial bases (ranks harmonized across heads when chosen by energy);
3. prefill: prompt saliency from the last ``window`` queries summed over
   heads; the adaptive regime runs one Oja step on the Top-K prompt rows;
4. the prompt is ingested (exempt head/tail only for the hybrid regimes)
   and optionally thinned to a saliency keep fraction;
5. decode: every step appends a token, attends over the cache and the
   shadow, and flushes the buffer when it is full (adapting only for
   ``oja_hybrid``).

Report rows appear at prefill end and after every flush (``"flush"``
cadence, with a closing row when the run does not end on a flush) or at the
listed decode steps. ``rer_*`` is measured over every stream row emitted so
far, ``so_*`` against the batch-SVD oracle of the whole test stream, and
``deviation`` is the Frobenius norm of (cache output - shadow output) over
the decode steps since the previous row. The prefill row probes with the
last ``window`` prompt queries instead.
"""

from __future__ import annotations

import csv
import io
import json
import math
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .attention import attend_compressed, attend_full, attend_lowrank_kernel, decode_step, logit_gap
from .cache import HybridKvCache
from .config import ScenarioConfig
from .errors import DegenerateBasisError, NumericalFailure
from .metrics import deployment_memory, rer, subspace_overlap
from .numerics import project_rows, qr_orthonormalize
from .saliency import importance_scores, select_topk, topk_count
from .streamgen import generate, oracle_basis
from .subspace import (
    ProjectionBasis, adapt_prefill, harmonize_layer_rank, init_basis_qk, init_basis_v, save_basis,
)

CSV_HEADER = ("step", "phase", "rer_k", "rer_v", "so_k", "so_v", "deviation", "bytes_actual", "bytes_full", "flops")
EQUIV_TOL = 1e-10
FULL_RANK_TOL = 1e-12


@dataclass
class ScenarioReport:
    rows: list
    summary: dict
    caches: list = field(default_factory=list, repr=False)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in CSV_HEADER])
        return buf.getvalue()

    def summary_text(self) -> str:
        return json.dumps(_jsonable(self.summary), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "report.csv", out / "summary.json"]
        written[0].write_text(self.csv_text(), encoding="utf-8")
        written[1].write_text(self.summary_text(), encoding="utf-8")
        if self.caches:
            c = self.caches[0]
            snap = out / "snapshot.txt"
            snap.write_text(c.snapshot(self.summary["_deployment"]), encoding="utf-8")
            save_basis(c.kb, out / "basis_k.txt")
            save_basis(c.vb, out / "basis_v.txt")
            written += [snap, out / "basis_k.txt", out / "basis_v.txt"]
        return written


def _fmt(x) -> str:
    return repr(x) if isinstance(x, float) else str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items() if not k.startswith("_")}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, np.generic):
        return x.item()
    return x


@dataclass
class _Head:
    k: np.ndarray
    v: np.ndarray
    q: np.ndarray
    calib: tuple
    kb: ProjectionBasis | None = None
    vb: ProjectionBasis | None = None
    oracle_k: ProjectionBasis | None = None
    oracle_v: ProjectionBasis | None = None
    cache: HybridKvCache | None = None
    shadow_pos: np.ndarray | None = None
    n_evicted: int = 0


def _streams(cfg: ScenarioConfig) -> list[_Head]:
    n = cfg.prompt_len + cfg.decode_steps
    c = cfg.calibration_rows
    heads = []
    for h in range(cfg.heads):
        calib = tuple(generate(cfg.stream, c, -c, kind, h) for kind in ("q", "k", "v"))
        heads.append(_Head(
            k=generate(cfg.stream, n, 0, "k", h),
            v=generate(cfg.stream, n, 0, "v", h),
            q=generate(cfg.stream, n, 0, "q", h),
            calib=calib,
        ))
    return heads


def _init_bases(cfg: ScenarioConfig, heads: list[_Head]) -> tuple[int, int]:
    eps = cfg.oja.energy_threshold
    if cfg.r_k is not None:
        rk, rv = cfg.r_k, cfg.r_v
    else:
        rk = harmonize_layer_rank(init_basis_qk(h.calib[0], h.calib[1], eps)[1] for h in heads)
        rv = harmonize_layer_rank(init_basis_v(h.calib[2], eps)[1] for h in heads)
    for h in heads:
        h.kb, _ = init_basis_qk(h.calib[0], h.calib[1], eps, rank=rk)
        h.vb, _ = init_basis_v(h.calib[2], eps, rank=rv)
        h.oracle_k = oracle_basis(h.k, rk)
        h.oracle_v = oracle_basis(h.v, rv)
    return rk, rv


def _quality(heads: list[_Head], upto: int, full: bool) -> dict:
    if full:
        return {"rer_k": 0.0, "rer_v": 0.0, "so_k": 1.0, "so_v": 1.0}
    kb = [h.cache.kb if h.cache else h.kb for h in heads]
    vb = [h.cache.vb if h.cache else h.vb for h in heads]
    return {
        "rer_k": float(np.mean([rer(h.k[:upto], b) for h, b in zip(heads, kb)])),
        "rer_v": float(np.mean([rer(h.v[:upto], b) for h, b in zip(heads, vb)])),
        "so_k": float(np.mean([subspace_overlap(b, h.oracle_k) for h, b in zip(heads, kb)])),
        "so_v": float(np.mean([subspace_overlap(b, h.oracle_v) for h, b in zip(heads, vb)])),
    }


def _shadow_output(h: _Head, q: np.ndarray, position: int):
    visible = h.shadow_pos[h.shadow_pos <= position]
    out = attend_full(q.reshape(1, -1), h.k[visible], h.v[visible])
    return out.o, out.flop_count


def _attend_step(h: _Head, position: int):
    """(deviation^2, flops) for the query at ``position``."""
    q = h.q[position]
    ref, ref_flops = _shadow_output(h, q, position)
    if h.cache is None:
        return 0.0, ref_flops
    got = decode_step(q, h.cache, position)
    d = got.o - ref
    return float(np.sum(d * d)), got.flop_count


def _memory(cfg, heads: list[_Head]) -> tuple[int, int, float]:
    h = heads[0]
    if h.cache is None:
        per_row = 2 * cfg.stream.d_h * cfg.deployment.scale
        actual = len(h.shadow_pos) * per_row
        full = (len(h.shadow_pos) + h.n_evicted) * per_row
        return actual, full, 1.0 - actual / full
    rep = h.cache.memory_report(cfg.deployment)
    return rep.bytes_actual, rep.bytes_full_equivalent, rep.fractional_saving


@contextmanager
def _stage(where: str):
    try:
        yield
    except (DegenerateBasisError, NumericalFailure) as e:
        raise NumericalFailure(f"{where}: {e}") from e


def run_scenario(cfg: ScenarioConfig) -> ScenarioReport:
    full = cfg.regime == "full"
    P, D = cfg.prompt_len, cfg.decode_steps
    w = min(cfg.oja.window, P)
    heads = _streams(cfg)
    with _stage("basis initialization"):
        rk, rv = _init_bases(cfg, heads)
    initial = _quality(heads, P + D, False)

    scores = importance_scores(
        heads[0].q[P - w:P], heads[0].k[:P],
        heads=[(h.q[P - w:P], h.k[:P]) for h in heads[1:]],
    )
    n_sel = topk_count(P, cfg.oja.topk_fraction)
    selected = select_topk(scores, n_sel)

    cache_cfg = cfg.oja
    if not cfg.exempt:
        cache_cfg = replace(cfg.oja, n_start=0, n_recent=0)

    max_orth = 0.0
    for h in heads:
        if cfg.adaptive:
            with _stage("prefill"):
                h.kb, h.vb, _, _ = adapt_prefill(h.kb, h.vb, h.k[selected], h.v[selected], cfg.oja)
            max_orth = max(max_orth, h.kb.orthonormality_error(), h.vb.orthonormality_error())
        if not full:
            h.cache = HybridKvCache(h.kb, h.vb, cache_cfg, adaptive=cfg.adaptive)
            h.cache.ingest_prompt(h.k[:P], h.v[:P])
        h.shadow_pos = np.arange(P)

    n_evicted = 0
    if cfg.eviction is not None:
        kept = select_topk(scores, topk_count(P, cfg.eviction))
        n_evicted = P - len(kept)
        for h in heads:
            h.shadow_pos = kept.copy()
            h.n_evicted = n_evicted
            if h.cache is not None:
                h.cache.evict(kept)

    rows = []

    def emit(step: int, phase: str, dev2: float, fl: int):
        b_act, b_full, _ = _memory(cfg, heads)
        rows.append({
            "step": step, "phase": phase, **_quality(heads, P + step, full),
            "deviation": math.sqrt(dev2), "bytes_actual": b_act, "bytes_full": b_full, "flops": fl,
        })

    probe_dev2, probe_flops = 0.0, 0
    for h in heads:
        for pos in range(P - w, P):
            d2, fl = _attend_step(h, pos)
            probe_dev2 += d2
            probe_flops += fl
    wanted = set(cfg.checkpoints) if cfg.checkpoints != "flush" else None
    if wanted is None or 0 in wanted:
        emit(0, "prefill", probe_dev2, probe_flops)

    total_dev2 = 0.0
    dev2, fl_acc, flushes = 0.0, 0, 0
    for t in range(1, D + 1):
        pos = P + t - 1
        due = False
        with _stage(f"decode step {t}"):
            for h in heads:
                h.shadow_pos = np.append(h.shadow_pos, pos)
                if h.cache is not None:
                    due = h.cache.append_decode(h.k[pos], h.v[pos])
                d2, fl = _attend_step(h, pos)
                dev2 += d2
                fl_acc += fl
            if due:
                for h in heads:
                    h.cache.flush_and_adapt()
                    max_orth = max(max_orth, h.cache.kb.orthonormality_error(), h.cache.vb.orthonormality_error())
                flushes += 1
        flushed = due or (full and t % cfg.oja.buffer_period == 0)
        boundary = flushed if wanted is None else t in wanted
        if boundary or (wanted is None and t == D):
            emit(t, "flush" if flushed else "decode", dev2, fl_acc)
            total_dev2 += dev2
            dev2, fl_acc = 0.0, 0
    total_dev2 += dev2

    final = _quality(heads, P + D, full)
    b_act, b_full, saving = _memory(cfg, heads)
    m_full, m_low, dep_saving = deployment_memory(
        cfg.deployment.batch, P + D, cfg.deployment.layers, cfg.deployment.kv_heads,
        cfg.stream.d_h, cfg.deployment.bytes_per_scalar,
        cfg.stream.d_h if full else rk, cfg.stream.d_h if full else rv,
    )
    summary = {
        "regime": cfg.regime,
        "heads": cfg.heads,
        "d_h": cfg.stream.d_h,
        "r_k": rk,
        "r_v": rv,
        "prompt_len": P,
        "decode_steps": D,
        "prefill_selected": n_sel if cfg.adaptive else 0,
        "evicted_tokens": n_evicted,
        "flushes": flushes,
        "checkpoints": len(rows),
        "initial": initial,
        "final": final,
        "total_deviation": math.sqrt(total_dev2),
        "max_orthonormality_error": max_orth,
        "memory": {"bytes_actual": b_act, "bytes_full": b_full, "saving": saving},
        "deployment_memory": {"bytes_full": m_full, "bytes_lowrank": m_low, "saving": dep_saving},
        "_deployment": cfg.deployment,
    }
    return ScenarioReport(rows, summary, [h.cache for h in heads if h.cache is not None])


@dataclass(frozen=True)
class EquivSummary:
    trials: int
    full_rank_trials: int
    max_logit_gap: float
    max_output_gap: float
    max_full_gap: float
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def lines(self) -> list[str]:
        return [
            f"trials={self.trials} full_rank_trials={self.full_rank_trials}",
            f"max_logit_gap={self.max_logit_gap!r} (tol {EQUIV_TOL!r})",
            f"max_output_gap={self.max_output_gap!r} (tol {EQUIV_TOL!r})",
            f"max_full_rank_gap={self.max_full_gap!r} (tol {FULL_RANK_TOL!r})",
            f"failures={self.failures} -> {'PASS' if self.passed else 'FAIL'}",
        ]


def random_instance(g: np.random.Generator, max_n: int, max_d: int, full_rank: bool = False):
    """One random equivalence instance: (q, k, v, kb, vb, causal)."""
    n = int(g.integers(1, max_n + 1))
    m = int(g.integers(1, n + 1))
    d = int(g.integers(1, max_d + 1))
    rk = d if full_rank else int(g.integers(1, d + 1))
    rv = d if full_rank else int(g.integers(1, d + 1))
    q = g.standard_normal((m, d))
    k = g.standard_normal((n, d))
    v = g.standard_normal((n, d))
    kb = ProjectionBasis(qr_orthonormalize(g.standard_normal((d, rk))))
    vb = ProjectionBasis(qr_orthonormalize(g.standard_normal((d, rv))))
    return q, k, v, kb, vb, bool(g.integers(0, 2))


def cmd_equiv_check(trials: int, max_n: int = 256, max_d: int = 64, seed: int = 0,
                    full_rank_every: int = 5) -> EquivSummary:
    """Randomized cross-regime checks.

    Every trial compares the logits ``Q K^^T`` with ``Q~ K~^T`` and the
    kernel output with the reconstruct output. Every ``full_rank_every``-th
    trial uses ``r = d_h`` and additionally compares both with full attention.
    """
    if trials < 1 or max_n < 1 or max_d < 1:
        raise ValueError("trials, max_n and max_d must be positive")
    g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    worst_logit = worst_out = worst_full = 0.0
    failures = n_full = 0
    for i in range(trials):
        full_rank = full_rank_every > 0 and i % full_rank_every == 0
        q, k, v, kb, vb, causal = random_instance(g, max_n, max_d, full_rank)
        qt, kt, vt = project_rows(q, kb.u), project_rows(k, kb.u), project_rows(v, vb.u)
        gl = logit_gap(q, kt @ kb.u.T, qt, kt)
        kern = attend_lowrank_kernel(qt, kt, vt, vb, causal).o
        recon = attend_compressed(q, kt, vt, kb, vb, causal).o
        go = float(np.max(np.abs(kern - recon)))
        bad = gl > EQUIV_TOL or go > EQUIV_TOL
        worst_logit, worst_out = max(worst_logit, gl), max(worst_out, go)
        if full_rank:
            n_full += 1
            ref = attend_full(q, k, v, causal).o
            gf = max(float(np.max(np.abs(kern - ref))), float(np.max(np.abs(recon - ref))))
            worst_full = max(worst_full, gf)
            bad = bad or gf > FULL_RANK_TOL
        failures += bad
    return EquivSummary(trials, n_full, worst_logit, worst_out, worst_full, failures)


def cmd_memory_report(batch, seq, layers, kv_heads, d_h, bytes_per_scalar, r_k, r_v) -> list[str]:
    m_full, m_low, saving = deployment_memory(batch, seq, layers, kv_heads, d_h, bytes_per_scalar, r_k, r_v)
    return [
        f"bytes_full={m_full}",
        f"bytes_lowrank={m_low}",
        f"saving={saving} ({float(saving):.6g})",
        f"gib_full={float(Fraction(m_full) / 2**30):.6g}",
    ]
