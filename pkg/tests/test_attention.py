import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptkv.attention import (
    attend_compressed, attend_full, attend_lowrank_kernel, attend_reconstruct, decode_step, logit_gap,
)
from adaptkv.cache import HybridKvCache
from adaptkv.errors import DimensionError
from adaptkv.numerics import project_rows, qr_orthonormalize
from adaptkv.subspace import OjaConfig, ProjectionBasis


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def naive_attention(q, k, v, causal):
    """Loop-level oracle."""
    m, n = q.shape[0], k.shape[0]
    out = np.zeros((m, v.shape[1]))
    for i in range(m):
        visible = n - m + i + 1 if causal else n
        s = [q[i] @ k[j] / math.sqrt(q.shape[1]) for j in range(visible)]
        top = max(s)
        w = [math.exp(x - top) for x in s]
        out[i] = sum(wj * v[j] for j, wj in enumerate(w)) / sum(w)
    return out


@pytest.mark.parametrize("causal", [False, True])
def test_full_attention_matches_loop_oracle(backend, causal):
    q, k, v = rand((3, 5), 1), rand((7, 5), 2), rand((7, 5), 3)
    out = attend_full(q, k, v, causal)
    np.testing.assert_allclose(out.o, naive_attention(q, k, v, causal), atol=1e-13)
    assert out.regime == "full"
    assert out.flop_count == 2 * 2 * 3 * 7 * 5


def test_causal_single_query_sees_everything():
    q, k, v = rand((1, 4), 1), rand((6, 4), 2), rand((6, 4), 3)
    np.testing.assert_allclose(attend_full(q, k, v, True).o, attend_full(q, k, v, False).o, atol=1e-15)


@st.composite
def instances(draw):
    n = draw(st.integers(1, 24))
    m = draw(st.integers(1, n))
    d = draw(st.integers(1, 12))
    rk, rv = draw(st.integers(1, d)), draw(st.integers(1, d))
    seed = draw(st.integers(0, 10_000))
    g = np.random.default_rng(seed)
    kb = ProjectionBasis(qr_orthonormalize(g.standard_normal((d, rk))))
    vb = ProjectionBasis(qr_orthonormalize(g.standard_normal((d, rv))))
    return g.standard_normal((m, d)), g.standard_normal((n, d)), g.standard_normal((n, d)), kb, vb, draw(st.booleans())


@settings(max_examples=80, deadline=None)
@given(instances())
def test_kernel_and_reconstruct_regimes_agree(inst):
    q, k, v, kb, vb, causal = inst
    qt, kt, vt = project_rows(q, kb.u), project_rows(k, kb.u), project_rows(v, vb.u)
    assert logit_gap(q, kt @ kb.u.T, qt, kt) <= 1e-12
    kern = attend_lowrank_kernel(qt, kt, vt, vb, causal)
    recon = attend_compressed(q, kt, vt, kb, vb, causal)
    np.testing.assert_allclose(kern.o, recon.o, atol=1e-12)
    direct = attend_reconstruct(q, kt @ kb.u.T, vt @ vb.u.T, causal)
    np.testing.assert_allclose(direct.o, recon.o, atol=1e-12)
    assert direct.flops.expand == 0


def test_full_rank_kernel_equals_full_attention():
    d = 6
    u = ProjectionBasis(qr_orthonormalize(rand((d, d), 4)))
    q, k, v = rand((4, d), 5), rand((9, d), 6), rand((9, d), 7)
    out = attend_lowrank_kernel(project_rows(q, u.u), project_rows(k, u.u), project_rows(v, u.u), u, True)
    np.testing.assert_allclose(out.o, attend_full(q, k, v, True).o, atol=1e-13)


def test_shape_errors():
    u = ProjectionBasis(np.eye(4)[:, :2])
    with pytest.raises(DimensionError):
        attend_full(np.ones((1, 3)), np.ones((2, 4)), np.ones((2, 4)))
    with pytest.raises(DimensionError):
        attend_lowrank_kernel(np.ones((1, 2)), np.ones((2, 3)), np.ones((2, 2)), u)
    with pytest.raises(DimensionError):
        attend_lowrank_kernel(np.ones((1, 2)), np.ones((2, 2)), np.ones((2, 3)), u)
    with pytest.raises(DimensionError):
        logit_gap(np.ones((1, 4)), np.ones((2, 4)), np.ones((1, 2)), np.ones((3, 2)))


def test_decode_step_over_a_cache_equals_attention_over_its_reconstruction():
    kb = ProjectionBasis(qr_orthonormalize(rand((8, 3), 1)))
    vb = ProjectionBasis(qr_orthonormalize(rand((8, 3), 2)))
    c = HybridKvCache(kb, vb, OjaConfig(n_start=2, n_recent=2, buffer_period=8))
    c.ingest_prompt(rand((10, 8), 3), rand((10, 8), 4))
    c.append_decode(rand(8, 5), rand(8, 6))
    q = rand(8, 7)
    k_hat, v_hat = c.materialize()
    out = decode_step(q, c)
    assert out.o.shape == (1, 8) and out.regime == "hybrid"
    np.testing.assert_allclose(out.o, attend_full(q[None], k_hat, v_hat).o, atol=1e-14)
    masked = decode_step(q, c, causal_position=4)
    np.testing.assert_allclose(masked.o, attend_full(q[None], k_hat[:5], v_hat[:5]).o, atol=1e-14)


def test_decode_step_errors():
    kb = ProjectionBasis(np.eye(4)[:, :2])
    c = HybridKvCache(kb, kb, OjaConfig())
    with pytest.raises(ValueError):
        decode_step(np.ones(4), c)
    c.ingest_prompt(np.ones((3, 4)), np.ones((3, 4)))
    with pytest.raises(DimensionError):
        decode_step(np.ones(5), c)
    with pytest.raises(ValueError):
        decode_step(np.ones(4), c, causal_position=-1)
