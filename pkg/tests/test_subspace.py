import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptkv.errors import DimensionError
from adaptkv.metrics import subspace_overlap
from adaptkv.numerics import qr_orthonormalize
from adaptkv.subspace import (
    BasisTransition, OjaConfig, ProjectionBasis, adapt_decode_flush, adapt_prefill, dumps_basis,
    energy_rank, harmonize_layer_rank, init_basis_qk, init_basis_v, load_basis, loads_basis,
    oja_batch_update, save_basis,
)


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def random_basis(d, r, seed=0, version=0):
    return ProjectionBasis(qr_orthonormalize(rand((d, r), seed)), version)


def projector(b):
    return b.u @ b.u.T


class TestProjectionBasis:
    def test_rejects_non_orthonormal_columns(self):
        with pytest.raises(ValueError, match="orthonormal"):
            ProjectionBasis(np.ones((3, 1)))

    @pytest.mark.parametrize("shape", [(3, 4), (3, 0)])
    def test_rejects_bad_rank(self, shape):
        with pytest.raises(DimensionError):
            ProjectionBasis(np.zeros(shape))

    def test_stores_a_read_only_copy(self):
        u = np.eye(3)[:, :2]
        b = ProjectionBasis(u)
        u[0, 0] = 5.0
        assert b.u[0, 0] == 1.0
        with pytest.raises(ValueError):
            b.u[0, 0] = 2.0
        assert (b.d_h, b.r, b.version) == (3, 2, 0)


class TestOjaConfig:
    def test_defaults(self):
        c = OjaConfig()
        assert (c.eta_pre, c.eta_dec, c.buffer_period) == (0.10, 0.05, 32)
        assert (c.n_start, c.n_recent, c.window, c.topk_fraction) == (32, 32, 32, 0.05)

    @pytest.mark.parametrize("kwargs", [
        {"eta_dec": 0.2},
        {"eta_dec": -0.01},
        {"buffer_period": 0},
        {"n_start": -1},
        {"window": 0},
        {"topk_fraction": 0.0},
        {"energy_threshold": 1.5},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            OjaConfig(**kwargs)

    def test_equal_rates_are_allowed(self):
        OjaConfig(eta_pre=0.1, eta_dec=0.1)


@pytest.mark.parametrize("sigma, eps, want", [
    ([3.0, 1.0, 1.0], 0.5, 1),
    ([3.0, 1.0, 1.0], 0.9, 2),
    ([3.0, 1.0, 1.0], 1.0, 3),
    ([1.0, 1.0, 1.0, 1.0], 0.5, 2),
])
def test_energy_rank(sigma, eps, want):
    assert energy_rank(np.array(sigma), eps) == want


def test_energy_rank_rejects_zero_energy():
    with pytest.raises(ValueError):
        energy_rank(np.zeros(3), 0.9)


def test_init_recovers_the_span_of_exactly_low_rank_samples():
    truth = qr_orthonormalize(rand((10, 3), 1))
    q = rand((40, 3), 2) @ truth.T
    k = rand((60, 3), 3) @ truth.T
    kb, r = init_basis_qk(q, k, 0.999999)
    assert r == 3
    np.testing.assert_allclose(projector(kb), truth @ truth.T, atol=1e-10)
    vb, rv = init_basis_v(k, 0.5, rank=2)
    assert rv == 2 and vb.r == 2


def test_init_stacks_queries_and_keys_along_the_sample_axis():
    # queries alone span e0, keys alone span e1; the shared basis needs both
    q = np.zeros((5, 4))
    q[:, 0] = 2.0
    k = np.zeros((5, 4))
    k[:, 1] = 1.0
    kb, r = init_basis_qk(q, k, 0.999)
    assert r == 2
    np.testing.assert_allclose(np.abs(kb.u[:2]), np.eye(2), atol=1e-14)


def test_init_errors():
    with pytest.raises(DimensionError):
        init_basis_qk(np.ones((2, 3)), np.ones((2, 4)), 0.9)
    with pytest.raises(ValueError):
        init_basis_v(rand((3, 5)), 0.9, rank=4)


def test_harmonize_takes_the_largest_rank():
    assert harmonize_layer_rank([3, 7, 5]) == 7
    with pytest.raises(ValueError):
        harmonize_layer_rank([])


def test_batch_update_matches_per_column_formula():
    b = random_basis(6, 2, 4)
    x = rand((5, 6), 5)
    eta = 0.07
    u = b.u
    want = u.copy()
    for row in x:
        y = u.T @ row
        want += eta * np.outer(row - u @ y, y)
    np.testing.assert_allclose(oja_batch_update(b, x, eta), want, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.data())
def test_update_keeps_the_old_basis_as_a_left_inverse(d, data):
    # U^T U' = I, so the raw update never loses rank
    r = data.draw(st.integers(1, d))
    seed = data.draw(st.integers(0, 10_000))
    eta = data.draw(st.floats(0.0, 5.0))
    b = random_basis(d, r, seed)
    raw = oja_batch_update(b, rand((7, d), seed + 1) * 3.0, eta)
    np.testing.assert_allclose(b.u.T @ raw, np.eye(r), atol=1e-9 * max(1.0, eta * 100))


def test_update_rejects_wrong_width_and_negative_rate():
    b = random_basis(4, 2)
    with pytest.raises(DimensionError):
        oja_batch_update(b, np.ones((2, 5)), 0.1)
    with pytest.raises(ValueError):
        oja_batch_update(b, np.ones((2, 4)), -0.1)


def test_zero_rate_flush_keeps_the_span_but_bumps_versions():
    kb, vb = random_basis(8, 3, 1, version=4), random_basis(8, 2, 2, version=4)
    cfg = OjaConfig(eta_dec=0.0)
    kb2, vb2, tk, tv = adapt_decode_flush(kb, vb, rand((32, 8), 3), rand((32, 8), 4), cfg)
    assert (kb2.version, vb2.version) == (5, 5)
    assert (tk.from_version, tk.to_version) == (4, 5)
    np.testing.assert_allclose(projector(kb2), projector(kb), atol=1e-14)
    assert tv.m.shape == (2, 2)


def test_empty_prefill_selection_is_a_no_op():
    kb, vb = random_basis(5, 2, 1), random_basis(5, 2, 2)
    kb2, vb2, tk, tv = adapt_prefill(kb, vb, np.zeros((0, 5)), np.zeros((0, 5)), OjaConfig())
    assert kb2 is kb and vb2 is vb
    np.testing.assert_array_equal(tk.m, np.eye(2))


def test_repeated_flushes_find_a_planted_subspace():
    truth = qr_orthonormalize(rand((16, 2), 10))
    kb = vb = random_basis(16, 2, 11)
    g = np.random.default_rng(12)
    cfg = OjaConfig()
    for _ in range(100):
        x = (g.standard_normal((32, 2)) * [0.6, 0.4]) @ truth.T + 0.01 * g.standard_normal((32, 16))
        kb, vb, _, _ = adapt_decode_flush(kb, vb, x, x, cfg)
    assert subspace_overlap(kb, truth) > 0.999


def test_transition_equals_reconstruct_then_recompress():
    old, new = random_basis(9, 3, 1), random_basis(9, 4, 2, version=1)
    coords = rand((6, 3), 3)
    t = BasisTransition.between(old, new)
    np.testing.assert_allclose(t.apply(coords), (coords @ old.u.T) @ new.u, atol=1e-14)
    assert t.apply(np.zeros((0, 3))).shape == (0, 4)


def test_basis_text_round_trip_is_exact(tmp_path):
    b = random_basis(7, 3, 5, version=12)
    again = loads_basis(dumps_basis(b))
    np.testing.assert_array_equal(again.u, b.u)
    assert again.version == 12
    save_basis(b, tmp_path / "b.txt")
    np.testing.assert_array_equal(load_basis(tmp_path / "b.txt").u, b.u)


@pytest.mark.parametrize("text", [
    "",
    "something else\n1 2\n",
    "adaptkv-basis v1 d_h=2 r=1 version=0\n1.0\n",
    "adaptkv-basis v1 d_h=2 r=1\n1.0\n0.0\n",
])
def test_basis_loader_rejects_malformed_text(text):
    with pytest.raises(ValueError):
        loads_basis(text)
