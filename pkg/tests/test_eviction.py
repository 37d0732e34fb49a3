from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptkv.errors import DimensionError
from adaptkv.eviction import (
    Selector, apply_selector, combined_memory_fraction, commutation_gap, compounded_ratio,
    contraction_check,
)
from adaptkv.numerics import qr_orthonormalize


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def test_selector_validation():
    with pytest.raises(ValueError):
        Selector((2, 1), 4)
    with pytest.raises(ValueError):
        Selector((1, 1), 4)
    with pytest.raises(IndexError):
        Selector((0, 4), 4)
    s = Selector.keep_all(3)
    assert s.m == 3 and s.mask().all()


def test_gather_equals_explicit_selector_product():
    k = rand((6, 3), 1)
    sel = Selector((0, 2, 5), 6)
    np.testing.assert_array_equal(apply_selector(k, sel), sel.as_matrix().T @ k)
    np.testing.assert_array_equal(apply_selector(k.T, sel, axis=1), k.T @ sel.as_matrix())
    with pytest.raises(DimensionError):
        apply_selector(rand((5, 3)), sel)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(1, 10), st.data())
def test_projection_commutes_with_selection(n, d, data):
    r = data.draw(st.integers(1, d))
    keep = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    seed = data.draw(st.integers(0, 10_000))
    sel = Selector(tuple(np.flatnonzero(keep)), n)
    u = qr_orthonormalize(rand((d, r), seed))
    assert commutation_gap(rand((n, d), seed + 1), u, sel) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(1, 10), st.data())
def test_projection_contracts_evicted_energy(n, d, data):
    r = data.draw(st.integers(1, d))
    keep = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    seed = data.draw(st.integers(0, 10_000))
    sel = Selector(tuple(np.flatnonzero(keep)), n)
    lhs, rhs = contraction_check(rand((n, d), seed), qr_orthonormalize(rand((d, r), seed + 2)), sel)
    assert lhs <= rhs + 1e-12


def test_contraction_is_tight_for_a_full_rank_basis():
    k = rand((8, 5), 3)
    sel = Selector((1, 4), 8)
    lhs, rhs = contraction_check(k, qr_orthonormalize(rand((5, 5), 4)), sel)
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_keep_everything_drops_nothing():
    lhs, rhs = contraction_check(rand((4, 3)), np.eye(3)[:, :1], Selector.keep_all(4))
    assert lhs == rhs == 0.0


def test_compounded_ratio_examples():
    assert compounded_ratio(128, 64, 1000, 250) == 8
    assert compounded_ratio(128, 128, 10, 10) == 1
    assert compounded_ratio(128, 0.8 * 128, 1, 1) == Fraction(5, 4)
    with pytest.raises(ZeroDivisionError):
        compounded_ratio(128, 0, 10, 5)
    with pytest.raises(ValueError):
        compounded_ratio(8, 16, 10, 5)


def test_combined_fraction_is_exact():
    assert combined_memory_fraction(0.6, 0.5) == Fraction(3, 10)
    assert combined_memory_fraction(Fraction(1, 3), 1) == Fraction(1, 3)
