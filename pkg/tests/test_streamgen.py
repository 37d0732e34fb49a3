import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptkv.metrics import rer, subspace_overlap
from adaptkv.streamgen import ActivationBank, DriftEvent, StreamSpec, generate, oracle_basis, true_basis


def spec(**kw):
    base = {"d_h": 16, "true_rank": 4, "spectrum": (1.0, 0.8, 0.6, 0.5), "seed": 3}
    base.update(kw)
    return StreamSpec(**base)


def test_generation_is_deterministic_and_position_keyed():
    s = spec(noise_sigma=0.1)
    a = generate(s, 50, 0)
    np.testing.assert_array_equal(a, generate(s, 50, 0))
    assert not np.array_equal(a, generate(s, 50, 0, block=1))
    assert not np.array_equal(a, generate(s.with_seed(4), 50, 0))
    assert not np.array_equal(generate(s, 5, -5), generate(s, 5, 5))


def test_noiseless_rows_live_in_the_true_subspace():
    s = spec()
    x = generate(s, 200, -200)
    assert rer(x, true_basis(s, -1)) == pytest.approx(0.0, abs=1e-20)
    b = true_basis(s, 0)
    np.testing.assert_allclose(b.T @ b, np.eye(4), atol=1e-14)


def test_queries_share_the_key_subspace_and_values_do_not():
    s = spec()
    kb = true_basis(s, 0, "k")
    np.testing.assert_array_equal(kb, true_basis(s, 0, "q"))
    assert subspace_overlap(kb, true_basis(s, 0, "v")) < 0.9


def test_single_plane_rotation_lowers_overlap_by_sin_squared_over_rank():
    angle = 0.6
    s = spec(drift=[DriftEvent(0, angle, 7)])
    before, after = true_basis(s, -1), true_basis(s, 0)
    assert subspace_overlap(before, after) == pytest.approx(1 - math.sin(angle) ** 2 / 4, abs=1e-12)


def test_drift_events_replace_the_spectrum():
    s = spec(drift=[DriftEvent(10, 0.0, 1, (1.0, 0.0, 0.0, 0.0))])
    x = generate(s, 20, 0)
    assert np.linalg.matrix_rank(x[10:], 1e-10) == 1
    assert np.linalg.matrix_rank(x[:10], 1e-10) == 4


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, math.pi / 2 - 0.05), st.floats(0.01, 0.05), st.integers(0, 1000))
def test_frozen_basis_error_grows_with_rotation_angle(a, delta, plane):
    def err(angle):
        s = spec(drift=[DriftEvent(0, angle, plane)])
        return rer(generate(s, 400, 0), true_basis(s, -1))

    assert err(a + delta) >= err(a) - 1e-12


def test_calibration_oracle_misses_the_drifted_test_block():
    s = spec(noise_sigma=0.02, drift=[DriftEvent(0, math.pi / 4, 7)])
    calib = oracle_basis(generate(s, 500, -500), 4)
    test = oracle_basis(generate(s, 500, 0), 4)
    assert subspace_overlap(calib, test) < 0.95
    np.testing.assert_allclose(rer(generate(s, 10, 0), np.eye(16)), 0.0, atol=1e-15)


@pytest.mark.parametrize("kwargs", [
    {"true_rank": 0},
    {"true_rank": 17},
    {"noise_sigma": -1.0},
    {"spectrum": (1.0, 2.0)},
    {"drift": [DriftEvent(5, 0.1, 1), DriftEvent(5, 0.1, 2)]},
])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        spec(**kwargs)


def test_generate_argument_checks():
    with pytest.raises(ValueError):
        generate(spec(), 0)
    with pytest.raises(ValueError):
        generate(spec(), 3, kind="x")
    with pytest.raises(ValueError):
        oracle_basis(np.ones((3, 4)), 5)


def test_activation_bank():
    bank = ActivationBank()
    q = np.zeros((2, 3))
    bank.add("calibration", q, q, q)
    assert bank["calibration"][0].shape == (2, 3)
    with pytest.raises(ValueError):
        bank.add("test", np.zeros((2, 4)), np.zeros((2, 4)), np.zeros((2, 4)))
