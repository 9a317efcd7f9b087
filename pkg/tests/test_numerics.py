import warnings
from decimal import Decimal

import gmpy2
import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threebody.numerics import (DegenerateSystemWarning, bits_for, determinant, digits_of, eigenvalues,
                                from_mpmath, norm2, svd_least_norm_solve, to_decimal, to_mpmath, working_precision,
                                xarray, xreal)


def test_backend_switch():
    assert isinstance(xreal("0.1", 15), float)
    assert isinstance(xreal("0.1", 16), gmpy2.mpfr)
    assert xarray([1, 2], 15).dtype == float
    assert xarray([1, 2], 40).dtype == object


def test_short_literals_round_once_at_target_precision():
    x = xreal("0.95", 50)
    with mpmath.workdps(60):
        err = abs(to_mpmath(x) - mpmath.mpf("0.95"))
        assert err < mpmath.mpf(10) ** -50


def test_digits_roundtrip():
    a = xarray(["1.5", "2"], 40)
    assert digits_of(a) == 40
    assert digits_of(np.zeros(3)) == 15


def test_to_decimal_high_precision():
    with working_precision(60):
        third = xreal(1, 60) / 3
    d = to_decimal(third, 50)
    assert str(d) == "0." + "3" * 50


def test_to_decimal_float_is_shortest_repr():
    assert to_decimal(0.1, 15) == Decimal("0.1")


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_mpmath_bridge_roundtrip(v):
    x = xreal(repr(v), 50)
    with mpmath.workdps(60):
        back = from_mpmath(to_mpmath(x), 50)
    assert back == x


def test_bits_cover_digits():
    assert bits_for(40) >= 133 + 10


def test_least_norm_matches_pseudoinverse_float():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(12, 4))
    b = rng.normal(size=12)
    z = svd_least_norm_solve(A, b, 15)
    np.testing.assert_allclose(z, np.linalg.pinv(A) @ b, rtol=1e-12)


def test_least_norm_rank_deficient_high_precision():
    # columns 0 and 1 are identical: least-norm spreads the weight evenly
    A = xarray([[1, 1, 0], [0, 0, 1], [1, 1, 1]], 30)
    b = xarray([2, 1, 3], 30)
    z, info = svd_least_norm_solve(A, b, 30, full_output=True)
    assert info["rank"] == 2
    for got, want in zip(z, [1, 1, 1]):
        assert abs(got - want) < 1e-25


def test_least_norm_rank_zero_warns():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        z = svd_least_norm_solve(np.zeros((3, 2)), np.ones(3), 15)
    assert np.all(z == 0)
    assert any(issubclass(w.category, DegenerateSystemWarning) for w in rec)


def test_least_norm_column_shape_and_errors():
    z = svd_least_norm_solve(np.eye(3), np.ones((3, 1)), 15)
    assert z.shape == (3, 1)
    with pytest.raises(ValueError):
        svd_least_norm_solve(np.eye(3), np.array([1.0, np.nan, 0.0]), 15)
    with pytest.raises(ValueError):
        svd_least_norm_solve(np.eye(3), np.ones(4), 15)


def test_eigenvalues_companion_matrix_high_precision():
    # roots of (x - 1)(x - 2)(x - 3) = x^3 - 6x^2 + 11x - 6
    C = xarray([[6, -11, 6], [1, 0, 0], [0, 1, 0]], 40)
    lam = sorted(eigenvalues(C), key=lambda z: float(z.real))
    with mpmath.workdps(45):
        for z, want in zip(lam, (1, 2, 3)):
            assert abs(z - want) < mpmath.mpf(10) ** -35


def test_eigenvalues_rotation_float():
    c, s = np.cos(0.3), np.sin(0.3)
    lam = eigenvalues(np.array([[c, -s], [s, c]]))
    np.testing.assert_allclose(np.abs(lam), 1.0, atol=1e-15)
    np.testing.assert_allclose(sorted(np.angle(lam)), [-0.3, 0.3], atol=1e-14)


def test_eigenvalues_reject_rectangular():
    with pytest.raises(ValueError):
        eigenvalues(np.ones((2, 3)))


def test_determinant_both_backends():
    M = [[2, 1], [7, 4]]
    assert determinant(np.array(M, dtype=float)) == pytest.approx(1.0)
    assert abs(determinant(xarray(M, 40)) - 1) < 1e-38


@pytest.mark.parametrize("digits", [15, 30])
def test_trust_radius_caps_step_and_keeps_short_ones(digits):
    A = xarray([[1.0, 0.0], [0.0, 1e-3], [0.0, 0.0]], digits)
    b = xarray([1.0, 1.0, 0.0], digits)
    z, info = svd_least_norm_solve(A, b, digits, full_output=True, radius=0.5)
    assert float(norm2(z)) == pytest.approx(0.5, rel=1e-9)
    assert info["damping"] > 0
    # the damped step is (A^T A + lam I)^-1 A^T b
    lam = info["damping"]
    assert float(z[0]) == pytest.approx(1 / (1 + lam), rel=1e-9)
    assert float(z[1]) == pytest.approx(1e-3 / (1e-6 + lam), rel=1e-9)
    short, info = svd_least_norm_solve(A, xarray([1e-4, 1e-7, 0.0], digits), digits, full_output=True, radius=0.5)
    assert info["damping"] == 0
    np.testing.assert_allclose([float(v) for v in short], [1e-4, 1e-4], rtol=1e-12)
