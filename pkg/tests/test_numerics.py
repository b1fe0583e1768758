import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from noisylossy.numerics import (
    BERRY_ESSEEN_C0,
    LOG_ZERO,
    DomainError,
    as_fraction,
    berry_esseen_ratio,
    binary_entropy,
    gaussian_q,
    gaussian_q_inv,
    log_add,
    log_binosum,
    log_binosum_table,
    log_sum,
)


def test_q_values():
    assert gaussian_q(0.0) == 0.5
    assert gaussian_q(10.0) < 1e-20
    density = lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi)  # noqa: E731
    oracle, _ = quad(density, 1.2816, math.inf)
    assert gaussian_q(1.2816) == pytest.approx(oracle, abs=1e-12)
    assert gaussian_q(1.2816) == pytest.approx(0.1, abs=1e-4)


@given(st.floats(-30, 30))
def test_q_symmetry(x):
    assert gaussian_q(x) + gaussian_q(-x) == pytest.approx(1.0, abs=1e-12)


def test_q_strictly_decreasing():
    xs = np.linspace(-5, 30, 3501)  # below -5, Q rounds to 1
    qs = [gaussian_q(x) for x in xs]
    assert all(a > b for a, b in zip(qs, qs[1:]))


def _bisect_qinv(eps):
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if gaussian_q(mid) > eps:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def test_q_inv_values():
    assert gaussian_q_inv(0.5) == pytest.approx(0.0, abs=1e-12)
    assert gaussian_q_inv(0.1) == pytest.approx(_bisect_qinv(0.1), abs=1e-10)
    assert gaussian_q_inv(0.1) == pytest.approx(1.2816, abs=1e-4)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(DomainError):
            gaussian_q_inv(bad)


@given(st.floats(1e-300, 1 - 1e-16))
def test_q_inv_roundtrip(eps):
    x = gaussian_q_inv(eps)
    assert gaussian_q(x) == pytest.approx(eps, rel=1e-9, abs=1e-300)


def test_binary_entropy():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(math.log(2), abs=1e-15)
    p = 0.05 / 0.9
    assert binary_entropy(0.0556) == pytest.approx(0.2147, abs=1e-4)
    assert binary_entropy(p) == pytest.approx(-p * math.log(p) - (1 - p) * math.log(1 - p), rel=1e-14)
    with pytest.raises(DomainError):
        binary_entropy(1.1)


def test_binary_entropy_concave():
    grid = np.linspace(0, 1, 41)
    for p in grid:
        for q in grid:
            assert binary_entropy((p + q) / 2) >= (binary_entropy(p) + binary_entropy(q)) / 2 - 1e-15


def test_log_binosum_examples():
    assert log_binosum(4, 2) == pytest.approx(math.log(11), rel=1e-14)
    assert log_binosum(7, -1) == LOG_ZERO
    assert log_binosum(9, 9) == pytest.approx(9 * math.log(2), rel=1e-15)


def test_log_binosum_against_big_integers():
    worst = 0.0
    for k in range(0, 101):
        prev = -math.inf
        for j in range(-1, k + 2):
            exact = sum(math.comb(k, i) for i in range(0, min(j, k) + 1))
            got = log_binosum(k, j)
            if exact == 0:
                assert got == LOG_ZERO
            else:
                worst = max(worst, abs(got - math.log(exact)) / math.log(exact) if exact > 1 else abs(got))
            assert got >= prev
            prev = got
    assert worst <= 1e-10


def test_log_binosum_table_matches_scalar():
    for n in (0, 1, 5, 37, 200):
        table = log_binosum_table(n)
        for j in range(n + 1):
            assert table[j] == pytest.approx(log_binosum(n, j), rel=1e-12, abs=1e-12)


def test_log_add_and_sum():
    assert log_add(LOG_ZERO, 1.5) == 1.5
    assert log_add(math.log(2), math.log(3)) == pytest.approx(math.log(5))
    assert log_sum([]) == LOG_ZERO
    assert log_sum([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2))


def test_berry_esseen():
    assert berry_esseen_ratio([(0, 1, 1)] * 5, identical=True) == pytest.approx(0.4784)
    assert berry_esseen_ratio([(0, 4, 8)]) == pytest.approx(0.56)
    # variances 1 and 3 average to 2; third moments 2 and 10 average to 6
    assert berry_esseen_ratio([(0, 1, 2), (0, 3, 10)]) == pytest.approx(BERRY_ESSEEN_C0 * 6 / 2**1.5)
    with pytest.raises(DomainError):
        berry_esseen_ratio([])


def test_as_fraction():
    assert as_fraction(0.1) == Fraction(1, 10)
    assert as_fraction("3/8") == Fraction(3, 8)
    assert as_fraction("0.25") == Fraction(1, 4)
    with pytest.raises(DomainError):
        as_fraction(float("inf"))
