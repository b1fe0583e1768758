"""Shared numerical primitives.

Log-domain quantities are plain floats holding the natural logarithm of a
nonnegative number, with ``-inf`` standing for zero.  Exact thresholds use
:class:`fractions.Fraction`.  Everything is in nats.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.special import gammaln

LOG_ZERO = -math.inf

# Berry-Esseen constants: conservative end of the known range, and the
# bound for identically distributed summands.
BERRY_ESSEEN_C0 = 0.5600
BERRY_ESSEEN_C0_IID = 0.4784

RationalLike = Union[Fraction, int, str, float]


class DomainError(ValueError):
    """Argument outside the domain of a numerical primitive."""


def as_fraction(value: RationalLike) -> Fraction:
    """Convert ``value`` to an exact rational.

    Strings may be ``"p/q"`` or decimal literals; floats are converted through
    their shortest ``repr`` so that ``0.1`` becomes ``1/10`` rather than the
    binary double nearest to it.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DomainError(f"non-finite value {value!r} has no rational form")
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as a rational")


def log_add(a: float, b: float) -> float:
    """ln(e^a + e^b) without overflow."""
    if a == LOG_ZERO:
        return b
    if b == LOG_ZERO:
        return a
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def log_sum(values: Iterable[float]) -> float:
    """ln(sum(exp(v))) over an iterable of log-domain values."""
    arr = np.fromiter(values, dtype=float)
    if arr.size == 0:
        return LOG_ZERO
    hi = arr.max()
    if hi == LOG_ZERO:
        return LOG_ZERO
    if math.isinf(hi):
        return math.inf
    return float(hi + math.log(np.exp(arr - hi).sum()))


def gaussian_q(x: float) -> float:
    """Complementary standard normal cdf, Q(x) = P[N(0,1) > x]."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def _normal_density(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def gaussian_q_inv(eps: float, tol: float = 1e-12) -> float:
    """Inverse of :func:`gaussian_q` on (0, 1).

    Newton's method on ln Q(x) = ln eps, safeguarded by a bisection bracket;
    working with ln Q keeps the steps large deep in the tail.
    """
    if not 0.0 < eps < 1.0:
        raise DomainError(f"gaussian_q_inv needs 0 < eps < 1, got {eps!r}")
    if eps > 0.5:
        return -gaussian_q_inv(1.0 - eps, tol)
    target = math.log(eps)
    lo, hi = 0.0, 40.0
    x = 0.0
    for _ in range(200):
        q = gaussian_q(x)
        g = (math.log(q) if q > 0 else -math.inf) - target
        if g > 0:
            lo = x
        else:
            hi = x
        nx = 0.5 * (lo + hi)
        if q > 0:
            newton = x + g * q / _normal_density(x)  # d/dx ln Q = -density / Q
            if lo < newton < hi:
                nx = newton
        if abs(nx - x) < tol:
            return nx
        x = nx
    return x


def binary_entropy(p: float) -> float:
    """Binary entropy in nats, with 0 ln 0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"binary_entropy needs 0 <= p <= 1, got {p!r}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log(p) - (1.0 - p) * math.log1p(-p)


def log_binomial(n: int, i):
    """ln C(n, i) via log-gamma; ``i`` may be an array."""
    return gammaln(n + 1.0) - gammaln(np.asarray(i) + 1.0) - gammaln(n - np.asarray(i) + 1.0)


def log_binosum_table(n: int) -> np.ndarray:
    """Array ``t`` with ``t[j] = ln sum_{i<=j} C(n, i)`` for ``j = 0..n``."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    terms = log_binomial(n, np.arange(n + 1))
    return np.logaddexp.accumulate(terms)


def log_binosum(k: int, j: int) -> float:
    """ln of the partial binomial sum sum_{i=0}^{j} C(k, i).

    Returns ``LOG_ZERO`` for ``j < 0`` and ``k ln 2`` for ``j >= k``.
    """
    if k < 0:
        raise DomainError("k must be nonnegative")
    if j < 0:
        return LOG_ZERO
    if j >= k:
        return k * math.log(2.0)
    terms = log_binomial(k, np.arange(j + 1))
    hi = terms.max()
    # rounding must not push a partial sum past the full sum 2^k
    return min(float(hi + math.log(np.exp(terms - hi).sum())), k * math.log(2.0))


def berry_esseen_ratio(
    moments: Sequence[tuple[float, float, float]], identical: bool = False
) -> float:
    """Berry-Esseen ratio c0 * T / V^(3/2) for independent summands.

    Args:
        moments: one ``(mean, variance, E|W - mean|^3)`` triple per summand.
        identical: use the constant valid for identically distributed
            summands instead of the conservative general one.
    """
    if not moments:
        raise DomainError("need at least one summand")
    variances = np.array([m[1] for m in moments], dtype=float)
    thirds = np.array([m[2] for m in moments], dtype=float)
    if np.any(variances <= 0):
        raise DomainError("all variances must be positive")
    v = variances.mean()
    t = thirds.mean()
    c0 = BERRY_ESSEEN_C0_IID if identical else BERRY_ESSEEN_C0
    return float(c0 * t / v**1.5)
