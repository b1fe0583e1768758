"""Erased fair coin flips: closed forms and exact finite-blocklength bounds.

A fair bit S is seen through an erasure channel with erasure rate delta and
reproduced under bit-error distortion.  Two coding problems share the same
rate-distortion function:

* the *noisy* problem, where each erased bit is wrong with probability 1/2
  independently of the code, so the errors on j erased positions are
  Binomial(j, 1/2);
* the *surrogate* problem, where each erasure costs exactly 1/2.

For each problem there is a sphere-covering converse and an exact
random-coding achievability bound.  All bounds also accept the code size as
``log_m = ln M`` so that blocklengths in the thousands never overflow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .dispersion import ThirdOrder, gaussian_approximation
from .numerics import as_fraction, binary_entropy, log_binomial, log_binosum_table

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
# (j, i) pairs whose total weight is below e^LOG_NEGLIGIBLE are dropped; the
# dropped mass is charged to achievability bounds so they stay valid.
LOG_NEGLIGIBLE = -80.0


class BesRangeError(ValueError):
    """Parameters outside delta/2 <= d <= 1/2."""


@dataclass(frozen=True)
class BesParams:
    """Erasure rate, per-letter distortion threshold and target excess probability."""

    delta: Fraction
    d: Fraction
    eps: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "delta", as_fraction(self.delta))
        object.__setattr__(self, "d", as_fraction(self.d))
        if not 0 <= self.delta <= 1:
            raise BesRangeError(f"delta={self.delta} outside [0, 1]")
        if not self.delta / 2 <= self.d <= Fraction(1, 2):
            raise BesRangeError(f"d={self.d} outside [delta/2, 1/2] = [{self.delta / 2}, 1/2]")
        if not 0 < self.eps < 1:
            raise BesRangeError(f"eps={self.eps} outside (0, 1)")


def bes_rate(params: BesParams) -> float:
    """R(d) = (1 - delta)(ln 2 - h((d - delta/2) / (1 - delta))), nats."""
    delta, d = params.delta, params.d
    if delta == 1:
        return 0.0
    p = float((d - delta / 2) / (1 - delta))
    return float(1 - delta) * (LN2 - binary_entropy(min(p, 1.0)))


def bes_lambda_star(params: BesParams) -> float:
    """lambda* = ln((1 - delta/2 - d) / (d - delta/2)); infinite at d = delta/2."""
    delta, d = params.delta, params.d
    den = d - delta / 2
    if den == 0:
        return math.inf
    return math.log(float(1 - delta / 2 - d) / float(den))


def bes_dispersions(params: BesParams) -> tuple[float, float]:
    """(noisy dispersion, surrogate dispersion) in nats squared."""
    lam = bes_lambda_star(params)
    if math.isinf(lam):
        raise BesRangeError("dispersion undefined at d = delta/2")
    delta = float(params.delta)
    v_sur = delta * (1 - delta) * math.log(math.cosh(lam / 2)) ** 2
    return v_sur + delta / 4 * lam**2, v_sur


# --- bound evaluation -----------------------------------------------------


def _floor_kd_minus_half_j(k: int, d: Fraction, j: np.ndarray) -> np.ndarray:
    """floor(k d - j / 2), exactly, for an integer array j."""
    kd = k * d
    p, q = kd.numerator, kd.denominator
    return (2 * p - j * q) // (2 * q)


def floor_kd_minus_half_j(k: int, d: Fraction, j: int) -> int:
    return int(_floor_kd_minus_half_j(k, as_fraction(d), np.array([j], dtype=object))[0])


@dataclass
class _Terms:
    """Flattened (weight, n, ell) triples of one bound at one blocklength."""

    log_w: np.ndarray
    n: np.ndarray
    ell: np.ndarray
    log_p: np.ndarray = field(init=False)
    dropped: float = 0.0

    def __post_init__(self):
        self.log_p = np.empty(self.n.size)
        for n in np.unique(self.n):
            table = _binosum_table(int(n))
            sel = self.n == n
            ell = self.ell[sel]
            out = np.where(ell < 0, -np.inf, table[np.clip(ell, 0, n)] - n * LN2)
            out = np.where(ell >= n, 0.0, out)
            self.log_p[sel] = out


@lru_cache(maxsize=4096)
def _binosum_table(n: int) -> np.ndarray:
    return log_binosum_table(n)


def _log_weights_j(k: int, delta: Fraction) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(k + 1)
    if delta == 0:
        return np.array([0]), np.array([0.0])
    if delta == 1:
        return np.array([k]), np.array([0.0])
    dl = float(delta)
    lw = log_binomial(k, j) + j * math.log(dl) + (k - j) * math.log1p(-dl)
    return j, lw


@lru_cache(maxsize=256)
def _surrogate_terms(k: int, delta: Fraction, d: Fraction, converse: bool) -> _Terms:
    j, lw = _log_weights_j(k, delta)
    if converse:
        keep = j <= math.floor(2 * k * d)
        j, lw = j[keep], lw[keep]
    keep = lw > LOG_NEGLIGIBLE
    dropped = float(np.exp(lw[~keep]).sum())
    j, lw = j[keep], lw[keep]
    ell = _floor_kd_minus_half_j(k, d, j.astype(object)).astype(np.int64)
    return _Terms(lw, (k - j).astype(np.int64), ell, dropped)


@lru_cache(maxsize=256)
def _noisy_terms(k: int, delta: Fraction, d: Fraction) -> _Terms:
    j, lw = _log_weights_j(k, delta)
    floor_kd = math.floor(k * d)
    log_w, ns, ells = [], [], []
    dropped = float(np.exp(lw[lw <= LOG_NEGLIGIBLE]).sum())
    for jj, w in zip(j, lw):
        if w <= LOG_NEGLIGIBLE:
            continue
        i = np.arange(jj + 1)
        lwi = w + log_binomial(int(jj), i) - jj * LN2
        keep = lwi > LOG_NEGLIGIBLE
        dropped += float(np.exp(lwi[~keep]).sum())
        log_w.append(lwi[keep])
        ns.append(np.full(int(keep.sum()), k - jj, dtype=np.int64))
        ells.append(floor_kd - i[keep])
    return _Terms(np.concatenate(log_w), np.concatenate(ns), np.concatenate(ells).astype(np.int64), dropped)


def _converse_sum(terms: _Terms, log_m: float) -> float:
    x = log_m + terms.log_p
    with np.errstate(over="ignore"):
        bracket = np.where(x < 0, -np.expm1(np.minimum(x, 0.0)), 0.0)
    return min(1.0, float(np.sum(np.exp(terms.log_w) * bracket)))


def _achievability_sum(terms: _Terms, log_m: float) -> float:
    lp = terms.log_p
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        small = lp < -0.7
        log_miss = np.where(
            small, np.log1p(-np.exp(np.minimum(lp, -0.7))), np.log(-np.expm1(np.minimum(lp, 0.0)))
        )  # ln(1 - p)
        # ln(-ln(1 - p)); for tiny p this is ln p + p/2, and exp(lp) may underflow
        log_neg = np.where(lp < -30.0, lp + 0.5 * np.exp(np.minimum(lp, -30.0)), np.log(-log_miss))
        exponent = log_m + log_neg  # ln(M * -ln(1 - p))
        term = np.exp(-np.exp(exponent))
    term = np.where(np.isnan(term), 0.0, term)
    return float(np.sum(np.exp(terms.log_w) * term) + terms.dropped)


def _check(k: int, M, log_m: float | None) -> float:
    """Validate k and return ln M (``log_m`` wins when given)."""
    if k < 1:
        raise ValueError("k must be positive")
    if log_m is None:
        if M < 1:
            raise ValueError("M must be at least 1")
        return math.log(M)
    if log_m < 0:
        raise ValueError("ln M must be nonnegative")
    return log_m


def bes_converse(k: int, M: float, params: BesParams, *, log_m: float | None = None) -> float:
    """Converse for the surrogate problem: any code of size e^log_m has at least this excess probability.

    sum_{j <= floor(2kd)} C(k,j) delta^j (1-delta)^(k-j)
        [1 - M 2^-(k-j) <k-j, floor(kd - j/2)>]^+
    """
    log_m = _check(k, M, log_m)
    return _converse_sum(_surrogate_terms(k, params.delta, params.d, True), log_m)


def bes_achievability(k: int, M: float, params: BesParams, *, log_m: float | None = None) -> float:
    """Random-coding achievability for the surrogate problem.

    sum_j C(k,j) delta^j (1-delta)^(k-j) (1 - 2^-(k-j) <k-j, floor(kd - j/2)>)^M
    """
    log_m = _check(k, M, log_m)
    return min(1.0, _achievability_sum(_surrogate_terms(k, params.delta, params.d, False), log_m))


def bes_noisy_converse(k: int, M: float, params: BesParams, *, log_m: float | None = None) -> float:
    """Converse for the noisy problem.

    sum_j C(k,j) delta^j (1-delta)^(k-j) sum_i C(j,i) 2^-j
        [1 - M 2^-(k-j) <k-j, floor(kd) - i>]^+
    where i counts errors on the erased positions.
    """
    log_m = _check(k, M, log_m)
    return _converse_sum(_noisy_terms(k, params.delta, params.d), log_m)


def bes_noisy_achievability(k: int, M: float, params: BesParams, *, log_m: float | None = None) -> float:
    """Exact random-coding bound (uniform codebook) for the noisy problem.

    sum_j C(k,j) delta^j (1-delta)^(k-j) sum_i C(j,i) 2^-j
        (1 - 2^-(k-j) <k-j, floor(kd) - i>)^M
    """
    log_m = _check(k, M, log_m)
    return min(1.0, _achievability_sum(_noisy_terms(k, params.delta, params.d), log_m))


# --- code-size search -----------------------------------------------------

# ln M below this is resolved to an exact integer M
_INTEGER_SEARCH_LIMIT = 40.0


def _boundary_log_m(bound, k: int, params: BesParams, hi: float) -> float | None:
    """ln M where ``bound`` crosses eps; None if it stays above eps."""
    eps = params.eps
    g = lambda lm: bound(k, None, params, log_m=lm) - eps  # noqa: E731
    if g(0.0) <= 0:
        return 0.0
    if g(hi) > 0:
        return None
    return brentq(g, 0.0, hi, xtol=1e-12, rtol=1e-14, maxiter=400)


def _min_code_size(bound, k: int, params: BesParams) -> float:
    """ln of the smallest integer M with bound(M) <= eps (inf if none)."""
    hi = (k + 1) * LN2 + 60.0
    lb = _boundary_log_m(bound, k, params, hi)
    if lb is None:
        return math.inf
    if lb > _INTEGER_SEARCH_LIMIT:
        return lb
    m = max(1, math.ceil(math.exp(lb) - 1e-9))
    while m > 1 and bound(k, m - 1, params) <= params.eps:
        m -= 1
    while bound(k, m, params) > params.eps:
        m += 1
    return math.log(m)


def min_code_size_achievability(bound, k: int, params: BesParams) -> float:
    """ln M_a, M_a = min{M : bound(M) <= eps}."""
    return _min_code_size(bound, k, params)


def min_code_size_converse(bound, k: int, params: BesParams) -> float:
    """ln M_c, M_c = 1 + max{M : bound(M) > eps}; every code meeting eps has at least M_c codewords."""
    return _min_code_size(bound, k, params)


# --- curves ---------------------------------------------------------------


@dataclass(frozen=True)
class CurveRow:
    """Rates (nats per letter) at one blocklength.

    ``inf`` means no code of any size meets eps (the note says so); NaN
    marks a search that raised.
    """

    k: int
    rate_rd: float
    converse: float
    achievability: float
    gaussian_0: float
    gaussian_logk: float
    converse_surrogate: float
    achievability_surrogate: float
    gaussian_0_surrogate: float
    gaussian_logk_surrogate: float
    note: str = ""


@dataclass(frozen=True)
class BoundCurve:
    params: BesParams
    rows: tuple[CurveRow, ...]

    @property
    def ks(self) -> list[int]:
        return [r.k for r in self.rows]

    def row(self, k: int) -> CurveRow:
        for r in self.rows:
            if r.k == k:
                return r
        raise KeyError(k)


def default_k_grid(k_min: int = 10, k_max: int = 5000, points: int = 40) -> list[int]:
    """Log-spaced integer blocklengths, deduplicated and sorted."""
    grid = np.unique(np.round(np.geomspace(k_min, k_max, points)).astype(int))
    return [int(k) for k in grid]


def _rate(log_m: float, k: int) -> float:
    return log_m / k


def bes_curve_row(params: BesParams, k: int) -> CurveRow:
    r = bes_rate(params)
    v_noisy, v_sur = bes_dispersions(params)
    notes = []
    values = {}
    for name, bound, search in (
        ("converse", bes_noisy_converse, min_code_size_converse),
        ("achievability", bes_noisy_achievability, min_code_size_achievability),
        ("converse_surrogate", bes_converse, min_code_size_converse),
        ("achievability_surrogate", bes_achievability, min_code_size_achievability),
    ):
        try:
            values[name] = _rate(search(bound, k, params), k)
        except (ValueError, RuntimeError) as exc:  # search failure is recorded, not fatal
            values[name] = math.nan
            notes.append(f"{name}: {exc}")
        if math.isinf(values[name]):
            notes.append(f"{name}: eps unreachable")
    eps = params.eps
    return CurveRow(
        k=k,
        rate_rd=r,
        gaussian_0=gaussian_approximation(k, eps, r, v_noisy, ThirdOrder.NONE),
        gaussian_logk=gaussian_approximation(k, eps, r, v_noisy, ThirdOrder.HALF_LOG_OVER_K),
        gaussian_0_surrogate=gaussian_approximation(k, eps, r, v_sur, ThirdOrder.NONE),
        gaussian_logk_surrogate=gaussian_approximation(k, eps, r, v_sur, ThirdOrder.HALF_LOG_OVER_K),
        note="; ".join(notes),
        **values,
    )


def bes_curve(params: BesParams, k_list: Iterable[int] | None = None) -> BoundCurve:
    """Rate-blocklength tradeoff for both problems over ``k_list``."""
    ks = sorted(set(k_list)) if k_list is not None else default_k_grid()
    if not ks:
        raise ValueError("k_list must be nonempty")
    return BoundCurve(params, tuple(bes_curve_row(params, k) for k in ks))
