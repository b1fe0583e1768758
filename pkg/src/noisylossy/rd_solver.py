"""Rate-distortion solver for the surrogate problem.

For a slope ``lam`` the solver minimizes I(X; Z) + lam * E[dbar(X, Z)] by
Blahut-Arimoto alternation between the tilted kernel

    P(z | x) = q(z) exp(-lam dbar(x, z)) / sum_z' q(z') exp(-lam dbar(x, z'))

and the output marginal q.  With c(z) = sum_x P_X(x) exp(-lam dbar(x, z)) /
sum_z' q(z') exp(-lam dbar(x, z')), the quantity ln max_z c(z) bounds the
distance to the optimum of the dual, so it serves as a certified stopping
rule.  The noisy rate-distortion function equals the surrogate one, so
``solve_distortion`` returns the noisy R(d) as well.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .model import Channel, Distribution, SurrogateModel

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
MAX_ITER = 100_000
MASS_FLOOR = 1e-14


class SolverError(RuntimeError):
    """Alternating minimization failed to converge."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class DistortionRangeError(ValueError):
    """Requested distortion outside (d_min, d_max]."""


class InfeasibleError(ValueError):
    """No kernel meets the distortion constraint."""


@dataclass(frozen=True)
class TiltedSolution:
    """Optimal test channel at one point of the rate-distortion curve.

    Attributes:
        rate: I(X; Z*) in nats.
        distortion: E[dbar(X, Z*)].
        lambda_star: slope parameter (nats per unit distortion).
        kernel: P_Z*|X, rows indexed by observation.
        marginal: P_Z*.
        gap: final duality-gap certificate of the inner solve.
        iterations: Blahut-Arimoto iterations of the final inner solve.
    """

    rate: float
    distortion: float
    lambda_star: float
    kernel: Channel
    marginal: Distribution
    gap: float = 0.0
    iterations: int = 0

    def backward_channel(self, px: np.ndarray) -> np.ndarray:
        """P_X|Z* as a |Z| x |X| array (uniform rows where P_Z*(z) = 0)."""
        joint = px[:, None] * self.kernel.rows
        q = joint.sum(axis=0)
        back = np.where(q[None, :] > 0, joint / np.where(q > 0, q, 1.0)[None, :], 1.0 / len(px))
        return back.T


def _weighted(p: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """p * vals with 0 * inf = 0."""
    return np.where(p > 0, p * np.where(p > 0, vals, 0.0), 0.0)


def mutual_information(px: np.ndarray, kernel: np.ndarray) -> float:
    q = px @ kernel
    ratio = np.where(kernel > 0, kernel / np.where(q > 0, q, 1.0)[None, :], 1.0)
    return float(np.sum(px[:, None] * kernel * np.log(ratio)))


def kernel_distortion(px: np.ndarray, kernel: np.ndarray, dbar: np.ndarray) -> float:
    return float(px @ _weighted(kernel, dbar).sum(axis=1))


def row_divergences(kernel: np.ndarray, q: np.ndarray) -> np.ndarray:
    """D(P_Z|X=x || q) for every row x."""
    ratio = np.where(kernel > 0, kernel / np.where(q > 0, q, 1.0)[None, :], 1.0)
    return np.sum(kernel * np.log(ratio), axis=1)


def _tilted(log_ref: np.ndarray, lam: float, dbar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tilted kernel rows and per-row log normalizers against a reference."""
    logits = _slope_exponent(lam, dbar) + log_ref[None, :]
    lognorm = logsumexp(logits, axis=1)
    kernel = np.exp(logits - lognorm[:, None])
    return kernel, lognorm


def _slope_exponent(lam: float, dbar: np.ndarray) -> np.ndarray:
    return np.where(np.isinf(dbar), -np.inf, -lam * np.where(np.isinf(dbar), 0.0, dbar))


def solve_slope(
    surrogate: SurrogateModel,
    lam: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITER,
    init: np.ndarray | None = None,
) -> TiltedSolution:
    """Minimize I(X; Z) + lam E[dbar(X, Z)] by alternating minimization.

    Args:
        surrogate: the surrogate problem.
        lam: slope parameter, ``lam >= 0``.
        tol: stop once ln max_z c(z) < tol.
        max_iter: iteration cap.
        init: starting output marginal (uniform by default).

    Raises:
        SolverError: if the gap certificate is still above ``tol`` after
            ``max_iter`` iterations.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    px = surrogate.px
    dbar = surrogate.dbar
    nz = dbar.shape[1]
    expo = _slope_exponent(lam, dbar)
    q = np.full(nz, 1.0 / nz) if init is None else np.asarray(init, dtype=float).copy()
    q = q / q.sum()

    gap = math.inf
    for it in range(1, max_iter + 1):
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        lognorm = logsumexp(expo + logq[None, :], axis=1)
        c = px @ np.exp(expo - lognorm[:, None])
        cmax = c.max()
        gap = math.log(cmax)
        if gap < tol:
            break
        q = q * c
        dead = q < MASS_FLOOR
        if np.any(dead):
            q[dead] = 0.0
        zmax = int(np.argmax(c))
        if q[zmax] == 0.0 and cmax > 1.0 + tol:
            q[zmax] = 1e-8  # revive a symbol the certificate says is needed
        q = q / q.sum()
    else:
        raise SolverError(f"no convergence at lam={lam} after {max_iter} iterations", gap)

    with np.errstate(divide="ignore"):
        logq = np.log(q)
    kernel, _ = _tilted(logq, lam, dbar)
    marginal = px @ kernel
    marginal = marginal / marginal.sum()
    return TiltedSolution(
        rate=mutual_information(px, kernel),
        distortion=kernel_distortion(px, kernel, dbar),
        lambda_star=float(lam),
        kernel=Channel(kernel),
        marginal=Distribution(marginal),
        gap=gap,
        iterations=it,
    )


def zero_rate_solution(surrogate: SurrogateModel) -> TiltedSolution:
    """The rate-0 solution at d_max: one constant reproduction."""
    nx, nz = surrogate.dbar.shape
    z0 = surrogate.argmin_constant()
    kernel = np.zeros((nx, nz))
    kernel[:, z0] = 1.0
    return TiltedSolution(
        rate=0.0,
        distortion=surrogate.d_max(),
        lambda_star=0.0,
        kernel=Channel(kernel),
        marginal=Distribution.point_mass(nz, z0),
    )


def solve_distortion(
    surrogate: SurrogateModel,
    d: float,
    tol: float = DEFAULT_TOL,
    permissive: bool = False,
) -> TiltedSolution:
    """Solve the rate-distortion problem at distortion ``d``.

    The slope is located by a bracketed root search on lam -> E[dbar] (which
    is nonincreasing); the upper end of the bracket is doubled until the
    distortion drops below ``d``.

    Raises:
        DistortionRangeError: if ``d <= d_min``, or ``d > d_max`` without
            ``permissive``.
    """
    d = float(d)
    d_min, d_max = surrogate.d_min(), surrogate.d_max()
    if d >= d_max - 1e-15:
        if d > d_max + 1e-12 and not permissive:
            raise DistortionRangeError(f"d={d} exceeds d_max={d_max}")
        return zero_rate_solution(surrogate)
    if d <= d_min + 1e-15:
        raise DistortionRangeError(f"d={d} not above d_min={d_min}")

    state = {"q": None}

    def excess(lam: float) -> float:
        sol = solve_slope(surrogate, lam, tol=tol, init=state["q"])
        state["q"] = np.maximum(sol.marginal.probs, 1e-6)
        return sol.distortion - d

    hi = 1.0
    if excess(hi) > 0:
        while excess(hi) > 0:
            hi *= 2.0
            if hi > 1e8:
                raise SolverError(f"could not bracket slope for d={d}", excess(hi))
        lo = hi / 2.0
    else:
        lo = hi / 2.0
        while excess(lo) <= 0:
            hi = lo
            lo /= 2.0
            if lo < 2.0**-40:
                return zero_rate_solution(surrogate)
    lam = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    sol = solve_slope(surrogate, lam, tol=min(tol, 1e-12), init=state["q"])
    return sol


def generalized_tilted_info(
    surrogate: SurrogateModel, reference: Distribution, x: int, lam: float
) -> float:
    """-ln E[exp(-lam dbar(x, Zbar))] with Zbar ~ reference.

    Returns ``inf`` when every reference-mass reproduction has infinite
    distortion at ``x``.
    """
    row = surrogate.dbar[x]
    ref = reference.probs
    mask = (ref > 0) & np.isfinite(row)
    if not np.any(mask):
        return math.inf
    return float(-logsumexp(-lam * row[mask] + np.log(ref[mask])))


def generalized_objective(
    surrogate: SurrogateModel, reference: Distribution, d: float, tol: float = 1e-13
) -> float:
    """min D(P_Z|X || reference | P_X) subject to E[dbar(X, Z)] <= d.

    Solved by tilting against the fixed reference (no marginal update) and a
    one-dimensional search on the slope.

    Raises:
        InfeasibleError: if even the least-distortion kernel supported on the
            reference's support exceeds ``d``.
    """
    px = surrogate.px
    supp = reference.probs > 0
    dbar = surrogate.dbar[:, supp]
    ref = reference.probs[supp] / reference.probs[supp].sum()
    log_ref = np.log(ref)
    row_min = dbar.min(axis=1)
    d_floor = float(px @ row_min)
    if d < d_floor - 1e-12:
        raise InfeasibleError(f"d={d} below the least achievable {d_floor} on the reference support")
    d0 = float(px @ _weighted(np.broadcast_to(ref, dbar.shape), dbar).sum(axis=1))
    if d0 <= d:
        return 0.0
    if d <= d_floor + 1e-12:
        # limit lam -> inf: kernel is the reference conditioned on each row's minimizers
        mass = np.array([ref[np.isclose(dbar[i], row_min[i], rtol=0, atol=1e-12)].sum() for i in range(len(px))])
        return float(-(px @ np.log(mass)))

    def dist_at(lam: float) -> float:
        kernel, _ = _tilted(log_ref, lam, dbar)
        return kernel_distortion(px, kernel, dbar) - d

    hi = 1.0
    while dist_at(hi) > 0:
        hi *= 2.0
    lam = brentq(dist_at, 0.0, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    kernel, lognorm = _tilted(log_ref, lam, dbar)
    # E[J(X, lam)] - lam d, with the kernel's own distortion for consistency
    return float(-(px @ lognorm) - lam * kernel_distortion(px, kernel, dbar))
