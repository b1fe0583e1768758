"""Tilted informations, rate-dispersion functions and Gaussian approximation.

Everything here is an exact finite sum over the joint alphabet of (S, X);
nothing is sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import NoisySourceModel, SurrogateModel, surrogate_from_noisy
from .numerics import gaussian_q_inv
from .rd_solver import TiltedSolution, row_divergences, solve_distortion


class ThirdOrder(str, Enum):
    NONE = "none"
    HALF_LOG_OVER_K = "half_log_over_k"


@dataclass(frozen=True)
class TiltedInfoTable:
    """Per-symbol tilted informations at one distortion level (nats).

    Attributes:
        surrogate: j_X(x, d) indexed by observation.
        noisy: noisy tilted information indexed by (s, x), i.e.
            D(P_Z*|X=x || P_Z*) + lam E[d(s, Z*) | X = x] - lam d.
        noisy_density: ln P_Z*|X(z|x)/P_Z*(z) + lam d(s, z) - lam d indexed
            by (s, x, z); ``noisy`` is its average over z ~ P_Z*|X=x.
        kernel: P_Z*|X used for the z-average.
        lambda_star: slope at the solution.
        distortion: distortion level of the solution.
        rate: R(d) of the solution.
        joint: P_SX used for expectations.
        dbar_z: E[d(s, Z*) | X = x] indexed by (s, x).
        residual_distortion: d(s, z) - dbar(x, z) indexed by (s, x, z).
        density_residual: max deviation between the divergence form and
            the information-density form of j_X over supp(P_Z*).
    """

    surrogate: np.ndarray
    noisy: np.ndarray
    noisy_density: np.ndarray
    kernel: np.ndarray
    lambda_star: float
    distortion: float
    rate: float
    joint: np.ndarray
    dbar_z: np.ndarray
    residual_distortion: np.ndarray
    density_residual: float

    @property
    def px(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    def triple_weights(self) -> np.ndarray:
        """P_SX(s, x) P_Z*|X(z|x) indexed by (s, x, z)."""
        return self.joint[:, :, None] * self.kernel[None, :, :]

    def noisy_law(self, decimals: int = 12) -> list[tuple[float, float]]:
        """Law of the noisy tilted information with Z* drawn given X.

        Values are rounded to ``decimals`` places before merging.
        """
        w = self.triple_weights()
        law: dict[float, float] = {}
        for idx in zip(*np.nonzero(w > 0)):
            v = round(float(self.noisy_density[idx]), decimals)
            law[v] = law.get(v, 0.0) + float(w[idx])
        return sorted(law.items())


@dataclass(frozen=True)
class DispersionReport:
    """Rate-dispersion quantities (nats squared) at one distortion level.

    Attributes:
        v_surrogate: Var j_X(X, d), dispersion of the surrogate problem.
        v_noisy: variance of the noisy tilted information over
            (S, X, Z*) ~ P_SX P_Z*|X, the noisy rate-dispersion function.
        v_directional: variance over P_SX of the (s, x) table, i.e. of the
            z-averaged noisy tilted information.  This is the quantity the
            derivative identity for R speaks about; it is below ``v_noisy``
            whenever E[d(s, Z*) | X = x] hides randomness of Z*.
        inner_variance_term: lam^2 E[(d(S, Z*) - dbar(X, Z*))^2].
        covariance_cross_term: E[(j_X(X, d) - R) (d(S, Z*) - dbar(X, Z*))].
    """

    v_surrogate: float
    v_noisy: float
    v_directional: float
    lambda_star: float
    inner_variance_term: float
    covariance_cross_term: float
    rate: float
    distortion: float


def _masked_mean(kernel: np.ndarray, values: np.ndarray) -> np.ndarray:
    """sum_z kernel[..., z] values[..., z] with 0 * inf = 0."""
    safe = np.where(kernel > 0, values, 0.0)
    return (kernel * safe).sum(axis=-1)


def tilted_info_table(model: NoisySourceModel, solution: TiltedSolution) -> TiltedInfoTable:
    """Surrogate and noisy tilted informations for a solved model.

    The surrogate values use the divergence form
    D(P_Z*|X=x || P_Z*) + lam E[dbar(x, Z*)] - lam d and are cross-checked
    against ln P_Z*|X(z|x)/P_Z*(z) + lam dbar(x, z) - lam d for every z in
    the support of P_Z*.
    """
    model = model.pruned()
    sur = surrogate_from_noisy(model)
    kernel = solution.kernel.rows
    q = solution.marginal.probs
    lam = solution.lambda_star
    d = solution.distortion
    if kernel.shape != sur.dbar.shape:
        raise ValueError("solution does not match the model's alphabets")

    div = row_divergences(kernel, q)
    surrogate = div + lam * _masked_mean(kernel, sur.dbar) - lam * d

    dist = model.distortion.values  # (s, z)
    dbar_z = _masked_mean(kernel[None, :, :], dist[:, None, :])  # (s, x)
    noisy = div[None, :] + lam * dbar_z - lam * d

    live = (kernel > 0) & (q[None, :] > 0)
    with np.errstate(divide="ignore"):
        dens_x = np.where(live, np.log(np.where(live, kernel, 1.0) / np.where(q > 0, q, 1.0)[None, :]), 0.0)
    noisy_density = dens_x[None, :, :] + lam * np.where(live[None], dist[:, None, :], 0.0) - lam * d

    residual_distortion = np.where(live[None], dist[:, None, :] - np.where(live, sur.dbar, 0.0)[None], 0.0)

    surrogate_density = dens_x + lam * np.where(live, sur.dbar, 0.0) - lam * d
    dev = np.where(live, np.abs(surrogate_density - surrogate[:, None]), 0.0)
    residual = float(dev.max()) if dev.size else 0.0
    return TiltedInfoTable(
        surrogate, noisy, noisy_density, kernel, lam, d, solution.rate, model.joint(), dbar_z,
        residual_distortion, residual,
    )


def dispersion_report(table: TiltedInfoTable, model: NoisySourceModel | None = None) -> DispersionReport:
    """Exact variances of the tilted informations.

    ``model`` is accepted for interface symmetry; the table already carries
    the joint law.
    """
    joint = table.joint
    px = joint.sum(axis=0)
    live = joint > 0
    mean_j = float(px @ table.surrogate)
    v_sur = float(px @ (table.surrogate - mean_j) ** 2)

    avg = np.where(live, table.noisy, 0.0)
    mean_avg = float(np.sum(joint * avg))
    v_dir = float(np.sum(joint * np.where(live, (avg - mean_avg) ** 2, 0.0)))

    w = table.triple_weights()
    on = w > 0
    dens = np.where(on, table.noisy_density, 0.0)
    mean_n = float(np.sum(w * dens))
    v_noisy = float(np.sum(w * np.where(on, (dens - mean_n) ** 2, 0.0)))

    lam = table.lambda_star
    inner = np.where(on, table.residual_distortion, 0.0)
    inner_var = float(np.sum(w * inner**2))
    cov = float(np.sum(w * (table.surrogate - table.rate)[None, :, None] * inner))
    return DispersionReport(
        v_surrogate=v_sur,
        v_noisy=v_noisy,
        v_directional=v_dir,
        lambda_star=lam,
        inner_variance_term=lam**2 * inner_var,
        covariance_cross_term=cov,
        rate=table.rate,
        distortion=table.distortion,
    )


def analyze(model: NoisySourceModel, d: float) -> tuple[TiltedSolution, TiltedInfoTable, DispersionReport]:
    """Solve at ``d`` and return solution, tilted-information table and report."""
    model = model.pruned()
    sol = solve_distortion(surrogate_from_noisy(model), d)
    table = tilted_info_table(model, sol)
    return sol, table, dispersion_report(table, model)


def gaussian_approximation(
    k: int,
    eps: float,
    rate: float,
    dispersion: float,
    third_order: ThirdOrder | str = ThirdOrder.NONE,
) -> float:
    """R + sqrt(V / k) Q^-1(eps) [+ ln(k) / (2k)], nats per letter."""
    if k < 1:
        raise ValueError("k must be positive")
    third_order = ThirdOrder(third_order)
    value = rate + math.sqrt(dispersion / k) * gaussian_q_inv(eps)
    if third_order is ThirdOrder.HALF_LOG_OVER_K:
        value += math.log(k) / (2 * k)
    return value


def gaussian_approx_rate(
    k: int,
    eps: float,
    solution: TiltedSolution,
    report: DispersionReport,
    third_order: ThirdOrder | str = ThirdOrder.NONE,
    noisy: bool = True,
) -> float:
    """Gaussian approximation using the noisy (default) or surrogate dispersion."""
    v = report.v_noisy if noisy else report.v_surrogate
    return gaussian_approximation(k, eps, solution.rate, v, third_order)


def rate_of_joint(model: NoisySourceModel, joint: np.ndarray, d: float, tol: float = 1e-13) -> float:
    """R(d) of the model with its joint law replaced by ``joint``."""
    sur = surrogate_from_noisy(model.with_joint(joint))
    return solve_distortion(sur, d, tol=tol).rate


def directional_derivative_check(
    model: NoisySourceModel,
    s,
    x,
    d: float,
    h: float = 1e-4,
    tol: float = 1e-3,
    table: TiltedInfoTable | None = None,
) -> tuple[float, float]:
    """Finite-difference slope of R(d) along the segment toward delta_{s,x}.

    The joint law is moved to (1 - t) P_SX + t delta_{s,x}; the slope at
    t = 0 should equal the noisy tilted information at (s, x) minus R(d).

    Returns:
        ``(numeric, analytic)`` in nats.  If the central difference misses
        ``tol``, a Richardson extrapolation with step ``h / 2`` is returned
        instead.
    """
    model = model.pruned()
    si, xi = model.s_index(s), model.x_index(x)
    joint = model.joint()
    if joint[si, xi] <= 0:
        raise ValueError("(s, x) has zero probability")
    if table is None:
        _, table, _ = analyze(model, d)
    analytic = float(table.noisy[si, xi] - table.rate)

    point = np.zeros_like(joint)
    point[si, xi] = 1.0

    def central(step: float) -> float:
        up = rate_of_joint(model, (1 - step) * joint + step * point, d)
        down = rate_of_joint(model, (1 + step) * joint - step * point, d)
        return (up - down) / (2 * step)

    numeric = central(h)
    if abs(numeric - analytic) > tol:
        numeric = (4 * central(h / 2) - numeric) / 3
    return numeric, analytic
