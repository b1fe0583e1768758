import math
from fractions import Fraction

import numpy as np
import pytest

from _models import generic_models
from noisylossy.model import DistortionMatrix, Distribution, noiseless_model, surrogate_from_noisy
from noisylossy.numerics import binary_entropy
from noisylossy.rd_solver import (
    DistortionRangeError,
    InfeasibleError,
    generalized_objective,
    generalized_tilted_info,
    kernel_distortion,
    mutual_information,
    solve_distortion,
    solve_slope,
)

LN17 = math.log(17)
BES_RATE = 0.9 * (math.log(2) - binary_entropy(0.05 / 0.9))


@pytest.fixture(scope="module")
def sur(bes01):
    return surrogate_from_noisy(bes01)


def test_slope_zero_gives_rate_zero(sur):
    sol = solve_slope(sur, 0.0)
    assert sol.rate == pytest.approx(0.0, abs=1e-10)
    rows = sol.kernel.rows
    np.testing.assert_allclose(rows, np.tile(rows[0], (rows.shape[0], 1)), atol=1e-10)


def test_slope_at_bes_optimum(sur):
    sol = solve_slope(sur, LN17, tol=1e-13)
    assert sol.distortion == pytest.approx(0.1, abs=1e-10)
    assert sol.rate == pytest.approx(BES_RATE, abs=1e-10)
    assert sol.gap < 1e-13


@pytest.mark.parametrize("d", [0.02, 0.11, 0.3, 0.45])
def test_binary_hamming_formula(d):
    sur = surrogate_from_noisy(noiseless_model([0.5, 0.5], DistortionMatrix.hamming(2)))
    sol = solve_slope(sur, math.log((1 - d) / d), tol=1e-13)
    assert sol.rate == pytest.approx(math.log(2) - binary_entropy(d), abs=1e-10)
    assert sol.distortion == pytest.approx(d, abs=1e-10)


def test_solve_distortion_bes(sur):
    sol = solve_distortion(sur, 0.1)
    assert sol.lambda_star == pytest.approx(LN17, rel=1e-9)
    assert sol.rate / math.log(2) == pytest.approx(0.6214, abs=1e-4)
    assert sol.rate == pytest.approx(BES_RATE, rel=1e-10)


def test_range_edges(sur):
    assert solve_distortion(sur, sur.d_max()).rate == 0.0
    with pytest.raises(DistortionRangeError):
        solve_distortion(sur, sur.d_min())
    with pytest.raises(DistortionRangeError):
        solve_distortion(sur, 0.6)
    assert solve_distortion(sur, 0.6, permissive=True).rate == 0.0


def test_generalized_objective(sur):
    sol = solve_distortion(sur, 0.1, tol=1e-13)
    assert generalized_objective(sur, sol.marginal, 0.1) == pytest.approx(sol.rate, abs=1e-9)
    z0 = Distribution.point_mass(2, 0)
    assert generalized_objective(sur, z0, float(sur.px @ sur.dbar[:, 0])) == 0.0
    with pytest.raises(InfeasibleError):
        generalized_objective(sur, z0, 0.1)


def test_generalized_objective_grid_oracle(sur):
    """Against a grid over P(z=1|x=0) = a and P(z=0|x=1) = b; the erased row is set to the reference."""
    ref = np.array([0.6, 0.4])
    d = 0.1
    value = generalized_objective(sur, Distribution(ref), d)
    px = sur.px
    g = np.linspace(0, 0.25, 2001)
    a, b = np.meshgrid(g, g)

    def kl(p0):
        p1 = 1 - p0
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = np.where(p0 > 0, p0 * np.log(p0 / ref[0]), 0.0)
            t1 = np.where(p1 > 0, p1 * np.log(p1 / ref[1]), 0.0)
        return t0 + t1

    dist = px[0] * a + px[1] * b + px[2] * 0.5
    obj = px[0] * kl(1 - a) + px[1] * kl(b)
    best = obj[dist <= d + 1e-15].min()
    rate = solve_distortion(sur, d).rate
    assert value >= rate - 1e-12
    assert value <= best + 1e-12
    assert best - value < 5e-4  # grid step 1.25e-4 times slope


def test_generalized_tilted_info(sur):
    uni = Distribution.uniform(2)
    q = sur.x_symbols.index("?")
    assert generalized_tilted_info(sur, uni, 0, 0.0) == pytest.approx(0.0, abs=1e-15)
    for lam in (0.3, 1.0, 7.0):
        assert generalized_tilted_info(sur, uni, q, lam) == pytest.approx(lam / 2, rel=1e-13)
    assert generalized_tilted_info(sur, uni, 0, LN17) == pytest.approx(math.log(17 / 9), rel=1e-13)


def test_rate_curve_convex_and_slope(sur):
    ds = np.linspace(0.06, 0.48, 22)
    sols = [solve_distortion(sur, d) for d in ds]
    r = np.array([s.rate for s in sols])
    assert np.all(np.diff(r) < 0)
    assert np.all(np.diff(r, 2) >= -1e-10)
    h = 1e-5
    for d, s in zip(ds[1:-1], sols[1:-1]):
        slope = (solve_distortion(sur, d + h).rate - solve_distortion(sur, d - h).rate) / (2 * h)
        assert -slope == pytest.approx(s.lambda_star, rel=0.02)


@pytest.fixture(scope="module")
def models():
    return generic_models(11, 8)


def test_fixed_point_and_duality(models):
    rng = np.random.default_rng(5)
    for model, d in models:
        sur = surrogate_from_noisy(model)
        sol = solve_distortion(sur, d)
        lam, q = sol.lambda_star, sol.marginal.probs
        tilted = q[None, :] * np.exp(-lam * sur.dbar)
        tilted /= tilted.sum(axis=1, keepdims=True)
        assert 0.5 * np.abs(tilted - sol.kernel.rows).sum(axis=1).max() < 1e-8
        best = sol.rate + lam * sol.distortion
        for _ in range(100):
            kern = rng.dirichlet(np.ones(sur.dbar.shape[1]), size=sur.dbar.shape[0])
            other = mutual_information(sur.px, kern) + lam * kernel_distortion(sur.px, kern, sur.dbar)
            assert best <= other + 1e-9


def test_csiszar_property(models):
    from noisylossy.dispersion import analyze

    for model, d in models:
        sol, table, _ = analyze(model, d)
        sur = surrogate_from_noisy(model)
        lam = sol.lambda_star
        e = sur.px @ np.exp(lam * d - lam * sur.dbar + table.surrogate[:, None])
        assert e.max() <= 1 + 1e-8
        on = sol.marginal.probs > 1e-6
        np.testing.assert_allclose(e[on], 1.0, atol=1e-6)
