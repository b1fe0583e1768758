import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from _oracles import brute_pi, brute_random_coding
from noisylossy.model import (
    Channel,
    DistortionMatrix,
    Distribution,
    NoisySourceModel,
    builtin_bes,
    noiseless_model,
    random_model,
)
from noisylossy.oneshot import (
    BlockSpec,
    ConverseEvaluator,
    ConverseRefused,
    ExhaustiveOracle,
    RandomCodingEvaluator,
    ShannonEvaluator,
    TailDP,
    TiltedConditionError,
    TiltedEvaluator,
    code_size_bracket,
    converse_bound,
    pi_excess_prob,
)


def tiny_instances():
    rng = np.random.default_rng(7)
    out = [(builtin_bes(Fraction(1, 10)), 1, Fraction(1, 10)), (builtin_bes(Fraction(1, 4)), 2, Fraction(1, 4))]
    for ns, nx, nz in [(2, 2, 2), (3, 2, 3), (2, 3, 2), (3, 3, 3)]:
        out.append((random_model(rng, ns, nx, nz), 1 if nz == 3 and nx == 3 else 2, Fraction(1, 2)))
    return out


# --- pi ---------------------------------------------------------------------


def test_pi_examples(bes01):
    b1 = BlockSpec(bes01, 1, Fraction(1, 10))
    assert pi_excess_prob(b1, ["?"], ["0"]) == pytest.approx(0.5, abs=1e-15)
    assert pi_excess_prob(b1, ["0"], ["0"]) == 0.0
    assert pi_excess_prob(b1, ["0"], ["1"]) == 1.0
    b2 = BlockSpec(bes01, 2, Fraction(1, 10))
    assert pi_excess_prob(b2, ["?", "0"], ["0", "0"]) == pytest.approx(0.5, abs=1e-15)


def test_pi_noiseless_is_indicator():
    m = noiseless_model([0.2, 0.3, 0.5], DistortionMatrix.from_exact([[0, 1, 2], [1, 0, 1], [2, 1, 0]]))
    b = BlockSpec(m, 3, Fraction(2, 3))
    exact = m.distortion.exact
    for xb in itertools.product(range(3), repeat=3):
        for zb in itertools.product(range(3), repeat=3):
            want = float(sum(Fraction(exact[x][z]) for x, z in zip(xb, zb)) > 2)
            assert pi_excess_prob(b, [str(x) for x in xb], [str(z) for z in zb]) == want


@pytest.mark.parametrize("model,k,d", tiny_instances())
def test_pi_matches_source_enumeration(model, k, d):
    b = BlockSpec(model, k, d)
    ora = ExhaustiveOracle(b)
    for i, xb in enumerate(ora.x_blocks):
        for j, zb in enumerate(ora.z_blocks):
            assert ora.pi[i, j] == pytest.approx(brute_pi(b, xb, zb), abs=1e-12)


def test_pi_rejects_wrong_length(bes01):
    with pytest.raises(ValueError):
        pi_excess_prob(BlockSpec(bes01, 2, Fraction(1, 10)), ["0"], ["0", "0"])


# --- exact tail DP ------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 2, 4, 6])
def test_tail_dp_against_enumeration(k):
    rng = np.random.default_rng(k)
    laws = []
    for _ in range(k):
        vals = [Fraction(int(v), 3) for v in rng.choice(6, size=3, replace=False)]
        probs = rng.dirichlet(np.ones(3))
        laws.append(dict(zip(vals, probs)))
    dp = TailDP(laws)
    want: dict = {}
    for combo in itertools.product(*[list(l.items()) for l in laws]):
        v = sum(c[0] for c in combo)
        want[v] = want.get(v, 0.0) + math.prod(c[1] for c in combo)
    assert set(dp.law()) == set(want)
    for v, p in want.items():
        assert dp.law()[v] == pytest.approx(p, abs=1e-12)
    thr = Fraction(k * 5, 6)
    assert dp.excess(thr) == pytest.approx(sum(p for v, p in want.items() if v > thr), abs=1e-12)


def test_tail_dp_threshold_is_exact():
    # 3 * (1/10) equals 3/10 exactly, so it is not an excess
    dp = TailDP([{Fraction(1, 10): 1.0}] * 3)
    assert dp.excess(Fraction(3, 10)) == 0.0


# --- random coding ------------------------------------------------------------


@pytest.mark.parametrize("model,k,d", tiny_instances())
@pytest.mark.parametrize("M", [1, 2, 3])
def test_random_coding_matches_brute_force(model, k, d, M):
    b = BlockSpec(model, k, d)
    nz = b.sizes[2]
    q = np.random.default_rng(M).dirichlet(np.ones(nz))
    rc = RandomCodingEvaluator(b, Distribution(q))
    assert rc(M) == pytest.approx(brute_random_coding(b, M, q), abs=1e-12)


def test_random_coding_m4_binary(bes01):
    b = BlockSpec(bes01, 2, Fraction(1, 10))
    q = np.array([0.3, 0.7])
    assert RandomCodingEvaluator(b, Distribution(q))(4) == pytest.approx(brute_random_coding(b, 4, q), abs=1e-12)


def test_random_coding_limit_huge_m():
    m = noiseless_model([0.5, 0.5], DistortionMatrix.hamming(2))
    b = BlockSpec(m, 2, Fraction(0))
    rc = RandomCodingEvaluator(b, Distribution.uniform(2))
    assert rc(10**6) == pytest.approx(0.0, abs=1e-12)
    # with erasures the limit is the mass that no reproduction can cover
    b2 = BlockSpec(builtin_bes(Fraction(1, 10)), 1, Fraction(0))
    assert RandomCodingEvaluator(b2, Distribution.uniform(2))(10**6) == pytest.approx(0.1 * 0.5, abs=1e-12)


def test_random_coding_monotone_and_in_unit_interval(bes01):
    rc = RandomCodingEvaluator(BlockSpec(bes01, 12, Fraction(1, 10)))
    vals = [rc(M) for M in (1, 2, 5, 17, 100, 1000, 10**5)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))


def test_random_coding_block_reference_equals_product(bes01):
    b = BlockSpec(bes01, 2, Fraction(1, 10))
    q = np.array([0.4, 0.6])
    block_q = np.array([q[a] * q[c] for a in range(2) for c in range(2)])
    for M in (1, 3):
        assert RandomCodingEvaluator(b, Distribution(block_q))(M) == pytest.approx(
            RandomCodingEvaluator(b, Distribution(q))(M), abs=1e-12
        )


# --- converse -----------------------------------------------------------------


@pytest.mark.parametrize("model,k,d", tiny_instances())
def test_converse_below_exhaustive_optimum(model, k, d):
    b = BlockSpec(model, k, d)
    ora = ExhaustiveOracle(b)
    for M in (1, 2, 3):
        assert converse_bound(b, M) <= ora.min_excess(M) + 1e-12


def test_converse_single_letter_erasure(bes01):
    v = converse_bound(BlockSpec(bes01, 1, Fraction(1, 10)), 1)
    assert 0.3 < v <= 0.5


def test_converse_vacuous_for_huge_m_without_noise():
    assert converse_bound(BlockSpec(builtin_bes(Fraction(0)), 6, Fraction(1, 10)), 2**40) == 0.0


def test_converse_huge_m_stays_below_erasure_floor(bes01):
    # erasures leave an excess no codebook removes; the bound may see it but not exceed it
    b = BlockSpec(bes01, 6, Fraction(1, 10))
    floor = RandomCodingEvaluator(b, Distribution.uniform(2))(10**9)
    assert 0.0 < converse_bound(b, 2**40) <= floor + 1e-12


def test_converse_noiseless_reduces_to_excess_distortion_bound():
    # full-support optimal reproduction: i(x; z) + lam*(d(x, z) - d) is the
    # d-tilted information of x whatever z is
    m = noiseless_model([0.2, 0.3, 0.5], DistortionMatrix.from_exact([[0, 1, 1], [1, 0, 1], [1, 1, 0]]))
    d = Fraction(1, 10)
    k = 3
    b = BlockSpec(m, k, d)
    sol = b.solution
    q = sol.marginal.probs
    assert np.all(q > 0)
    lam = sol.lambda_star
    dist = m.distortion.values
    jx = np.array([-math.log(np.sum(q * np.exp(-lam * (dist[x] - float(d))))) for x in range(3)])
    gammas = np.linspace(0.0, 4.0, 9)
    ev = ConverseEvaluator(b, lams=[k * lam], gamma_grid=gammas)
    for M in (1, 2, 4, 8):
        best = -math.inf
        for g in gammas:
            p = sum(
                math.prod(b.px[x] for x in xb)
                for xb in itertools.product(range(3), repeat=k)
                if sum(jx[x] for x in xb) >= math.log(M) + g - 1e-12
            )
            best = max(best, p - math.exp(-g))
        assert ev(M) == pytest.approx(min(max(best, 0.0), 1.0), abs=1e-9)


def test_converse_monotone_in_m(bes01):
    ev = ConverseEvaluator(BlockSpec(bes01, 10, Fraction(1, 10)))
    vals = [ev(M) for M in (1, 4, 16, 64, 256, 1024)]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))


def test_converse_refuses_beyond_type_cap(bes01):
    with pytest.raises(ConverseRefused):
        ConverseEvaluator(BlockSpec(bes01, 10, Fraction(1, 10)), type_cap=5)


def test_converse_rejects_bad_kernel_shape(bes01):
    with pytest.raises(ValueError):
        ConverseEvaluator(BlockSpec(bes01, 2, Fraction(1, 10)), backward_kernel=np.ones((5, 5)) / 5)


# --- Shannon-style achievability ------------------------------------------------


def test_shannon_gamma_zero_adds_one_over_e(bes01):
    ev = ShannonEvaluator(BlockSpec(bes01, 3, Fraction(1, 10)))
    M = 4
    parts = ev.distortion_excess + ev.info_excess(math.log(M))
    assert ev.value(M, 0.0) == pytest.approx(parts + math.exp(-1.0), abs=1e-15)


def test_shannon_trivial_case(bes01):
    # every distortion is at most 1 = d and M dwarfs every information value
    ev = ShannonEvaluator(BlockSpec(bes01, 2, Fraction(1)), kernel=np.full((3, 2), 0.5))
    assert ev(10**6, 1.0) == pytest.approx(math.exp(-math.e), abs=1e-15)


def test_shannon_above_random_coding(bes01):
    b = BlockSpec(bes01, 4, Fraction(1, 10))
    assert ShannonEvaluator(b)(16, 1.0) >= RandomCodingEvaluator(b)(16) - 1e-12


def test_shannon_info_rounding_is_upward(bes01):
    b = BlockSpec(bes01, 2, Fraction(1, 10))
    ev = ShannonEvaluator(b)
    kernel = b.solution.kernel.rows
    q = b.px @ kernel
    exact = 0.0
    t = 0.3
    for xb in itertools.product(range(3), repeat=2):
        for zb in itertools.product(range(2), repeat=2):
            p = math.prod(b.px[x] * kernel[x, z] for x, z in zip(xb, zb))
            if p and sum(math.log(kernel[x, z] / q[z]) for x, z in zip(xb, zb)) > t:
                exact += p
    assert ev.info_excess(t) >= exact - 1e-15


# --- tilted achievability ---------------------------------------------------------


def _unobserved_coin():
    # the observation says nothing; each reproduction is wrong half the time
    return NoisySourceModel(
        Distribution([0.5, 0.5]), Channel([[1.0], [1.0]]), DistortionMatrix.hamming(2), ("0", "1"), ("x",), ("0", "1")
    )


def test_tilted_third_term_vanishes_when_beta_matches_window():
    ev = TiltedEvaluator(BlockSpec(_unobserved_coin(), 1, Fraction(1, 2)))
    _, over, third, _ = ev.terms(4, 1.0, 2.0, Fraction(1, 2), np.array([1.0]))
    assert third == 0.0
    assert over == 0.5


def test_tilted_last_term_vanishes_for_large_m_over_gamma(bes01):
    ev = TiltedEvaluator(BlockSpec(bes01, 4, Fraction(1, 10)))
    *_, last = ev.terms(10**9, 1.0, 2.0, Fraction(1, 40), ev.default_lam_grid())
    assert last == 0.0


@pytest.mark.parametrize("M", [4, 16, 64, 256, 1024])
def test_tilted_between_random_coding_and_one(bes01, M):
    b = BlockSpec(bes01, 8, Fraction(1, 10))
    t = TiltedEvaluator(b)(M)
    assert RandomCodingEvaluator(b)(M) - 1e-12 <= t <= 1.0


def test_tilted_rejects_mixed_kernel_on_erasures(bes01):
    b = BlockSpec(bes01, 3, Fraction(1, 10))
    with pytest.raises(TiltedConditionError):
        TiltedEvaluator(b, kernel=np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]))


# --- code-size bracket ----------------------------------------------------------


@pytest.mark.parametrize(
    "model,k,d,eps",
    [
        (builtin_bes(Fraction(0)), 2, Fraction(1, 4), 0.1),
        (builtin_bes(Fraction(1, 10)), 1, Fraction(1, 10), 0.3),
        (builtin_bes(Fraction(1, 10)), 2, Fraction(1, 4), 0.2),
        (random_model(np.random.default_rng(3), 2, 2, 2), 2, Fraction(1, 2), 0.2),
    ],
)
def test_bracket_contains_optimum(model, k, d, eps):
    b = BlockSpec(model, k, d, eps)
    m_star = ExhaustiveOracle(b).code_size(m_max=16)
    br = code_size_bracket(b)
    assert m_star is not None
    assert br.m_converse <= m_star <= br.m_achievability


def test_bracket_erasure_free_optimum_is_four():
    b = BlockSpec(builtin_bes(Fraction(0)), 2, Fraction(1, 4), 0.1)
    assert ExhaustiveOracle(b).code_size() == 4


def test_bracket_trivial_eps(bes01):
    br = code_size_bracket(BlockSpec(bes01, 1, Fraction(1, 10), 0.99))
    assert (br.m_converse, br.m_achievability, br.open) == (1, 1, False)


def test_block_spec_validation(bes01):
    with pytest.raises(ValueError):
        BlockSpec(bes01, 0, Fraction(1, 10))
    with pytest.raises(ValueError):
        BlockSpec(bes01, 2, Fraction(1, 10), eps=1.0)


def test_bracket_closes_when_optimal_reference_is_degenerate():
    # P_Z* is a point mass here, so random coding from it alone never meets eps
    rng = np.random.default_rng(5)
    model = random_model(rng, 2, 3, 3)
    b = BlockSpec(model, 1, Fraction(1, 4), 0.18)
    assert np.count_nonzero(b.solution.marginal.probs) == 1
    br = code_size_bracket(b)
    assert not br.open
    assert br.m_converse <= ExhaustiveOracle(b).code_size() <= br.m_achievability
