"""Nonasymptotic bounds for k-letter blocks of a noisy source model.

Block distortion is the per-letter average, so the excess event
{d(S^k, z^k) > d} is {sum_i d(S_i, z_i) > k d}.  Sums of exact distortion
entries are accumulated as ``Fraction`` so the strict inequality is decided
without rounding; only probabilities are floats.

For product sources and per-letter (product) kernels, everything that the
bounds need depends on an x-block only through its type, and on a z-block
only through the joint type of (x-block, z-block).  The evaluators below
therefore enumerate types instead of sequences.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln

from .model import (
    Channel,
    Distribution,
    ModelError,
    NoisySourceModel,
    conditional_distortion_dist,
    surrogate_from_noisy,
)
from .numerics import as_fraction
from .rd_solver import DistortionRangeError, TiltedSolution, solve_distortion

logger = logging.getLogger(__name__)

GRID_CAP = 100_000  # distinct values a distortion law may carry
TYPE_CAP = 200_000  # (x-type, conditional type) pairs enumerated exactly
BLOCK_CAP = 4096  # z-blocks enumerated when the kernel is not a product
DEFAULT_MC_SAMPLES = 20_000
M_CAP_LOG2 = 40

ExactLaw = dict  # value (Fraction or math.inf) -> probability


class GridExplosion(RuntimeError):
    """A distortion law grew beyond the grid cap."""


class ConverseRefused(RuntimeError):
    """The inner minimum over z-blocks cannot be evaluated exactly."""


class TiltedConditionError(ValueError):
    """A kernel row mixes reproductions whose distortion depends on S."""

    def __init__(self, x, zs):
        self.x, self.zs = x, tuple(zs)
        super().__init__(
            f"kernel row for observation {x!r} mixes reproductions {list(zs)} whose distortion "
            "varies with the source; d(S, Z) would not equal its conditional mean almost surely"
        )


class BoundValue(float):
    """A float carrying the Monte Carlo standard error (0 when exact) and method."""

    stderr: float
    method: str

    def __new__(cls, value: float, stderr: float = 0.0, method: str = "exact"):
        obj = super().__new__(cls, value)
        obj.stderr = float(stderr)
        obj.method = method
        return obj


@dataclass(frozen=True)
class BlockSpec:
    """k-fold product of ``base`` with per-letter threshold ``d`` and target ``eps``."""

    base: NoisySourceModel
    k: int
    d: Fraction
    eps: float = 0.1

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "d", as_fraction(self.d))
        object.__setattr__(self, "base", self.base.pruned())

    @property
    def threshold(self) -> Fraction:
        """k d: the block excess event is {sum of letter distortions > k d}."""
        return self.k * self.d

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.base.sizes

    @cached_property
    def px(self) -> np.ndarray:
        return self.base.x_marginal()

    @cached_property
    def solution(self) -> TiltedSolution:
        """Optimal per-letter test channel at d (raises below d_min)."""
        return solve_distortion(surrogate_from_noisy(self.base), float(self.d), permissive=True)

    @cached_property
    def pair_laws(self) -> dict:
        """Law of d(S, z) given X = x for every (x, z) index pair."""
        _, nx, nz = self.sizes
        return {
            (x, z): dict(conditional_distortion_dist(self.base, x, z)) for x in range(nx) for z in range(nz)
        }

    @cached_property
    def degenerate(self) -> np.ndarray:
        """True for observations that determine the source symbol."""
        return (self.base.joint() > 0).sum(axis=0) == 1

    def excess(self, law: ExactLaw) -> float:
        thr = self.threshold
        return float(sum(p for v, p in law.items() if v > thr))


# --- exact distortion laws ---------------------------------------------------


def convolve(a: ExactLaw, b: ExactLaw, cap: int = GRID_CAP) -> ExactLaw:
    out: dict = defaultdict(float)
    for v, p in a.items():
        for w, q in b.items():
            out[v + w] += p * q
        if len(out) > cap:
            raise GridExplosion(f"more than {cap} distinct sums")
    return dict(out)


def power(law: ExactLaw, n: int, cap: int = GRID_CAP) -> ExactLaw:
    """n-fold convolution by repeated squaring."""
    result: ExactLaw = {Fraction(0): 1.0}
    base = law
    while n:
        if n & 1:
            result = convolve(result, base, cap)
        n >>= 1
        if n:
            base = convolve(base, base, cap)
    return result


class TailDP:
    """Prefix laws of a sum of independent letters with exact values.

    ``grid`` lists the reachable totals; ``tail[(i, v)]`` is the probability
    that the first ``i`` letters sum to ``v``.
    """

    def __init__(self, laws: Sequence[ExactLaw | Sequence[tuple]], cap: int = GRID_CAP):
        self.prefix: list[ExactLaw] = [{Fraction(0): 1.0}]
        for law in laws:
            self.prefix.append(convolve(self.prefix[-1], dict(law), cap))

    @property
    def length(self) -> int:
        return len(self.prefix) - 1

    @property
    def grid(self) -> list:
        return sorted(self.prefix[-1])

    @property
    def tail(self) -> dict:
        return {(i, v): p for i, law in enumerate(self.prefix) for v, p in law.items()}

    def law(self, i: int | None = None) -> ExactLaw:
        return self.prefix[self.length if i is None else i]

    def excess(self, threshold, i: int | None = None) -> float:
        """P[prefix sum > threshold], decided exactly."""
        return float(sum(p for v, p in self.law(i).items() if v > threshold))


def _indices(model: NoisySourceModel, block: Sequence, lookup: Callable, k: int) -> list[int]:
    if len(block) != k:
        raise ValueError(f"block has length {len(block)}, expected {k}")
    return [lookup(s) for s in block]


def pi_excess_prob(
    block: BlockSpec,
    x_block: Sequence,
    z_block: Sequence,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> BoundValue:
    """P[d(S^k, z^k) > d | X^k = x^k]; Monte Carlo if the exact grid explodes."""
    m = block.base
    xs = _indices(m, x_block, m.x_index, block.k)
    zs = _indices(m, z_block, m.z_index, block.k)
    laws = [block.pair_laws[(x, z)] for x, z in zip(xs, zs)]
    try:
        return BoundValue(TailDP(laws).excess(block.threshold))
    except GridExplosion:
        logger.warning("distortion grid too large; sampling %d source blocks", mc_samples)
    rng = np.random.default_rng(seed)
    total = np.zeros(mc_samples, dtype=object)
    for law in laws:
        vals = list(law)
        idx = rng.choice(len(vals), size=mc_samples, p=np.array(list(law.values())))
        total = total + np.array(vals, dtype=object)[idx]
    hits = np.array([t > block.threshold for t in total], dtype=float)
    return BoundValue(hits.mean(), hits.std(ddof=1) / math.sqrt(mc_samples), "monte-carlo")


# --- type enumeration --------------------------------------------------------


def compositions(n: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All tuples of ``parts`` nonnegative integers summing to ``n``."""
    if parts == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in compositions(n - first, parts - 1):
            yield (first,) + rest


def _log_multinomial(counts: Sequence[int]) -> float:
    return float(gammaln(sum(counts) + 1) - sum(gammaln(c + 1) for c in counts))


def _log_type_prob(counts: Sequence[int], log_p: np.ndarray) -> float:
    """ln of the probability of a type class under an i.i.d. law."""
    acc = _log_multinomial(counts)
    for c, lp in zip(counts, log_p):
        if c:
            acc += c * lp
    return acc


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=float))


def x_types(k: int, px: np.ndarray) -> list[tuple[tuple[int, ...], float]]:
    """(type, probability) for every x-type of positive probability."""
    lp = _log(px)
    out = []
    for n in compositions(k, len(px)):
        w = _log_type_prob(n, lp)
        if w > -np.inf:
            out.append((n, math.exp(w)))
    return out


def conditional_types(n: Sequence[int], nz: int) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Every matrix of z-counts with row sums ``n`` (one row per x symbol)."""
    rows = [list(compositions(nx_, nz)) if nx_ else [(0,) * nz] for nx_ in n]
    return itertools.product(*rows)


def count_conditional_types(n: Sequence[int], nz: int) -> int:
    return math.prod(math.comb(c + nz - 1, nz - 1) for c in n)


def _joint_law(block: BlockSpec, m: Sequence[Sequence[int]], cache: dict) -> ExactLaw:
    """Law of the block distortion sum for a joint type ``m`` (counts per (x, z))."""
    law: ExactLaw = {Fraction(0): 1.0}
    for x, row in enumerate(m):
        for z, c in enumerate(row):
            if c:
                key = (x, z, c)
                if key not in cache:
                    cache[key] = power(block.pair_laws[(x, z)], c)
                law = convolve(law, cache[key])
    return law


def _reference_kind(block: BlockSpec, reference: Distribution) -> str:
    nz = block.sizes[2]
    if len(reference) == nz:
        return "product"
    if len(reference) == nz**block.k:
        return "block"
    raise ValueError(f"reference has {len(reference)} entries; expected {nz} or {nz}^{block.k}")


def _default_reference(block: BlockSpec) -> Distribution:
    try:
        return block.solution.marginal
    except DistortionRangeError:
        return Distribution.uniform(block.sizes[2])


def _all_blocks(n: int, k: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(n), repeat=k))


# --- random coding --------------------------------------------------------


def _excess_integral(vals: np.ndarray, suffix: np.ndarray, M) -> float:
    """sum_i (v_i - v_{i-1}) P[pi >= v_i]^M for sorted distinct v."""
    widths = np.diff(np.concatenate(([0.0], vals)))
    with np.errstate(divide="ignore"):
        powered = np.exp(float(M) * np.log(np.clip(suffix, 0.0, 1.0)))
    return float(np.sum(widths * powered))


def _pi_law(pairs: list[tuple[float, float]]) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct pi values and P[pi >= value]."""
    merged: dict[float, float] = defaultdict(float)
    for v, p in pairs:
        merged[min(max(v, 0.0), 1.0)] += p
    vals = np.array(sorted(merged))
    probs = np.array([merged[v] for v in vals])
    suffix = np.cumsum(probs[::-1])[::-1]
    return vals, suffix


class RandomCodingEvaluator:
    """Exact random-coding excess probability for a fixed reference, any M.

    The per-x law of pi(x, Zbar) is built once; each M costs one pass.
    """

    def __init__(
        self,
        block: BlockSpec,
        reference: Distribution | None = None,
        mc_samples: int = DEFAULT_MC_SAMPLES,
        seed: int = 0,
        type_cap: int = TYPE_CAP,
    ):
        self.block = block
        self.reference = _default_reference(block) if reference is None else reference
        self.stderr_scale = 0.0
        self.method = "exact"
        kind = _reference_kind(block, self.reference)
        self.laws: list[tuple[float, np.ndarray, np.ndarray]] = []  # (weight, vals, suffix)
        if kind == "product":
            self._build_product(mc_samples, seed, type_cap)
        else:
            self._build_block()

    def _pi_pairs_for_type(self, n, log_q, cache) -> list[tuple[float, float]]:
        nz = self.block.sizes[2]
        pairs = []
        for m in conditional_types(n, nz):
            lw = sum(_log_type_prob(row, log_q) for row in m if sum(row))
            if lw == -np.inf:
                continue
            pairs.append((self.block.excess(_joint_law(self.block, m, cache)), math.exp(lw)))
        return pairs

    def _build_product(self, mc_samples: int, seed: int, type_cap: int) -> None:
        b = self.block
        nz = b.sizes[2]
        log_q = _log(self.reference.probs)
        types = x_types(b.k, b.px)
        cache: dict = {}
        work = sum(count_conditional_types(n, nz) for n, _ in types)
        if work <= type_cap:
            for n, w in types:
                vals, suffix = _pi_law(self._pi_pairs_for_type(n, log_q, cache))
                self.laws.append((w, vals, suffix))
            return
        per_type = max(count_conditional_types(n, nz) for n, _ in types)
        if per_type > type_cap:
            raise GridExplosion(f"{per_type} joint types for one x-type exceed the cap {type_cap}")
        logger.warning("%d joint types exceed the cap; sampling %d x-blocks", work, mc_samples)
        rng = np.random.default_rng(seed)
        draws = rng.multinomial(b.k, b.px, size=mc_samples)
        seen: dict = {}
        for row in map(tuple, draws):
            if row not in seen:
                seen[row] = _pi_law(self._pi_pairs_for_type(row, log_q, cache))
            self.laws.append((1.0 / mc_samples, *seen[row]))
        self.method = "monte-carlo"
        self.stderr_scale = 1.0 / math.sqrt(mc_samples)

    def _build_block(self) -> None:
        b = self.block
        _, nx, nz = b.sizes
        if nx**b.k > BLOCK_CAP:
            raise GridExplosion(f"{nx}^{b.k} x-blocks exceed the block cap {BLOCK_CAP}")
        z_blocks = _all_blocks(nz, b.k)
        ref = self.reference.probs
        for xb in _all_blocks(nx, b.k):
            w = float(np.prod(b.px[list(xb)]))
            pairs = []
            for zi, zb in enumerate(z_blocks):
                if ref[zi] > 0:
                    laws = [b.pair_laws[(x, z)] for x, z in zip(xb, zb)]
                    pairs.append((TailDP(laws).excess(b.threshold), float(ref[zi])))
            self.laws.append((w, *_pi_law(pairs)))

    def __call__(self, M) -> BoundValue:
        if M < 1:
            raise ValueError("M must be at least 1")
        vals = np.array([_excess_integral(v, s, M) for _, v, s in self.laws])
        w = np.array([lw for lw, _, _ in self.laws])
        mean = float(w @ vals)
        stderr = 0.0
        if self.method == "monte-carlo":
            stderr = float(vals.std(ddof=1)) * self.stderr_scale if len(vals) > 1 else math.inf
        return BoundValue(min(max(mean, 0.0), 1.0), stderr, self.method)


def achievability_random_coding(
    block: BlockSpec,
    M: int,
    reference: Distribution | None = None,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
) -> BoundValue:
    """Minimum excess probability of random coding, averaged over i.i.d. codebooks.

    ``reference`` is either a per-letter law (codewords drawn i.i.d. letter by
    letter) or a law over all |Z|^k blocks in lexicographic order.  It
    defaults to the optimal output law P_Z*.
    """
    return RandomCodingEvaluator(block, reference, mc_samples, seed)(M)


# --- converse --------------------------------------------------------------


def default_gamma_grid(k: int) -> np.ndarray:
    return np.geomspace(0.1, 3 * math.log(k) + 10, 32)


class ConverseEvaluator:
    """Converse lower bound on the excess probability of any size-M code.

    For every slope and gamma on the grids, evaluates
    E[min_{z-block} P[i(X; z) + lam (d(S, z) - d) >= ln M + gamma | X]] - e^-gamma
    and returns the largest value (clamped at 0).  ``lam = inf`` stands for
    the supremum over slopes, i.e. the event {d(S, z) > d} or
    {i(X; z) >= ln M + gamma}.  With a per-letter backward kernel the
    minimand depends on z-blocks only through the joint type, so the minimum
    over joint types is exact.
    """

    def __init__(
        self,
        block: BlockSpec,
        backward_kernel: Channel | np.ndarray | None = None,
        lams: Sequence[float] | float | None = None,
        gamma_grid: Sequence[float] | None = None,
        type_cap: int = TYPE_CAP,
    ):
        self.block = block
        b = block
        _, nx, nz = b.sizes
        lam_star = None
        if backward_kernel is None:
            try:
                sol = b.solution
                backward_kernel = sol.backward_channel(b.px)
                lam_star = sol.lambda_star
            except DistortionRangeError:
                backward_kernel = np.tile(b.px, (nz, 1))
        back = backward_kernel.rows if isinstance(backward_kernel, Channel) else np.asarray(backward_kernel, float)
        if lams is None:
            lams = [math.inf] if lam_star is None else [b.k * lam_star, math.inf]
        self.lams = [float(l) for l in np.atleast_1d(lams)]
        if any(l < 0 for l in self.lams):
            raise ValueError("slopes must be nonnegative")
        self.gammas = np.asarray(default_gamma_grid(b.k) if gamma_grid is None else gamma_grid, float)
        if np.any(self.gammas < 0):
            raise ValueError("gamma must be nonnegative")

        # per x-group: list of candidate (info, values, probs, p_excess)
        self.groups: list[tuple[float, list[tuple[float, np.ndarray, np.ndarray]]]] = []
        if back.shape == (nz, nx):
            self._build_product(back, type_cap)
        elif back.shape == (nz**b.k, nx**b.k):
            self._build_block(back)
        else:
            raise ValueError(f"backward kernel shape {back.shape} matches neither letters nor blocks")

    def _candidate(self, info: float, law: ExactLaw):
        kd = self.block.threshold
        items = sorted(law.items(), key=lambda kv: kv[0])
        vals = np.array([float(v) for v, _ in items])
        probs = np.array([p for _, p in items])
        excess = float(sum(p for v, p in items if v > kd))
        return info, vals, probs, excess

    def _build_product(self, back: np.ndarray, type_cap: int) -> None:
        b = self.block
        nz = b.sizes[2]
        with np.errstate(divide="ignore"):
            dens = np.log(back) - np.log(b.px)[None, :]  # (z, x)
        types = x_types(b.k, b.px)
        work = sum(count_conditional_types(n, nz) for n, _ in types)
        if work > type_cap:
            raise ConverseRefused(
                f"{work} joint types exceed the cap {type_cap}; use the closed-form bounds for this model"
            )
        cache: dict = {}
        for n, w in types:
            cands = []
            for m in conditional_types(n, nz):
                info = sum(c * dens[z, x] for x, row in enumerate(m) for z, c in enumerate(row) if c)
                cands.append(self._candidate(float(info), _joint_law(b, m, cache)))
            self.groups.append((w, cands))

    def _build_block(self, back: np.ndarray) -> None:
        b = self.block
        _, nx, nz = b.sizes
        if nz**b.k > BLOCK_CAP or nx**b.k > BLOCK_CAP:
            raise ConverseRefused(
                f"block kernel needs {nz}^{b.k} z-blocks (cap {BLOCK_CAP}); refusing to report an unverified bound"
            )
        x_blocks = _all_blocks(nx, b.k)
        z_blocks = _all_blocks(nz, b.k)
        for xi, xb in enumerate(x_blocks):
            pxb = float(np.prod(b.px[list(xb)]))
            cands = []
            for zi, zb in enumerate(z_blocks):
                with np.errstate(divide="ignore"):
                    info = math.log(back[zi, xi]) - math.log(pxb) if back[zi, xi] > 0 else -math.inf
                law = TailDP([b.pair_laws[(x, z)] for x, z in zip(xb, zb)]).law()
                cands.append(self._candidate(info, law))
            self.groups.append((pxb, cands))

    def _inner(self, cand, lam: float, thr: float) -> float:
        info, vals, probs, excess = cand
        if math.isinf(lam):
            return excess + (1.0 - excess) * (info >= thr)
        if info == -math.inf:
            return 0.0
        k, d = self.block.k, float(self.block.d)
        with np.errstate(invalid="ignore"):
            score = info + lam * (vals / k - d)
        return float(probs[score >= thr].sum())

    def value_at(self, M, lam: float, gamma: float) -> float:
        thr = math.log(M) + gamma
        total = 0.0
        for w, cands in self.groups:
            total += w * min(self._inner(c, lam, thr) for c in cands)
        return total - math.exp(-gamma)

    def __call__(self, M) -> BoundValue:
        if M < 1:
            raise ValueError("M must be at least 1")
        best = max(self.value_at(M, lam, g) for lam in self.lams for g in self.gammas)
        return BoundValue(min(max(best, 0.0), 1.0))


def converse_bound(
    block: BlockSpec,
    M: int,
    backward_kernel: Channel | np.ndarray | None = None,
    lam: Sequence[float] | float | None = None,
    gamma_grid: Sequence[float] | None = None,
) -> BoundValue:
    """Lower bound on the excess probability of every size-M code.

    Defaults: backward kernel P_X|Z* per letter, slopes k lam* and infinity,
    32 log-spaced gammas in [0.1, 3 ln k + 10].
    """
    return ConverseEvaluator(block, backward_kernel, lam, gamma_grid)(M)


# --- Shannon-style achievability -------------------------------------------

INFO_GRID = 1e-12


def _info_law(px: np.ndarray, kernel: np.ndarray) -> list[tuple[float, float]]:
    q = px @ kernel
    out = []
    for x in range(kernel.shape[0]):
        for z in range(kernel.shape[1]):
            p = px[x] * kernel[x, z]
            if p > 0:
                out.append((math.log(kernel[x, z] / q[z]), p))
    return out


def _rounded_up_power(law: list[tuple[float, float]], k: int, cap: int = GRID_CAP) -> tuple[dict, float]:
    """k-fold law of the sum with every letter value rounded up to a grid."""
    step = INFO_GRID
    while True:
        letter: dict = defaultdict(float)
        for v, p in law:
            letter[math.ceil(v / step)] += p
        try:
            return power(dict(letter), k, cap), step
        except GridExplosion:
            step *= 16


class ShannonEvaluator:
    """P[d(S, Z) > d] + P[i(X; Z) > ln M - gamma] + exp(-e^gamma) with i.i.d. (S, X, Z)."""

    def __init__(self, block: BlockSpec, kernel: Channel | np.ndarray | None = None):
        b = block
        if kernel is None:
            kernel = b.solution.kernel
        k_rows = kernel.rows if isinstance(kernel, Channel) else np.asarray(kernel, float)
        if k_rows.shape != (b.sizes[1], b.sizes[2]):
            raise ValueError(f"kernel shape {k_rows.shape} does not match (|X|, |Z|) = {b.sizes[1:]}")
        if np.any(k_rows < 0) or not np.allclose(k_rows.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("kernel rows must be probability vectors")
        self.block = block
        letter: dict = defaultdict(float)
        for (x, z), law in b.pair_laws.items():
            w = b.px[x] * k_rows[x, z]
            if w > 0:
                for v, p in law.items():
                    letter[v] += w * p
        self.distortion_excess = b.excess(power(dict(letter), b.k))
        info, self.step = _rounded_up_power(_info_law(b.px, k_rows), b.k)
        keys = np.array(sorted(info))
        self.info_values = keys * self.step
        probs = np.array([info[kk] for kk in keys])
        self.info_tail = np.cumsum(probs[::-1])[::-1]  # P[sum >= value_i]

    def info_excess(self, t: float) -> float:
        """Upper bound on P[i(X^k; Z^k) > t]."""
        i = np.searchsorted(self.info_values, t, side="right")
        return float(self.info_tail[i]) if i < len(self.info_values) else 0.0

    def value(self, M, gamma: float) -> float:
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        return self.distortion_excess + self.info_excess(math.log(M) - gamma) + math.exp(-math.exp(gamma))

    def __call__(self, M, gamma: float | None = None) -> BoundValue:
        if M < 1:
            raise ValueError("M must be at least 1")
        if gamma is not None:
            return BoundValue(min(1.0, self.value(M, gamma)))
        grid = np.concatenate(([0.0], np.geomspace(1e-2, max(1.0, math.log(M)) + 5, 64)))
        return BoundValue(min(1.0, min(self.value(M, g) for g in grid)))


def achievability_shannon_style(
    block: BlockSpec, M: int, kernel: Channel | np.ndarray | None = None, gamma: float | None = None
) -> BoundValue:
    """Shannon-style achievability; minimizes over a gamma grid when ``gamma`` is None."""
    return ShannonEvaluator(block, kernel)(M, gamma)


# --- tilted-information achievability -------------------------------------


def _round_counts(row: np.ndarray, n: int) -> tuple[int, ...]:
    """Largest-remainder rounding of n * row to integers summing to n."""
    raw = n * row
    base = np.floor(raw).astype(int)
    short = n - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    for z in order[:short]:
        base[z] += 1
    return tuple(int(c) for c in base)


def _condition_rows(block: BlockSpec, kernel: np.ndarray) -> list[int | None]:
    """Per observation: the z whose letter law stands for the class, or None if deterministic.

    Raises TiltedConditionError if a nondegenerate class mixes reproductions
    with different distortion profiles.
    """
    b = block
    reps: list[int | None] = []
    for x in range(b.sizes[1]):
        if b.degenerate[x]:
            reps.append(None)
            continue
        supp = np.flatnonzero(kernel[x] > 0)
        law0 = b.pair_laws[(x, int(supp[0]))]
        for z in supp[1:]:
            if b.pair_laws[(x, int(z))] != law0 or not _same_profile(b, x, int(supp[0]), int(z)):
                raise TiltedConditionError(b.base.x_symbols[x], [b.base.z_symbols[int(s)] for s in supp])
        reps.append(int(supp[0]))
    return reps


def _same_profile(b: BlockSpec, x: int, z0: int, z1: int) -> bool:
    col = b.base.joint()[:, x] > 0
    ex = b.base.distortion.exact
    return all(ex[s][z0] == ex[s][z1] for s in np.flatnonzero(col))


def tilted_kernel(block: BlockSpec, kernel: np.ndarray) -> np.ndarray:
    """Make a per-letter kernel admissible: nondegenerate rows become point masses.

    The retained reproduction minimizes dbar(x, z), ties broken by kernel mass.
    """
    b = block
    dbar = surrogate_from_noisy(b.base).dbar
    out = np.array(kernel, dtype=float, copy=True)
    for x in range(b.sizes[1]):
        if not b.degenerate[x]:
            z = min(range(b.sizes[2]), key=lambda zz: (dbar[x, zz], -kernel[x, zz]))
            out[x] = 0.0
            out[x, z] = 1.0
    return out


class TiltedEvaluator:
    """Generalized-tilted-information achievability with conditional-type-uniform codes.

    Given an x-block of type n, the kernel draws z uniformly from the
    conditional type class obtained by rounding n_x * P_Z|X(.|x) for
    observations that determine the source, and uses one fixed reproduction
    on the other observations.  Then d(S, Z) is a function of S alone, as
    required.
    """

    def __init__(
        self,
        block: BlockSpec,
        kernel: Channel | np.ndarray | None = None,
        reference: Distribution | None = None,
        type_cap: int = TYPE_CAP,
    ):
        b = block
        self.block = block
        _, nx, nz = b.sizes
        try:
            sol = b.solution
            self.lam_star = sol.lambda_star if sol.lambda_star > 0 else 1.0
        except DistortionRangeError:
            sol, self.lam_star = None, 1.0
        if kernel is None:
            if sol is None:
                raise DistortionRangeError("no default kernel below d_min; supply one")
            kernel = tilted_kernel(b, sol.kernel.rows)
        rows = kernel.rows if isinstance(kernel, Channel) else np.asarray(kernel, float)
        reps = _condition_rows(b, rows)
        if reference is None:
            reference = _default_reference(b)
        if len(reference) != nz:
            raise ValueError("reference must be a per-letter law")
        log_q = _log(reference.probs)
        types = x_types(b.k, b.px)
        if len(types) > type_cap:
            raise GridExplosion(f"{len(types)} x-types exceed the cap {type_cap}")
        exact = b.base.distortion.exact
        joint = b.base.joint()
        cache: dict = {}
        # per x-type: (weight, divergence, sorted block-distortion values, probs)
        self.groups = []
        for n, w in types:
            div = 0.0
            const = Fraction(0)
            law: ExactLaw = {Fraction(0): 1.0}
            counts = np.zeros(nz, dtype=int)
            for x, nx_ in enumerate(n):
                if not nx_:
                    continue
                if reps[x] is None:
                    m = _round_counts(rows[x], nx_)
                    s = int(np.flatnonzero(joint[:, x] > 0)[0])
                    const += sum(c * exact[s][z] for z, c in enumerate(m) if c)
                    div -= _log_multinomial(m)
                    counts += np.array(m)
                else:
                    z = reps[x]
                    key = (x, z, nx_)
                    if key not in cache:
                        cache[key] = power(b.pair_laws[(x, z)], nx_)
                    law = convolve(law, cache[key])
                    counts[z] += nx_
            used = counts > 0
            div -= float(np.sum(counts[used] * log_q[used])) if np.all(log_q[used] > -np.inf) else -math.inf
            items = sorted(((v + const, p) for v, p in law.items()), key=lambda kv: kv[0])
            vals = [v for v, _ in items]
            probs = np.array([p for _, p in items])
            self.groups.append((w, div, vals, probs))

    def terms(self, M, gamma: float, beta: float, delta, lam_grid: np.ndarray) -> tuple[float, float, float, float]:
        """The four averaged terms: tilted-information tail, excess, window deficit, exp(-M/gamma)."""
        b = self.block
        k = b.k
        delta = as_fraction(delta)
        lower, upper = k * (b.d - delta), b.threshold
        log_thr = math.log(gamma) - math.log(beta)
        first_avg = over_avg = third_avg = 0.0
        for w, div, vals, probs in self.groups:
            fvals = np.array([float(v) for v in vals])
            over = float(probs[[v > upper for v in vals]].sum())
            window = float(probs[[lower <= v <= upper for v in vals]].sum())
            third = max(0.0, 1.0 - beta * window)
            if math.isinf(div):
                first = 1.0
            else:
                first = min(
                    float(probs[div + lam * (fvals / k - float(b.d - delta)) > log_thr].sum()) for lam in lam_grid
                )
            first_avg += w * first
            over_avg += w * over
            third_avg += w * third
        return first_avg, over_avg, third_avg, math.exp(-M / gamma)

    def value(self, M, gamma: float, beta: float, delta, lam_grid: np.ndarray) -> float:
        return sum(self.terms(M, gamma, beta, delta, lam_grid))

    def default_lam_grid(self) -> np.ndarray:
        return self.block.k * self.lam_star * np.geomspace(1e-2, 1e2, 64)

    def default_params(self, M, b_par: float, tau: float) -> tuple[float, float, Fraction]:
        """(gamma, beta, delta) from b and tau: beta = sqrt(k)/b, delta = tau/k, gamma = 2M / ln k."""
        k = self.block.k
        beta = math.sqrt(k) / b_par
        delta = Fraction(tau).limit_denominator(10**6) / k
        log_gamma = math.log(M) - math.log(math.log(k)) + math.log(2) if k >= 3 else math.log(M)
        return math.exp(log_gamma), beta, delta

    def __call__(
        self,
        M,
        gamma: float | None = None,
        beta: float | None = None,
        delta=None,
        lam_grid: Sequence[float] | None = None,
        b_grid: Sequence[float] = (0.25, 0.5, 1.0, 2.0, 4.0),
        tau_grid: Sequence[float] = (0.5, 1.0, 2.0, 4.0),
    ) -> BoundValue:
        if M < 1:
            raise ValueError("M must be at least 1")
        lams = self.default_lam_grid() if lam_grid is None else np.asarray(lam_grid, float)
        if gamma is not None and beta is not None and delta is not None:
            return BoundValue(min(1.0, self.value(M, gamma, beta, delta, lams)))
        best = math.inf
        for b_par in b_grid:
            for tau in tau_grid:
                g, be, de = self.default_params(M, b_par, tau)
                g = gamma if gamma is not None else g
                be = beta if beta is not None else be
                de = delta if delta is not None else de
                best = min(best, self.value(M, g, be, de, lams))
        return BoundValue(min(1.0, best))


def achievability_tilted(
    block: BlockSpec,
    M: int,
    gamma: float | None = None,
    beta: float | None = None,
    delta=None,
    reference: Distribution | None = None,
    kernel: Channel | np.ndarray | None = None,
) -> BoundValue:
    """Achievability through the generalized tilted information.

    Unspecified parameters follow beta = sqrt(k)/b, delta = tau/k,
    ln gamma = ln M - ln ln k + ln 2, minimized over a small (b, tau) grid.
    """
    return TiltedEvaluator(block, kernel, reference)(M, gamma, beta, delta)


# --- code-size bracket -------------------------------------------------------


class CodeSizeBracket(NamedTuple):
    m_converse: int
    m_achievability: int | None
    open: bool


def _first_at_most(f: Callable[[int], float], eps: float, cap_log2: int) -> int | None:
    """Smallest M >= 1 with f(M) <= eps for nonincreasing f, or None below 2^cap_log2."""
    if f(1) <= eps:
        return 1
    lo, hi = 1, 2
    while f(hi) > eps:
        lo, hi = hi, hi * 2
        if hi > 2**cap_log2:
            return None
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if f(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def code_size_bracket(
    block: BlockSpec,
    reference: Distribution | None = None,
    cap_log2: int = M_CAP_LOG2,
) -> CodeSizeBracket:
    """(M_converse, M_achievability): every code meeting eps needs at least
    M_converse codewords, and some code with M_achievability codewords meets eps.

    Without a ``reference`` the achievability side takes the better of random
    coding from P_Z* and from the uniform law; P_Z* may miss reproductions
    that only pay off once M is large.
    """
    eps = block.eps
    conv = ConverseEvaluator(block)
    if reference is None:
        refs = [_default_reference(block), Distribution.uniform(block.sizes[2])]
        if np.array_equal(refs[0].probs, refs[1].probs):
            refs.pop()
    else:
        refs = [reference]
    coders = [RandomCodingEvaluator(block, r) for r in refs]
    try:
        shannon = ShannonEvaluator(block)
    except (DistortionRangeError, GridExplosion):
        shannon = None

    def best_ach(M: int) -> float:
        v = min(c(M) for c in coders)
        return min(v, shannon(M)) if shannon is not None else v

    m_conv = _first_at_most(conv, eps, cap_log2)
    m_ach = _first_at_most(best_ach, eps, cap_log2)
    if m_conv is None:
        m_conv = 2**cap_log2
    if m_ach is None:
        logger.warning("achievability stays above eps=%g up to M=2^%d", eps, cap_log2)
    return CodeSizeBracket(m_conv, m_ach, m_ach is None)


# --- exhaustive oracles ------------------------------------------------------


class ExhaustiveOracle:
    """Brute force over x-blocks and codebooks for tiny instances."""

    def __init__(self, block: BlockSpec):
        b = block
        _, nx, nz = b.sizes
        if nx**b.k > BLOCK_CAP or nz**b.k > BLOCK_CAP:
            raise GridExplosion("instance too large for exhaustive search")
        self.block = b
        self.x_blocks = _all_blocks(nx, b.k)
        self.z_blocks = _all_blocks(nz, b.k)
        self.px_blocks = np.array([float(np.prod(b.px[list(xb)])) for xb in self.x_blocks])
        self.pi = np.array(
            [
                [TailDP([b.pair_laws[(x, z)] for x, z in zip(xb, zb)]).excess(b.threshold) for zb in self.z_blocks]
                for xb in self.x_blocks
            ]
        )  # (x-block, z-block)

    def codebook_excess(self, codebook: Sequence[int]) -> float:
        """Excess probability of a codebook (z-block indices) with the pi-minimizing encoder."""
        return float(self.px_blocks @ self.pi[:, list(codebook)].min(axis=1))

    def min_excess(self, M: int) -> float:
        return min(
            self.codebook_excess(cb)
            for cb in itertools.combinations_with_replacement(range(len(self.z_blocks)), M)
        )

    def code_size(self, m_max: int = 8) -> int | None:
        for M in range(1, m_max + 1):
            if self.min_excess(M) <= self.block.eps:
                return M
        return None

    def random_coding(self, M: int, reference: Distribution | None = None) -> float:
        """Codebook-average excess probability, codewords i.i.d. from ``reference``."""
        nzb = len(self.z_blocks)
        if reference is None:
            reference = _default_reference(self.block)
        ref = reference.probs
        if len(ref) != nzb:
            ref = np.array([float(np.prod(ref[list(zb)])) for zb in self.z_blocks])
        total = 0.0
        for cb in itertools.product(range(nzb), repeat=M):
            w = float(np.prod(ref[list(cb)]))
            if w > 0:
                total += w * self.codebook_excess(cb)
        return total
