"""Seeded generators of small noisy models with a nondegenerate R(d)."""

from __future__ import annotations

import numpy as np

from noisylossy.model import random_model, surrogate_from_noisy
from noisylossy.rd_solver import solve_distortion

MIN_SPREAD = 0.1
MAX_SLOPE = 20.0


def generic_models(seed: int, count: int, max_size: int = 4, min_size: int = 2):
    """``count`` (model, d) pairs; d sits halfway between d_min and d_max.

    Models whose distortion range is narrow or whose slope is steep (R(d)
    near a kink) are skipped so finite differences stay meaningful.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        ns, nx, nz = (int(v) for v in rng.integers(min_size, max_size + 1, size=3))
        model = random_model(rng, ns, nx, nz, denominator=4)
        sur = surrogate_from_noisy(model)
        lo, hi = sur.d_min(), sur.d_max()
        if hi - lo < MIN_SPREAD:
            continue
        d = lo + 0.5 * (hi - lo)
        if solve_distortion(sur, d).lambda_star > MAX_SLOPE:
            continue
        out.append((model, d))
    return out
