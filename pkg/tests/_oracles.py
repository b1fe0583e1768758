"""Brute-force oracles that enumerate source blocks directly."""

import itertools
import math
from fractions import Fraction

import numpy as np


def brute_pi(block, xb, zb):
    m = block.base
    ps_x = m.joint() / m.x_marginal()  # P(s | x), columns indexed by x
    exact = m.distortion.exact
    ns = m.sizes[0]
    total = 0.0
    for sb in itertools.product(range(ns), repeat=block.k):
        w = math.prod(ps_x[s, x] for s, x in zip(sb, xb))
        if w and sum(Fraction(exact[s][z]) for s, z in zip(sb, zb)) > block.threshold:
            total += w
    return total


def brute_random_coding(block, M, q):
    _, nx, nz = block.sizes
    xbs = list(itertools.product(range(nx), repeat=block.k))
    zbs = list(itertools.product(range(nz), repeat=block.k))
    pi = np.array([[brute_pi(block, xb, zb) for zb in zbs] for xb in xbs])
    px = np.array([math.prod(block.px[x] for x in xb) for xb in xbs])
    qz = np.array([math.prod(q[z] for z in zb) for zb in zbs])
    total = 0.0
    for cb in itertools.product(range(len(zbs)), repeat=M):
        w = math.prod(qz[c] for c in cb)
        if w:
            total += w * float(px @ pi[:, list(cb)].min(axis=1))
    return total
