"""Command-line front end.  Emits CSV (bits at the boundary) plus a run manifest.

Exit codes: 0 on success (including rows flagged by design), 2 on invalid
input, 3 when an evaluator refuses the instance.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import shlex
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bes import BesParams, BesRangeError, bes_curve_row, default_k_grid
from .dispersion import analyze
from .model import ModelError, NoisySourceModel, builtin_bes, load_model, surrogate_from_noisy
from .numerics import as_fraction
from .oneshot import (
    BlockSpec,
    ConverseRefused,
    GridExplosion,
    RandomCodingEvaluator,
    ShannonEvaluator,
    TiltedConditionError,
    TiltedEvaluator,
    ConverseEvaluator,
    code_size_bracket,
)
from .rd_solver import DistortionRangeError, SolverError, solve_distortion

LN2 = math.log(2.0)
EXIT_OK, EXIT_INVALID, EXIT_REFUSED = 0, 2, 3


class Refusal(RuntimeError):
    pass


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, Fraction):
        value = float(value)
    v = float(value)
    if math.isnan(v):
        return ""
    return format(v, ".12g")


def bits(nats: float) -> float:
    return nats / LN2


# --- inputs -----------------------------------------------------------------


def _load(args) -> NoisySourceModel:
    if getattr(args, "bes", None) is not None:
        return builtin_bes(args.bes)
    if not getattr(args, "model", None):
        raise ModelError("give a model file or --bes DELTA")
    return load_model(args.model)


def parse_grid(text: str) -> list[Fraction]:
    """``a:b:step`` (inclusive) or a comma list; values kept exact."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid {text!r} is not start:stop:step")
        start, stop, step = (as_fraction(p) for p in parts)
        if step <= 0:
            raise ValueError("grid step must be positive")
        out, v = [], start
        while v <= stop:
            out.append(v)
            v += step
        return out
    return [as_fraction(p) for p in text.split(",") if p.strip()]


# --- commands ---------------------------------------------------------------


def cmd_rd(args) -> tuple[list[str], list[list]]:
    model = _load(args)
    sur = surrogate_from_noisy(model)
    d_max = sur.d_max()
    header = ["d", "rate_bits", "lambda_star_bits", "status"]
    rows = []
    for d in parse_grid(args.d_grid):
        try:
            sol = solve_distortion(sur, float(d))
            rows.append([d, bits(sol.rate), bits(sol.lambda_star), "ok"])
        except DistortionRangeError as exc:
            status = "above d_max" if float(d) > d_max else "below d_min"
            rows.append([d, None, None, f"{status}: {exc}"])
    return header, rows


def cmd_dispersion(args) -> tuple[list[str], list[list]]:
    model = _load(args)
    sol, _, rep = analyze(model, float(as_fraction(args.d)))
    header = [
        "d",
        "rate_bits",
        "v_surrogate_bits2",
        "v_noisy_bits2",
        "v_directional_bits2",
        "inner_variance_term_bits2",
        "lambda_star_bits",
        "covariance_residual_bits2",
    ]
    b2 = LN2**2
    row = [
        as_fraction(args.d),
        bits(rep.rate),
        rep.v_surrogate / b2,
        rep.v_noisy / b2,
        rep.v_directional / b2,
        rep.inner_variance_term / b2,
        bits(rep.lambda_star),
        abs(rep.covariance_cross_term) / b2,
    ]
    return header, [row]


CURVE_HEADER = [
    "k",
    "rate_rd_bits",
    "rate_converse_bits",
    "rate_achievability_bits",
    "rate_gaussian_0_bits",
    "rate_gaussian_logk_bits",
    "rate_converse_surrogate_bits",
    "rate_achievability_surrogate_bits",
    "rate_gaussian_0_surrogate_bits",
    "rate_gaussian_logk_surrogate_bits",
    "note",
]


def _curve_row(params: BesParams, k: int) -> list:
    r = bes_curve_row(params, k)
    return [
        r.k,
        bits(r.rate_rd),
        bits(r.converse),
        bits(r.achievability),
        bits(r.gaussian_0),
        bits(r.gaussian_logk),
        bits(r.converse_surrogate),
        bits(r.achievability_surrogate),
        bits(r.gaussian_0_surrogate),
        bits(r.gaussian_logk_surrogate),
        r.note,
    ]


def cmd_bes_curve(args) -> tuple[list[str], list[list]]:
    params = BesParams(as_fraction(args.delta), as_fraction(args.d), args.eps)
    if args.k_min < 1 or args.k_max < args.k_min:
        raise ValueError("need 1 <= k-min <= k-max")
    if args.k_step:
        ks = list(range(args.k_min, args.k_max + 1, args.k_step))
    else:
        ks = default_k_grid(args.k_min, args.k_max, args.k_points)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_curve_row, [params] * len(ks), ks))
    else:
        rows = [_curve_row(params, k) for k in ks]
    return CURVE_HEADER, rows


def cmd_oneshot(args) -> tuple[list[str], list[list]]:
    model = _load(args)
    block = BlockSpec(model, args.k, as_fraction(args.d), args.eps)
    try:
        if args.search:
            br = code_size_bracket(block)
            header = ["k", "d", "m_converse", "m_achievability", "rate_converse_bits", "rate_achievability_bits", "status"]
            rate_a = bits(math.log(br.m_achievability)) / block.k if br.m_achievability else None
            return header, [[
                block.k,
                block.d,
                br.m_converse,
                br.m_achievability,
                bits(math.log(br.m_converse)) / block.k,
                rate_a,
                "open bracket" if br.open else "ok",
            ]]
        header = ["k", "d", "M", "bound", "epsilon", "stderr", "method"]
        rows = []
        evaluators = [
            ("converse", lambda: ConverseEvaluator(block)),
            ("achievability_random_coding", lambda: RandomCodingEvaluator(block, mc_samples=args.mc_samples, seed=args.seed)),
            ("achievability_shannon", lambda: ShannonEvaluator(block)),
            ("achievability_tilted", lambda: TiltedEvaluator(block)),
        ]
        built = []
        for name, make in evaluators:
            try:
                built.append((name, make()))
            except (GridExplosion, TiltedConditionError, DistortionRangeError) as exc:
                if name == "converse":
                    raise
                built.append((name, exc))
        for M in args.M:
            for name, ev in built:
                if isinstance(ev, Exception):
                    rows.append([block.k, block.d, M, name, None, None, f"skipped: {ev}"])
                    continue
                v = ev(M)
                rows.append([block.k, block.d, M, name, float(v), v.stderr, v.method])
        return header, rows
    except (ConverseRefused, GridExplosion) as exc:
        raise Refusal(str(exc)) from exc


# --- plumbing ---------------------------------------------------------------


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def manifest(argv: Sequence[str], model_hash: str, seed: int, wall: float) -> str:
    return (
        f"command: {shlex.join(['noisylossy', *argv])}\n"
        f"model_hash: {model_hash}\n"
        f"seed: {seed}\n"
        f"version: {__version__}\n"
        f"wall_time_s: {wall:.3f}\n"
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noisylossy", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("model", nargs="?", help="model file (JSON)")
            sp.add_argument("--bes", metavar="DELTA", help="built-in erased fair coin model")
        sp.add_argument("--out", "-o", help="CSV path (default stdout); manifest goes to <out>.manifest")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("rd", help="rate-distortion sweep")
    common(sp)
    sp.add_argument("--d-grid", "--d", dest="d_grid", required=True, help="start:stop:step or comma list")
    sp.set_defaults(func=cmd_rd)

    sp = sub.add_parser("dispersion", help="dispersions at one distortion")
    common(sp)
    sp.add_argument("--d", required=True)
    sp.set_defaults(func=cmd_dispersion)

    sp = sub.add_parser("bes-curve", help="rate-blocklength curves for erased coin flips")
    common(sp, model=False)
    sp.add_argument("--delta", default="1/10")
    sp.add_argument("--d", default="1/10")
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--k-min", type=int, default=10)
    sp.add_argument("--k-max", type=int, default=5000)
    sp.add_argument("--k-step", type=int, default=0, help="linear step; log-spaced grid if 0")
    sp.add_argument("--k-points", type=int, default=40, help="points of the log-spaced grid")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_bes_curve)

    sp = sub.add_parser("oneshot", help="general bounds for a k-letter block")
    common(sp)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--d", required=True)
    sp.add_argument("--eps", type=float, default=0.1)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--M", type=int, nargs="+", help="code sizes to evaluate")
    g.add_argument("--search", action="store_true", help="bracket the optimal code size")
    sp.add_argument("--mc-samples", type=int, default=20_000)
    sp.set_defaults(func=cmd_oneshot)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        header, rows = args.func(args)
        model_hash = _load(args).digest() if hasattr(args, "model") else "builtin-bes"
    except Refusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (ModelError, BesRangeError, DistortionRangeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    text = _csv(header, rows)
    meta = manifest(argv, model_hash, args.seed, time.perf_counter() - start)
    if args.out:
        Path(args.out).write_text(text)
        Path(args.out + ".manifest").write_text(meta)
    else:
        sys.stdout.write(text)
        sys.stderr.write(meta)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
