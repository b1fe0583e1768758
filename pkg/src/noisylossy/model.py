"""Finite-alphabet model objects.

A :class:`NoisySourceModel` bundles the source law P_S, the observation
channel P_X|S and the distortion matrix d(s, z).  :func:`surrogate_from_noisy`
turns it into the noiseless surrogate problem on the observation alphabet,
whose distortion is dbar(x, z) = E[d(S, z) | X = x].

Model files are JSON documents::

    {
      "name": "erased coin",
      "source_alphabet": ["0", "1"],
      "observation_alphabet": ["0", "1", "?"],
      "reproduction_alphabet": ["0", "1"],
      "source": ["1/2", "1/2"],
      "observation": [["9/10", 0, "1/10"], [0, "9/10", "1/10"]],
      "distortion": [[0, 1], [1, 0]]
    }

Matrices are row-major.  Numbers may be JSON numbers or strings holding a
decimal or ``"p/q"``; distortion entries may also be ``"inf"``.  Decimal
literals are read exactly, so thresholds such as ``0.1`` stay rational.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .numerics import as_fraction

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12

Symbol = Union[int, str]
ExactValue = Union[Fraction, float]  # float only for +inf


class ModelError(ValueError):
    """Base class for model construction problems."""


class ModelValidationError(ModelError):
    """One or more model invariants are violated.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid model:\n  - " + "\n  - ".join(self.problems))


class ModelParseError(ModelError):
    """The model file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Distribution:
    """Probability vector over an indexed finite alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size == 0:
            raise ModelValidationError(["distribution must be a nonempty vector"])
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ModelValidationError(["distribution has negative or non-finite entries"])
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ModelValidationError([f"distribution sums to {p.sum()!r}, not 1"])

    def __len__(self) -> int:
        return self.probs.size

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    @classmethod
    def uniform(cls, n: int) -> "Distribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n: int, index: int) -> "Distribution":
        p = np.zeros(n)
        p[index] = 1.0
        return cls(p)


@dataclass(frozen=True)
class Channel:
    """Stochastic matrix; row ``a`` is the output law given input ``a``."""

    rows: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rows)
        object.__setattr__(self, "rows", r)
        problems = _row_problems(r, "row")
        if problems:
            raise ModelValidationError(problems)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    def row(self, a: int) -> Distribution:
        return Distribution(self.rows[a])


def _row_problems(r: np.ndarray, label: str, names: Sequence[str] | None = None) -> list[str]:
    if r.ndim != 2 or r.shape[0] == 0 or r.shape[1] == 0:
        return ["channel must be a nonempty matrix"]
    problems = []
    for i, row in enumerate(r):
        name = names[i] if names is not None else str(i)
        if np.any(row < 0) or not np.all(np.isfinite(row)):
            problems.append(f"{label} {name!r} has negative or non-finite entries")
        elif abs(row.sum() - 1.0) > PROB_TOL:
            problems.append(f"{label} {name!r} sums to {row.sum()!r}, not 1")
    return problems


@dataclass(frozen=True)
class DistortionMatrix:
    """Nonnegative distortion d(s, z), possibly infinite.

    ``exact`` carries the same entries as exact rationals (``math.inf`` for
    infinite entries) so that block distortion thresholds can be decided
    without rounding.
    """

    values: np.ndarray
    exact: tuple[tuple[ExactValue, ...], ...] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = _frozen(self.values)
        object.__setattr__(self, "values", v)
        problems = []
        if v.ndim != 2 or v.size == 0:
            raise ModelValidationError(["distortion must be a nonempty matrix"])
        if np.any(np.isnan(v)) or np.any(v < 0):
            problems.append("distortion has negative or NaN entries")
        for i, row in enumerate(v):
            if not np.any(np.isfinite(row)):
                problems.append(f"distortion row {i} has no finite entry")
        if problems:
            raise ModelValidationError(problems)
        if self.exact is None:
            exact = tuple(
                tuple(math.inf if math.isinf(x) else as_fraction(float(x)) for x in row)
                for row in v
            )
            object.__setattr__(self, "exact", exact)

    @classmethod
    def from_exact(cls, entries: Sequence[Sequence[ExactValue]]) -> "DistortionMatrix":
        exact = tuple(
            tuple(math.inf if (isinstance(x, float) and math.isinf(x)) else as_fraction(x) for x in row)
            for row in entries
        )
        values = [[float(x) for x in row] for row in exact]
        return cls(np.array(values, dtype=float), exact)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def hamming(cls, n: int) -> "DistortionMatrix":
        return cls.from_exact([[0 if i == j else 1 for j in range(n)] for i in range(n)])


def _default_names(n: int) -> tuple[str, ...]:
    return tuple(str(i) for i in range(n))


@dataclass(frozen=True)
class NoisySourceModel:
    """Source P_S seen through channel P_X|S, judged by distortion d(s, z)."""

    source: Distribution
    observation: Channel
    distortion: DistortionMatrix
    s_symbols: tuple[str, ...] = None
    x_symbols: tuple[str, ...] = None
    z_symbols: tuple[str, ...] = None
    name: str = ""

    def __post_init__(self):
        ns = len(self.source)
        nx = self.observation.shape[1]
        nz = self.distortion.shape[1]
        for attr, n in (("s_symbols", ns), ("x_symbols", nx), ("z_symbols", nz)):
            names = getattr(self, attr)
            object.__setattr__(self, attr, _default_names(n) if names is None else tuple(map(str, names)))
        problems = []
        if self.observation.shape[0] != ns:
            problems.append(f"observation has {self.observation.shape[0]} rows but source has {ns} symbols")
        if self.distortion.shape[0] != ns:
            problems.append(f"distortion has {self.distortion.shape[0]} rows but source has {ns} symbols")
        for attr, n in (("s_symbols", ns), ("x_symbols", nx), ("z_symbols", nz)):
            names = getattr(self, attr)
            if len(names) != n:
                problems.append(f"{attr} lists {len(names)} names for {n} symbols")
            elif len(set(names)) != n:
                problems.append(f"{attr} has duplicate names")
        if problems:
            raise ModelValidationError(problems)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.s_symbols), len(self.x_symbols), len(self.z_symbols)

    def joint(self) -> np.ndarray:
        """P_SX as an |S| x |X| array."""
        return self.source.probs[:, None] * self.observation.rows

    def x_marginal(self) -> np.ndarray:
        return self.source.probs @ self.observation.rows

    def s_index(self, s: Symbol) -> int:
        return _lookup(self.s_symbols, s, "source")

    def x_index(self, x: Symbol) -> int:
        return _lookup(self.x_symbols, x, "observation")

    def z_index(self, z: Symbol) -> int:
        return _lookup(self.z_symbols, z, "reproduction")

    def pruned(self) -> "NoisySourceModel":
        """Drop source symbols of zero probability and unobservable outputs."""
        keep_s = np.flatnonzero(self.source.probs > 0)
        px = self.x_marginal()
        keep_x = np.flatnonzero(px > 0)
        if keep_s.size == len(self.s_symbols) and keep_x.size == len(self.x_symbols):
            return self
        dropped = [self.x_symbols[i] for i in range(len(self.x_symbols)) if px[i] <= 0]
        if dropped:
            logger.warning("pruning zero-probability observations %s", dropped)
        rows = self.observation.rows[np.ix_(keep_s, keep_x)]
        rows = rows / rows.sum(axis=1, keepdims=True)
        src = self.source.probs[keep_s]
        exact = [self.distortion.exact[i] for i in keep_s]
        return NoisySourceModel(
            Distribution(src / src.sum()),
            Channel(rows),
            DistortionMatrix(self.distortion.values[keep_s], tuple(exact)),
            tuple(self.s_symbols[i] for i in keep_s),
            tuple(self.x_symbols[i] for i in keep_x),
            self.z_symbols,
            self.name,
        )

    def with_joint(self, joint: np.ndarray) -> "NoisySourceModel":
        """Same alphabets and distortion, new joint law P_SX."""
        joint = np.asarray(joint, dtype=float)
        ps = joint.sum(axis=1)
        rows = np.where(ps[:, None] > 0, joint / np.where(ps > 0, ps, 1.0)[:, None], 1.0 / joint.shape[1])
        return NoisySourceModel(
            Distribution(ps / ps.sum()),
            Channel(rows),
            self.distortion,
            self.s_symbols,
            self.x_symbols,
            self.z_symbols,
            self.name,
        )

    def digest(self) -> str:
        """Stable short hash of the model contents."""
        payload = json.dumps(model_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _lookup(names: Sequence[str], key: Symbol, what: str) -> int:
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        if not 0 <= key < len(names):
            raise ModelError(f"{what} index {key} out of range")
        return int(key)
    try:
        return names.index(str(key))
    except ValueError:
        raise ModelError(f"unknown {what} symbol {key!r}") from None


@dataclass(frozen=True)
class SurrogateModel:
    """Noiseless problem on the observation alphabet.

    Attributes:
        observable: P_X, full support.
        surrogate_distortion: dbar(x, z) = E[d(S, z) | X = x].
        conditional_source: P_S|X, rows indexed by x.
    """

    observable: Distribution
    surrogate_distortion: DistortionMatrix
    conditional_source: Channel
    x_symbols: tuple[str, ...] = None
    z_symbols: tuple[str, ...] = None

    @property
    def dbar(self) -> np.ndarray:
        return self.surrogate_distortion.values

    @property
    def px(self) -> np.ndarray:
        return self.observable.probs

    def d_min(self) -> float:
        """Smallest distortion with finite rate: E[min_z dbar(X, z)]."""
        return float(self.px @ self.dbar.min(axis=1))

    def d_max(self) -> float:
        """Smallest distortion reachable by a constant reproduction."""
        return float(np.min(self.px @ _inf_safe(self.dbar, self.px)))

    def argmin_constant(self) -> int:
        return int(np.argmin(self.px @ _inf_safe(self.dbar, self.px)))


def _inf_safe(dist: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Replace entries that carry zero weight so 0 * inf does not poison sums."""
    return np.where(weights[:, None] > 0, dist, 0.0)


def expected_distortion(weights: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """sum_s w[s] d[s, z] for every z, with 0 * inf = 0."""
    w = np.asarray(weights, dtype=float)
    terms = np.where(w[:, None] > 0, w[:, None] * np.where(w[:, None] > 0, dist, 0.0), 0.0)
    return terms.sum(axis=0)


def surrogate_from_noisy(model: NoisySourceModel, prune: bool = True) -> SurrogateModel:
    """Surrogate noiseless problem induced by a noisy source model.

    Raises:
        ModelValidationError: if some observation has zero probability and
            ``prune`` is false, or if some observation has no reproduction
            with finite expected distortion.
    """
    px = model.x_marginal()
    if np.any(px <= 0):
        if not prune:
            bad = [model.x_symbols[i] for i in np.flatnonzero(px <= 0)]
            raise ModelValidationError([f"observation {b!r} has zero probability" for b in bad])
        model = model.pruned()
        px = model.x_marginal()
    joint = model.joint()
    cond = (joint / px[None, :]).T  # rows: x, cols: s
    dbar = np.vstack([expected_distortion(cond[i], model.distortion.values) for i in range(len(px))])
    problems = [
        f"observation {model.x_symbols[i]!r} has infinite expected distortion for every reproduction"
        for i in range(len(px))
        if not np.any(np.isfinite(dbar[i]))
    ]
    if problems:
        raise ModelValidationError(problems)
    return SurrogateModel(
        Distribution(px / px.sum()),
        DistortionMatrix(dbar),
        Channel(cond / cond.sum(axis=1, keepdims=True)),
        model.x_symbols,
        model.z_symbols,
    )


def conditional_distortion_dist(
    model: NoisySourceModel, x: Symbol, z: Symbol
) -> list[tuple[ExactValue, float]]:
    """Law of d(S, z) given X = x as sorted ``(value, prob)`` pairs.

    Values are exact rationals (``math.inf`` for infinite distortion).
    """
    xi = model.x_index(x)
    zi = model.z_index(z)
    joint = model.joint()[:, xi]
    total = joint.sum()
    if total <= 0:
        raise ModelError(f"observation {model.x_symbols[xi]!r} has zero probability")
    law: dict[ExactValue, float] = {}
    for si, mass in enumerate(joint):
        if mass > 0:
            v = model.distortion.exact[si][zi]
            law[v] = law.get(v, 0.0) + mass / total
    return sorted(law.items(), key=lambda kv: kv[0])


def builtin_bes(delta: Union[Fraction, float, str] = Fraction(1, 10)) -> NoisySourceModel:
    """Fair coin flips observed through an erasure channel, bit-error distortion."""
    delta = as_fraction(delta)
    if not 0 <= delta <= 1:
        raise ModelValidationError([f"erasure rate {delta} outside [0, 1]"])
    keep = 1 - delta
    obs = [[float(keep), 0.0, float(delta)], [0.0, float(keep), float(delta)]]
    return NoisySourceModel(
        Distribution([0.5, 0.5]),
        Channel(obs),
        DistortionMatrix.hamming(2),
        ("0", "1"),
        ("0", "1", "?"),
        ("0", "1"),
        name=f"bes(delta={delta})",
    )


def noiseless_model(
    px: Sequence[float], distortion: DistortionMatrix, x_symbols=None, z_symbols=None
) -> NoisySourceModel:
    """Model whose observation channel is the identity."""
    n = len(px)
    return NoisySourceModel(
        Distribution(px), Channel(np.eye(n)), distortion, x_symbols, x_symbols, z_symbols
    )


def surrogate_as_noiseless(model: NoisySourceModel) -> NoisySourceModel:
    """Noiseless model on the observation alphabet with distortion dbar."""
    sur = surrogate_from_noisy(model)
    return noiseless_model(sur.px, sur.surrogate_distortion, sur.x_symbols, sur.z_symbols)


def random_model(
    rng: np.random.Generator, ns: int, nx: int, nz: int, denominator: int = 4
) -> NoisySourceModel:
    """Random full-support model with rational distortions in [0, 1]."""
    ps = rng.dirichlet(np.ones(ns))
    rows = rng.dirichlet(np.ones(nx), size=ns)
    px = ps @ rows
    while np.any(px < 1e-3) or np.any(ps < 1e-3):
        ps = rng.dirichlet(np.ones(ns))
        rows = rng.dirichlet(np.ones(nx), size=ns)
        px = ps @ rows
    dist = [[Fraction(int(rng.integers(0, denominator + 1)), denominator) for _ in range(nz)] for _ in range(ns)]
    return NoisySourceModel(
        Distribution(ps), Channel(rows), DistortionMatrix.from_exact(dist), name="random"
    )


# --- file format -------------------------------------------------------------

_REQUIRED = ("source", "observation", "distortion")


def _parse_number(value, field: str, allow_inf: bool = False) -> Fraction | float:
    if isinstance(value, bool) or value is None:
        raise ModelParseError(f"expected a number, got {value!r}", field=field)
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        if allow_inf:
            return math.inf
        raise ModelParseError("infinite value not allowed here", field=field)
    try:
        return as_fraction(value)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ModelParseError(f"cannot read {value!r} as a number ({exc})", field=field) from None


def _parse_vector(raw, field: str) -> list[Fraction]:
    if not isinstance(raw, list):
        raise ModelParseError("expected a list", field=field)
    return [_parse_number(v, f"{field}[{i}]") for i, v in enumerate(raw)]


def _parse_matrix(raw, field: str, allow_inf: bool = False) -> list[list]:
    if not isinstance(raw, list) or not all(isinstance(r, list) for r in raw):
        raise ModelParseError("expected a list of rows", field=field)
    return [
        [_parse_number(v, f"{field}[{i}][{j}]", allow_inf) for j, v in enumerate(row)]
        for i, row in enumerate(raw)
    ]


def model_from_dict(doc: dict) -> NoisySourceModel:
    """Build and validate a model from a parsed document."""
    if not isinstance(doc, dict):
        raise ModelParseError("top level must be an object")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ModelParseError(f"missing required fields {missing}")
    src = _parse_vector(doc["source"], "source")
    obs = _parse_matrix(doc["observation"], "observation")
    dist = _parse_matrix(doc["distortion"], "distortion", allow_inf=True)
    s_names = doc.get("source_alphabet") or _default_names(len(src))
    x_names = doc.get("observation_alphabet") or _default_names(len(obs[0]) if obs else 0)
    z_names = doc.get("reproduction_alphabet") or _default_names(len(dist[0]) if dist else 0)

    problems = []
    if abs(sum(src) - 1) > PROB_TOL or any(p < 0 for p in src):
        problems.append(f"source sums to {float(sum(src))!r}, not 1")
    for i, row in enumerate(obs):
        if len(row) != len(x_names):
            problems.append(f"observation row {s_names[i] if i < len(s_names) else i!r} has {len(row)} entries, expected {len(x_names)}")
        elif any(p < 0 for p in row) or abs(sum(row) - 1) > PROB_TOL:
            problems.append(f"observation row {s_names[i] if i < len(s_names) else i!r} sums to {float(sum(row))!r}, not 1")
    for i, row in enumerate(dist):
        if len(row) != len(z_names):
            problems.append(f"distortion row {i} has {len(row)} entries, expected {len(z_names)}")
        elif any(v < 0 for v in row):
            problems.append(f"distortion row {i} has negative entries")
    if len(obs) != len(src):
        problems.append(f"observation has {len(obs)} rows but source has {len(src)} entries")
    if len(dist) != len(src):
        problems.append(f"distortion has {len(dist)} rows but source has {len(src)} entries")
    if problems:
        raise ModelValidationError(problems)
    return NoisySourceModel(
        Distribution([float(p) for p in src]),
        Channel([[float(p) for p in row] for row in obs]),
        DistortionMatrix.from_exact(dist),
        tuple(map(str, s_names)),
        tuple(map(str, x_names)),
        tuple(map(str, z_names)),
        name=str(doc.get("name", "")),
    )


def load_model(path: Union[str, Path]) -> NoisySourceModel:
    """Read a model file; see the module docstring for the format."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text, parse_float=Fraction)
    except json.JSONDecodeError as exc:
        raise ModelParseError(exc.msg, line=exc.lineno) from None
    return model_from_dict(doc)


def _exact_to_json(v: ExactValue):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    f = as_fraction(v)
    return str(f.numerator) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def model_to_dict(model: NoisySourceModel) -> dict:
    return {
        "name": model.name,
        "source_alphabet": list(model.s_symbols),
        "observation_alphabet": list(model.x_symbols),
        "reproduction_alphabet": list(model.z_symbols),
        "source": [repr(float(p)) for p in model.source.probs],
        "observation": [[repr(float(p)) for p in row] for row in model.observation.rows],
        "distortion": [[_exact_to_json(v) for v in row] for row in model.distortion.exact],
    }


def save_model(model: NoisySourceModel, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")
