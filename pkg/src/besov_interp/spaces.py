"""
Inner and outer quasi-norms of Besov sequence spaces.

An inner space measures one layer (lp, discrete Lorentz or sup), an outer
spec (s, q) aggregates the layer norms over the main grid with weights 2^(js).
All norms are permutation-invariant and monotone in each coefficient.
"""

import enum
import logging
import math
import re
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from besov_interp.grid import CoeffField

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


class SpaceSpecError(ValueError):
    """Raised when a space descriptor cannot be parsed."""

    def __init__(self, token, message=None):
        super().__init__(message or f"bad space token '{token}'")
        self.token = token


class PowerSpaceError(ValueError):
    """Raised when a power-space norm is requested for q = inf."""


class InnerKind(enum.Enum):
    LP = "lp"
    LORENTZ = "lorentz"
    SUP = "sup"


def _format_exponent(value):
    return "inf" if math.isinf(value) else f"{value:g}"


@dataclass(frozen=True)
class InnerSpace:
    """Quasi-norm on a single layer."""

    kind: InnerKind
    p: float = math.inf
    tau: float = math.inf

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"p must be in (0, inf], got {self.p}")
        if self.kind is InnerKind.LORENTZ and not self.tau > 0:
            raise ValueError(f"tau must be in (0, inf], got {self.tau}")

    @classmethod
    def lp(cls, p):
        p = float(p)
        if math.isinf(p):
            return cls.sup()
        return cls(InnerKind.LP, p)

    @classmethod
    def lorentz(cls, p, tau):
        return cls(InnerKind.LORENTZ, float(p), float(tau))

    @classmethod
    def sup(cls):
        return cls(InnerKind.SUP)

    @property
    def exponents_at_least_one(self):
        if self.kind is InnerKind.LORENTZ:
            return self.p >= 1 and self.tau >= 1
        return self.p >= 1

    def __str__(self):
        if self.kind is InnerKind.SUP:
            return "sup"
        if self.kind is InnerKind.LP:
            return f"lp({_format_exponent(self.p)})"
        return f"lorentz({_format_exponent(self.p)},{_format_exponent(self.tau)})"


@dataclass(frozen=True)
class OuterSpec:
    """Weight exponent s and summability q over the main grid."""

    s: float
    q: float

    def __post_init__(self):
        if not math.isfinite(self.s):
            raise ValueError(f"s must be finite, got {self.s}")
        if not self.q > 0:
            raise ValueError(f"q must be in (0, inf], got {self.q}")


@dataclass(frozen=True)
class SpaceSide:
    """One side of a couple: the space l^{s,q}(A)."""

    outer: OuterSpec
    inner: InnerSpace

    @classmethod
    def of(cls, s, q, inner):
        return cls(OuterSpec(float(s), float(q)), inner)

    def __str__(self):
        return f"s={self.outer.s:g},q={_format_exponent(self.outer.q)},A={self.inner}"


@dataclass(frozen=True)
class CouplePair:
    """The couple (side0, side1)."""

    side0: SpaceSide
    side1: SpaceSide

    def swapped(self):
        return CouplePair(self.side1, self.side0)

    @property
    def sides(self):
        return (self.side0, self.side1)

    def __str__(self):
        return f"{self.side0};{self.side1}"


def _parse_extended(token):
    text = token.strip().lower()
    if text in ("inf", "infinity", "∞"):
        return math.inf
    try:
        value = float(text)
    except ValueError:
        raise SpaceSpecError(token) from None
    if math.isnan(value):
        raise SpaceSpecError(token)
    return value


_INNER_RE = re.compile(r"^\s*(lp|lorentz|sup)\s*(?:\(([^()]*)\))?\s*$", re.IGNORECASE)


def parse_inner(text):
    """Parse 'lp(P)', 'lorentz(P,TAU)' or 'sup'."""
    match = _INNER_RE.match(text)
    if not match:
        raise SpaceSpecError(text, f"bad inner space '{text}', expected lp(P), lorentz(P,TAU) or sup")
    name = match.group(1).lower()
    args = [] if match.group(2) is None else [a for a in match.group(2).split(",")]

    if name == "sup":
        if args:
            raise SpaceSpecError(text, f"sup takes no arguments: '{text}'")
        return InnerSpace.sup()
    expected = 1 if name == "lp" else 2
    if len(args) != expected:
        raise SpaceSpecError(text, f"{name} takes {expected} argument(s): '{text}'")
    values = [_parse_extended(a) for a in args]
    for arg, value in zip(args, values):
        if not value > 0:
            raise SpaceSpecError(arg.strip(), f"exponent must be positive: '{arg.strip()}'")
    if name == "lp":
        return InnerSpace.lp(values[0])
    return InnerSpace.lorentz(*values)


def _split_top_level(text):
    # commas inside parentheses belong to the inner space
    return re.split(r",(?![^()]*\))", text)


def parse_side(text):
    """
    Parse a side descriptor.

    Accepts the keyed form 's=0.5,q=2,A=lp(1.5)' (any order) or the
    positional form '0.5,2,lp(1.5)'.
    """
    parts = [part.strip() for part in _split_top_level(text.strip())]
    if len(parts) != 3:
        raise SpaceSpecError(text, f"bad side '{text}', expected s=...,q=...,A=...")

    if all("=" in part for part in parts):
        keyed = {}
        for part in parts:
            key, _, value = part.partition("=")
            key = key.strip()
            if key not in ("s", "q", "A") or key in keyed:
                raise SpaceSpecError(key, f"bad key '{key}' in '{text}'")
            keyed[key] = value.strip()
        s_text, q_text, a_text = keyed["s"], keyed["q"], keyed["A"]
    elif not any("=" in part for part in parts):
        s_text, q_text, a_text = parts
    else:
        raise SpaceSpecError(text, f"cannot mix keyed and positional fields in '{text}'")

    s = _parse_extended(s_text)
    if not math.isfinite(s):
        raise SpaceSpecError(s_text, f"s must be finite: '{s_text}'")
    q = _parse_extended(q_text)
    if not q > 0:
        raise SpaceSpecError(q_text, f"q must be positive: '{q_text}'")
    return SpaceSide(OuterSpec(s, q), parse_inner(a_text))


def parse_pair(text):
    """Parse 'SIDE0;SIDE1'."""
    parts = text.split(";")
    if len(parts) != 2:
        raise SpaceSpecError(text, f"bad pair '{text}', expected SIDE0;SIDE1")
    return CouplePair(parse_side(parts[0]), parse_side(parts[1]))


def rearrange(values):
    """Nonincreasing rearrangement f* of a nonnegative sequence."""
    array = np.asarray(values, dtype=float).reshape(-1)
    return -np.sort(-array)


def _lorentz_weights(count, space):
    k1 = np.arange(1, count + 1, dtype=float)
    if math.isinf(space.tau):
        return k1 ** (0.0 if math.isinf(space.p) else 1.0 / space.p)
    exponent = space.tau * (0.0 if math.isinf(space.p) else 1.0 / space.p) - 1.0
    return k1 ** exponent


def inner_norm_rows(rows, space):
    """
    Inner norm of every row of a 2-D array of nonnegative values.

    Rows are scaled by their maximum before powering, so very large or very
    small magnitudes do not overflow.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    count, width = rows.shape
    if width == 0:
        return np.zeros(count)
    peak = rows.max(axis=1)
    if space.kind is InnerKind.SUP:
        return peak

    safe = np.where(peak > 0, peak, 1.0)
    scaled = rows / safe[:, None]

    if space.kind is InnerKind.LP:
        norms = np.sum(scaled ** space.p, axis=1) ** (1.0 / space.p)
    else:
        ordered = -np.sort(-scaled, axis=1)
        weights = _lorentz_weights(width, space)
        if math.isinf(space.tau):
            norms = np.max(weights * ordered, axis=1)
        else:
            norms = np.sum(weights * ordered ** space.tau, axis=1) ** (1.0 / space.tau)
    return np.where(peak > 0, norms * safe, 0.0)


def inner_norm(values, space):
    """Inner quasi-norm of one layer."""
    array = np.asarray(values, dtype=float).reshape(-1)
    if array.size == 0:
        return 0.0
    return float(inner_norm_rows(array[None, :], space)[0])


def weighted_outer(levels, norms, outer):
    """
    (sum_j 2^(jsq) N_j^q)^(1/q), or sup_j 2^(js) N_j for q = inf.

    Computed in log space; zero layers drop out.
    """
    levels = np.asarray(levels, dtype=float)
    norms = np.asarray(norms, dtype=float)
    mask = norms > 0
    if not np.any(mask):
        return 0.0
    logs = levels[mask] * outer.s * LN2 + np.log(norms[mask])
    if math.isinf(outer.q):
        return float(np.exp(np.max(logs)))
    return float(np.exp(logsumexp(outer.q * logs) / outer.q))


def relative_weights(levels, s):
    """
    Level weights 2^(js) divided by the largest of them.

    Returns:
        tuple: (weights in (0, 1], log2 of the largest weight)
    """
    exponents = np.asarray(levels, dtype=float) * s
    if exponents.size == 0:
        return np.ones(0), 0.0
    reference = float(np.max(exponents))
    return np.exp2(exponents - reference), reference


def scale_pow2(values, log2_factor):
    """values * 2^log2_factor; zeros stay zero and overflow gives inf."""
    values = np.asarray(values, dtype=float)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        scaled = values * np.exp2(log2_factor)
    result = np.where(values > 0, scaled, 0.0)
    return float(result) if result.ndim == 0 else result


def lq_aggregate(terms, q, axis=0):
    """
    (sum terms^q)^(1/q) along `axis`, the maximum for q = inf.

    Terms are divided by their peak before powering; an infinite term gives inf.
    """
    terms = np.asarray(terms, dtype=float)
    peak = np.max(terms, axis=axis, initial=0.0)
    if math.isinf(q):
        return peak
    finite = np.isfinite(peak) & (peak > 0)
    safe = np.where(finite, peak, 1.0)
    with np.errstate(invalid="ignore", over="ignore"):
        total = np.sum((terms / np.expand_dims(safe, axis)) ** q, axis=axis) ** (1.0 / q)
    return np.where(finite, safe * total, peak)


def layer_norms(field, inner):
    return np.array([inner_norm(layer, inner) for layer in field.layers])


def outer_norm(field, side):
    """Norm of `field` in l^{s,q}(A)."""
    return weighted_outer(list(field.levels), layer_norms(field, side.inner), side.outer)


def x_norm(field, side):
    """Power-space norm: outer_norm raised to q."""
    if math.isinf(side.outer.q):
        raise PowerSpaceError("power space is undefined for q = inf")
    return outer_norm(field, side) ** side.outer.q


def measure_triangle_constant(space, trials=200, size=8, seed=0):
    """
    Largest observed ratio ||f+g|| / (||f|| + ||g||) over random pairs.

    Args:
        space (InnerSpace or SpaceSide): Space to measure. A SpaceSide is
            sampled on three-layer fields of window [-1, 1]
        trials (int): Number of random pairs
        size (int): Sequence length (layer size for a SpaceSide)
        seed (int): Seed for numpy's default generator

    Returns:
        float: The measured constant C, at least 1 when any pair is nonzero
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        if isinstance(space, SpaceSide):
            f = rng.random((3, size)) * (rng.random((3, size)) < 0.7)
            g = rng.random((3, size)) * (rng.random((3, size)) < 0.7)

            def norm(values):
                return outer_norm(CoeffField(-1, 1, list(values)), space)
        else:
            f = rng.random(size) * (rng.random(size) < 0.7)
            g = rng.random(size) * (rng.random(size) < 0.7)

            def norm(values):
                return inner_norm(values, space)

        denominator = norm(f) + norm(g)
        if denominator > 0:
            worst = max(worst, norm(f + g) / denominator)
    logger.debug("measured triangle constant %.6g for %s", worst, space)
    return worst
