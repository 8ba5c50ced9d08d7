"""
Exhaustive reference functionals.

Every nonzero coefficient goes wholly to side 0 or side 1, and all 2^N
assignments are enumerated. The per-side costs are tabulated once per
(field, pair), after which any threshold and any functional form is a single
vectorized pass over the table.
"""

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from besov_interp.grid import CoeffField, VertexAssignment, restrict
from besov_interp.spaces import (
    CouplePair,
    InnerSpace,
    SpaceSide,
    inner_norm,
    inner_norm_rows,
    outer_norm,
    relative_weights,
    scale_pow2,
)

logger = logging.getLogger(__name__)

DEFAULT_CAP = 22
CAP_ENV = "KFUNC_CAP"
CHUNK_ROWS = 1 << 16
CUBOID_RATIO_LIMIT = 4.0
LOG2_CLIP = 1000.0

__all__ = [
    "DEFAULT_CAP",
    "EnumerationCapError",
    "FunctionalForm",
    "KResult",
    "VertexAssignment",
    "VertexTable",
    "default_cap",
    "k_cuboid_descent",
    "k_scalar_vertex",
    "k_vertex_exhaustive",
    "layer_subset_costs",
    "vertex_cuboid_ratio",
]


class EnumerationCapError(RuntimeError):
    """Raised when an instance has more nonzero coefficients than the cap allows."""

    def __init__(self, count, cap):
        super().__init__(
            f"{count} nonzero coefficients exceed the enumeration cap of {cap}; "
            f"use the fast method or raise the cap (--cap or {CAP_ENV})"
        )
        self.count = count
        self.cap = cap


def default_cap():
    """Enumeration cap, taken from the KFUNC_CAP environment variable when set."""
    raw = os.environ.get(CAP_ENV)
    if raw is None or not raw.strip():
        return DEFAULT_CAP
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"{CAP_ENV} must be an integer, got '{raw}'") from None
    if cap < 0:
        raise ValueError(f"{CAP_ENV} must be nonnegative, got {cap}")
    return cap


@dataclass(frozen=True)
class FunctionalForm:
    """How the two side costs a, b combine at threshold t."""

    kind: str = "sum"
    xi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sum", "max", "xi"):
            raise ValueError(f"unknown functional form '{self.kind}'")
        if self.kind == "xi" and not (0 < self.xi < math.inf):
            raise ValueError(f"xi must be in (0, inf), got {self.xi}")

    @classmethod
    def parse(cls, text):
        """Parse 'sum', 'max' or 'xi:V'."""
        text = text.strip().lower()
        if text in ("sum", "max"):
            return cls(text)
        kind, _, value = text.partition(":")
        if kind == "xi" and value:
            try:
                return cls("xi", float(value))
            except ValueError:
                pass
        raise ValueError(f"bad form '{text}', expected sum, max or xi:V")

    def combine(self, a, b, t):
        a = np.asarray(a, dtype=float)
        tb = t * np.asarray(b, dtype=float)
        if self.kind == "sum":
            return a + tb
        peak = np.maximum(a, tb)
        if self.kind == "max":
            return peak
        finite = np.isfinite(peak) & (peak > 0)
        safe = np.where(finite, peak, 1.0)
        with np.errstate(invalid="ignore"):
            combined = safe * ((a / safe) ** self.xi + (tb / safe) ** self.xi) ** (1.0 / self.xi)
        return np.where(finite, combined, peak)

    def __str__(self):
        if self.kind == "xi":
            return f"xi:{self.xi:g}"
        return self.kind


SUM = FunctionalForm("sum")
MAX = FunctionalForm("max")


@dataclass(frozen=True)
class KResult:
    """A K-type value with the assignment realizing it."""

    value: float
    assignment: VertexAssignment
    form: FunctionalForm
    t: float


def _mask_bits(masks, width):
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((masks[:, None] >> shifts) & 1).astype(bool)


def layer_subset_costs(values, inner0, inner1):
    """
    Side costs of every subset of one layer.

    Row m of the result describes the assignment whose bits are the binary
    digits of m, first value as the most significant bit; a set bit sends the
    value to side 1.

    Returns:
        tuple: (a, b) arrays of length 2^n with the inner norms of the side 0
            and side 1 parts
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    width = values.size
    total = 1 << width
    a = np.empty(total)
    b = np.empty(total)
    for start in range(0, total, CHUNK_ROWS):
        masks = np.arange(start, min(start + CHUNK_ROWS, total), dtype=np.int64)
        side1 = _mask_bits(masks, width)
        a[start:start + masks.size] = inner_norm_rows(np.where(side1, 0.0, values), inner0)
        b[start:start + masks.size] = inner_norm_rows(np.where(side1, values, 0.0), inner1)
    return a, b


def _aggregate(terms, outer):
    """Outer aggregation of per-level weighted costs, rows = levels."""
    if not terms:
        return None
    if math.isinf(outer.q):
        result = terms[0]
        for term in terms[1:]:
            result = np.maximum(result, term)
        return result
    scale = max(float(np.max(term)) for term in terms)
    if scale <= 0:
        return np.zeros_like(terms[0])
    total = np.zeros_like(terms[0])
    for term in terms:
        total += (term / scale) ** outer.q
    return scale * total ** (1.0 / outer.q)


class VertexTable:
    """
    Side costs of every vertex assignment of a field.

    Assignments are numbered by the bit sequence of the nonzero coefficients
    in (j, gamma) order, first coefficient as the most significant bit, so the
    first minimizer found by argmin is the lexicographically smallest one.
    """

    def __init__(self, field, pair, cap=None):
        """
        Args:
            field (CoeffField): Field to enumerate
            pair (CouplePair): The couple
            cap (int): Enumeration cap, default_cap() when None
        """
        if cap is None:
            cap = default_cap()
        self.field = field
        self.pair = pair
        self.support = [
            (j, gamma)
            for j, layer in zip(field.levels, field.layers)
            for gamma in np.flatnonzero(layer)
        ]
        count = len(self.support)
        if count > cap:
            raise EnumerationCapError(count, cap)
        self.count = count
        logger.debug("enumerating %d assignments for %d coefficients", 1 << count, count)

        nonzero = [(j, layer[layer > 0]) for j, layer in zip(field.levels, field.layers) if np.any(layer > 0)]
        levels = [j for j, _ in nonzero]
        w0, ref0 = relative_weights(levels, pair.side0.outer.s)
        w1, ref1 = relative_weights(levels, pair.side1.outer.s)

        idx = np.arange(1 << count, dtype=np.int64)
        remaining = count
        terms0, terms1 = [], []
        for (j, values), u0, u1 in zip(nonzero, w0, w1):
            remaining -= values.size
            a_j, b_j = layer_subset_costs(values, pair.side0.inner, pair.side1.inner)
            local = (idx >> remaining) & ((1 << values.size) - 1)
            terms0.append(u0 * a_j[local])
            terms1.append(u1 * b_j[local])

        # level weights are relative to the largest one on each side
        if terms0:
            self.a = scale_pow2(_aggregate(terms0, pair.side0.outer), ref0)
            self.b = scale_pow2(_aggregate(terms1, pair.side1.outer), ref1)
        else:
            self.a = np.zeros(1)
            self.b = np.zeros(1)

    @property
    def side_costs(self):
        """(a, b): side 0 and side 1 norms of every assignment."""
        return self.a, self.b

    def assignment(self, number):
        """VertexAssignment for an enumeration number; zero coefficients get bit 0."""
        layers = [np.zeros(n, dtype=np.uint8) for n in self.field.shape]
        for position, (j, gamma) in enumerate(self.support):
            bit = (number >> (self.count - 1 - position)) & 1
            layers[j - self.field.jmin][gamma] = bit
        return VertexAssignment(self.field.jmin, layers)

    def objective(self, t, form=SUM):
        return form.combine(self.a, self.b, t)

    def evaluate(self, t, form=SUM):
        if not t > 0:
            raise ValueError(f"t must be positive, got {t}")
        objective = self.objective(t, form)
        best = int(np.argmin(objective))
        return KResult(float(objective[best]), self.assignment(best), form, float(t))

    def curve(self, ts, form=SUM):
        """Minimum of the objective at every threshold in `ts`."""
        return np.array([float(np.min(self.objective(t, form))) for t in ts])


def k_vertex_exhaustive(t, field, pair, form=SUM, cap=None):
    """Exact vertex functional by enumeration of all 2^N assignments."""
    return VertexTable(field, pair, cap).evaluate(t, form)


def k_scalar_vertex(t, values, outer0, outer1, form=SUM, jmin=0, cap=None):
    """
    Vertex functional of a scalar sequence, one value per level.

    Args:
        t (float): Threshold
        values (sequence): F_j for j = jmin, jmin+1, ...
        outer0 (OuterSpec): Outer spec of side 0
        outer1 (OuterSpec): Outer spec of side 1
        form (FunctionalForm): Objective form
        jmin (int): Level of the first value
        cap (int): Enumeration cap

    Returns:
        KResult: Value and per-level assignment (one bit per level)
    """
    values = np.abs(np.asarray(values, dtype=float).reshape(-1))
    if values.size == 0:
        field = CoeffField(jmin, jmin, [[]])
    else:
        field = CoeffField(jmin, jmin + values.size - 1, [[v] for v in values])
    scalar = InnerSpace.lp(1)
    pair = CouplePair(SpaceSide(outer0, scalar), SpaceSide(outer1, scalar))
    return k_vertex_exhaustive(t, field, pair, form, cap)


def _replaced_outer(weights, norms, index, candidates, outer):
    """Outer norm with level `index` replaced by each candidate layer norm."""
    terms = weights * norms
    others = np.delete(terms, index)
    candidate_terms = weights[index] * candidates
    if math.isinf(outer.q):
        rest = float(np.max(others)) if others.size else 0.0
        return np.maximum(rest, candidate_terms)
    scale = max(float(np.max(candidate_terms)), float(np.max(others)) if others.size else 0.0)
    if scale <= 0:
        return np.zeros_like(candidates)
    rest = float(np.sum((others / scale) ** outer.q))
    return scale * (rest + (candidate_terms / scale) ** outer.q) ** (1.0 / outer.q)


def _descend(start, field, pair, t, coords, weights, grid_res, max_sweeps):
    side0, side1 = pair.side0, pair.side1
    g = [np.array(layer) for layer in start]
    norms0 = np.array([inner_norm(layer, side0.inner) for layer in g])
    norms1 = np.array([inner_norm(f - layer, side1.inner) for f, layer in zip(field.layers, g)])
    value = float(_aggregate(list(weights[0] * norms0), side0.outer) + t * _aggregate(list(weights[1] * norms1), side1.outer))

    for _ in range(max_sweeps):
        improved = False
        for li, gamma in coords:
            f_layer = field.layers[li]
            candidates = np.unique(np.append(np.linspace(0.0, f_layer[gamma], grid_res), g[li][gamma]))
            rows0 = np.repeat(g[li][None, :], candidates.size, axis=0)
            rows0[:, gamma] = candidates
            rows1 = np.maximum(f_layer[None, :] - rows0, 0.0)
            c0 = inner_norm_rows(rows0, side0.inner)
            c1 = inner_norm_rows(rows1, side1.inner)
            totals = (_replaced_outer(weights[0], norms0, li, c0, side0.outer)
                      + t * _replaced_outer(weights[1], norms1, li, c1, side1.outer))
            best = int(np.argmin(totals))
            if totals[best] < value - 1e-15 * max(value, 1.0):
                value = float(totals[best])
                g[li][gamma] = candidates[best]
                norms0[li] = c0[best]
                norms1[li] = c1[best]
                improved = True
        if not improved:
            break
    return float(value)


def k_cuboid_descent(t, field, pair, restarts=4, grid_res=17, seed=0, warm_start=None, max_sweeps=100):
    """
    Upper bound on the cuboid functional by cyclic coordinate descent.

    Minimizes ||g||_0 + t ||f - g||_1 over 0 <= g <= f, one coordinate at a
    time on a grid_res-point grid. Starts from the warm-start assignment when
    given, then from both all-to-one-side vertices, then from `restarts`
    random points drawn from one generator, and returns the best value seen.

    Returns:
        float: Smallest objective value reached
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if grid_res < 2:
        raise ValueError(f"grid_res must be at least 2, got {grid_res}")
    if field.is_zero():
        return 0.0

    levels = list(field.levels)
    w0, ref0 = relative_weights(levels, pair.side0.outer.s)
    w1, ref1 = relative_weights(levels, pair.side1.outer.s)
    weights = (w0, w1)
    # descend in units of 2^ref0, with t carrying the side 1 offset
    t_rel = float(np.exp2(np.clip(math.log2(t) + ref1 - ref0, -LOG2_CLIP, LOG2_CLIP)))
    coords = [(li, int(gamma)) for li, layer in enumerate(field.layers) for gamma in np.flatnonzero(layer)]

    starts = []
    if warm_start is not None:
        if not warm_start.matches(field):
            raise ValueError("warm start does not match the field shape")
        starts.append([np.where(bits == 0, layer, 0.0) for layer, bits in zip(field.layers, warm_start.bits)])
    starts.append([np.array(layer) for layer in field.layers])
    starts.append([np.zeros_like(layer) for layer in field.layers])
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        starts.append([rng.random(layer.size) * layer for layer in field.layers])

    best = math.inf
    for start in starts:
        best = min(best, _descend(start, field, pair, t_rel, coords, weights, grid_res, max_sweeps))
    best = scale_pow2(best, ref0)
    logger.debug("cuboid descent at t=%g: %.12g over %d starts", t, best, len(starts))
    return best


def _exponents_at_least_one(pair):
    return all(side.outer.q >= 1 and side.inner.exponents_at_least_one for side in pair.sides)


def vertex_cuboid_ratio(t, field, pair, restarts=4, grid_res=17, seed=0, cap=None):
    """
    Ratio of the vertex functional to the descended cuboid value.

    The descent is warm-started at the vertex minimizer, so the ratio is at
    least 1. Ratios above 4 for exponents >= 1 are logged as warnings.
    """
    vertex = k_vertex_exhaustive(t, field, pair, SUM, cap)
    descent = k_cuboid_descent(t, field, pair, restarts, grid_res, seed, warm_start=vertex.assignment)
    if descent <= 0:
        return 1.0
    ratio = vertex.value / descent
    if ratio > CUBOID_RATIO_LIMIT and _exponents_at_least_one(pair):
        logger.warning(
            "vertex/cuboid ratio %.6g exceeds %g at t=%g for %s on %r",
            ratio, CUBOID_RATIO_LIMIT, t, pair, field,
        )
    return ratio


def objective_at(assignment, t, field, pair, form=SUM):
    """Objective of `form` at a given assignment, computed from outer norms."""
    a = outer_norm(restrict(field, assignment, 0), pair.side0)
    b = outer_norm(restrict(field, assignment, 1), pair.side1)
    return float(form.combine(a, b, t))
