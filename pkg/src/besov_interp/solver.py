"""
Fast K-functional evaluation for Besov couples.

Four cases, chosen by k_dispatch:

    i    equal inner spaces: scalar problem on the layer norms
    ii   equal outer exponents q: per-layer rearrangement splits
    iii  distinct finite q: power frontier, layer-separable root find past its cap
    iv   one q infinite: conditional functional G and its inverse H

Cases i and ii return Sum-form values; cases iii and iv return Max-form
values. Each is checked against the matching exhaustive oracle in tests.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from besov_interp.grid import VertexAssignment
from besov_interp.oracle import (
    DEFAULT_CAP,
    MAX,
    SUM,
    EnumerationCapError,
    KResult,
    default_cap,
    k_scalar_vertex,
    layer_subset_costs,
)
from besov_interp.spaces import (
    inner_norm,
    inner_norm_rows,
    lq_aggregate,
    outer_norm,
    rearrange,
    relative_weights,
    scale_pow2,
    weighted_outer,
)

logger = logging.getLogger(__name__)

LAYER_CAP = 16
ROOT_TOL = 1e-9
INNER_ROOT_TOL = 1e-12
ROOT_MAX_STEPS = 200
BRACKET_MAX_STEPS = 1100
MERGE_CAP = 1 << DEFAULT_CAP
LOG2_CLIP = 1000.0
GAP_TOL = 1e-12


class RootFindError(RuntimeError):
    """Raised when a monotone root cannot be bracketed."""


class DegenerateInputError(RuntimeError):
    """Raised when the input makes a threshold undefined (zero field or curve)."""


class FrontierCapError(RuntimeError):
    """Raised when combining level frontiers would exceed the candidate cap."""

    def __init__(self, count, cap):
        super().__init__(f"{count} frontier candidates exceed the cap of {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class LayerContribution:
    """Side norms of one layer at its chosen split."""

    j: int
    X: float
    Y: float
    assignment: np.ndarray


@dataclass(frozen=True)
class PowerRelation:
    """
    Exponents linking a power couple to its base couple.

    direct:   s = u^rho1 * g(u)^(rho0 - rho1), g the base K_inf curve
    commuted: s = u^rho0 * g(u)^(rho1 - rho0), g the swapped base curve
    """

    rho0: float
    rho1: float
    orientation: str = "direct"

    def __post_init__(self):
        for name in ("rho0", "rho1"):
            value = getattr(self, name)
            if not (0 < value < math.inf):
                raise ValueError(f"{name} must be finite and positive, got {value}")
        if self.orientation not in ("direct", "commuted"):
            raise ValueError(f"unknown orientation '{self.orientation}'")

    @property
    def exponents(self):
        """(exponent of u, exponent of g) in the map."""
        if self.orientation == "direct":
            return self.rho1, self.rho0 - self.rho1
        return self.rho0, self.rho1 - self.rho0

    def log_map(self, u, g):
        u_exp, g_exp = self.exponents
        if g_exp == 0:
            return u_exp * math.log(u)
        return u_exp * math.log(u) + g_exp * math.log(g)


@dataclass(frozen=True)
class DispatchResult:
    case: str
    value: float
    form: object


def _nonzero(values):
    values = np.asarray(values, dtype=float).reshape(-1)
    return values[values > 0]


def _nonzero_levels(field):
    return [(j, layer) for j, layer in zip(field.levels, field.layers) if np.any(layer > 0)]


def _scaled_threshold(t, log2_offset):
    """t * 2^log2_offset, clipped to a finite positive range."""
    with np.errstate(over="ignore", under="ignore"):
        scaled = t * np.exp2(np.clip(log2_offset, -LOG2_CLIP, LOG2_CLIP))
    return float(np.clip(scaled, 2.0 ** -LOG2_CLIP, 2.0 ** LOG2_CLIP))


def pareto_front(a, b):
    """
    Undominated (a, b) pairs, with b strictly increasing and a strictly decreasing.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    order = np.lexsort((a, b))
    a, b = a[order], b[order]
    keep = np.ones(a.size, dtype=bool)
    keep[1:] = a[1:] < np.minimum.accumulate(a)[:-1]
    return a[keep], b[keep]


def sorted_split_costs(values, inner0, inner1):
    """
    Side costs of the 2(N+1) prefix/suffix splits of a sorted layer.

    Row k (k = 0..N) sends the k largest values to side 0, row N+1+k sends
    the k largest to side 1.

    Returns:
        tuple: (a, b, order, top_to_zero) with order the descending sort
            permutation and top_to_zero the orientation flag of each row
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    order = np.argsort(-values, kind="stable")
    ordered = values[order]
    n = ordered.size
    prefix = np.arange(n)[None, :] < np.arange(n + 1)[:, None]
    top = np.where(prefix, ordered, 0.0)
    rest = np.where(prefix, 0.0, ordered)
    a = np.concatenate([inner_norm_rows(top, inner0), inner_norm_rows(rest, inner0)])
    b = np.concatenate([inner_norm_rows(rest, inner1), inner_norm_rows(top, inner1)])
    top_to_zero = np.concatenate([np.ones(n + 1, dtype=bool), np.zeros(n + 1, dtype=bool)])
    return a, b, order, top_to_zero


def _split_bits(row, size, order, top_to_zero):
    n = len(order)
    k = row % (n + 1)
    bits = np.zeros(size, dtype=np.uint8)
    in_top = np.zeros(n, dtype=bool)
    in_top[order[:k]] = True
    if top_to_zero[row]:
        bits[:n] = ~in_top
    else:
        bits[:n] = in_top
    return bits


def _layer_split(t, layer, inner0, inner1, form):
    layer = np.asarray(layer, dtype=float).reshape(-1)
    support = np.flatnonzero(layer > 0)
    a, b, order, top_to_zero = sorted_split_costs(layer[support], inner0, inner1)
    objective = form.combine(a, b, t)
    row = int(np.argmin(objective))
    bits = np.zeros(layer.size, dtype=np.uint8)
    bits[support] = _split_bits(row, support.size, order, top_to_zero)
    return float(objective[row]), float(a[row]), float(b[row]), bits


def k_layer_fast(t, layer, inner0, inner1, form=SUM, j=0):
    """
    K-type functional of one layer by rearrangement splits.

    The layer is sorted nonincreasingly and the objective is evaluated on
    every split that sends a top block to one side and the rest to the other,
    in both orientations. Exact whenever an optimal vertex is such a split.

    Args:
        t (float): Threshold
        layer (sequence): Nonnegative layer values
        inner0 (InnerSpace): Side 0 inner space
        inner1 (InnerSpace): Side 1 inner space
        form (FunctionalForm): Objective form
        j (int): Level recorded in the returned assignment

    Returns:
        KResult: Best split value and its assignment
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    value, _, _, bits = _layer_split(t, layer, inner0, inner1, form)
    return KResult(value, VertexAssignment(j, [bits]), form, float(t))


def prefix_split_gap(t, layer, inner0, inner1, form=SUM):
    """
    Ratio of the rearrangement split value to the exhaustive layer minimum.

    1.0 means a top-block split is optimal. Larger ratios happen for some
    quasi-norm pairs (lp with p < 1 on both sides) and are logged as warnings.

    Raises:
        EnumerationCapError: The layer has more than LAYER_CAP nonzero values
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    layer = np.asarray(layer, dtype=float).reshape(-1)
    values = layer[layer > 0]
    if values.size > LAYER_CAP:
        raise EnumerationCapError(values.size, LAYER_CAP)
    if values.size == 0:
        return 1.0
    fast = _layer_split(t, values, inner0, inner1, form)[0]
    a, b = layer_subset_costs(values, inner0, inner1)
    exact = float(np.min(form.combine(a, b, t)))
    ratio = fast / exact
    if ratio > 1.0 + GAP_TOL:
        logger.warning(
            "top-block split is %.6g times the layer minimum for %s/%s at t=%g on %s",
            ratio, inner0, inner1, t, values.tolist(),
        )
    return ratio


class LayerSplits:
    """
    Pareto frontier of the (side 0, side 1) costs of one layer.

    Uses every subset when the layer has at most `exhaustive_cap` nonzero
    values, the prefix/suffix splits otherwise. The frontier is stored with b
    strictly increasing and a strictly decreasing; it always starts at b = 0
    and ends at a = 0.
    """

    def __init__(self, values, inner0, inner1, exhaustive_cap=LAYER_CAP):
        values = _nonzero(values)
        self.exhaustive = values.size <= exhaustive_cap
        if self.exhaustive:
            a, b = layer_subset_costs(values, inner0, inner1)
        else:
            a, b, _, _ = sorted_split_costs(values, inner0, inner1)
            logger.debug("layer of %d values uses sorted splits", values.size)

        self.a, self.b = pareto_front(a, b)

    def __len__(self):
        return self.a.size

    def k_inf(self, u, w0=1.0, w1=1.0):
        """min over splits of max(w0 a, u w1 b)."""
        return float(np.min(np.maximum(w0 * self.a, u * w1 * self.b)))

    def k_inf_swapped(self, u, w0=1.0, w1=1.0):
        """min over splits of max(w1 b, u w0 a)."""
        return float(np.min(np.maximum(w1 * self.b, u * w0 * self.a)))


def _expand_levels(field, level_bits):
    layers = [
        np.full(n, bit, dtype=np.uint8) * (layer > 0)
        for n, bit, layer in zip(field.shape, level_bits, field.layers)
    ]
    return VertexAssignment(field.jmin, [layer.astype(np.uint8) for layer in layers])


def k_same_A(t, field, pair, cap=None):
    """
    Case i: both sides share the inner space A.

    The field reduces to the scalar sequence F_j = ||layer_j||_A; the scalar
    vertex oracle is exact when the window fits the cap, otherwise levels
    are split in order (low levels to one side, high levels to the other).

    Returns:
        KResult: Sum-form value with the assignment expanded to the field
    """
    inner = pair.side0.inner
    if pair.side1.inner != inner:
        raise ValueError(f"inner spaces differ: {pair.side0.inner} vs {pair.side1.inner}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if cap is None:
        cap = default_cap()

    levels = list(field.levels)
    F = np.array([inner_norm(layer, inner) for layer in field.layers])
    if len(levels) <= cap:
        scalar = k_scalar_vertex(t, F, pair.side0.outer, pair.side1.outer, SUM, jmin=field.jmin, cap=cap)
        level_bits = [int(bits[0]) if bits.size else 0 for bits in scalar.assignment.bits]
        return KResult(scalar.value, _expand_levels(field, level_bits), SUM, float(t))

    logger.debug("%d levels exceed cap %d, splitting levels in order", len(levels), cap)
    count = len(levels)
    best_value, best_bits = math.inf, None
    for low_side in (0, 1):
        for k in range(count + 1):
            level_bits = [low_side if i < k else 1 - low_side for i in range(count)]
            side0 = [F[i] if level_bits[i] == 0 else 0.0 for i in range(count)]
            side1 = [F[i] if level_bits[i] == 1 else 0.0 for i in range(count)]
            value = (weighted_outer(levels, side0, pair.side0.outer)
                     + t * weighted_outer(levels, side1, pair.side1.outer))
            if value < best_value:
                best_value, best_bits = value, level_bits
    return KResult(float(best_value), _expand_levels(field, best_bits), SUM, float(t))


def same_q_contributions(t, field, pair):
    """Per-layer splits at the adjusted thresholds t * 2^(j (s1 - s0))."""
    s0, s1 = pair.side0.outer.s, pair.side1.outer.s
    contributions = []
    for j, layer in zip(field.levels, field.layers):
        t_j = _scaled_threshold(t, j * (s1 - s0))
        _, X, Y, bits = _layer_split(t_j, layer, pair.side0.inner, pair.side1.inner, SUM)
        contributions.append(LayerContribution(j, X, Y, bits))
    return contributions


def _check_same_q(pair):
    if pair.side0.outer.q != pair.side1.outer.q:
        raise ValueError(f"outer exponents differ: q0={pair.side0.outer.q}, q1={pair.side1.outer.q}")


def same_q_expressions(t, field, pair):
    """
    The three equivalent compositions of the layer splits.

    Returns:
        tuple: (joint, power_sum, split) where joint aggregates
            2^(js0) X_j + t 2^(js1) Y_j, power_sum aggregates the q-th powers
            of both terms together and split aggregates each side separately
            and adds them
    """
    _check_same_q(pair)
    q = pair.side0.outer.q
    contributions = same_q_contributions(t, field, pair)
    levels = [c.j for c in contributions]
    X = np.array([c.X for c in contributions])
    Y = np.array([c.Y for c in contributions])
    w0, ref0 = relative_weights(levels, pair.side0.outer.s)
    w1, ref1 = relative_weights(levels, pair.side1.outer.s)

    def lq(terms):
        return float(lq_aggregate(terms, q))

    split = scale_pow2(lq(w0 * X), ref0) + scale_pow2(t * lq(w1 * Y), ref1)

    # both sides on the larger of the two scales
    log2_t = math.log2(t)
    common = max(ref0, ref1 + log2_t)
    left = scale_pow2(w0 * X, ref0 - common)
    right = scale_pow2(w1 * Y, ref1 + log2_t - common)
    joint = scale_pow2(lq(left + right), common)
    power_sum = scale_pow2(lq(np.concatenate([left, right])), common)
    return joint, power_sum, split


def k_same_q(t, field, pair):
    """
    Case ii: q0 = q1 = q.

    Each layer is split by k_layer_fast at the threshold t * 2^(j(s1-s0));
    the result is (sum_j (2^(js0) X_j)^q)^(1/q) + t (sum_j (2^(js1) Y_j)^q)^(1/q),
    with sup over j for q = inf.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    return same_q_expressions(t, field, pair)[2]


def power_root_find(curve, relation, s_target, tol=ROOT_TOL, max_steps=ROOT_MAX_STEPS):
    """
    Solve u^a * g(u)^b = s_target for u, with (a, b) = relation.exponents.

    Works on log u: the bracket is grown from u = 1 by doubling or halving,
    then bisected until the relative residual is within `tol`.

    Args:
        curve (callable): Nondecreasing u -> g(u), positive on (0, inf)
        relation (PowerRelation): Exponents and orientation
        s_target (float): Positive target value
        tol (float): Relative tolerance on the target
        max_steps (int): Bisection step limit

    Returns:
        float: The root u
    """
    if not s_target > 0 or not math.isfinite(s_target):
        raise ValueError(f"target must be finite and positive, got {s_target}")
    log_target = math.log(s_target)

    def residual(log_u):
        u = math.exp(log_u)
        g = curve(u)
        if not g > 0:
            raise DegenerateInputError(f"curve vanishes at u={u:g}")
        return relation.log_map(u, g) - log_target

    lo = hi = 0.0
    r = residual(0.0)
    if abs(math.expm1(r)) <= tol:
        return 1.0
    step = math.log(2.0)
    expansions = 0
    if r < 0:
        while r < 0:
            lo, hi = hi, hi + step
            r = residual(hi)
            expansions += 1
            if expansions > BRACKET_MAX_STEPS or hi > 700.0:
                raise RootFindError(f"no upper bracket for target {s_target:g}")
    else:
        while r > 0:
            hi, lo = lo, lo - step
            r = residual(lo)
            expansions += 1
            if expansions > BRACKET_MAX_STEPS or lo < -700.0:
                raise RootFindError(f"no lower bracket for target {s_target:g}")
    logger.debug("bracket [%g, %g] after %d expansions", math.exp(lo), math.exp(hi), expansions)

    best_log_u, best_residual = (lo, residual(lo)) if abs(residual(lo)) < abs(residual(hi)) else (hi, residual(hi))
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        r = residual(mid)
        if abs(r) < abs(best_residual):
            best_log_u, best_residual = mid, r
        if abs(math.expm1(r)) <= tol:
            return math.exp(mid)
        if r < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, abs(mid)):
            break
    if abs(math.expm1(best_residual)) > tol:
        logger.warning("root find stopped at relative residual %.3g for target %g",
                       abs(math.expm1(best_residual)), s_target)
    return math.exp(best_log_u)


def layer_power_k(v, values, j, pair, exhaustive_cap=LAYER_CAP, tol=INNER_ROOT_TOL, splits=None,
                  reference=(0.0, 0.0)):
    """
    K_inf of the layer power couple at threshold v.

    Evaluates min over splits of max((2^(js0) a)^q0, v (2^(js1) b)^q1) through
    the base layer K_inf curve: the root u of the power relation gives the
    value kappa(u)^q0 (direct, q0 >= q1) or v kappa'(u)^q1 (commuted, with the
    swapped curve kappa'). Level weights are divided by 2^reference[i] on
    side i.
    """
    if splits is None:
        splits = LayerSplits(values, pair.side0.inner, pair.side1.inner, exhaustive_cap)
    if len(splits) == 1:
        return 0.0
    q0, q1 = pair.side0.outer.q, pair.side1.outer.q
    with np.errstate(over="ignore", under="ignore"):
        w0 = float(np.exp2(j * pair.side0.outer.s - reference[0]))
        w1 = float(np.exp2(j * pair.side1.outer.s - reference[1]))
    if not (math.isfinite(w0) and math.isfinite(w1)):
        raise ValueError(f"level weights at j={j} overflow, pass a reference scale")
    if w0 == 0 or w1 == 0:
        return 0.0

    if q0 >= q1:
        relation = PowerRelation(q0, q1, "direct")
        u = power_root_find(lambda x: splits.k_inf(x, w0, w1), relation, v, tol)
        return splits.k_inf(u, w0, w1) ** q0
    relation = PowerRelation(q0, q1, "commuted")
    u = power_root_find(lambda x: splits.k_inf_swapped(x, w0, w1), relation, 1.0 / v, tol)
    return v * splits.k_inf_swapped(u, w0, w1) ** q1


def power_k_sum(v, field, pair):
    """
    Sum-form power functional, exact by enumeration of each layer.

    min over assignments of sum_j (2^(js0) a_j)^q0 + v sum_j (2^(js1) b_j)^q1
    separates into per-layer minima.
    """
    q0, q1 = pair.side0.outer.q, pair.side1.outer.q
    total = 0.0
    for j, layer in zip(field.levels, field.layers):
        values = _nonzero(layer)
        if values.size == 0:
            continue
        a, b = layer_subset_costs(values, pair.side0.inner, pair.side1.inner)
        alpha = scale_pow2(a, j * pair.side0.outer.s) ** q0
        beta = scale_pow2(b, j * pair.side1.outer.s) ** q1
        total += float(np.min(alpha + v * beta))
    return total


def _check_diff_q(pair):
    q0, q1 = pair.side0.outer.q, pair.side1.outer.q
    if math.isinf(q0) or math.isinf(q1) or q0 == q1:
        raise ValueError(f"needs distinct finite q, got q0={q0}, q1={q1}")


class PowerFrontier:
    """
    Undominated totals of the level power costs of a couple with finite q.

    Level j contributes alpha = (2^(js0) a)^q0 and beta = (2^(js1) b)^q1 for
    each split (a, b) on its layer frontier. Levels are combined one at a
    time and dominated totals (A, B) are dropped, which keeps every
    assignment that can minimize a monotone objective of the two outer
    norms. Weights are divided by the largest level weight of each side,
    whose log2 is kept in `reference`.
    """

    def __init__(self, field, pair, exhaustive_cap=LAYER_CAP, merge_cap=MERGE_CAP):
        q0, q1 = pair.side0.outer.q, pair.side1.outer.q
        if math.isinf(q0) or math.isinf(q1):
            raise ValueError(f"power frontier needs finite q, got q0={q0}, q1={q1}")
        self.q0, self.q1 = q0, q1
        nonzero = _nonzero_levels(field)
        levels = [j for j, _ in nonzero]
        w0, ref0 = relative_weights(levels, pair.side0.outer.s)
        w1, ref1 = relative_weights(levels, pair.side1.outer.s)
        self.reference = (ref0, ref1)

        A, B = np.zeros(1), np.zeros(1)
        for (j, layer), u0, u1 in zip(nonzero, w0, w1):
            splits = LayerSplits(layer, pair.side0.inner, pair.side1.inner, exhaustive_cap)
            count = A.size * len(splits)
            if count > merge_cap:
                raise FrontierCapError(count, merge_cap)
            alpha = (u0 * splits.a) ** q0
            beta = (u1 * splits.b) ** q1
            A, B = pareto_front((A[:, None] + alpha[None, :]).ravel(), (B[:, None] + beta[None, :]).ravel())
        self.A, self.B = A, B
        logger.debug("power frontier of %d points over %d levels", A.size, len(nonzero))

    def __len__(self):
        return self.A.size

    def k_inf(self, v):
        """min over the frontier of max(A, v B), in the reference units."""
        return float(np.min(np.maximum(self.A, v * self.B)))

    def k_max(self, t):
        """min over the frontier of max(||f0||, t ||f1||)."""
        ref0, ref1 = self.reference
        side0 = scale_pow2(self.A ** (1.0 / self.q0), ref0)
        side1 = scale_pow2(t * self.B ** (1.0 / self.q1), ref1)
        return float(np.min(np.maximum(side0, side1)))


def _layer_separable_k(t, field, pair, exhaustive_cap, tol):
    q0, q1 = pair.side0.outer.q, pair.side1.outer.q
    nonzero = _nonzero_levels(field)
    levels = [j for j, _ in nonzero]
    reference = (relative_weights(levels, pair.side0.outer.s)[1], relative_weights(levels, pair.side1.outer.s)[1])
    layers = [(j, LayerSplits(layer, pair.side0.inner, pair.side1.inner, exhaustive_cap)) for j, layer in nonzero]

    def D(v):
        return sum(layer_power_k(v, None, j, pair, splits=splits, reference=reference) for j, splits in layers)

    relation = PowerRelation(1.0 / q0, 1.0 / q1, "direct")
    try:
        v = power_root_find(D, relation, _scaled_threshold(t, reference[1] - reference[0]), tol)
    except (RootFindError, DegenerateInputError) as e:
        # the curve is flat at both ends, where K is the smaller one-sided norm
        logger.debug("case iii at t=%g falls back to one-sided norms: %s", t, e)
        return min(outer_norm(field, pair.side0), t * outer_norm(field, pair.side1))
    value = scale_pow2(D(v) ** (1.0 / q0), reference[0])
    logger.debug("case iii at t=%g: v=%.6g, value=%.12g", t, v, value)
    return value


def k_diff_q(t, field, pair, exhaustive_cap=LAYER_CAP, tol=ROOT_TOL, merge_cap=MERGE_CAP):
    """
    Case iii: 0 < q0 != q1 < inf, Max-form value.

    Minimizes max(||f0||, t ||f1||) over the PowerFrontier, which is exact
    whenever the layer splits are. When the frontier would pass `merge_cap`
    candidates the layer-separable route is taken instead: with q0 < q1 the
    layer power functionals M_j(v) are summed into D(v), the outer relation
    t = v^(1/q1) D(v)^(1/q0 - 1/q1) is inverted for v and D(v)^(1/q0) is
    returned, at most 2^(1/q0) above the exact value. For q1 < q0 the couple
    is commuted first.
    """
    _check_diff_q(pair)
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    q0, q1 = pair.side0.outer.q, pair.side1.outer.q
    if q1 < q0:
        return t * k_diff_q(1.0 / t, field, pair.swapped(), exhaustive_cap, tol, merge_cap)
    if field.is_zero():
        return 0.0
    try:
        frontier = PowerFrontier(field, pair, exhaustive_cap, merge_cap)
    except FrontierCapError as e:
        logger.warning("%s; case iii uses the layer-separable bound, within a factor %.4g", e, 2.0 ** (1.0 / q0))
        return _layer_separable_k(t, field, pair, exhaustive_cap, tol)
    return frontier.k_max(t)


class ConditionalCurve:
    """
    Step structure of G(s) = min { ||f||_{side0}(L0) : ||f||_{side1}(L1) <= s }
    for a couple with q1 = inf.

    The side 1 constraint acts level by level, so G is the q0-aggregate of the
    per-layer step functions. Breakpoints start at 0 and G vanishes at the
    last one.
    """

    def __init__(self, field, pair, exhaustive_cap=LAYER_CAP):
        if not math.isinf(pair.side1.outer.q):
            raise ValueError(f"conditional functional needs q1 = inf, got {pair.side1.outer.q}")
        q0 = pair.side0.outer.q
        nonzero = _nonzero_levels(field)
        levels = [j for j, _ in nonzero]
        w0, ref0 = relative_weights(levels, pair.side0.outer.s)
        w1, ref1 = relative_weights(levels, pair.side1.outer.s)
        steps = []
        for (j, layer), u0, u1 in zip(nonzero, w0, w1):
            splits = LayerSplits(layer, pair.side0.inner, pair.side1.inner, exhaustive_cap)
            steps.append((scale_pow2(u1 * splits.b, ref1), u0 * splits.a))

        breakpoints = np.unique(np.concatenate([b for b, _ in steps] + [np.zeros(1)]))
        per_layer = [a[np.searchsorted(b, breakpoints, side="right") - 1] for b, a in steps]
        if per_layer:
            stacked = np.vstack(per_layer)
            if math.isinf(q0):
                values = stacked.max(axis=0)
            else:
                scale = float(stacked.max())
                values = scale * np.sum((stacked / scale) ** q0, axis=0) ** (1.0 / q0)
            values = scale_pow2(values, ref0)
        else:
            values = np.zeros(1)
        self.breakpoints = breakpoints
        self.values = values

    def is_zero(self):
        return not np.any(self.values > 0)

    def value(self, s):
        """G(s), right-continuous; s may be inf."""
        s = np.asarray(s, dtype=float)
        index = np.searchsorted(self.breakpoints, s, side="right") - 1
        result = self.values[np.clip(index, 0, None)]
        return float(result) if result.ndim == 0 else result

    def tilde(self, s):
        """G(s) / s."""
        return self.value(s) / np.asarray(s, dtype=float)

    def h(self, t):
        """
        H(t) = sup { s : G(s-) >= t s }.

        With G = g_k on [beta_k, beta_k+1), let k be the last step with
        g_k > t beta_k; then H = min(beta_k+1, g_k / t).
        """
        last = self._last_step(t)
        return float(min(self.breakpoints[last + 1], self.values[last] / t))

    def k_inf(self, t):
        """t H(t), as min(t beta_k+1, g_k)."""
        last = self._last_step(t)
        return float(min(t * self.breakpoints[last + 1], self.values[last]))

    def _last_step(self, t):
        if self.is_zero():
            raise DegenerateInputError("threshold H is undefined for a zero field")
        if not t > 0:
            raise ValueError(f"t must be positive, got {t}")
        above = self.values > t * self.breakpoints
        return int(np.flatnonzero(above)[-1])


def g_conditional(s, field, pair, exhaustive_cap=LAYER_CAP):
    """Conditional functional G(s); nonincreasing in s."""
    if s < 0:
        raise ValueError(f"s must be nonnegative, got {s}")
    return ConditionalCurve(field, pair, exhaustive_cap).value(s)


def h_threshold(t, field, pair, exhaustive_cap=LAYER_CAP):
    """Generalized inverse H(t) of s -> G(s)/s."""
    return ConditionalCurve(field, pair, exhaustive_cap).h(t)


def k_q_infinity(t, field, pair, exhaustive_cap=LAYER_CAP):
    """
    Case iv: exactly one of q0, q1 is infinite, Max-form value t * H(t).

    q0 = inf is commuted to q1 = inf.
    """
    q0, q1 = pair.side0.outer.q, pair.side1.outer.q
    if math.isinf(q0) == math.isinf(q1):
        raise ValueError(f"needs exactly one infinite q, got q0={q0}, q1={q1}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if math.isinf(q0):
        return t * k_q_infinity(1.0 / t, field, pair.swapped(), exhaustive_cap)
    curve = ConditionalCurve(field, pair, exhaustive_cap)
    if curve.is_zero():
        return 0.0
    return curve.k_inf(t)


def select_case(pair):
    """Case tag 'i'..'iv' for a couple."""
    q0, q1 = pair.side0.outer.q, pair.side1.outer.q
    if pair.side0.inner == pair.side1.inner:
        return "i"
    if q0 == q1:
        return "ii"
    if math.isfinite(q0) and math.isfinite(q1):
        return "iii"
    return "iv"


def k_dispatch(t, field, pair, cap=None, exhaustive_cap=LAYER_CAP):
    """
    Route to the fast solver of the couple's case.

    Returns:
        DispatchResult: Case tag, value and the functional form of the value
    """
    case = select_case(pair)
    logger.debug("dispatching %s to case %s at t=%g", pair, case, t)
    if case == "i":
        return DispatchResult(case, k_same_A(t, field, pair, cap).value, SUM)
    if case == "ii":
        return DispatchResult(case, k_same_q(t, field, pair), SUM)
    if case == "iii":
        return DispatchResult(case, k_diff_q(t, field, pair, exhaustive_cap), MAX)
    return DispatchResult(case, k_q_infinity(t, field, pair, exhaustive_cap), MAX)


def _step_power_integral(powers, x):
    """Integral over [0, x] of the step function equal to powers[k] on [k, k+1)."""
    whole = int(min(math.floor(x), powers.size))
    total = float(np.sum(powers[:whole]))
    if whole < powers.size:
        total += (x - whole) * powers[whole]
    return total


def hunt_k_functional(t, values, p0, p1=math.inf):
    """
    Rearrangement closed form of K(t, f, l^p0, l^p1) for p0 < p1 <= inf.

    Treats f* as a step function on [0, N). For p1 = inf this is
    (int_0^(t^p0) f*^p0)^(1/p0); for finite p1, with 1/alpha = 1/p0 - 1/p1,
    (int_0^(t^alpha) f*^p0)^(1/p0) + t (int_(t^alpha)^N f*^p1)^(1/p1).
    """
    if not 0 < p0 < p1:
        raise ValueError(f"needs 0 < p0 < p1, got p0={p0}, p1={p1}")
    star = rearrange(values)
    if math.isinf(p1):
        return _step_power_integral(star ** p0, t ** p0) ** (1.0 / p0)
    alpha = 1.0 / (1.0 / p0 - 1.0 / p1)
    split = t ** alpha
    head = _step_power_integral(star ** p0, split) ** (1.0 / p0)
    upper = star ** p1
    tail = max(float(np.sum(upper)) - _step_power_integral(upper, split), 0.0)
    return head + t * tail ** (1.0 / p1)
