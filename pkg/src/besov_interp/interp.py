"""
K-curves, real interpolation norms and numeric theorem checks.

Norms integrate (t^-theta K(t))^eta dt/t on a log-spaced window with the
trapezoid rule in x = ln t. Outside the window K is continued by its end
asymptotes: linear through the origin on the left, constant on the right.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.integrate import trapezoid

from besov_interp.grid import gen_field, restrict
from besov_interp.oracle import SUM, MAX, FunctionalForm, VertexTable, default_cap
from besov_interp.solver import k_dispatch
from besov_interp.spaces import CouplePair, InnerSpace, SpaceSide, inner_norm, outer_norm

logger = logging.getLogger(__name__)

DEFAULT_DECADES = 6
DEFAULT_PPD = 16
TAIL_TOLERANCE = 1e-2


def format_number(value):
    """12 significant digits, positional unless the magnitude is extreme."""
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if value != 0 and not 1e-6 <= abs(value) < 1e15:
        return np.format_float_scientific(value, precision=11, unique=True, trim="0")
    return np.format_float_positional(value, precision=12, unique=True, fractional=False, trim="0")


@dataclass(frozen=True)
class ThetaEta:
    """Interpolation parameters theta in (0, 1) and eta in (0, inf]."""

    theta: float
    eta: float

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if not self.eta > 0:
            raise ValueError(f"eta must be in (0, inf], got {self.eta}")


@dataclass(frozen=True)
class QuadratureSpec:
    """Log-spaced window [t_lo, t_hi] with points_per_decade samples per decade."""

    t_lo: float
    t_hi: float
    points_per_decade: int = DEFAULT_PPD

    def __post_init__(self):
        if not 0 < self.t_lo < self.t_hi < math.inf:
            raise ValueError(f"need 0 < t_lo < t_hi < inf, got [{self.t_lo}, {self.t_hi}]")
        if self.points_per_decade < 4:
            raise ValueError(f"points_per_decade must be at least 4, got {self.points_per_decade}")

    @property
    def decades(self):
        return math.log10(self.t_hi) - math.log10(self.t_lo)

    def grid(self):
        count = max(int(round(self.decades * self.points_per_decade)), 1) + 1
        return np.logspace(math.log10(self.t_lo), math.log10(self.t_hi), count)

    def reciprocal(self):
        """Window of 1/t, for the commuted couple."""
        return QuadratureSpec(1.0 / self.t_hi, 1.0 / self.t_lo, self.points_per_decade)

    @classmethod
    def centered(cls, center=1.0, decades=DEFAULT_DECADES, ppd=DEFAULT_PPD):
        half = 10.0 ** (decades / 2.0)
        return cls(center / half, center * half, ppd)

    @classmethod
    def default_for(cls, field, pair, decades=DEFAULT_DECADES, ppd=DEFAULT_PPD):
        """Window centered where the asymptotes ||f||_0 and t ||f||_1 of K cross."""
        norm0 = outer_norm(field, pair.side0)
        norm1 = outer_norm(field, pair.side1)
        center = norm0 / norm1 if norm0 > 0 and norm1 > 0 else 1.0
        return cls.centered(center, decades, ppd)


@dataclass(frozen=True)
class KCurve:
    """Samples of t -> K(t) on a strictly increasing grid."""

    ts: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if ts.ndim != 1 or ts.shape != values.shape or ts.size < 2:
            raise ValueError("a curve needs at least two (t, value) samples")
        if not np.all(ts > 0) or not np.all(np.diff(ts) > 0):
            raise ValueError("curve thresholds must be positive and strictly increasing")
        if not np.all(values >= 0) or not np.all(np.isfinite(values)):
            raise ValueError("curve values must be finite and nonnegative")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "values", values)

    def scaled(self, factor):
        return KCurve(self.ts, self.values * factor)

    def rows(self):
        return list(zip(self.ts.tolist(), self.values.tolist()))


def k_curve(field, pair, spec, method="oracle", form=SUM, cap=None):
    """
    Sample K on the grid of `spec`.

    Args:
        field (CoeffField): The field
        pair (CouplePair): The couple
        spec (QuadratureSpec): Threshold window
        method (str): 'oracle' (exhaustive, in `form`) or 'fast' (dispatch,
            in the form native to the couple's case)
        form (FunctionalForm): Objective form of the oracle
        cap (int): Enumeration cap

    Returns:
        KCurve: The sampled curve
    """
    ts = spec.grid()
    if method == "oracle":
        values = VertexTable(field, pair, cap).curve(ts, form)
    elif method == "fast":
        values = np.array([k_dispatch(t, field, pair, cap).value for t in ts])
    else:
        raise ValueError(f"unknown method '{method}', expected oracle or fast")
    return KCurve(ts, values)


def _power_terms(ts, values, theta, eta):
    with np.errstate(divide="ignore"):
        logs = eta * (np.log(values) - theta * np.log(ts))
    return np.exp(logs)


def _left_tail(slope, theta, eta, lo, hi):
    """Integral over [lo, hi] of (t^-theta * slope * t)^eta dt/t."""
    power = eta * (1.0 - theta)
    return slope ** eta * (hi ** power - lo ** power) / power


def _right_tail(level, theta, eta, lo, hi):
    """Integral over [lo, hi] of (t^-theta * level)^eta dt/t; hi may be inf."""
    power = theta * eta
    upper = 0.0 if math.isinf(hi) else hi ** -power
    return level ** eta * (lo ** -power - upper) / power


def _segment_integral(curve, theta, eta, lo=0.0, hi=math.inf):
    """
    Integral over [lo, hi] of (t^-theta K(t))^eta dt/t.

    Inside the window the samples are integrated by the trapezoid rule in
    ln t; outside it K is extended by the end asymptotes.
    """
    ts, values = curve.ts, curve.values
    t_lo, t_hi = ts[0], ts[-1]
    left_slope = values[0] / t_lo
    right_level = values[-1]

    total = 0.0
    if lo < t_lo:
        total += _left_tail(left_slope, theta, eta, lo, min(hi, t_lo))
    a, b = max(lo, t_lo), min(hi, t_hi)
    if a < b:
        x = np.log(ts)
        h = _power_terms(ts, values, theta, eta)
        xa, xb = math.log(a), math.log(b)
        inside = (x > xa) & (x < xb)
        xs = np.concatenate([[xa], x[inside], [xb]])
        hs = np.interp(xs, x, h)
        total += float(trapezoid(hs, xs))
    if hi > t_hi:
        total += _right_tail(right_level, theta, eta, max(lo, t_hi), hi)
    return total


def _segment_sup(curve, theta, lo=0.0, hi=math.inf):
    """sup over [lo, hi] of t^-theta K(t) under the same extension."""
    ts, values = curve.ts, curve.values
    candidates = [0.0]
    inside = (ts >= lo) & (ts <= hi)
    if np.any(inside):
        candidates.append(float(np.max(ts[inside] ** -theta * values[inside])))
    for edge in (lo, hi):
        if 0 < edge < math.inf:
            candidates.append(float(edge ** -theta * np.interp(edge, ts, values,
                                                               left=values[0] / ts[0] * edge,
                                                               right=values[-1])))
    return max(candidates)


@dataclass(frozen=True)
class InterpNorm:
    """Quadrature value with its tail diagnostics."""

    value: float
    tail_error: float
    tail_fraction: float
    tails_ok: bool


def interp_norm(curve, te):
    """
    (int_0^inf (t^-theta K(t))^eta dt/t)^(1/eta), or sup_t t^-theta K(t) for eta = inf.

    The tail error compares the end asymptotes read from the outermost
    samples with those read from the next samples inward.

    Returns:
        InterpNorm: Norm, absolute tail error estimate, share of the
            integral carried by the tails, and whether the error is within
            TAIL_TOLERANCE of the value
    """
    theta, eta = te.theta, te.eta
    if math.isinf(eta):
        value = float(np.max(curve.ts ** -theta * curve.values))
        return InterpNorm(value, 0.0, 0.0, True)

    ts, values = curve.ts, curve.values
    integral = _segment_integral(curve, theta, eta)
    if integral <= 0:
        return InterpNorm(0.0, 0.0, 0.0, True)

    left = _left_tail(values[0] / ts[0], theta, eta, 0.0, ts[0])
    right = _right_tail(values[-1], theta, eta, ts[-1], math.inf)
    left_alt = _left_tail(values[1] / ts[1], theta, eta, 0.0, ts[0])
    right_alt = _right_tail(values[-2], theta, eta, ts[-1], math.inf)
    spread = abs(left - left_alt) + abs(right - right_alt)

    value = integral ** (1.0 / eta)
    tail_error = abs((integral + spread) ** (1.0 / eta) - value)
    tails_ok = tail_error <= TAIL_TOLERANCE * value
    if not tails_ok:
        logger.warning("quadrature window [%g, %g] too short: tail error %.3g on norm %.6g",
                       ts[0], ts[-1], tail_error, value)
    return InterpNorm(value, tail_error, (left + right) / integral, tails_ok)


def _csv_text(header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([cell if isinstance(cell, (int, str)) else format_number(cell) for cell in row])
    return buffer.getvalue()


@dataclass(frozen=True)
class RatioReport:
    lhs: float
    rhs: float
    ratio: float


def _ratio(lhs, rhs):
    if lhs == 0 and rhs == 0:
        return 1.0
    if lhs == 0:
        return math.inf
    return rhs / lhs


@dataclass
class BandReport:
    """Pointwise (t, lhs, rhs, ratio) rows with an accepted band."""

    rows: list = dataclass_field(default_factory=list)
    lower: float = 0.0
    upper: float = math.inf

    @property
    def ratios(self):
        return np.array([row[3] for row in self.rows])

    @property
    def min_ratio(self):
        return float(np.min(self.ratios)) if self.rows else 1.0

    @property
    def max_ratio(self):
        return float(np.max(self.ratios)) if self.rows else 1.0

    @property
    def within(self):
        return self.lower <= self.min_ratio and self.max_ratio <= self.upper

    def to_csv(self):
        return _csv_text(["t", "lhs", "rhs", "ratio"], self.rows)


@dataclass
class SizeReport:
    """(trial, size, ratio) rows over random fields of several sizes."""

    rows: list = dataclass_field(default_factory=list)

    def ratios(self, size=None):
        return np.array([r for _, n, r in self.rows if size is None or n == size])

    @property
    def sizes(self):
        return sorted({n for _, n, _ in self.rows})

    def stats(self, size=None):
        """(min, max, mean) of the ratios, optionally for one size."""
        ratios = self.ratios(size)
        return float(np.min(ratios)), float(np.max(ratios)), float(np.mean(ratios))

    @property
    def size_spread(self):
        """Largest over smallest per-size mean ratio."""
        means = [self.stats(n)[2] for n in self.sizes]
        return max(means) / min(means)

    def to_csv(self):
        return _csv_text(["trial", "size", "ratio"], self.rows)


def commutation_check(field, pair, te, spec, form=SUM, cap=None):
    """
    Compare the (theta, eta) norm of (A0, A1) with the (1 - theta, eta) norm of
    (A1, A0), the latter sampled on the reciprocal window.
    """
    direct = interp_norm(k_curve(field, pair, spec, "oracle", form, cap), te).value
    swapped_te = ThetaEta(1.0 - te.theta, te.eta)
    swapped = interp_norm(k_curve(field, pair.swapped(), spec.reciprocal(), "oracle", form, cap), swapped_te).value
    return RatioReport(direct, swapped, _ratio(direct, swapped))


def xi_band(xi):
    """Band of the Sum/Xi norm ratio; xi = inf stands for the Max form."""
    if math.isinf(xi):
        return 1.0, 2.0
    width = 2.0 ** (1.0 / min(1.0, xi))
    return 1.0 / width, width


def kxi_equivalence_check(field, pair, xi, spec, te, cap=None):
    """
    Ratio of the Sum-form norm to the Xi-form norm (Max form for xi = inf).

    Returns:
        BandReport: One row at t = 1 holding both norms and the ratio, with
            the band implied by the pointwise form sandwich
    """
    form = MAX if math.isinf(xi) else FunctionalForm("xi", xi)
    table = VertexTable(field, pair, cap)
    ts = spec.grid()
    sum_norm = interp_norm(KCurve(ts, table.curve(ts, SUM)), te).value
    xi_norm = interp_norm(KCurve(ts, table.curve(ts, form)), te).value
    lower, upper = xi_band(xi)
    return BandReport([(1.0, xi_norm, sum_norm, _ratio(xi_norm, sum_norm))], lower, upper)


def _truncated_norm(curve, theta, q, lo, hi):
    if math.isinf(q):
        return _segment_sup(curve, theta, lo, hi)
    return _segment_integral(curve, theta, q, lo, hi) ** (1.0 / q)


def holmstedt_check(field, base_pair, th0, th1, t_grid, quad=None, cap=None, lower=1.0 / 16, upper=16.0):
    """
    Compare K(t, f, E0, E1) with the truncated-integral formula, where
    E_i = (A0, A1)_{theta_i, q_i} and eta = theta1 - theta0.

    The left side enumerates vertex assignments with E0 and E1 evaluated by
    quadrature of each restricted field's oracle curve; the right side is

        (int_0^sigma (s^-theta0 K)^q0 ds/s)^(1/q0) + t (int_sigma^inf (s^-theta1 K)^q1 ds/s)^(1/q1)

    with sigma = t^(1/eta) and K the base couple's Sum-form oracle curve.

    Args:
        field (CoeffField): The field (under the cap)
        base_pair (CouplePair): The couple (A0, A1)
        th0 (tuple): (theta0, q0)
        th1 (tuple): (theta1, q1)
        t_grid (QuadratureSpec): Thresholds at which both sides are compared
        quad (QuadratureSpec): Quadrature window for the E norms

    Returns:
        BandReport: Rows (t, lhs, rhs, ratio = lhs / rhs)
    """
    (theta0, q0), (theta1, q1) = th0, th1
    if not 0 < theta0 < theta1 < 1:
        raise ValueError(f"needs 0 < theta0 < theta1 < 1, got {theta0}, {theta1}")
    te0, te1 = ThetaEta(theta0, q0), ThetaEta(theta1, q1)
    eta = theta1 - theta0
    if quad is None:
        quad = QuadratureSpec.default_for(field, base_pair, decades=10, ppd=8)
    ts = t_grid.grid()

    if field.is_zero():
        return BandReport([(float(t), 0.0, 0.0, 1.0) for t in ts], lower, upper)

    outer = VertexTable(field, base_pair, cap)
    base = KCurve(quad.grid(), outer.curve(quad.grid(), SUM))
    cache = {}

    def e_norms(number):
        if number not in cache:
            assignment = outer.assignment(number)
            norms = []
            for side in (0, 1):
                restricted = restrict(field, assignment, side)
                if restricted.is_zero():
                    norms.append(0.0)
                    continue
                curve = KCurve(quad.grid(), VertexTable(restricted, base_pair, cap).curve(quad.grid(), SUM))
                norms.append(interp_norm(curve, te0 if side == 0 else te1).value)
            cache[number] = tuple(norms)
        return cache[number]

    count = 1 << outer.count
    e0 = np.empty(count)
    e1 = np.empty(count)
    for number in range(count):
        e0[number], e1[number] = e_norms(number)
    logger.debug("holmstedt check cached %d E-norm pairs", len(cache))

    rows = []
    for t in ts:
        lhs = float(np.min(e0 + t * e1))
        sigma = t ** (1.0 / eta)
        rhs = (_truncated_norm(base, theta0, q0, 0.0, sigma)
               + t * _truncated_norm(base, theta1, q1, sigma, math.inf))
        rows.append((float(t), lhs, rhs, _ratio(rhs, lhs)))
    report = BandReport(rows, lower, upper)
    if not report.within:
        logger.warning("holmstedt band [%.4g, %.4g] outside [%g, %g]",
                       report.min_ratio, report.max_ratio, lower, upper)
    return report


def lorentz_target_q(theta, q0, q1):
    """q with 1/q = (1 - theta)/q0 + theta/q1."""
    inverse = (1.0 - theta) / q0 + theta / q1
    return math.inf if inverse == 0 else 1.0 / inverse


def lorentz_target_p(theta, p0, p1):
    """p with 1/p = (1 - theta)/p0 + theta/p1."""
    inverse = (1.0 - theta) / p0 + theta / p1
    return math.inf if inverse == 0 else 1.0 / inverse


def lorentz_identity_probe(p0, q0, p1, q1, theta, q=None, sizes=(4, 16, 64), trials=5,
                           seed=0, cap=None, decades=8, ppd=DEFAULT_PPD):
    """
    Compare (l^{p0,q0}, l^{p1,q1})_{theta,q} with the direct l^{p,q} norm.

    With p0 != p1 the target is l^{p,q} with 1/p = (1-theta)/p0 + theta/p1.
    With p0 = p1 = p and q left as None, q follows from
    1/q = (1-theta)/q0 + theta/q1. Fields are single random layers; curves
    use the oracle up to the cap and the fast solver beyond it.

    Returns:
        SizeReport: (trial, size, interpolation norm / direct norm) rows
    """
    if q is None:
        if p0 != p1:
            raise ValueError("q is required when p0 != p1")
        q = lorentz_target_q(theta, q0, q1)
    if cap is None:
        cap = default_cap()
    p = lorentz_target_p(theta, p0, p1)
    te = ThetaEta(theta, q)
    target = InnerSpace.lorentz(p, q)
    pair = CouplePair(SpaceSide.of(0, 1, InnerSpace.lorentz(p0, q0)),
                      SpaceSide.of(0, 1, InnerSpace.lorentz(p1, q1)))

    report = SizeReport()
    for size in sizes:
        method = "oracle" if size <= cap else "fast"
        for trial in range(trials):
            field = gen_field(seed + trial, (0, 0), size)
            spec = QuadratureSpec.default_for(field, pair, decades, ppd)
            curve = k_curve(field, pair, spec, method, SUM, cap)
            norm = interp_norm(curve, te).value
            report.rows.append((trial, size, norm / inner_norm(field.layer(0), target)))
        logger.debug("lorentz identity at size %d: min %.4g max %.4g mean %.4g", size, *report.stats(size))
    return report
