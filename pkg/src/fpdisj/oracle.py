"""Exact moments and the three-case analysis of a probed promise vector.

Probing index ``i`` means evaluating ``||x + boost*e_i||_p^p``.  For a
promise vector that value depends only on ``||x||_0``, on ``x(i)`` and on
where the heavy coordinate (value ``t``) sits, so everything here can be
evaluated either from a :class:`FrequencyVector` or from a scalar
:class:`PromiseShape`.  The scalar path is what makes sweeps at
``n ~ 10**12`` cheap.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .core import FrequencyVector, InvalidArgument, Parameters, PromiseViolation, power_sum

FLOAT_GUARD = 1e-9


class Case(enum.Enum):
    NO_HEAVY = 1
    HEAVY_ELSEWHERE = 2
    HEAVY_AT_PROBE = 3


# per-case bound on ||x + boost e_i||_p^p - ||x||_0, in units of n*eps
BOUND_COEFF = {
    Case.NO_HEAVY: Fraction(1, 64),
    Case.HEAVY_ELSEWHERE: Fraction(1, 32),
    Case.HEAVY_AT_PROBE: Fraction(1, 2),
}
PAPER_THRESHOLD = Fraction(2, 5)
ERROR_FACTOR = Fraction(1, 10)


def f0(x: FrequencyVector) -> int:
    return len(x.entries)


def fp(x: FrequencyVector, p: float) -> float:
    if p <= 0:
        raise InvalidArgument("p must be positive")
    return power_sum(x.entries.values(), p)


def boosted_moment(x: FrequencyVector, i: int, params: Parameters) -> float:
    """``||x||_p^p - x(i)^p + (boost + x(i))^p``."""
    if not 1 <= i <= x.dim:
        raise InvalidArgument(f"probe index {i} outside [1, {x.dim}]")
    xi = x[i]
    return fp(x, params.p) - float(xi) ** params.p + (params.boost + xi) ** params.p


@dataclass(frozen=True)
class PromiseShape:
    """What a probe sees: support size, the probed count and the case."""

    l0: int
    xi: int
    case: Case

    def __post_init__(self):
        if self.l0 < 0:
            raise InvalidArgument("negative support size")
        if self.case is Case.HEAVY_AT_PROBE:
            if self.l0 < 1:
                raise InvalidArgument("heavy probe needs a nonempty support")
        elif self.xi not in (0, 1):
            raise InvalidArgument("non-heavy probe coordinate must be 0 or 1")
        if self.case is Case.HEAVY_ELSEWHERE and self.l0 < 1 + self.xi:
            raise InvalidArgument("support too small for a heavy coordinate elsewhere")
        if self.case is Case.NO_HEAVY and self.l0 < self.xi:
            raise InvalidArgument("support too small for the probed coordinate")


def classify(x: FrequencyVector, i: int, t: int) -> PromiseShape:
    """Case of probe ``i`` on ``x``; raises if ``x`` breaks the promise."""
    if not 1 <= i <= x.dim:
        raise InvalidArgument(f"probe index {i} outside [1, {x.dim}]")
    heavy = [j for j, c in x.entries.items() if c != 1]
    if any(x[j] != t for j in heavy) or len(heavy) > 1:
        raise PromiseViolation(f"vector is neither binary nor has a single coordinate equal to t={t}")
    if not heavy:
        case = Case.NO_HEAVY
    elif heavy[0] == i:
        case = Case.HEAVY_AT_PROBE
    else:
        case = Case.HEAVY_ELSEWHERE
    return PromiseShape(len(x.entries), x[i], case)


def shape_moment(shape: PromiseShape, params: Parameters) -> float:
    """Exact probed moment from the scalar description, O(1)."""
    b, p, t = params.boost, params.p, params.t
    if shape.case is Case.NO_HEAVY:
        return (shape.l0 - shape.xi) + (b + shape.xi) ** p
    if shape.case is Case.HEAVY_ELSEWHERE:
        return (shape.l0 - 1 - shape.xi) + float(t) ** p + (b + shape.xi) ** p
    return (shape.l0 - 1) + (b + t) ** p


def shape_moment_mp(shape: PromiseShape, params: Parameters, dps: int = 50):
    """Same as :func:`shape_moment` in ``dps``-digit arithmetic (needs the ``precision`` extra)."""
    import mpmath

    with mpmath.workdps(dps):
        if params.root is not None:
            b = mpmath.mpf(params.root)
        else:
            b = mpmath.root(mpmath.mpf(params.n), mpmath.mpf(params.p))
        p, t = mpmath.mpf(params.p), mpmath.mpf(params.t)
        if shape.case is Case.NO_HEAVY:
            return (shape.l0 - shape.xi) + (b + shape.xi) ** p
        if shape.case is Case.HEAVY_ELSEWHERE:
            return (shape.l0 - 1 - shape.xi) + t**p + (b + shape.xi) ** p
        return (shape.l0 - 1) + (b + t) ** p


def case_bound(shape: PromiseShape, params: Parameters) -> float:
    """``||x||_0 + n(1 + c*eps)`` with c = 1/64, 1/32 (upper) or 1/2 (lower)."""
    return shape.l0 + params.n * (1 + float(BOUND_COEFF[shape.case] * params.eps))


@dataclass(frozen=True)
class CaseBoundsReport:
    case: Case
    exact: float
    bound: float
    satisfied: bool
    slack: float
    slack_frac: float
    shape: PromiseShape
    trace: tuple[tuple[str, float], ...] = field(default=(), compare=False)

    @property
    def upper(self) -> bool:
        return self.case is not Case.HEAVY_AT_PROBE

    def to_dict(self) -> dict:
        return {
            "case": self.case.value,
            "l0": self.shape.l0,
            "xi": self.shape.xi,
            "exact": self.exact,
            "bound": self.bound,
            "satisfied": self.satisfied,
            "slack": self.slack,
            "slack_frac": self.slack_frac,
        }


def _trace(shape: PromiseShape, params: Parameters) -> tuple[tuple[str, float], ...]:
    """Intermediate steps of the case chain, for debugging only."""
    n, b, p, e = params.n, params.boost, params.p, params.eps_float
    l0, xi = shape.l0, shape.xi
    if shape.case is Case.HEAVY_AT_PROBE:
        alpha = e / (2 * p)
        return (
            ("exact", shape_moment(shape, params)),
            ("l0 - 1 + n(1 + eps/2p)^p", l0 - 1 + n * (1 + alpha) ** p),
            ("l0 - 1 + n(1 + eps/2 + (p-1)eps^2/8p)", l0 - 1 + n * (1 + e / 2 + (p - 1) * e * e / (8 * p))),
            ("l0 + n(1 + eps/2)", l0 + n * (1 + e / 2)),
        )
    steps = [("exact", shape_moment(shape, params))]
    base = l0 - xi if shape.case is Case.NO_HEAVY else l0 - 1 - xi + float(params.t) ** p
    steps.append(("... + n exp(x(i) p / boost)", base + n * math.exp(xi * p / b)))
    steps.append(("... + n(1 + 5p/(4 boost))", base + n * (1 + 5 * p / (4 * b))))
    steps.append(("final bound", case_bound(shape, params)))
    return tuple(steps)


def case_bounds_for_shape(shape: PromiseShape, params: Parameters, *, trace: bool = False) -> CaseBoundsReport:
    exact = shape_moment(shape, params)
    bound = case_bound(shape, params)
    if shape.case is Case.HEAVY_AT_PROBE:
        slack = exact - bound
        ok = exact >= bound * (1 - FLOAT_GUARD)
    else:
        slack = bound - exact
        ok = exact <= bound * (1 + FLOAT_GUARD)
    return CaseBoundsReport(
        case=shape.case,
        exact=exact,
        bound=bound,
        satisfied=ok,
        slack=slack,
        slack_frac=slack / (params.n * params.eps_float),
        shape=shape,
        trace=_trace(shape, params) if trace else (),
    )


def case_bounds(x: FrequencyVector, i: int, params: Parameters, *, trace: bool = False) -> CaseBoundsReport:
    return case_bounds_for_shape(classify(x, i, params.t), params, trace=trace)


def paper_threshold(params: Parameters) -> float:
    """Offset added to the F_0 estimate in the decision: ``n(1 + 2 eps/5)``."""
    return params.n * (1 + float(PAPER_THRESHOLD * params.eps))


def excess_range(params: Parameters) -> tuple[float, float]:
    """``(largest cases 1-2 excess, smallest case 3 excess)`` over ``||x||_0``.

    The excess of a probe is ``||x + boost e_i||_p^p - ||x||_0``; it does not
    depend on ``||x||_0`` for promise vectors.
    """
    b, p, t = params.boost, params.p, float(params.t)
    low_cases = [
        b**p,                              # case 1, x(i) = 0
        (b + 1) ** p - 1,                  # case 1, x(i) = 1
        t**p - 1 + b**p,                   # case 2, x(i) = 0
        t**p - 2 + (b + 1) ** p,           # case 2, x(i) = 1
    ]
    return max(low_cases), (b + t) ** p - 1


def relaxed_threshold(params: Parameters) -> float:
    """Midpoint of the exact excess gap, written as ``n(1 + g/2)``.

    Raises if the gap is empty, in which case no threshold separates the
    cases even with exact estimators.
    """
    lo, hi = excess_range(params)
    if not hi > lo:
        raise InvalidArgument(f"no gap between case excesses ({lo} >= {hi})")
    return (lo + hi) / 2


def threshold_offset(params: Parameters, mode: str = "paper") -> float:
    if mode == "paper":
        return paper_threshold(params)
    if mode == "relaxed":
        return relaxed_threshold(params)
    raise InvalidArgument(f"unknown threshold mode {mode!r}")


@dataclass(frozen=True)
class DecisionCornerReport:
    corners: tuple[tuple[float, float], ...]
    fired: tuple[bool, ...]
    correct: bool
    case: Case
    threshold: float

    def to_dict(self) -> dict:
        return {
            "case": self.case.value,
            "threshold": self.threshold,
            "corners": [
                {"f0_factor": a, "fp_factor": b, "fired": f}
                for (a, b), f in zip(self.corners, self.fired)
            ],
            "correct": self.correct,
        }


def decision_corners_for_shape(
    shape: PromiseShape, params: Parameters, threshold_mode: str = "paper"
) -> DecisionCornerReport:
    """Evaluate the firing rule at all four ``(1 +- eps/10)`` error corners."""
    d = float(ERROR_FACTOR * params.eps)
    exact = shape_moment(shape, params)
    offset = threshold_offset(params, threshold_mode)
    corners, fired = [], []
    for a in (1 - d, 1 + d):
        for b in (1 - d, 1 + d):
            corners.append((a, b))
            fired.append(exact * b >= shape.l0 * a + offset)
    want = shape.case is Case.HEAVY_AT_PROBE
    return DecisionCornerReport(
        corners=tuple(corners),
        fired=tuple(fired),
        correct=all(f == want for f in fired),
        case=shape.case,
        threshold=offset,
    )


def decision_corners(
    x: FrequencyVector, i: int, params: Parameters, threshold_mode: str = "paper"
) -> DecisionCornerReport:
    return decision_corners_for_shape(classify(x, i, params.t), params, threshold_mode)


def largest_safe_support(params: Parameters) -> float:
    """Largest ``||x||_0`` for which the worst case-3 corner still fires.

    At that corner the estimates are ``(1 - d)(l0 - 1 + (b + t)^p)`` and
    ``(1 + d) l0``, so firing needs ``l0 <= ((1 - d)((b + t)^p - 1) - T) / (2d)``
    where ``T`` is the paper threshold offset and ``d = eps/10``.
    """
    d = float(ERROR_FACTOR * params.eps)
    _, hi = excess_range(params)
    return ((1 - d) * hi - paper_threshold(params)) / (2 * d)


def support_grid(n: int, points: int = 20, frac: float = 0.25) -> list[int]:
    """``points`` integer support sizes spread evenly over ``[0, frac*n]``."""
    if points < 1:
        return []
    if points == 1:
        return [0]
    top = frac * n
    return sorted({int(round(top * k / (points - 1))) for k in range(points)})


def sweep_shapes(params: Parameters, points: int = 20, frac: float = 0.25):
    """Every promise shape on the support grid: cases 1-2 with ``x(i)`` in {0, 1}, and case 3."""
    for l0 in support_grid(params.n, points, frac):
        for xi in (0, 1):
            if l0 >= xi:
                yield PromiseShape(l0, xi, Case.NO_HEAVY)
            if l0 >= 1 + xi:
                yield PromiseShape(l0, xi, Case.HEAVY_ELSEWHERE)
        if l0 >= 1:
            yield PromiseShape(l0, params.t, Case.HEAVY_AT_PROBE)
