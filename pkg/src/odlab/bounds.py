"""Closed-form tail bounds built on the Bernstein moment condition.

A variable ``X`` satisfies the ``(D, s)``-Bernstein condition when, for every
``|lam| * D < 3``::

    E[exp(lam * X)] <= exp((lam**2 * s / 2) / (1 - |lam| * D / 3))

A supermartingale whose increments satisfy the one-sided version obeys the
Freedman-type tail ``exp(-(h**2 / 2) / (T * s + h * D / 3))`` for the event of
rising by ``h`` within ``T`` steps. The additive drift tails apply the same
formula to the slack ``z`` left over after a per-step drift ``R``.

Exponents are formed in log space and exponentiated last, so extreme
parameters underflow to 0 rather than producing NaN.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Tuple

from .errors import InadmissibleLambda, InvalidSlack, OdLabError

CHECK_SLACK = 1e-12


@dataclass(frozen=True)
class BernsteinParams:
    D: float
    s: float

    def __post_init__(self):
        if self.D < 0 or self.s < 0:
            raise OdLabError("Bernstein parameters D and s must be non-negative")

    def admissible(self, lam: float) -> bool:
        return abs(lam) * self.D < 3.0


class Direction(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class DriftQuery:
    R: float
    h: float
    T: float
    D: float
    s: float

    def slack(self, direction: Direction) -> float:
        if Direction(direction) is Direction.POSITIVE:
            return self.h - self.R * self.T
        return -self.R * self.T - self.h


def log_bernstein_bound(params: BernsteinParams, lam: float) -> float:
    if not params.admissible(lam):
        raise InadmissibleLambda(f"|lambda| * D = {abs(lam) * params.D} >= 3")
    return (lam * lam * params.s / 2.0) / (1.0 - abs(lam) * params.D / 3.0)


def bernstein_bound(params: BernsteinParams, lam: float) -> float:
    """Right-hand side of the Bernstein MGF condition at ``lam``.

    Returns ``inf`` once the value leaves the float range near ``|lam| D = 3``.
    """
    return _safe_exp(log_bernstein_bound(params, lam))


def _freedman_exponent(h: float, T: float, s: float, D: float) -> float:
    denom = T * s + h * D / 3.0
    if denom == 0.0:
        return -math.inf
    return -(h * h / 2.0) / denom


def freedman_tail(h: float, T: float, params: BernsteinParams) -> float:
    """Bound on P[exists t <= T: X_t - X_0 >= h] for a Bernstein supermartingale."""
    if not (h > 0 and T > 0):
        raise OdLabError("freedman_tail needs h > 0 and T > 0")
    return math.exp(_freedman_exponent(h, T, params.s, params.D))


def drift_tail(query: DriftQuery, direction=Direction.POSITIVE) -> float:
    """Additive drift tail.

    ``POSITIVE`` bounds P[tau_plus <= min(T, tau)] with slack ``z = h - R T``;
    ``NEGATIVE`` (requires ``R < 0``) bounds P[min(tau_minus, tau) > T] with
    ``z = -R T - h``.
    """
    direction = Direction(direction)
    if not (query.h > 0 and query.T > 0):
        raise OdLabError("drift_tail needs h > 0 and T > 0")
    if direction is Direction.POSITIVE and query.R < 0:
        raise InvalidSlack("the positive-drift tail needs R >= 0")
    if direction is Direction.NEGATIVE and query.R >= 0:
        raise InvalidSlack("the negative-drift tail needs R < 0")
    z = query.slack(direction)
    if not z > 0:
        raise InvalidSlack(f"slack z = {z} is not positive")
    return math.exp(_freedman_exponent(z, query.T, query.s, query.D))


@dataclass
class BernsteinReport:
    violations: List[Tuple[float, float, float]] = field(default_factory=list)
    max_excess: float = -math.inf
    max_log_ratio: float = -math.inf

    @property
    def ok(self) -> bool:
        return not self.violations


def check_bernstein(
    mgf: Callable[[float], float],
    params: BernsteinParams,
    grid: Iterable[float],
    *,
    log_scale: bool = False,
) -> BernsteinReport:
    """Compare ``mgf`` with the Bernstein bound on every grid point.

    A point is a violation when ``mgf(lam)`` exceeds the bound by more than
    ``CHECK_SLACK``. With ``log_scale=True`` the callable returns the log-MGF
    and the comparison never leaves log space, which keeps grids reaching
    close to ``|lam| D = 3`` free of overflow.
    """
    report = BernsteinReport()
    for lam in grid:
        log_bound = log_bernstein_bound(params, lam)
        log_value = mgf(lam) if log_scale else _safe_log(mgf(lam))
        gap = log_value - log_bound
        excess = _excess(log_bound, gap)
        report.max_log_ratio = max(report.max_log_ratio, gap)
        report.max_excess = max(report.max_excess, excess)
        if excess > CHECK_SLACK:
            report.violations.append((float(lam), _safe_exp(log_value), _safe_exp(log_bound)))
    return report


def _excess(log_bound: float, gap: float) -> float:
    """``mgf - bound`` from ``log(bound)`` and ``log(mgf / bound)``, saturating to +-inf."""
    if gap == 0.0:
        return 0.0
    if gap == math.inf:
        return math.inf
    if gap > 0:
        # log(e^gap - 1) without overflowing expm1
        log_mag = gap + math.log1p(-math.exp(-gap)) if gap > 30 else math.log(math.expm1(gap))
        return _safe_exp(log_bound + log_mag)
    return -_safe_exp(log_bound + math.log(-math.expm1(gap)))


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709 else math.inf


def admissible_grid(params: BernsteinParams, points: int = 101, fraction: float = 0.9) -> List[float]:
    """Evenly spaced ``lam`` values spanning ``+-fraction * 3 / D``."""
    if params.D == 0:
        raise OdLabError("grid span is unbounded when D = 0")
    top = fraction * 3.0 / params.D
    if points == 1:
        return [0.0]
    return [-top + 2 * top * i / (points - 1) for i in range(points)]
