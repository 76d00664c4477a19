"""Oracle suite: exact-law, moment and Bernstein checks over small instances.

Each check returns a :class:`CheckResult` with the largest deviation seen and
whether it stayed inside tolerance. ``verify`` on the command line runs
:func:`run_suite` and exits non-zero if any check fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, List

from .bounds import BernsteinParams, admissible_grid, check_bernstein
from .dynamics import Configuration, ProtocolKind
from .oracle import (
    closed_form_alpha_moments,
    compositions,
    enumerate_step_pmf,
    exact_log_mgf_alpha_3maj,
    exact_moments,
    fast_target_pmf,
    tv_distance,
)

TOL = 1e-12
SYNC = (ProtocolKind.SYNC_3MAJORITY, ProtocolKind.SYNC_2CHOICES)
BUDGETS = {"small": 6, "full": 8}


@dataclass
class CheckResult:
    name: str
    max_deviation: float
    tolerance: float
    cases: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
            "cases": self.cases,
            "passed": self.passed,
        }


def small_configs(max_n: int, max_k: int = 3) -> Iterator[Configuration]:
    """Every configuration with ``1 <= n <= max_n`` and ``1 <= k <= max_k``."""
    for n in range(1, max_n + 1):
        for k in range(1, max_k + 1):
            for counts in compositions(n, k):
                yield Configuration(counts)


def check_pmf_equivalence(max_n: int = 6) -> CheckResult:
    worst, cases = 0.0, 0
    for config in small_configs(max_n):
        for protocol in SYNC:
            worst = max(worst, tv_distance(enumerate_step_pmf(config, protocol), fast_target_pmf(config, protocol)))
            cases += 1
    return CheckResult("pmf_equivalence_tv", worst, TOL, cases, worst <= TOL)


def check_normalization(max_n: int = 6) -> CheckResult:
    worst, cases = 0.0, 0
    for config in small_configs(max_n):
        for protocol in SYNC:
            worst = max(worst, abs(enumerate_step_pmf(config, protocol).total() - 1.0))
            cases += 1
    return CheckResult("pmf_normalization", worst, TOL, cases, worst <= TOL)


def check_moments(max_n: int = 8) -> List[CheckResult]:
    """Mean formula, variance bounds and norm drift bounds, against enumeration.

    Deviations for the inequality checks are reported as the worst violation
    (negative slack), so ``0`` means every bound held.
    """
    mean_err = var_viol = gamma_viol = closed_err = 0.0
    cases = 0
    for config in small_configs(max_n):
        n = config.n
        a = config.alpha
        g = config.gamma
        for protocol in SYNC:
            m = exact_moments(config, protocol)
            cases += 1
            mean_err = max(mean_err, float(abs(m.E_alpha - a * (1 + a - g)).max()))
            if protocol is ProtocolKind.SYNC_3MAJORITY:
                var_bound = a / n
                gamma_bound = g + (1 - g) / n
            else:
                var_bound = a * (a + g) / n
                gamma_bound = g + (1 - math.sqrt(g)) * (1 - g) * g / n
            var_viol = max(var_viol, float((m.Var_alpha - var_bound).max()))
            gamma_viol = max(gamma_viol, gamma_bound - m.E_gamma)
            cf_mean, cf_var = closed_form_alpha_moments(config, protocol)
            closed_err = max(
                closed_err,
                float(abs(cf_mean - m.E_alpha).max()),
                float(abs(cf_var - m.Var_alpha).max()),
            )
    return [
        CheckResult("expected_alpha_formula", mean_err, TOL, cases, mean_err <= TOL),
        CheckResult("variance_alpha_bound", max(var_viol, 0.0), TOL, cases, var_viol <= TOL),
        CheckResult("expected_gamma_bound", max(gamma_viol, 0.0), TOL, cases, gamma_viol <= TOL),
        CheckResult("closed_form_alpha_moments", closed_err, TOL, cases, closed_err <= TOL),
    ]


def bernstein_config(n: int, alpha_i: float) -> Configuration:
    held = round(n * alpha_i)
    if abs(held - n * alpha_i) > 1e-9:
        raise ValueError(f"n * alpha = {n * alpha_i} is not an integer")
    return Configuration([held, n - held])


def check_bernstein_alpha(ns=(20, 50, 200), alphas=(0.1, 0.3, 0.5), points: int = 101) -> CheckResult:
    worst, cases, ok = -math.inf, 0, True
    for n in ns:
        for a in alphas:
            config = bernstein_config(n, a)
            params = BernsteinParams(D=1.0 / n, s=a / n)
            grid = admissible_grid(params, points)
            report = check_bernstein(
                lambda lam: exact_log_mgf_alpha_3maj(config, 0, lam), params, grid, log_scale=True
            )
            worst = max(worst, report.max_log_ratio)
            ok = ok and report.ok
            cases += len(grid)
    # deviation reported as the largest log(mgf / bound); negative means slack
    return CheckResult("bernstein_alpha_3maj", worst, TOL, cases, ok)


def run_suite(budget: str = "small") -> List[CheckResult]:
    if budget not in BUDGETS:
        raise ValueError(f"budget must be one of {sorted(BUDGETS)}")
    pmf_n = BUDGETS[budget]
    return [
        check_pmf_equivalence(pmf_n),
        check_normalization(pmf_n),
        *check_moments(pmf_n if budget == "small" else 8),
        check_bernstein_alpha(),
    ]
