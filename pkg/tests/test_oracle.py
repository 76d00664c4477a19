import math

import mpmath
import numpy as np
import pytest

from odlab.bounds import BernsteinParams, bernstein_bound
from odlab.dynamics import Configuration
from odlab.errors import BudgetExceeded, ShapeMismatch
from odlab.oracle import (
    CountDistribution,
    closed_form_alpha_moments,
    enumerate_step_pmf,
    exact_mgf_alpha_3maj,
    exact_moments,
    fast_target_pmf,
    tv_distance,
)


def mp_binomial_mgf(n, f, lam):
    """MGF of Binomial(n, f)/n - f by summing the PMF at 50 digits."""
    mpmath.mp.dps = 50
    f = mpmath.mpf(f)
    total = mpmath.mpf(0)
    for c in range(n + 1):
        total += mpmath.binomial(n, c) * f**c * (1 - f) ** (n - c) * mpmath.e ** (lam * (mpmath.mpf(c) / n - f))
    return total


@pytest.mark.parametrize("protocol", ["3maj", "2choices"])
def test_point_mass_at_consensus(protocol):
    assert enumerate_step_pmf(Configuration([4, 0]), protocol).probs == {(4, 0): 1.0}


def test_two_vertex_laws():
    maj = enumerate_step_pmf(Configuration([1, 1]), "3maj").probs
    assert maj == pytest.approx({(2, 0): 0.25, (1, 1): 0.5, (0, 2): 0.25}, abs=1e-15)
    two = enumerate_step_pmf(Configuration([1, 1]), "2choices").probs
    assert two == pytest.approx({(2, 0): 3 / 16, (1, 1): 10 / 16, (0, 2): 3 / 16}, abs=1e-15)


@pytest.mark.parametrize("protocol", ["3maj", "2choices"])
@pytest.mark.parametrize("counts", [(3, 1, 1), (2, 2, 1, 1), (0, 4, 3), (5, 2), (1, 1, 1, 1)])
def test_enumeration_matches_fast_target(protocol, counts):
    config = Configuration(counts)
    p = enumerate_step_pmf(config, protocol)
    q = fast_target_pmf(config, protocol)
    assert abs(p.total() - 1) <= 1e-12
    assert tv_distance(p, q) <= 1e-12
    for vec in p.probs:
        assert sum(vec) == config.n
        assert all(c == 0 for c, o in zip(vec, counts) if o == 0)


def test_tv_distance_edges():
    p = CountDistribution(2, 2, {(2, 0): 1.0})
    q = CountDistribution(2, 2, {(0, 2): 1.0})
    assert tv_distance(p, p) == 0.0
    assert tv_distance(p, q) == 1.0
    with pytest.raises(ShapeMismatch):
        tv_distance(p, CountDistribution(3, 2, {(3, 0): 1.0}))


def test_budget_is_enforced():
    with pytest.raises(BudgetExceeded):
        enumerate_step_pmf(Configuration([7, 6]), "3maj")
    with pytest.raises(BudgetExceeded):
        enumerate_step_pmf(Configuration([1, 1, 1, 1, 1]), "3maj")


def test_moments_at_consensus():
    m = exact_moments(Configuration([4, 0]), "3maj")
    assert m.E_alpha.tolist() == [1.0, 0.0]
    assert m.Var_alpha.tolist() == [0.0, 0.0]
    assert m.E_gamma == 1.0


def test_moments_equality_case():
    m = exact_moments(Configuration([2, 2]), "3maj")
    assert m.E_alpha == pytest.approx([0.5, 0.5], abs=1e-15)
    # sum_c P(c) ((c/4)^2 + ((4-c)/4)^2) with c ~ Binomial(4, 1/2)
    expected = sum(math.comb(4, c) / 16 * ((c / 4) ** 2 + ((4 - c) / 4) ** 2) for c in range(5))
    assert expected == 0.625
    assert m.E_gamma == pytest.approx(0.625, abs=1e-15)
    assert m.E_gamma >= 0.5 + 0.5 / 4 - 1e-15


def test_moments_worked_example():
    m = exact_moments(Configuration([5, 3, 2]), "3maj")
    assert m.E_alpha == pytest.approx([0.56, 0.276, 0.164], abs=1e-12)
    assert m.E_delta[0, 1] == pytest.approx(0.56 - 0.276, abs=1e-12)


@pytest.mark.parametrize("protocol", ["3maj", "2choices"])
def test_closed_form_moments_agree_with_enumeration(protocol):
    for counts in [(5, 3, 2), (1, 4, 0, 3), (6, 6)]:
        config = Configuration(counts)
        m = exact_moments(config, protocol)
        mean, var = closed_form_alpha_moments(config, protocol)
        np.testing.assert_allclose(mean, m.E_alpha, atol=1e-12)
        np.testing.assert_allclose(var, m.Var_alpha, atol=1e-12)


def test_mgf_trivial_cases():
    assert exact_mgf_alpha_3maj(Configuration([3, 7]), 0, 0.0) == 1.0
    for lam in (-40.0, 5.0, 100.0):
        assert exact_mgf_alpha_3maj(Configuration([10, 0]), 0, lam) == 1.0
        assert exact_mgf_alpha_3maj(Configuration([10, 0]), 1, lam) == 1.0


@pytest.mark.parametrize("lam", [-120.0, -30.0, -1.0, 0.5, 30.0, 140.0])
def test_mgf_matches_binomial_sum(lam):
    config = Configuration([15, 35])
    f = 0.3 * (1 + 0.3 - (0.09 + 0.49))
    expected = mp_binomial_mgf(50, f, lam)
    assert exact_mgf_alpha_3maj(config, 0, lam) == pytest.approx(float(expected), rel=1e-12)


def test_mgf_below_bernstein_bound():
    config = Configuration([15, 35])
    bound = bernstein_bound(BernsteinParams(D=1 / 50, s=0.3 / 50), 30.0)
    assert exact_mgf_alpha_3maj(config, 0, 30.0) < bound


def test_mgf_overflow_is_reported():
    with pytest.raises(OverflowError):
        exact_mgf_alpha_3maj(Configuration([1, 1]), 0, 1e6)
