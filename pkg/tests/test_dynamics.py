import itertools
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import chi_square_pvalue, configurations
from odlab.dynamics import (
    Configuration,
    ProtocolKind,
    kernel_2choices,
    kernel_3majority,
    run,
    step_async,
    step_fast,
    step_naive,
)
from odlab.errors import ConsensusTimeout, InvalidConfiguration
from odlab.oracle import enumerate_step_pmf
from odlab.streams import make_stream

SYNC = [ProtocolKind.SYNC_3MAJORITY, ProtocolKind.SYNC_2CHOICES]


def brute_force_3maj(alpha):
    """Destination law by enumerating ordered opinion triples, in exact arithmetic."""
    k = len(alpha)
    out = [Fraction(0)] * k
    for o1, o2, o3 in itertools.product(range(k), repeat=3):
        out[o1 if o1 == o2 else o3] += alpha[o1] * alpha[o2] * alpha[o3]
    return out


# -- configuration ------------------------------------------------------------


def test_configuration_validates():
    with pytest.raises(InvalidConfiguration):
        Configuration([])
    with pytest.raises(InvalidConfiguration):
        Configuration([0, 0])
    with pytest.raises(InvalidConfiguration):
        Configuration([3, -1])


def test_configuration_is_immutable():
    c = Configuration([2, 3])
    with pytest.raises(ValueError):
        c.counts[0] = 5


def test_initializers():
    assert Configuration.balanced(10, 3).counts.tolist() == [4, 3, 3]
    assert Configuration.singleton(4).counts.tolist() == [1, 1, 1, 1]
    assert Configuration.from_fractions(10_000, [0.45, 0.45, 0.10]).counts.tolist() == [4500, 4500, 1000]


@pytest.mark.parametrize("n,k,eps", [(10_000, 10, 0.05), (10_000, 10, 0.1214), (101, 7, 0.02), (50, 2, 0.3)])
def test_planted_bias_meets_requested_gap(n, k, eps):
    c = Configuration.planted_bias(n, k, eps)
    assert c.n == n and c.k == k
    assert all(c.counts[0] - c.counts[j] >= eps * n - 1e-9 for j in range(1, k))


def test_planted_bias_with_alpha_dependent_requirement():
    req = lambda a1: 0.12 * a1**0.5
    c = Configuration.planted_bias(10_000, 10, req)
    a1 = c.alpha[0]
    assert all(c.alpha[0] - c.alpha[j] >= req(a1) - 1e-12 for j in range(1, 10))


# -- kernels --------------------------------------------------------------------


def test_kernel_3majority_examples():
    assert kernel_3majority(Configuration([7, 0])).f.tolist() == [1.0, 0.0]
    np.testing.assert_allclose(kernel_3majority(Configuration([4, 4])).f, [0.5, 0.5], atol=1e-15)
    alpha = [Fraction(5, 10), Fraction(3, 10), Fraction(2, 10)]
    expected = brute_force_3maj(alpha)
    assert expected == [Fraction(14, 25), Fraction(69, 250), Fraction(41, 250)]
    np.testing.assert_allclose(kernel_3majority(Configuration([5, 3, 2])).f, [float(x) for x in expected], atol=1e-15)


def test_kernel_2choices_examples():
    k = kernel_2choices(Configuration([3, 0]))
    assert k.p_stay[0] == 1.0
    k = kernel_2choices(Configuration([1, 1]))
    np.testing.assert_allclose(k.p_stay, [0.75, 0.75])
    assert k.w[0, 1] == k.w[1, 0] == 0.25
    # expected next fraction is 1/2 by symmetry
    assert 0.5 * k.p_stay[0] + 0.5 * k.w[1, 0] == 0.5
    k = kernel_2choices(Configuration([5, 3, 2]))
    np.testing.assert_allclose(k.p_stay, [0.87, 0.71, 0.66], atol=1e-15)
    np.testing.assert_allclose([k.w[1, 0], k.w[1, 2]], [0.25, 0.04], atol=1e-15)
    np.testing.assert_allclose(k.p_stay + k.w.sum(axis=1), 1.0, atol=1e-12)


def test_kernel_stochasticity_randomized():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        k = int(rng.integers(1, 12))
        counts = rng.integers(0, 1000, size=k)
        if counts.sum() == 0:
            counts[0] = 1
        c = Configuration(counts)
        f = kernel_3majority(c).f
        assert (f >= 0).all() and abs(f.sum() - 1) <= 1e-12
        k2 = kernel_2choices(c)
        rows = k2.p_stay + k2.w.sum(axis=1)
        assert np.abs(rows - 1).max() <= 1e-12
        assert ((k2.w >= 0) & (k2.w <= 1)).all() and ((k2.p_stay >= 0) & (k2.p_stay <= 1)).all()


# -- step invariants ----------------------------------------------------------


@settings(max_examples=150, deadline=None)
@given(config=configurations(), seed=st.integers(0, 2**32 - 1))
def test_steppers_conserve_and_keep_support(config, seed):
    rng = np.random.default_rng(seed)
    outs = [step_naive(config, p, rng) for p in SYNC]
    outs += [step_fast(config, p, rng) for p in SYNC]
    outs.append(step_async(config, rng))
    for out in outs:
        assert out.n == config.n and out.k == config.k
        assert ((config.counts > 0) | (out.counts == 0)).all()
    assert np.abs(outs[-1].counts - config.counts).sum() <= 2


@pytest.mark.parametrize("stepper", [step_naive, step_fast])
@pytest.mark.parametrize("protocol", SYNC)
def test_consensus_is_absorbing(stepper, protocol, rng):
    c = Configuration([0, 9, 0])
    for _ in range(20):
        assert stepper(c, protocol, rng) == c
    assert step_async(c, rng) == c
    single = Configuration([1])
    assert stepper(single, protocol, rng) == single


@pytest.mark.parametrize("protocol", SYNC)
def test_fast_stepper_is_deterministic(protocol):
    c = Configuration([40, 30, 20, 10])
    a = [step_fast(c, protocol, make_stream(9, 1, tag="x")) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def _sample(stepper, config, protocol, draws, seed):
    rng = np.random.default_rng(seed)
    return Counter(tuple(stepper(config, protocol, rng).counts.tolist()) for _ in range(draws))


def test_naive_3maj_matches_enumerated_pmf():
    config = Configuration([3, 1, 1])
    exact = enumerate_step_pmf(config, "3maj").probs
    draws = 1_000_000
    assert chi_square_pvalue(_sample(step_naive, config, "3maj", draws, 1), exact, draws) > 1e-3


@pytest.mark.parametrize(
    "stepper,protocol",
    [(step_naive, "2choices"), (step_fast, "3maj"), (step_fast, "2choices")],
)
def test_sampled_step_matches_enumerated_pmf(stepper, protocol):
    config = Configuration([3, 1, 1])
    exact = enumerate_step_pmf(config, protocol).probs
    draws = 200_000
    assert chi_square_pvalue(_sample(stepper, config, protocol, draws, 2), exact, draws) > 1e-3


def test_fast_2choices_matches_pmf_with_zero_count_opinion():
    config = Configuration([2, 0, 3, 1])
    exact = enumerate_step_pmf(config, "2choices").probs
    draws = 100_000
    assert chi_square_pvalue(_sample(step_fast, config, "2choices", draws, 4), exact, draws) > 1e-3


def test_step_async_two_vertices():
    c = Configuration([1, 1])
    rng = np.random.default_rng(5)
    outs = Counter(tuple(step_async(c, rng).counts.tolist()) for _ in range(100_000))
    # the updating vertex adopts either opinion w.p. 1/2, whichever vertex it is
    exact = {(2, 0): 0.25, (1, 1): 0.5, (0, 2): 0.25}
    assert chi_square_pvalue(outs, exact, 100_000) > 1e-3


def test_step_async_matches_kernel():
    c = Configuration([5, 3, 2])
    f = kernel_3majority(c).f
    alpha = c.alpha
    exact = {}
    for j in range(3):
        for i in range(3):
            vec = list(c.counts)
            vec[j] -= 1
            vec[i] += 1
            exact[tuple(vec)] = exact.get(tuple(vec), 0.0) + alpha[j] * f[i]
    rng = np.random.default_rng(6)
    outs = Counter(tuple(step_async(c, rng).counts.tolist()) for _ in range(100_000))
    assert chi_square_pvalue(outs, exact, 100_000) > 1e-3


def test_steppers_reject_async_protocol(rng):
    with pytest.raises(ValueError):
        step_fast(Configuration([1, 1]), "async3maj", rng)
    with pytest.raises(ValueError):
        step_naive(Configuration([1, 1]), "async3maj", rng)


def test_protocol_parse():
    assert ProtocolKind.parse("3-Majority") is ProtocolKind.SYNC_3MAJORITY
    assert ProtocolKind.parse("2choices") is ProtocolKind.SYNC_2CHOICES
    assert ProtocolKind.parse("async3maj") is ProtocolKind.ASYNC_3MAJORITY
    with pytest.raises(InvalidConfiguration):
        ProtocolKind.parse("voter")


# -- run ------------------------------------------------------------------------


def test_run_monochromatic_is_immediate(rng):
    r = run("3maj", Configuration([0, 5]), 10, rng)
    assert (r.consensus_time, r.winner, r.rounds_executed) == (0, 1, 0)


def test_run_zero_budget_times_out(rng):
    r = run("3maj", Configuration([2, 3]), 0, rng)
    assert r.timed_out and r.consensus_time is None and r.final_config == Configuration([2, 3])
    with pytest.raises(ConsensusTimeout) as info:
        run("3maj", Configuration([2, 3]), 0, rng, raise_on_timeout=True)
    assert info.value.result.rounds_executed == 0


@pytest.mark.parametrize("protocol", ["3maj", "2choices", "async3maj"])
def test_run_result_invariants(protocol):
    init = Configuration([30, 20, 0, 10])
    r = run(protocol, init, 100_000, make_stream(1, tag=protocol))
    assert r.winner is not None and r.final_config.counts[r.winner] == init.n
    assert init.counts[r.winner] > 0
    assert r.consensus_time == r.rounds_executed


def test_run_observer_sees_every_round_and_can_stop():
    seen = []

    def observer(t, config):
        seen.append((t, config.n, config.k))
        return t == 3

    r = run("3maj", Configuration.balanced(1000, 10), 100, make_stream(2), observer)
    assert r.stopped and not r.timed_out and r.rounds_executed == 3
    assert seen == [(1, 1000, 10), (2, 1000, 10), (3, 1000, 10)]


@pytest.mark.parametrize("protocol", ["3maj", "2choices", "async3maj"])
def test_run_is_reproducible(protocol):
    trace = lambda: [
        c.counts.tolist()
        for c in _collect(protocol, Configuration.balanced(300, 6), make_stream(77, 3, tag="r"))
    ]
    assert trace() == trace()


def _collect(protocol, init, rng):
    configs = []
    run(protocol, init, 5000, rng, lambda t, c: configs.append(c))
    return configs


def test_naive_and_fast_runs_agree_in_mean():
    # two-vertex chain: consensus each round w.p. 1/2, so E[tau] = 2
    for stepper in ("fast", "naive"):
        times = [
            run("3maj", Configuration([1, 1]), 1000, make_stream(3, i, tag=stepper), stepper=stepper).consensus_time
            for i in range(4000)
        ]
        se = np.std(times) / np.sqrt(len(times))
        assert abs(np.mean(times) - 2.0) < 4 * se
