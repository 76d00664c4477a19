"""Exact one-step laws for small instances.

Two independent routes to the next-round count distribution are kept apart on
purpose:

* :func:`enumerate_step_pmf` derives each vertex's destination law by brute
  force over the opinions of its sampled vertices (``k**3`` or ``k**2`` tuples
  weighted by ``alpha``), then convolves the ``n`` independent vertices one at a
  time. It never looks at the closed-form kernels.
* :func:`fast_target_pmf` is the law that :func:`odlab.dynamics.step_fast`
  samples from: a closed-form multinomial for 3-Majority, and the per-class
  binomial-switch/multinomial-destination composition for 2-Choices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Tuple

import numpy as np

from .dynamics import Configuration, ProtocolKind, kernel_2choices, kernel_3majority
from .errors import BudgetExceeded, ShapeMismatch

MAX_N = 12
MAX_K = 4
MAX_STATES = 100_000
LOG_FLOAT_MAX = math.log(np.finfo(float).max)

CountVector = Tuple[int, ...]


@dataclass
class CountDistribution:
    n: int
    k: int
    probs: Dict[CountVector, float]

    def total(self) -> float:
        return math.fsum(self.probs.values())

    def expect(self, fn) -> float:
        return math.fsum(p * fn(c) for c, p in self.probs.items())

    def __getitem__(self, counts) -> float:
        return self.probs.get(tuple(counts), 0.0)


def n_states(n: int, k: int) -> int:
    return math.comb(n + k - 1, k - 1)


def check_budget(n: int, k: int, *, max_n: int = MAX_N, max_k: int = MAX_K) -> None:
    if n > max_n or k > max_k or n_states(n, k) > MAX_STATES:
        raise BudgetExceeded(f"enumeration budget exceeded for n={n}, k={k}")


def compositions(n: int, k: int) -> Iterator[CountVector]:
    """All length-``k`` non-negative integer vectors summing to ``n``."""
    if k == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in compositions(n - first, k - 1):
            yield (first,) + rest


def vertex_destination_law(config: Configuration, protocol, own: int) -> np.ndarray:
    """Distribution of a vertex's next opinion, by enumerating its samples.

    ``own`` is the vertex's current opinion (only 2-Choices depends on it).
    """
    protocol = ProtocolKind.parse(protocol)
    alpha = config.alpha
    k = config.k
    law = [[] for _ in range(k)]
    if protocol is ProtocolKind.SYNC_2CHOICES:
        for o1, o2 in itertools.product(range(k), repeat=2):
            weight = alpha[o1] * alpha[o2]
            law[o1 if o1 == o2 else own].append(weight)
    else:
        for o1, o2, o3 in itertools.product(range(k), repeat=3):
            weight = alpha[o1] * alpha[o2] * alpha[o3]
            law[o1 if o1 == o2 else o3].append(weight)
    return np.array([math.fsum(ws) for ws in law])


def _add_vertex(dist: Dict[CountVector, list], law: np.ndarray) -> Dict[CountVector, float]:
    out: Dict[CountVector, list] = {}
    for counts, p in dist.items():
        for dest, q in enumerate(law):
            if q == 0.0 or p == 0.0:
                continue
            nxt = counts[:dest] + (counts[dest] + 1,) + counts[dest + 1:]
            out.setdefault(nxt, []).append(p * q)
    return {c: math.fsum(ps) for c, ps in out.items()}


def _convolve(a: Dict[CountVector, float], b: Dict[CountVector, float]) -> Dict[CountVector, float]:
    out: Dict[CountVector, list] = {}
    for ca, pa in a.items():
        for cb, pb in b.items():
            key = tuple(x + y for x, y in zip(ca, cb))
            out.setdefault(key, []).append(pa * pb)
    return {c: math.fsum(ps) for c, ps in out.items()}


def enumerate_step_pmf(config: Configuration, protocol) -> CountDistribution:
    """Exact next-round count law built vertex by vertex from the update rule."""
    protocol = ProtocolKind.parse(protocol)
    if not protocol.synchronous:
        raise ValueError("enumeration covers the synchronous protocols only")
    n, k = config.n, config.k
    check_budget(n, k)
    dist: Dict[CountVector, float] = {(0,) * k: 1.0}
    for own, count in enumerate(config.counts):
        if count == 0:
            continue
        law = vertex_destination_law(config, protocol, own)
        for _ in range(int(count)):
            dist = _add_vertex(dist, law)
    return CountDistribution(n, k, dist)


def _multinomial_pmf(counts: Iterable[int], probs: Iterable[float]) -> float:
    counts = list(counts)
    log_p = math.lgamma(sum(counts) + 1)
    for c, p in zip(counts, probs):
        if c == 0:
            continue
        if p <= 0.0:
            return 0.0
        log_p += c * math.log(p) - math.lgamma(c + 1)
    return math.exp(log_p)


def fast_target_pmf(config: Configuration, protocol) -> CountDistribution:
    """The law :func:`odlab.dynamics.step_fast` samples, in closed form."""
    protocol = ProtocolKind.parse(protocol)
    n, k = config.n, config.k
    check_budget(n, k)
    if protocol is ProtocolKind.SYNC_3MAJORITY:
        f = kernel_3majority(config).f
        probs = {c: _multinomial_pmf(c, f) for c in compositions(n, k)}
        return CountDistribution(n, k, {c: p for c, p in probs.items() if p > 0.0})
    if protocol is not ProtocolKind.SYNC_2CHOICES:
        raise ValueError("fast target law covers the synchronous protocols only")

    kern = kernel_2choices(config)
    dist: Dict[CountVector, float] = {(0,) * k: 1.0}
    for j, holders in enumerate(config.counts):
        holders = int(holders)
        if holders == 0:
            continue
        q = 1.0 - kern.p_stay[j]
        class_law: Dict[CountVector, float] = {}
        for s in range(holders + 1):
            p_s = math.comb(holders, s) * q**s * (1.0 - q) ** (holders - s)
            if p_s == 0.0:
                continue
            dest = kern.w[j] / q if q > 0.0 else np.zeros(k)
            others = [i for i in range(k) if i != j]
            for split in compositions(s, k - 1) if k > 1 else [()]:
                p_split = _multinomial_pmf(split, [dest[i] for i in others]) if s else 1.0
                if p_split == 0.0:
                    continue
                vec = [0] * k
                vec[j] = holders - s
                for i, c in zip(others, split):
                    vec[i] = c
                key = tuple(vec)
                class_law[key] = class_law.get(key, 0.0) + p_s * p_split
        dist = _convolve(dist, class_law)
    return CountDistribution(n, k, dist)


def tv_distance(p: CountDistribution, q: CountDistribution) -> float:
    if (p.n, p.k) != (q.n, q.k):
        raise ShapeMismatch(f"(n, k) differ: {(p.n, p.k)} vs {(q.n, q.k)}")
    support = set(p.probs) | set(q.probs)
    return 0.5 * math.fsum(abs(p[c] - q[c]) for c in support)


@dataclass(frozen=True)
class Moments:
    E_alpha: np.ndarray
    Var_alpha: np.ndarray
    E_gamma: float
    E_delta: np.ndarray  # [i, j] entry is E[alpha'_i - alpha'_j]
    Var_delta: np.ndarray


def exact_moments(config: Configuration, protocol) -> Moments:
    """One-step moments of alpha, gamma and all pairwise biases, by enumeration."""
    pmf = enumerate_step_pmf(config, protocol)
    n, k = pmf.n, pmf.k
    states = np.array(list(pmf.probs.keys()), dtype=np.float64) / n
    weights = np.array(list(pmf.probs.values()))

    def mean(values):
        return np.array([math.fsum(col) for col in (weights[:, None] * values.reshape(len(weights), -1)).T])

    e_alpha = mean(states)
    var_alpha = mean((states - e_alpha) ** 2)
    e_gamma = float(mean((states**2).sum(axis=1))[0])
    deltas = states[:, :, None] - states[:, None, :]
    e_delta = mean(deltas).reshape(k, k)
    var_delta = mean((deltas - e_delta) ** 2).reshape(k, k)
    return Moments(e_alpha, var_alpha, e_gamma, e_delta, var_delta)


def closed_form_alpha_moments(config: Configuration, protocol) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and variance of next-round ``alpha`` for any ``n``.

    Both protocols make ``n * alpha'_i`` a sum of independent Bernoulli
    indicators, so no enumeration is needed.
    """
    protocol = ProtocolKind.parse(protocol)
    n = config.n
    a = config.alpha
    if protocol is ProtocolKind.SYNC_2CHOICES:
        kern = kernel_2choices(config)
        stay = kern.p_stay
        arrive = a * a
        counts = config.counts
        mean = (counts * stay + (n - counts) * arrive) / n
        var = (counts * stay * (1 - stay) + (n - counts) * arrive * (1 - arrive)) / n**2
        return mean, var
    f = kernel_3majority(config).f
    return f, f * (1 - f) / n


def exact_log_mgf_alpha_3maj(config: Configuration, opinion: int, lam: float) -> float:
    """Log of :func:`exact_mgf_alpha_3maj`; finite wherever the inputs are."""
    n = config.n
    f = float(kernel_3majority(config).f[opinion])
    f = min(max(f, 0.0), 1.0)
    if f in (0.0, 1.0) or lam == 0.0:
        return 0.0
    x = lam / n
    # log(1 - f + f e^x) - f x; factor out f e^x when e^x would overflow
    if x > 30:
        inner = math.log(f) + x + math.log1p((1.0 - f) / f * math.exp(-x)) - f * x
    else:
        inner = math.log1p(f * math.expm1(x)) - f * x
    return n * inner


def exact_mgf_alpha_3maj(config: Configuration, opinion: int, lam: float) -> float:
    """MGF at ``lam`` of ``alpha'_i - E[alpha'_i]`` under 3-Majority.

    ``n * alpha'_i`` is ``Binomial(n, f_i)``, so the MGF is
    ``((1 - f + f e^{lam/n}) e^{-lam f / n})^n``. Raises ``OverflowError``
    rather than saturating when the value leaves the float range.
    """
    log_mgf = exact_log_mgf_alpha_3maj(config, opinion, lam)
    if log_mgf > LOG_FLOAT_MAX:
        raise OverflowError(f"MGF overflows at lambda={lam}, n={config.n}")
    return math.exp(log_mgf)
