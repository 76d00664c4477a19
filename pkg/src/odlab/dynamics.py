"""Configurations and one-round steppers for majority-type consensus dynamics.

Three protocols live on the complete graph with self-loops:

* synchronous 3-Majority: every vertex samples ``w1, w2, w3`` uniformly with
  replacement and adopts ``opn(w1)`` if ``opn(w1) == opn(w2)``, else ``opn(w3)``;
* synchronous 2-Choices: every vertex samples ``w1, w2`` and adopts their common
  opinion if they agree, otherwise keeps its own;
* asynchronous 3-Majority: a single uniformly random vertex applies the
  3-Majority rule per round.

A configuration is summarized by its per-opinion counts. Two steppers are
provided for the synchronous protocols: :func:`step_naive` simulates each vertex
(O(n) per round) and :func:`step_fast` draws the next count vector directly from
its exact law (O(k) for 3-Majority, O(k^2) worst case for 2-Choices).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConsensusTimeout, DegenerateSwitchMass, InvalidConfiguration

SWITCH_MASS_TOL = 1e-12


class ProtocolKind(enum.Enum):
    SYNC_3MAJORITY = "3maj"
    SYNC_2CHOICES = "2choices"
    ASYNC_3MAJORITY = "async3maj"

    @property
    def synchronous(self) -> bool:
        return self is not ProtocolKind.ASYNC_3MAJORITY

    @classmethod
    def parse(cls, value: Union[str, "ProtocolKind"]) -> "ProtocolKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "3maj": cls.SYNC_3MAJORITY,
            "3majority": cls.SYNC_3MAJORITY,
            "sync3maj": cls.SYNC_3MAJORITY,
            "sync3majority": cls.SYNC_3MAJORITY,
            "2choices": cls.SYNC_2CHOICES,
            "2ch": cls.SYNC_2CHOICES,
            "sync2choices": cls.SYNC_2CHOICES,
            "async3maj": cls.ASYNC_3MAJORITY,
            "async3majority": cls.ASYNC_3MAJORITY,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InvalidConfiguration(f"unknown protocol {value!r}") from None


class Configuration:
    """Per-opinion vertex counts at one round.

    Instances are immutable; ``counts`` is a read-only int64 array. Opinions
    with zero count keep their index so identities are stable across a run.
    """

    __slots__ = ("_counts", "_n")

    def __init__(self, counts):
        arr = np.array(counts, dtype=np.int64).reshape(-1)
        if arr.size < 1:
            raise InvalidConfiguration("need at least one opinion (k >= 1)")
        if (arr < 0).any():
            raise InvalidConfiguration("counts must be non-negative")
        n = int(arr.sum())
        if n < 1:
            raise InvalidConfiguration("need at least one vertex (n >= 1)")
        arr.setflags(write=False)
        self._counts = arr
        self._n = n

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    @property
    def n(self) -> int:
        return self._n

    @property
    def k(self) -> int:
        return int(self._counts.size)

    @property
    def alpha(self) -> np.ndarray:
        return self._counts / self._n

    @property
    def gamma(self) -> float:
        c = self._counts.astype(np.float64)
        return float(np.dot(c, c)) / (self._n * self._n)

    @property
    def is_consensus(self) -> bool:
        return int(self._counts.max()) == self._n

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return np.array_equal(self._counts, other._counts)

    def __hash__(self):
        return hash(tuple(self._counts.tolist()))

    def __repr__(self):
        return f"Configuration({self._counts.tolist()})"

    # -- initializers -------------------------------------------------------

    @classmethod
    def balanced(cls, n: int, k: int) -> "Configuration":
        """``k`` opinions as equal as possible; the first ``n % k`` get one extra."""
        if not 1 <= k <= n:
            raise InvalidConfiguration(f"balanced init needs 1 <= k <= n, got n={n}, k={k}")
        counts = np.full(k, n // k, dtype=np.int64)
        counts[: n % k] += 1
        return cls(counts)

    @classmethod
    def singleton(cls, n: int) -> "Configuration":
        """Every vertex holds its own opinion (k = n)."""
        return cls(np.ones(n, dtype=np.int64))

    @classmethod
    def from_fractions(cls, n: int, fractions) -> "Configuration":
        """Round ``n * fractions`` down and hand the leftover to the largest remainders."""
        frac = np.asarray(fractions, dtype=np.float64)
        if (frac < 0).any() or not math.isclose(frac.sum(), 1.0, abs_tol=1e-9):
            raise InvalidConfiguration("fractions must be non-negative and sum to 1")
        raw = frac * n
        counts = np.floor(raw + 1e-9).astype(np.int64)
        short = n - int(counts.sum())
        if short > 0:
            order = np.argsort(-(raw - counts), kind="stable")
            counts[order[:short]] += 1
        elif short < 0:
            order = np.argsort(raw - counts, kind="stable")
            for idx in order:
                if short == 0:
                    break
                if counts[idx] > 0:
                    counts[idx] -= 1
                    short += 1
        return cls(counts)

    @classmethod
    def planted_bias(
        cls, n: int, k: int, epsilon: Union[float, Callable[[float], float]]
    ) -> "Configuration":
        """Opinion 0 leads every other opinion by at least ``epsilon`` in fraction.

        Opinion 0 receives ``ceil(n * (1 + (k-1) * eps) / k)`` vertices and the rest
        are split evenly over the other opinions. ``epsilon`` may be a function of
        opinion 0's fraction (for bias requirements that scale with it); it is
        re-evaluated on the rounded configuration and vertices are moved to
        opinion 0 until the requirement holds.
        """
        if not 1 <= k <= n:
            raise InvalidConfiguration(f"planted bias needs 1 <= k <= n, got n={n}, k={k}")
        if k == 1:
            return cls([n])
        required = epsilon if callable(epsilon) else (lambda _a, e=float(epsilon): e)

        a1 = 1.0 / k
        for _ in range(100):
            nxt = (1.0 + (k - 1) * required(a1)) / k
            if abs(nxt - a1) < 1e-15:
                break
            a1 = nxt
        c1 = min(n, math.ceil(n * a1 - 1e-9))
        rest = n - c1
        others = np.full(k - 1, rest // (k - 1), dtype=np.int64)
        others[: rest % (k - 1)] += 1
        while others.max() > 0 and c1 - others.max() < required(c1 / n) * n - 1e-9:
            j = int(np.argmax(others))
            others[j] -= 1
            c1 += 1
        if c1 - others.max() < required(c1 / n) * n - 1e-9:
            raise InvalidConfiguration("requested bias is not attainable")
        return cls(np.concatenate([[c1], others]))


@dataclass(frozen=True)
class StepKernel:
    """Exact one-round transition law of a single vertex.

    3-Majority: ``f`` is the destination distribution, identical for all vertices.
    2-Choices: a vertex of opinion ``j`` stays with probability ``p_stay[j]`` and
    moves to ``i != j`` with probability ``w[j, i]`` (zero diagonal).
    """

    protocol: ProtocolKind
    f: Optional[np.ndarray] = None
    p_stay: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None


@dataclass(frozen=True)
class RunResult:
    consensus_time: Optional[int]
    winner: Optional[int]
    rounds_executed: int
    final_config: Configuration
    stopped: bool = False

    @property
    def timed_out(self) -> bool:
        return self.consensus_time is None and not self.stopped


def _gamma_of(counts: np.ndarray, n: int) -> float:
    c = counts.astype(np.float64)
    return float(np.dot(c, c)) / (n * n)


def kernel_3majority(config: Configuration) -> StepKernel:
    alpha = config.alpha
    gamma = config.gamma
    f = alpha * (1.0 + alpha - gamma)
    return StepKernel(ProtocolKind.SYNC_3MAJORITY, f=f)


def kernel_2choices(config: Configuration) -> StepKernel:
    alpha = config.alpha
    sq = alpha * alpha
    gamma = config.gamma
    p_stay = 1.0 - gamma + sq
    w = np.tile(sq, (config.k, 1))
    np.fill_diagonal(w, 0.0)
    return StepKernel(ProtocolKind.SYNC_2CHOICES, p_stay=p_stay, w=w)


def kernel(config: Configuration, protocol: ProtocolKind) -> StepKernel:
    if ProtocolKind.parse(protocol) is ProtocolKind.SYNC_2CHOICES:
        return kernel_2choices(config)
    return kernel_3majority(config)


# -- raw steppers on count arrays -------------------------------------------
#
# These take and return plain int64 arrays so the run loop can avoid building
# a Configuration per round. All assume counts sum to n.


def _naive_counts(counts: np.ndarray, n: int, protocol: ProtocolKind, rng) -> np.ndarray:
    k = counts.size
    opinions = np.repeat(np.arange(k), counts)
    if protocol is ProtocolKind.SYNC_3MAJORITY:
        w = opinions[rng.integers(0, n, size=(3, n))]
        new = np.where(w[0] == w[1], w[0], w[2])
    elif protocol is ProtocolKind.SYNC_2CHOICES:
        w = opinions[rng.integers(0, n, size=(2, n))]
        new = np.where(w[0] == w[1], w[0], opinions)
    else:
        raise ValueError("step_naive needs a synchronous protocol")
    return np.bincount(new, minlength=k).astype(np.int64)


def _fast_3maj_counts(counts: np.ndarray, n: int, rng) -> np.ndarray:
    nz = np.flatnonzero(counts)
    if nz.size <= 1:
        return counts.copy()
    a = counts[nz] / n
    f = a * (1.0 + a - _gamma_of(counts[nz], n))
    f /= f.sum()
    out = np.zeros_like(counts)
    # every compacted cell has f > 0, so the remainder cell never absorbs rounding error
    out[nz] = rng.multinomial(n, f)
    return out


def _fast_2choices_counts(counts: np.ndarray, n: int, rng) -> np.ndarray:
    nz = np.flatnonzero(counts)
    m = nz.size
    if m <= 1:
        return counts.copy()
    c = counts[nz]
    a = c / n
    sq = a * a
    switch = sq.sum() - sq
    if (switch < -SWITCH_MASS_TOL).any():
        raise DegenerateSwitchMass("negative switch probability beyond tolerance")
    switch = np.clip(switch, 0.0, 1.0)
    movers = rng.binomial(c, switch)
    new = c - movers

    rows = np.flatnonzero(movers)
    if rows.size:
        # row j lists destinations j+1, ..., j+m-1 (mod m): diagonal excluded,
        # and the last cell always carries positive mass
        dest = (rows[:, None] + 1 + np.arange(m - 1)[None, :]) % m
        weights = sq[dest]
        weights /= weights.sum(axis=1, keepdims=True)
        moved = rng.multinomial(movers[rows], weights)
        new = new + np.bincount(dest.ravel(), weights=moved.ravel(), minlength=m).astype(np.int64)

    out = np.zeros_like(counts)
    out[nz] = new
    return out


def _async_counts(counts: np.ndarray, n: int, rng) -> np.ndarray:
    out = counts.copy()
    _async_inplace(out, n, rng)
    return out


def _async_inplace(counts: np.ndarray, n: int, rng) -> None:
    if int(counts.max()) == n:
        return
    cum = np.cumsum(counts)
    origin = int(np.searchsorted(cum, rng.integers(0, n), side="right"))
    a = counts / n
    f = a * (1.0 + a - _gamma_of(counts, n))
    cf = np.cumsum(f)
    dest = int(np.searchsorted(cf, rng.random() * cf[-1], side="right"))
    dest = min(dest, counts.size - 1)
    while counts[dest] == 0:  # only reachable through float ties at the cumsum edge
        dest -= 1
    counts[origin] -= 1
    counts[dest] += 1


def _fast_counts(counts, n, protocol, rng):
    if protocol is ProtocolKind.SYNC_3MAJORITY:
        return _fast_3maj_counts(counts, n, rng)
    if protocol is ProtocolKind.SYNC_2CHOICES:
        return _fast_2choices_counts(counts, n, rng)
    raise ValueError("step_fast needs a synchronous protocol")


# -- public steppers ----------------------------------------------------------


def step_naive(config: Configuration, protocol, rng: np.random.Generator) -> Configuration:
    """One synchronous round by simulating all ``n`` vertices independently."""
    protocol = ProtocolKind.parse(protocol)
    return Configuration(_naive_counts(np.asarray(config.counts), config.n, protocol, rng))


def step_fast(config: Configuration, protocol, rng: np.random.Generator) -> Configuration:
    """One synchronous round drawn from the exact count law.

    3-Majority draws ``Multinomial(n, f)``. 2-Choices draws, per origin opinion
    ``j``, a binomial number of switchers with success ``gamma - alpha_j**2`` and
    spreads them over ``i != j`` proportionally to ``alpha_i**2``.
    """
    protocol = ProtocolKind.parse(protocol)
    return Configuration(_fast_counts(np.asarray(config.counts), config.n, protocol, rng))


def step_async(config: Configuration, rng: np.random.Generator) -> Configuration:
    """One activation of asynchronous 3-Majority."""
    return Configuration(_async_counts(np.asarray(config.counts), config.n, rng))


Observer = Callable[[int, Configuration], Optional[bool]]


def run(
    protocol,
    init: Configuration,
    max_rounds: int,
    rng: np.random.Generator,
    observer: Optional[Observer] = None,
    *,
    stepper: str = "fast",
    raise_on_timeout: bool = False,
) -> RunResult:
    """Iterate a protocol until consensus or ``max_rounds``.

    ``observer(t, config)`` is called after every round ``t >= 1``; a truthy
    return value stops the run early (the result then has ``stopped=True``).
    For the asynchronous protocol one round is one activation.

    Returns a :class:`RunResult`; on timeout ``consensus_time`` is ``None``
    unless ``raise_on_timeout`` is set, in which case
    :class:`~odlab.errors.ConsensusTimeout` carries the result.
    """
    protocol = ProtocolKind.parse(protocol)
    if max_rounds < 0:
        raise InvalidConfiguration("max_rounds must be >= 0")
    if stepper not in ("fast", "naive"):
        raise InvalidConfiguration(f"unknown stepper {stepper!r}")
    if stepper == "naive" and not protocol.synchronous:
        raise InvalidConfiguration("the naive stepper is synchronous only")

    n, k = init.n, init.k
    if init.is_consensus:
        return RunResult(0, int(np.argmax(init.counts)), 0, init)

    # zero-count opinions never come back, so the loop works on the occupied ones
    labels = np.flatnonzero(init.counts)
    c = np.array(init.counts[labels], dtype=np.int64)

    def expand(compact):
        full = np.zeros(k, dtype=np.int64)
        full[labels] = compact
        return full

    t = 0
    stopped = False
    while t < max_rounds:
        t += 1
        if protocol is ProtocolKind.ASYNC_3MAJORITY:
            _async_inplace(c, n, rng)
        elif stepper == "naive":
            c = _naive_counts(c, n, protocol, rng)
        else:
            c = _fast_counts(c, n, protocol, rng)
        if observer is not None and observer(t, Configuration(expand(c))):
            stopped = True
        if int(c.max()) == n:
            winner = int(labels[np.argmax(c)])
            return RunResult(t, winner, t, Configuration(expand(c)), stopped)
        if stopped:
            break
        if (c == 0).any():
            keep = c > 0
            labels, c = labels[keep], c[keep]

    result = RunResult(None, None, t, Configuration(expand(c)), stopped)
    if raise_on_timeout and not stopped:
        raise ConsensusTimeout(result)
    return result
