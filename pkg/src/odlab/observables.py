"""Per-round observables and first-hitting times.

The observables are the fractional population ``alpha``, the squared l2-norm
``gamma = sum(alpha**2)``, the bias ``delta = alpha_i - alpha_j`` of a tracked
pair and its scaled form ``eta = delta / sqrt(max(alpha_i, alpha_j))``.

:class:`StoppingLedger` records, for one run, the first round each threshold
event fired. Relative thresholds are measured against the round-0 baseline
captured when the ledger is created; to re-baseline, start a fresh ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .dynamics import Configuration
from .errors import InvalidConfiguration, OutOfOrderRound

UNHIT = -1


@dataclass(frozen=True)
class ThresholdConfig:
    c_weak: float = 0.1
    c_active: float = 0.05
    c_up_alpha: float = 0.1
    c_down_alpha: float = 0.1
    c_up_delta: float = 0.05
    c_down_delta: float = 0.05
    c_up_gamma: float = 1 / 30
    c_down_gamma: float = 1 / 30
    c_up_eta: float = 0.001
    x_delta: float = 1.0
    x_gamma: float = 1.0
    x_eta: float = 1.0

    def __post_init__(self):
        if not 0 <= self.c_weak < 0.5:
            raise InvalidConfiguration("c_weak must lie in [0, 1/2)")
        # the ordering only binds when weak/active classification is meaningful
        if self.c_weak > 0 and not self.c_down_gamma < self.c_active < self.c_weak:
            raise InvalidConfiguration("need c_down_gamma < c_active < c_weak")
        for name in ("x_delta", "x_gamma", "x_eta"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidConfiguration(f"{name} must lie in [0, 1]")

    def replace(self, **changes) -> "ThresholdConfig":
        return ThresholdConfig(**{**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ThresholdConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfiguration(f"unknown threshold fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class Baseline:
    alpha: np.ndarray
    gamma: float
    delta: Optional[float] = None
    eta: Optional[float] = None


@dataclass(frozen=True)
class RoundRecord:
    t: int
    gamma: float
    max_alpha: float
    remaining_opinions: int
    alpha: np.ndarray
    counts: np.ndarray
    weak_flags: np.ndarray
    tracked_bias: Optional[Tuple[int, int, float, float]] = None

    @property
    def delta(self) -> Optional[float]:
        return None if self.tracked_bias is None else self.tracked_bias[2]

    @property
    def eta(self) -> Optional[float]:
        return None if self.tracked_bias is None else self.tracked_bias[3]

    @property
    def weak_count(self) -> int:
        return int(self.weak_flags.sum())


def scaled_bias(alpha_i: float, alpha_j: float) -> float:
    top = max(alpha_i, alpha_j)
    if top <= 0.0:
        return 0.0
    return (alpha_i - alpha_j) / math.sqrt(top)


def summarize(
    config: Configuration,
    thresholds: ThresholdConfig = ThresholdConfig(),
    t: int = 0,
    tracked_pair: Optional[Tuple[int, int]] = None,
) -> RoundRecord:
    alpha = config.alpha
    gamma = config.gamma
    tracked = None
    if tracked_pair is not None:
        i, j = tracked_pair
        if i == j or not (0 <= i < config.k and 0 <= j < config.k):
            raise InvalidConfiguration(f"bad tracked pair {tracked_pair!r} for k={config.k}")
        ai, aj = float(alpha[i]), float(alpha[j])
        tracked = (i, j, ai - aj, scaled_bias(ai, aj))
    return RoundRecord(
        t=t,
        gamma=gamma,
        max_alpha=float(alpha.max()),
        remaining_opinions=int(np.count_nonzero(config.counts)),
        alpha=alpha,
        counts=config.counts,
        weak_flags=alpha <= (1.0 - thresholds.c_weak) * gamma,
        tracked_bias=tracked,
    )


_SCALAR_EVENTS = (
    "tau_up_delta",
    "tau_down_delta",
    "tau_plus_delta",
    "tau_up_gamma",
    "tau_down_gamma",
    "tau_plus_gamma",
    "tau_up_eta",
    "tau_plus_eta",
)
_OPINION_EVENTS = ("tau_up", "tau_down", "tau_weak", "tau_active", "tau_vanish")


@dataclass
class StoppingLedger:
    """First-hit rounds of every tracked stopping time (``UNHIT`` if not yet)."""

    thresholds: ThresholdConfig
    baseline: Baseline
    tracked_pair: Optional[Tuple[int, int]] = None
    last_t: int = -1
    scalars: dict = field(default_factory=dict)
    opinions: dict = field(default_factory=dict)

    @classmethod
    def start(cls, record: RoundRecord, thresholds: ThresholdConfig) -> "StoppingLedger":
        """Create a ledger with ``record`` as the baseline and feed it as round ``record.t``."""
        pair = None if record.tracked_bias is None else record.tracked_bias[:2]
        base = Baseline(
            alpha=np.array(record.alpha),
            gamma=record.gamma,
            delta=record.delta,
            eta=record.eta,
        )
        k = record.alpha.size
        ledger = cls(
            thresholds=thresholds,
            baseline=base,
            tracked_pair=pair,
            scalars={name: UNHIT for name in _SCALAR_EVENTS},
            opinions={name: np.full(k, UNHIT, dtype=np.int64) for name in _OPINION_EVENTS},
        )
        return ledger.update(record)

    def tau(self, name: str, opinion: Optional[int] = None) -> Optional[int]:
        """Hit round of event ``name`` (``None`` if unhit)."""
        value = self.scalars[name] if opinion is None else self.opinions[name][opinion]
        return None if value == UNHIT else int(value)

    def _fire(self, name: str, t: int, cond: bool) -> None:
        if cond and self.scalars[name] == UNHIT:
            self.scalars[name] = t

    def update(self, record: RoundRecord) -> "StoppingLedger":
        t = record.t
        if t <= self.last_t:
            raise OutOfOrderRound(f"round {t} after round {self.last_t}")
        self.last_t = t
        th, base = self.thresholds, self.baseline
        alpha = record.alpha

        events = {
            "tau_up": alpha >= (1.0 + th.c_up_alpha) * base.alpha,
            "tau_down": alpha <= (1.0 - th.c_down_alpha) * base.alpha,
            "tau_weak": record.weak_flags,
            "tau_active": alpha >= (1.0 - th.c_active) * base.gamma,
            "tau_vanish": record.counts == 0,
        }
        for name, mask in events.items():
            hits = self.opinions[name]
            hits[(hits == UNHIT) & mask] = t

        g = record.gamma
        self._fire("tau_up_gamma", t, g >= (1.0 + th.c_up_gamma) * base.gamma)
        self._fire("tau_down_gamma", t, g <= (1.0 - th.c_down_gamma) * base.gamma)
        self._fire("tau_plus_gamma", t, g >= th.x_gamma)
        if record.tracked_bias is not None and base.delta is not None:
            d, e = record.delta, record.eta
            self._fire("tau_up_delta", t, d >= (1.0 + th.c_up_delta) * base.delta)
            self._fire("tau_down_delta", t, d <= (1.0 - th.c_down_delta) * base.delta)
            self._fire("tau_plus_delta", t, abs(d) >= th.x_delta)
            self._fire("tau_up_eta", t, e >= (1.0 + th.c_up_eta) * base.eta)
            self._fire("tau_plus_eta", t, abs(e) >= th.x_eta)
        return self


def update_ledger(
    ledger: StoppingLedger, record: RoundRecord, thresholds: Optional[ThresholdConfig] = None
) -> StoppingLedger:
    if thresholds is not None and thresholds != ledger.thresholds:
        raise InvalidConfiguration("ledger thresholds are fixed at creation")
    return ledger.update(record)
