"""Seeded Monte Carlo sweeps over (n, k) cells.

An :class:`ExperimentSpec` names a protocol, the cells to visit, an initial
configuration family, and what to measure. Every trial draws from its own
stream keyed by ``(seed, n, k, trial, kind)``, so results do not depend on
which other cells are present or on how trials are scheduled across workers.

Constants hidden by asymptotic statements are spec fields:

``horizon_const``
    ``A`` in the round budgets ``A * sqrt(n) * log(n)**2`` (norm growth,
    3-Majority), ``A * n * log(n)**3`` (norm growth, 2-Choices) and
    ``A * log(n) / gamma_0`` (weak vanishing, bias amplification).
``x_gamma_const``
    ``c`` in the norm target ``c * log(n) / sqrt(n)`` (3-Majority) or
    ``c * log(n)**2 / n`` (2-Choices).
``x_delta_const``
    ``c`` in the bias target ``c * sqrt(log(n) / n)`` (also used for eta).
``lower_bound_frac``
    trials count as lower-bound successes when consensus takes at least
    ``lower_bound_frac * k`` rounds (or never happens).

All logarithms are natural.
"""

from __future__ import annotations

import enum
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import io
from .dynamics import Configuration, ProtocolKind, run
from .errors import DegenerateInput, SpecError
from .observables import StoppingLedger, ThresholdConfig, summarize
from .streams import DEFAULT_SEED, STREAM_ALGORITHM, STREAM_VERSION, trial_stream

SPEC_VERSION = 1

TRIAL_COLUMNS = (
    "n",
    "k",
    "trial",
    "protocol",
    "consensus_time",
    "winner",
    "tau_plus_gamma",
    "tau_weak",
    "tau_vanish",
    "tau_plus_delta",
    "tau_plus_eta",
    "first_event",
)
SUMMARY_COLUMNS = ("n", "k", "median", "q10", "q90", "success_rate", "timeouts")


class ExperimentKind(enum.Enum):
    SCALING = "scaling"
    PLURALITY = "plurality"
    LOWER_BOUND = "lowerbound"
    NORM_GROWTH = "normgrowth"
    WEAK_VANISH = "weakvanish"
    BIAS_AMPLIFICATION = "biasamp"


@dataclass(frozen=True)
class InitSpec:
    """Initial configuration family.

    ``kind`` is one of ``balanced``, ``planted_bias``, ``singleton``,
    ``explicit`` (fixed ``counts``) or ``fractions`` (``fractions`` scaled to n).
    A planted bias is either an absolute ``epsilon`` or
    ``bias_const * sqrt(log n / n)``, times ``sqrt(alpha_0)`` of the leading
    opinion when ``alpha_scaled`` is set.
    """

    kind: str = "balanced"
    epsilon: Optional[float] = None
    bias_const: Optional[float] = None
    alpha_scaled: bool = False
    counts: Optional[Tuple[int, ...]] = None
    fractions: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        kinds = ("balanced", "planted_bias", "singleton", "explicit", "fractions")
        if self.kind not in kinds:
            raise SpecError(f"init kind must be one of {kinds}")
        if self.kind == "planted_bias" and (self.epsilon is None) == (self.bias_const is None):
            raise SpecError("planted_bias needs exactly one of epsilon, bias_const")
        if self.kind == "explicit" and not self.counts:
            raise SpecError("explicit init needs counts")
        if self.kind == "fractions" and not self.fractions:
            raise SpecError("fractions init needs fractions")

    def bias(self, n: int):
        if self.epsilon is not None:
            return float(self.epsilon)
        base = self.bias_const * math.sqrt(math.log(n) / n)
        if self.alpha_scaled:
            return lambda a1: base * math.sqrt(a1)
        return base

    def build(self, n: int, k: int) -> Configuration:
        if self.kind == "balanced":
            return Configuration.balanced(n, k)
        if self.kind == "singleton":
            return Configuration.singleton(n)
        if self.kind == "explicit":
            return Configuration(self.counts)
        if self.kind == "fractions":
            return Configuration.from_fractions(n, self.fractions)
        return Configuration.planted_bias(n, k, self.bias(n))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("epsilon", "bias_const", "counts", "fractions"):
            value = getattr(self, name)
            if value is not None:
                out[name] = list(value) if isinstance(value, tuple) else value
        if self.alpha_scaled:
            out["alpha_scaled"] = True
        return out

    @classmethod
    def from_dict(cls, data) -> "InitSpec":
        if isinstance(data, str):
            data = {"kind": data}
        data = dict(data)
        for name in ("counts", "fractions"):
            if data.get(name) is not None:
                data[name] = tuple(data[name])
        try:
            return cls(**data)
        except TypeError as exc:
            raise SpecError(str(exc)) from None


@dataclass(frozen=True)
class ExperimentSpec:
    experiment_kind: ExperimentKind
    protocol: ProtocolKind
    n_values: Tuple[int, ...]
    k_values: Tuple[int, ...] = (2,)
    init: InitSpec = InitSpec()
    trials: int = 10
    max_rounds: int = 1_000_000
    thresholds: ThresholdConfig = ThresholdConfig()
    tracked_pair: Optional[Tuple[int, int]] = None
    target_opinion: Optional[int] = None
    seed: int = DEFAULT_SEED
    stepper: str = "fast"
    horizon_const: Optional[float] = None
    x_gamma_const: Optional[float] = None
    x_delta_const: Optional[float] = None
    lower_bound_frac: float = 0.05

    def __post_init__(self):
        if self.trials < 1:
            raise SpecError("trials must be >= 1")
        if self.max_rounds < 0:
            raise SpecError("max_rounds must be >= 0")
        if not self.n_values:
            raise SpecError("n_values must not be empty")
        if self.stepper not in ("fast", "naive"):
            raise SpecError("stepper must be 'fast' or 'naive'")
        if self.stepper == "naive" and not self.protocol.synchronous:
            raise SpecError("the naive stepper is synchronous only")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must be a 64-bit unsigned integer")
        for n, k in self.cells():
            if not 1 <= k <= n:
                raise SpecError(f"cell (n={n}, k={k}) needs 1 <= k <= n")
            if self.tracked_pair is not None:
                i, j = self.tracked_pair
                if i == j or not (0 <= i < k and 0 <= j < k):
                    raise SpecError(f"tracked pair {self.tracked_pair} invalid for k={k}")
        if self.experiment_kind is ExperimentKind.BIAS_AMPLIFICATION and self.tracked_pair is None:
            raise SpecError("bias amplification needs a tracked_pair")

    def cells(self) -> List[Tuple[int, int]]:
        if self.init.kind == "explicit":
            counts = self.init.counts
            return [(int(sum(counts)), len(counts))]
        if self.init.kind == "fractions":
            return [(int(n), len(self.init.fractions)) for n in self.n_values]
        if self.init.kind == "singleton":
            return [(int(n), int(n)) for n in self.n_values]
        return [(int(n), int(k)) for n in self.n_values for k in self.k_values]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "spec_version": SPEC_VERSION,
            "experiment_kind": self.experiment_kind.value,
            "protocol": self.protocol.value,
            "n_values": list(self.n_values),
            "k_values": list(self.k_values),
            "init": self.init.to_dict(),
            "trials": self.trials,
            "max_rounds": self.max_rounds,
            "thresholds": self.thresholds.to_dict(),
            "tracked_pair": None if self.tracked_pair is None else list(self.tracked_pair),
            "target_opinion": self.target_opinion,
            "seed": self.seed,
            "stepper": self.stepper,
            "horizon_const": self.horizon_const,
            "x_gamma_const": self.x_gamma_const,
            "x_delta_const": self.x_delta_const,
            "lower_bound_frac": self.lower_bound_frac,
            "random_stream": {"algorithm": STREAM_ALGORITHM, "version": STREAM_VERSION},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        version = data.pop("spec_version", SPEC_VERSION)
        if version != SPEC_VERSION:
            raise SpecError(f"unsupported spec_version {version}")
        data.pop("random_stream", None)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown spec fields: {sorted(unknown)}")
        try:
            data["experiment_kind"] = ExperimentKind(data["experiment_kind"])
            data["protocol"] = ProtocolKind.parse(data["protocol"])
            data["n_values"] = tuple(int(v) for v in data["n_values"])
        except KeyError as exc:
            raise SpecError(f"missing or invalid field {exc}") from None
        except ValueError as exc:
            raise SpecError(str(exc)) from None
        if "k_values" in data:
            data["k_values"] = tuple(int(v) for v in data["k_values"])
        if "init" in data:
            data["init"] = InitSpec.from_dict(data["init"])
        if "thresholds" in data:
            data["thresholds"] = ThresholdConfig.from_dict(data["thresholds"])
        if data.get("tracked_pair") is not None:
            data["tracked_pair"] = tuple(int(v) for v in data["tracked_pair"])
        for name in ("trials", "max_rounds", "seed"):
            if name in data:
                data[name] = int(data[name])
        return cls(**data)

    def to_json(self) -> str:
        return io.json_text(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise SpecError(f"malformed spec JSON: {exc}") from None


@dataclass
class TrialResult:
    n: int
    k: int
    trial: int
    protocol: str
    consensus_time: Optional[int]
    winner: Optional[int]
    rounds_executed: int
    metric: Optional[int]
    success: bool
    tau_plus_gamma: Optional[int] = None
    tau_weak: Optional[int] = None
    tau_vanish: Optional[int] = None
    tau_plus_delta: Optional[int] = None
    tau_plus_eta: Optional[int] = None
    first_event: Optional[str] = None
    wall_time: float = field(default=0.0, compare=False)

    def row(self) -> list:
        return [getattr(self, name) for name in TRIAL_COLUMNS]


@dataclass
class CellSummary:
    n: int
    k: int
    median: float
    q10: float
    q90: float
    success_rate: float
    timeouts: int

    def row(self) -> list:
        return [getattr(self, name) for name in SUMMARY_COLUMNS]


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    trials: List[TrialResult]
    summary: List[CellSummary]

    def cell(self, n: int, k: int) -> CellSummary:
        for s in self.summary:
            if (s.n, s.k) == (n, k):
                return s
        raise KeyError((n, k))

    def cell_trials(self, n: int, k: int) -> List[TrialResult]:
        return [t for t in self.trials if (t.n, t.k) == (n, k)]

    def trials_csv(self) -> str:
        return io.csv_text(TRIAL_COLUMNS, (t.row() for t in self.trials))

    def summary_csv(self) -> str:
        return io.csv_text(SUMMARY_COLUMNS, (s.row() for s in self.summary))

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        io.atomic_write_text(outdir / "trials.csv", self.trials_csv())
        io.atomic_write_text(outdir / "summary.csv", self.summary_csv())
        io.atomic_write_text(outdir / "spec.json", self.spec.to_json())


# -- per-cell derived parameters ----------------------------------------------


def norm_target(n: int, protocol: ProtocolKind, const: float) -> float:
    if protocol is ProtocolKind.SYNC_2CHOICES:
        return const * math.log(n) ** 2 / n
    return const * math.log(n) / math.sqrt(n)


def norm_horizon(n: int, protocol: ProtocolKind, const: float) -> float:
    if protocol is ProtocolKind.SYNC_2CHOICES:
        return const * n * math.log(n) ** 3
    return const * math.sqrt(n) * math.log(n) ** 2


def _cell_thresholds(spec: ExperimentSpec, n: int) -> ThresholdConfig:
    th = spec.thresholds
    changes = {}
    if spec.x_gamma_const is not None:
        changes["x_gamma"] = min(1.0, norm_target(n, spec.protocol, spec.x_gamma_const))
    if spec.x_delta_const is not None:
        x = min(1.0, spec.x_delta_const * math.sqrt(math.log(n) / n))
        changes["x_delta"] = x
        changes["x_eta"] = x
    return th.replace(**changes) if changes else th


def _target_opinion(spec: ExperimentSpec, init: Configuration) -> int:
    if spec.target_opinion is not None:
        return spec.target_opinion
    return int(np.argmin(init.counts))


def _horizon(spec: ExperimentSpec, n: int, gamma0: float) -> float:
    if spec.horizon_const is None:
        return math.inf
    if spec.experiment_kind is ExperimentKind.NORM_GROWTH:
        return norm_horizon(n, spec.protocol, spec.horizon_const)
    return spec.horizon_const * math.log(n) / gamma0


def _async_scale(spec: ExperimentSpec, n: int) -> int:
    # budgets are stated in parallel rounds; async rounds are single activations
    return n if spec.protocol is ProtocolKind.ASYNC_3MAJORITY else 1


def _validate_cell(spec: ExperimentSpec, init: Configuration, th: ThresholdConfig) -> None:
    kind = spec.experiment_kind
    if kind is ExperimentKind.WEAK_VANISH:
        i = _target_opinion(spec, init)
        if init.alpha[i] > (1.0 - th.c_weak) * init.gamma:
            raise SpecError(f"opinion {i} is not weak at round 0")
    if kind is ExperimentKind.BIAS_AMPLIFICATION and th.c_weak > 0:
        weak = init.alpha <= (1.0 - th.c_weak) * init.gamma
        # balanced starts sit at alpha == gamma and pass for any c_weak > 0
        if any(weak[list(spec.tracked_pair)]):
            raise SpecError("tracked opinions must not be weak at round 0")


def run_trial(spec: ExperimentSpec, n: int, k: int, trial: int) -> TrialResult:
    start = time.perf_counter()
    kind = spec.experiment_kind
    rng = trial_stream(spec.seed, n, k, trial, tag=kind.value)
    init = spec.init.build(n, k)
    th = _cell_thresholds(spec, n)
    _validate_cell(spec, init, th)
    horizon = _horizon(spec, n, init.gamma)
    scale = _async_scale(spec, n)

    needs_ledger = kind in (
        ExperimentKind.NORM_GROWTH,
        ExperimentKind.WEAK_VANISH,
        ExperimentKind.BIAS_AMPLIFICATION,
    )
    pair = spec.tracked_pair
    target = _target_opinion(spec, init) if kind is ExperimentKind.WEAK_VANISH else None
    ledger = StoppingLedger.start(summarize(init, th, 0, pair), th) if needs_ledger else None

    def first_event():
        if kind is not ExperimentKind.BIAS_AMPLIFICATION:
            return None, None
        i, j = pair
        bias_event = "tau_plus_eta" if spec.protocol is ProtocolKind.SYNC_2CHOICES else "tau_plus_delta"
        hits = [
            (ledger.tau(bias_event), bias_event),
            (ledger.tau("tau_weak", i), "tau_weak_i"),
            (ledger.tau("tau_weak", j), "tau_weak_j"),
        ]
        hits = [h for h in hits if h[0] is not None]
        return min(hits) if hits else (None, None)

    def done() -> bool:
        if kind is ExperimentKind.NORM_GROWTH:
            return ledger.tau("tau_plus_gamma") is not None
        if kind is ExperimentKind.BIAS_AMPLIFICATION:
            return first_event()[0] is not None
        return False

    observer = None
    if needs_ledger and not done():
        def observer(t, config):
            ledger.update(summarize(config, th, t, pair))
            return done()

    result = run(spec.protocol, init, spec.max_rounds, rng, observer, stepper=spec.stepper)

    out = TrialResult(
        n=n,
        k=k,
        trial=trial,
        protocol=spec.protocol.value,
        consensus_time=result.consensus_time,
        winner=result.winner,
        rounds_executed=result.rounds_executed,
        metric=None,
        success=False,
    )
    if ledger is not None:
        out.tau_plus_gamma = ledger.tau("tau_plus_gamma")
        out.tau_plus_delta = ledger.tau("tau_plus_delta")
        out.tau_plus_eta = ledger.tau("tau_plus_eta")
        if target is not None:
            out.tau_weak = ledger.tau("tau_weak", target)
            out.tau_vanish = ledger.tau("tau_vanish", target)
        elif pair is not None:
            weak = [ledger.tau("tau_weak", o) for o in pair]
            weak = [w for w in weak if w is not None]
            out.tau_weak = min(weak) if weak else None

    if kind in (ExperimentKind.SCALING, ExperimentKind.PLURALITY, ExperimentKind.LOWER_BOUND):
        out.metric = result.consensus_time
        if kind is ExperimentKind.SCALING:
            out.success = result.consensus_time is not None
        elif kind is ExperimentKind.PLURALITY:
            out.success = result.winner == 0
        else:
            t = result.consensus_time
            out.success = t is None or t >= spec.lower_bound_frac * k * scale
    elif kind is ExperimentKind.NORM_GROWTH:
        out.metric = out.tau_plus_gamma
        out.success = out.metric is not None and out.metric <= horizon * scale
    elif kind is ExperimentKind.WEAK_VANISH:
        out.metric = out.tau_vanish
        out.success = (
            out.metric is not None and out.metric <= horizon * scale and result.winner != target
        )
    else:
        out.metric, out.first_event = first_event()
        out.success = out.metric is not None and out.metric <= horizon * scale

    out.wall_time = time.perf_counter() - start
    return out


def _quantile(sorted_values: Sequence[float], q: float) -> float:
    pos = q * (len(sorted_values) - 1)
    lo, hi = math.floor(pos), math.ceil(pos)
    a, b = sorted_values[lo], sorted_values[hi]
    if lo == hi or a == b:
        return float(a)
    if math.isinf(b):
        return math.inf
    return float(a + (b - a) * (pos - lo))


def summarize_cell(n: int, k: int, trials: Sequence[TrialResult]) -> CellSummary:
    values = sorted(math.inf if t.metric is None else float(t.metric) for t in trials)
    return CellSummary(
        n=n,
        k=k,
        median=_quantile(values, 0.5),
        q10=_quantile(values, 0.1),
        q90=_quantile(values, 0.9),
        success_rate=sum(t.success for t in trials) / len(trials),
        timeouts=sum(t.metric is None for t in trials),
    )


def _run_chunk(args):
    spec_dict, jobs = args
    spec = ExperimentSpec.from_dict(spec_dict)
    return [run_trial(spec, n, k, trial) for n, k, trial in jobs]


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.environ.get("OD_LAB_THREADS", "1") or 1)
    return max(1, int(threads))


def run_experiment(spec: ExperimentSpec, threads: Optional[int] = None) -> ExperimentResult:
    """Run every trial of every cell and aggregate per cell.

    ``threads`` > 1 spreads trials over worker processes; output does not
    depend on the worker count.
    """
    jobs = [(n, k, trial) for n, k in spec.cells() for trial in range(spec.trials)]
    threads = resolve_threads(threads)
    if threads == 1 or len(jobs) == 1:
        results = [run_trial(spec, n, k, trial) for n, k, trial in jobs]
    else:
        chunks = [jobs[i::threads * 4] for i in range(threads * 4)]
        payload = [(spec.to_dict(), chunk) for chunk in chunks if chunk]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = [r for part in pool.map(_run_chunk, payload) for r in part]
    order = {cell: idx for idx, cell in enumerate(spec.cells())}
    results.sort(key=lambda r: (order[(r.n, r.k)], r.trial))
    summary = [
        summarize_cell(n, k, [r for r in results if (r.n, r.k) == (n, k)])
        for n, k in spec.cells()
    ]
    return ExperimentResult(spec, results, summary)


# -- experiment-specific entry points -------------------------------------------


def _as_kind(spec: ExperimentSpec, kind: ExperimentKind) -> ExperimentSpec:
    return spec if spec.experiment_kind is kind else replace(spec, experiment_kind=kind)


def run_norm_growth(spec: ExperimentSpec, threads=None) -> ExperimentResult:
    """Distribution of the first round with ``gamma_t >= x_gamma``."""
    if spec.init.kind not in ("singleton", "balanced"):
        raise SpecError("norm growth starts from a singleton or balanced configuration")
    return run_experiment(_as_kind(spec, ExperimentKind.NORM_GROWTH), threads)


def run_weak_vanish(spec: ExperimentSpec, threads=None) -> ExperimentResult:
    """Vanishing time of a planted weak opinion (also checks it never wins)."""
    return run_experiment(_as_kind(spec, ExperimentKind.WEAK_VANISH), threads)


def run_bias_amplification(spec: ExperimentSpec, threads=None) -> ExperimentResult:
    """First of: bias reaches its target, or either tracked opinion turns weak."""
    return run_experiment(_as_kind(spec, ExperimentKind.BIAS_AMPLIFICATION), threads)


def run_lower_bound(spec: ExperimentSpec, threads=None) -> ExperimentResult:
    """Fraction of trials whose consensus takes at least ``lower_bound_frac * k`` rounds."""
    if spec.init.kind != "balanced":
        raise SpecError("the lower-bound experiment starts balanced")
    return run_experiment(_as_kind(spec, ExperimentKind.LOWER_BOUND), threads)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float


def fit_loglog_slope(points: Sequence[Tuple[float, float]]) -> SlopeFit:
    """Least-squares line through ``(log k, log time)``."""
    pts = [(float(x), float(y)) for x, y in points]
    if len({x for x, _ in pts}) < 3:
        raise DegenerateInput("need at least 3 distinct k values")
    if any(not (x > 0 and y > 0) or math.isinf(y) for x, y in pts):
        raise DegenerateInput("log-log fit needs finite positive points")
    lx = np.log([x for x, _ in pts])
    ly = np.log([y for _, y in pts])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2)


def scaling_fit(result: ExperimentResult, n: int) -> SlopeFit:
    return fit_loglog_slope([(s.k, s.median) for s in result.summary if s.n == n])


__all__ = [
    "ExperimentKind",
    "ExperimentResult",
    "ExperimentSpec",
    "InitSpec",
    "TrialResult",
    "CellSummary",
    "SlopeFit",
    "fit_loglog_slope",
    "run_experiment",
    "run_norm_growth",
    "run_weak_vanish",
    "run_bias_amplification",
    "run_lower_bound",
    "scaling_fit",
]
