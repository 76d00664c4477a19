"""Command-line front end: ``odlab <subcommand> [flags]``.

Exit codes: 0 success, 1 spec/validation error (JSON error record on stderr),
2 internal failure. Results are written atomically; nothing is written when
validation fails.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
from pathlib import Path
from typing import List, Optional

from . import io
from .bounds import BernsteinParams, Direction, DriftQuery, bernstein_bound, drift_tail, freedman_tail
from .dynamics import Configuration, ProtocolKind, run
from .errors import OdLabError, SpecError
from .experiments import (
    SPEC_VERSION,
    ExperimentKind,
    ExperimentSpec,
    InitSpec,
    fit_loglog_slope,
    run_experiment,
)
from .observables import StoppingLedger, ThresholdConfig, summarize
from .streams import DEFAULT_SEED, STREAM_ALGORITHM, STREAM_VERSION, make_stream
from .verify import run_suite

TRACE_COLUMNS = ("t", "gamma", "max_alpha", "remaining", "delta", "eta", "weak_count")

EXPERIMENT_COMMANDS = {
    "sweep": ExperimentKind.SCALING,
    "plurality": ExperimentKind.PLURALITY,
    "lowerbound": ExperimentKind.LOWER_BOUND,
    "normgrowth": ExperimentKind.NORM_GROWTH,
    "weakvanish": ExperimentKind.WEAK_VANISH,
    "biasamp": ExperimentKind.BIAS_AMPLIFICATION,
}


class UsageError(OdLabError):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_init_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--init", default=None,
                   choices=["balanced", "planted_bias", "singleton", "explicit", "fractions"])
    p.add_argument("--epsilon", type=float, help="absolute planted bias")
    p.add_argument("--bias-const", type=float, help="planted bias as C * sqrt(log n / n)")
    p.add_argument("--alpha-scaled", action="store_true",
                   help="multiply the planted bias by sqrt(alpha) of the leading opinion")
    p.add_argument("--counts", type=int, nargs="+")
    p.add_argument("--fractions", type=float, nargs="+")


def _add_threshold_flags(p: argparse.ArgumentParser) -> None:
    for name in ThresholdConfig.__dataclass_fields__:
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="odlab", description="Consensus-dynamics simulation lab")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run one trajectory and write its trace")
    sim.add_argument("--protocol", required=True)
    sim.add_argument("--n", type=int)
    sim.add_argument("--k", type=int)
    _add_init_flags(sim)
    _add_threshold_flags(sim)
    sim.add_argument("--track", type=int, nargs=2, metavar=("I", "J"))
    sim.add_argument("--max-rounds", type=int, default=1_000_000)
    sim.add_argument("--stepper", choices=["fast", "naive"], default="fast")
    sim.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sim.add_argument("--out", default="odlab-out")

    for name, kind in EXPERIMENT_COMMANDS.items():
        ex = sub.add_parser(name, help=f"{kind.value} experiment")
        ex.add_argument("--spec", help="JSON spec file; flags given explicitly override it")
        ex.add_argument("--protocol")
        ex.add_argument("--n", type=int, nargs="+", dest="n_values")
        ex.add_argument("--k", type=int, nargs="+", dest="k_values")
        _add_init_flags(ex)
        _add_threshold_flags(ex)
        ex.add_argument("--trials", type=int)
        ex.add_argument("--max-rounds", type=int)
        ex.add_argument("--track", type=int, nargs=2, metavar=("I", "J"))
        ex.add_argument("--target", type=int, dest="target_opinion")
        ex.add_argument("--stepper", choices=["fast", "naive"])
        ex.add_argument("--horizon-const", type=float)
        ex.add_argument("--x-gamma-const", type=float)
        ex.add_argument("--x-delta-const", type=float)
        ex.add_argument("--lower-bound-frac", type=float)
        ex.add_argument("--seed", type=int)
        ex.add_argument("--threads", type=int, help="worker processes (env OD_LAB_THREADS)")
        ex.add_argument("--out", default="odlab-out")

    ver = sub.add_parser("verify", help="run the exact oracle suite")
    ver.add_argument("--budget", choices=["small", "full"], default="small")
    ver.add_argument("--out", help="also write the report JSON here")

    bnd = sub.add_parser("bounds", help="evaluate a closed-form bound")
    bsub = bnd.add_subparsers(dest="bound", required=True, parser_class=_Parser)
    b = bsub.add_parser("bernstein")
    b.add_argument("--D", type=float, required=True)
    b.add_argument("--s", type=float, required=True)
    b.add_argument("--lambda", type=float, required=True, dest="lam")
    f = bsub.add_parser("freedman")
    f.add_argument("--h", type=float, required=True)
    f.add_argument("--T", type=float, required=True)
    f.add_argument("--s", type=float, required=True)
    f.add_argument("--D", type=float, required=True)
    d = bsub.add_parser("drift")
    d.add_argument("--R", type=float, required=True)
    d.add_argument("--h", type=float, required=True)
    d.add_argument("--T", type=float, required=True)
    d.add_argument("--s", type=float, required=True)
    d.add_argument("--D", type=float, required=True)
    d.add_argument("--direction", choices=["positive", "negative"], default="positive")
    return parser


def _thresholds_from_args(args, base: Optional[ThresholdConfig] = None) -> ThresholdConfig:
    base = base or ThresholdConfig()
    changes = {
        name: getattr(args, name)
        for name in ThresholdConfig.__dataclass_fields__
        if getattr(args, name, None) is not None
    }
    return base.replace(**changes) if changes else base


def _init_from_args(args, default: Optional[InitSpec] = None) -> Optional[InitSpec]:
    if args.init is None:
        return default
    return InitSpec(
        kind=args.init,
        epsilon=args.epsilon,
        bias_const=args.bias_const,
        alpha_scaled=args.alpha_scaled,
        counts=tuple(args.counts) if args.counts else None,
        fractions=tuple(args.fractions) if args.fractions else None,
    )


def resolve_spec(args, kind: ExperimentKind) -> ExperimentSpec:
    data = {}
    if args.spec:
        try:
            data = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SpecError(f"cannot read spec {args.spec}: {exc}") from None
        if not isinstance(data, dict):
            raise SpecError("spec JSON must be an object")
        file_kind = data.get("experiment_kind", kind.value)
        if file_kind != kind.value:
            raise SpecError(f"spec file is a {file_kind!r} experiment, not {kind.value!r}")
    data["experiment_kind"] = kind.value
    for name in ("protocol", "n_values", "k_values", "trials", "max_rounds", "target_opinion",
                 "stepper", "horizon_const", "x_gamma_const", "x_delta_const",
                 "lower_bound_frac", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if args.track is not None:
        data["tracked_pair"] = list(args.track)
    init = _init_from_args(args)
    if init is not None:
        data["init"] = init.to_dict()
    if "protocol" not in data or "n_values" not in data:
        raise SpecError("need --protocol and --n (or a --spec file providing them)")
    base_th = ThresholdConfig.from_dict(data.get("thresholds"))
    data["thresholds"] = _thresholds_from_args(args, base_th).to_dict()
    return ExperimentSpec.from_dict(data)


def cmd_experiment(args, kind: ExperimentKind) -> dict:
    spec = resolve_spec(args, kind)
    result = run_experiment(spec, threads=args.threads)
    result.write(args.out)
    report = {
        "spec_version": SPEC_VERSION,
        "experiment_kind": kind.value,
        "seed": spec.seed,
        "out": str(args.out),
        "cells": [
            {"n": s.n, "k": s.k, "median": _json_num(s.median), "success_rate": s.success_rate,
             "timeouts": s.timeouts}
            for s in result.summary
        ],
    }
    if kind is ExperimentKind.SCALING:
        fits = {}
        for n in sorted({s.n for s in result.summary}):
            pts = [(s.k, s.median) for s in result.summary if s.n == n]
            if len({k for k, _ in pts}) >= 3 and all(math.isfinite(m) and m > 0 for _, m in pts):
                fit = fit_loglog_slope(pts)
                fits[str(n)] = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2}
        report["loglog_fits"] = fits
        io.atomic_write_text(Path(args.out) / "fit.json", io.json_text(fits))
    return report


def _json_num(x: float):
    return x if math.isfinite(x) else None


def cmd_simulate(args) -> dict:
    protocol = ProtocolKind.parse(args.protocol)
    init_spec = _init_from_args(args, InitSpec("balanced"))
    if init_spec.kind in ("explicit",):
        init = init_spec.build(0, 0)
    else:
        if args.n is None:
            raise SpecError("--n is required for this init")
        k = args.k if args.k is not None else (args.n if init_spec.kind == "singleton" else None)
        if k is None and init_spec.kind != "fractions":
            raise SpecError("--k is required for this init")
        init = init_spec.build(args.n, k if k is not None else 0)
    th = _thresholds_from_args(args)
    pair = tuple(args.track) if args.track else None
    rng = make_stream(args.seed, init.n, init.k, tag="simulate")

    first = summarize(init, th, 0, pair)
    ledger = StoppingLedger.start(first, th)
    rows = [_trace_row(first)]

    def observer(t, config):
        rec = summarize(config, th, t, pair)
        ledger.update(rec)
        rows.append(_trace_row(rec))

    result = run(protocol, init, args.max_rounds, rng, observer, stepper=args.stepper)
    out = Path(args.out)
    payload = {
        "spec_version": SPEC_VERSION,
        "protocol": protocol.value,
        "n": init.n,
        "k": init.k,
        "init": init_spec.to_dict(),
        "seed": args.seed,
        "random_stream": {"algorithm": STREAM_ALGORITHM, "version": STREAM_VERSION},
        "stepper": args.stepper,
        "max_rounds": args.max_rounds,
        "thresholds": th.to_dict(),
        "tracked_pair": list(pair) if pair else None,
        "consensus_time": result.consensus_time,
        "winner": result.winner,
        "rounds_executed": result.rounds_executed,
        "timed_out": result.timed_out,
        "final_counts": result.final_config.counts.tolist(),
        "hits": {name: ledger.tau(name) for name in ledger.scalars},
    }
    io.atomic_write_text(out / "trace.csv", io.csv_text(TRACE_COLUMNS, rows))
    io.atomic_write_text(out / "result.json", io.json_text(payload))
    return payload


def _trace_row(rec) -> list:
    return [rec.t, rec.gamma, rec.max_alpha, rec.remaining_opinions, rec.delta, rec.eta, rec.weak_count]


def cmd_verify(args) -> dict:
    checks = run_suite(args.budget)
    report = {
        "spec_version": SPEC_VERSION,
        "budget": args.budget,
        "passed": all(c.passed for c in checks),
        "checks": [c.to_dict() for c in checks],
    }
    if args.out:
        io.atomic_write_text(Path(args.out), io.json_text(report))
    return report


def cmd_bounds(args) -> dict:
    if args.bound == "bernstein":
        value = bernstein_bound(BernsteinParams(args.D, args.s), args.lam)
        return {"spec_version": SPEC_VERSION, "bound": value}
    if args.bound == "freedman":
        value = freedman_tail(args.h, args.T, BernsteinParams(args.D, args.s))
        return {"spec_version": SPEC_VERSION, "tail": value}
    query = DriftQuery(R=args.R, h=args.h, T=args.T, D=args.D, s=args.s)
    value = drift_tail(query, Direction(args.direction))
    return {"spec_version": SPEC_VERSION, "tail": value, "z": query.slack(Direction(args.direction))}


def dispatch(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "simulate":
            report = cmd_simulate(args)
        elif args.command == "verify":
            report = cmd_verify(args)
        elif args.command == "bounds":
            report = cmd_bounds(args)
        else:
            report = cmd_experiment(args, EXPERIMENT_COMMANDS[args.command])
        sys.stdout.write(io.json_text(report))
        if args.command == "verify" and not report["passed"]:
            return 1
        return 0
    except (OdLabError, OverflowError) as exc:
        code = getattr(exc, "code", "overflow")
        sys.stderr.write(json.dumps({"error": code, "message": str(exc)}) + "\n")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(json.dumps({"error": "internal", "message": repr(exc)}) + "\n")
        traceback.print_exc(file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
