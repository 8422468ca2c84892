"""Command-line front end.

Subcommands:

    run          simulate a scenario and write metrics CSVs
    place        compute a placement for a scenario and print the report
    verify-bound compare the staged search against brute-force optimal
    compare      run the full system and the built-in baselines side by side
    gen-trace    synthesize an arrival trace for a scenario's servers

All subcommands accept ``--set key=value`` overrides for [control] keys and
``--seed`` as a shortcut for overriding the run seed. Output location comes
from ``--out`` or the EDGESERVE_OUT environment variable (default ``out/``).

Exit codes: 0 success, 2 missing input file, 3 invalid scenario, 1 other error.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

from .engine import (
    BASELINE_NAMES,
    Simulation,
    StreamSpec,
    emit_metrics,
    format_placement_report,
    generate_workload,
)
from .model import ParseError, ValidationError
from .scenario import apply_overrides, load_scenario_file
from . import placement as _placement

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING = 2
EXIT_INVALID = 3


def _parse_overrides(pairs: List[str]) -> Dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValidationError(f"override {pair!r}: expected key=value")
        key, val = pair.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _load(args) -> object:
    overrides = _parse_overrides(args.set or [])
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "eval_expected", False):
        overrides["eval_expected"] = "true"
    model = load_scenario_file(args.scenario)
    if overrides:
        model = apply_overrides(model, overrides)
    return model


def _outdir(args) -> str:
    return args.out or os.environ.get("EDGESERVE_OUT", "out")


def cmd_run(args) -> int:
    scenario = _load(args)
    sim = Simulation(scenario, strategy=args.strategy)
    metrics = sim.run()
    written = emit_metrics(sim, _outdir(args))
    print(f"satisfied {metrics.satisfied}/{metrics.submitted} "
          f"rate={metrics.satisfaction_rate:.4f} "
          f"timeouts={metrics.timeouts} "
          f"offload_exceeded={metrics.offload_exceeded} "
          f"insufficient={metrics.resource_insufficient}")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_place(args) -> int:
    scenario = _load(args)
    theta = _placement.sssp(scenario.trace, scenario)
    score = _placement.evaluate_goodput(theta, scenario.trace, scenario)
    print(format_placement_report(theta), end="")
    print(f"evaluated goodput: {score}")
    return EXIT_OK


def cmd_verify_bound(args) -> int:
    scenario = _load(args)
    result = _placement.verify_bound(scenario, max_configs=args.max_configs)
    print(f"achieved={result['achieved']} optimal={result['optimal']} "
          f"bound={result['bound']:.4f} placements={result['placements']}")
    print("bound holds" if result["ok"] else "bound violated")
    return EXIT_OK if result["ok"] else EXIT_ERROR


def cmd_compare(args) -> int:
    scenario = _load(args)
    rows = [("full", Simulation(scenario).run())]
    for name in sorted(BASELINE_NAMES):
        sim = Simulation(scenario, strategy=BASELINE_NAMES[name])
        rows.append((name, sim.run()))
    print("system,satisfied,submitted,rate")
    for name, m in rows:
        print(f"{name},{m.satisfied},{m.submitted},{m.satisfaction_rate:.4f}")
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    scenario = _load(args)
    streams = [StreamSpec(service_id=svc, rate_per_s=args.rate, pattern=args.pattern)
               for svc in sorted(scenario.services)]
    rows = generate_workload(streams, list(scenario.servers),
                             args.duration or scenario.control.duration_ms,
                             scenario.control.seed)
    print("[trace]")
    for row in rows:
        print(f"{row.arrival_ms}, {row.service_id}, {row.origin_server}, {row.frame_count}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgeserve",
                                     description="Edge-cloud inference serving simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help="scenario file path")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a [control] key")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("run", help="simulate and write metrics")
    common(p)
    p.add_argument("--strategy", default="default",
                   choices=["default", "no_offload", "round_robin", "centralized"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("place", help="compute and print a placement")
    common(p)
    p.add_argument("--eval-expected", action="store_true",
                   help="use deterministic expected-value evaluation")
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("verify-bound", help="check the approximation bound")
    common(p)
    p.add_argument("--eval-expected", action="store_true",
                   help="use deterministic expected-value evaluation")
    p.add_argument("--max-configs", type=int, default=1_000_000)
    p.set_defaults(func=cmd_verify_bound)

    p = sub.add_parser("compare", help="run the system against the baselines")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-trace", help="synthesize an arrival trace")
    common(p)
    p.add_argument("--rate", type=float, default=10.0, help="arrivals per second per service")
    p.add_argument("--pattern", default="poisson", choices=["poisson", "bursty"])
    p.add_argument("--duration", type=int, default=None, help="trace length in ms")
    p.set_defaults(func=cmd_gen_trace)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
