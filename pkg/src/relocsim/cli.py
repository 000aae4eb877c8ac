"""Command-line entry point: run, sweep, validate and oracle-test.

Exit codes: 0 success, 1 internal error, 2 configuration error, 3 data error,
4 validation or oracle violations.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__
from .core import ConfigError, DataError, TimeGrid
from .ingest import resample_willingness
from .metrics import KpiReport, kpi_report, write_report
from .oracles import assignment_oracle_check, flow_oracle_check
from .scenario import Scenario, apply_overrides, load_scenario, parse_value, read_config, validate_scenario
from .simulator import SimulationTrace, run

log = logging.getLogger("relocsim")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_INVALID = 0, 1, 2, 3, 4


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relocsim", description="Rolling-horizon car-sharing relocation simulator.")
    parser.add_argument("--version", action="version", version=f"relocsim {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="mode", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="scenario JSON file or built-in name (hub-and-spoke)")
        p.add_argument("--set", dest="overrides", nargs="+", default=[], metavar="KEY=VALUE",
                       help="dotted-path overrides applied after the file is read")

    p_run = sub.add_parser("run", help="simulate every (day, seed) pair and write KPIs")
    common(p_run)
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seeds", type=_int_list, default=None, help="comma-separated seeds (default: config seed)")
    p_run.add_argument("--days", type=_str_list, default=None, help="comma-separated days for CSV demand")
    p_run.add_argument("--parallel", type=int, default=1, help="worker processes")
    p_run.add_argument("--no-traces", action="store_true", help="skip per-run event/plan/slot files")

    p_sweep = sub.add_parser("sweep", help="cartesian parameter sweep")
    common(p_sweep)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--vary", nargs="+", required=True, metavar="KEY=V1,V2",
                         help="dotted key and comma-separated values, e.g. grid.n_C=10,15")
    p_sweep.add_argument("--seeds", type=_int_list, default=None)
    p_sweep.add_argument("--days", type=_str_list, default=None)
    p_sweep.add_argument("--parallel", type=int, default=os.cpu_count() or 1)
    p_sweep.add_argument("--cap", type=int, default=256, help="maximum number of grid cells")

    p_val = sub.add_parser("validate", help="structural checks on config and data, no simulation")
    common(p_val)

    p_orc = sub.add_parser("oracle-test", help="compare the optimisers with exhaustive search")
    p_orc.add_argument("--instances", type=int, default=200)
    p_orc.add_argument("--seed", type=int, default=0)
    return parser


# -- execution ---------------------------------------------------------------

def _job(args) -> Tuple[object, int, SimulationTrace]:
    scenario, day, seed = args
    config = replace(scenario.config, seed=seed)
    trip_log = scenario.demand(seed, day)
    if not scenario.synthetic:
        trip_log = resample_willingness(trip_log, seed)
    trace = run(config, trip_log, scenario.network, scenario.model, scenario.initial_inventory)
    trace.key = (day, seed)
    return day, seed, trace


def simulate(scenario: Scenario, seeds: Sequence[int], days: Optional[Sequence[str]] = None,
             parallel: int = 1) -> List[SimulationTrace]:
    """Run every (day, seed) pair; results come back in day-major, seed-minor order."""
    jobs = [(scenario, day, seed) for day in scenario.day_keys(days) for seed in seeds]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    return [trace for _, _, trace in results]


def _manifest(out: Path, raw: dict, seeds, days, extra: Optional[dict] = None) -> None:
    clean = {k: v for k, v in raw.items() if not k.startswith("_")}
    manifest = {"version": __version__, "config": clean, "seeds": list(seeds), "days": days, **(extra or {})}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _safe(key) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(key))


def cmd_run(args) -> int:
    scenario = load_scenario(args.config, args.overrides)
    seeds = args.seeds if args.seeds is not None else [scenario.config.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = simulate(scenario, seeds, args.days, args.parallel)
    reports = []
    for trace in traces:
        day, seed = trace.key
        reports.append(kpi_report(trace, key=f"{day}/{seed}", params={"day": str(day), "seed": seed}))
        if not args.no_traces:
            folder = out / "traces" / f"{_safe(day)}_seed{seed}"
            folder.mkdir(parents=True, exist_ok=True)
            trace.write_events(folder / "events.jsonl")
            trace.write_plans(folder / "plans.jsonl")
            trace.write_slot_summary(folder / "slots.csv")
    if reports:
        write_report(reports, out / "kpi.csv", "csv")
        write_report(reports, out / "kpi.json", "json")
    _manifest(out, scenario.raw, seeds, [str(d) for d in scenario.day_keys(args.days)])
    for r in reports:
        print(f"{r.key}: scheme={r.scheme} requests={r.requests} rejection={r.rejection_rate:.2f}% "
              f"utilization={r.utilization:.2f}%")
    return EXIT_OK


def expand_grid(vary: Sequence[str]) -> List[Dict[str, object]]:
    axes = []
    for item in vary:
        key, sep, values = item.partition("=")
        if not sep or not key or not values:
            raise ConfigError(f"--vary expects KEY=V1,V2,..., got {item!r}")
        axes.append((key, [parse_value(v) for v in values.split(",")]))
    keys = [k for k, _ in axes]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(v for _, v in axes))]


def _cell_job(args):
    raw, cell, seeds, days = args
    overrides = [f"{k}={json.dumps(v)}" for k, v in cell.items()]
    scenario = load_scenario(raw, overrides)
    traces = simulate(scenario, seeds, days)
    return [
        kpi_report(t, key=f"{t.key[0]}/{t.key[1]}", params={**{k: v for k, v in cell.items()}, "seed": t.key[1]})
        for t in traces
    ]


def cmd_sweep(args) -> int:
    raw = apply_overrides(read_config(args.config), args.overrides)
    cells = expand_grid(args.vary)
    if len(cells) > args.cap:
        raise ConfigError(f"sweep has {len(cells)} cells, more than --cap {args.cap}")
    valid, skipped = [], []
    for cell in cells:
        probe = apply_overrides(raw, [f"{k}={json.dumps(v)}" for k, v in cell.items()])
        grid = probe.get("grid", {})
        try:
            TimeGrid(**grid)
        except (ConfigError, TypeError) as exc:
            log.warning("skipping cell %s: %s", cell, exc)
            skipped.append({"cell": cell, "reason": str(exc)})
            continue
        valid.append(cell)
    seeds = args.seeds if args.seeds is not None else [int(raw.get("seed", 0))]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(raw, cell, seeds, args.days) for cell in valid]
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            nested = list(pool.map(_cell_job, jobs))
    else:
        nested = [_cell_job(j) for j in jobs]
    reports: List[KpiReport] = [r for group in nested for r in group]
    keys = [k for k in (cells[0] if cells else {})]
    if reports:
        write_report(reports, out / "sweep.csv", "csv", group_by=keys)
        write_report(reports, out / "sweep.json", "json", group_by=keys)
    _manifest(out, raw, seeds, args.days, {"cells": valid, "skipped": skipped})
    print(f"{len(valid)} cells run, {len(skipped)} skipped")
    return EXIT_OK


def cmd_validate(args) -> int:
    problems = validate_scenario(args.config, args.overrides)
    if problems:
        for p in problems:
            print(f"FAIL {p}")
        return EXIT_INVALID
    print("OK")
    return EXIT_OK


def cmd_oracle_test(args) -> int:
    failed = False
    for check in (flow_oracle_check, assignment_oracle_check):
        result = check(args.instances, args.seed)
        print(f"{'PASS' if result.ok else 'FAIL'} {result.name}: {result.instances} instances, "
              f"{len(result.mismatches)} mismatches")
        for m in result.mismatches[:10]:
            print(f"  {m}")
        failed |= not result.ok
    return EXIT_INVALID if failed else EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate, "oracle-test": cmd_oracle_test}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.mode](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error exit code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
