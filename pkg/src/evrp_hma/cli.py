"""``evrp-hma`` command line.

Exit codes: 0 success, 1 infeasible (instance or solution), 2 unreadable
input or bad arguments, 3 solution/instance checksum mismatch.  Failures
print one JSON object ``{"error": ..., "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .hma import PROFILE_DIR, HmaParams, hma_solve, read_config
from .instance_io import (ChecksumMismatchError, InstanceParseError, generate_jd_like, generate_small,
                          load_instance, read_solution, write_akb, write_jd, write_solution)
from .model import (BATTERY, CAPACITY, COVERAGE, DEPOT_WINDOW, ENDPOINTS, TIME_WINDOW, InstanceInfeasibleError,
                    check_feasibility)

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_CHECKSUM = 0, 1, 2, 3

CONSTRAINT_NAMES = {
    ENDPOINTS: "routes start and end at the depot, known nodes",
    COVERAGE: "every customer served exactly once",
    CAPACITY: "load within capacity",
    TIME_WINDOW: "arrival within time windows",
    DEPOT_WINDOW: "return before the depot closes",
    BATTERY: "battery and charge amounts within bounds",
}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _fail(code, kind, message):
    raise CliError(code, kind, message)


def _load(path) -> object:
    p = Path(path)
    if not p.is_file():
        _fail(EXIT_INPUT, "missing_file", f"no such file: {p}")
    try:
        return load_instance(p)
    except (InstanceParseError, ValueError, KeyError, IndexError) as exc:
        _fail(EXIT_INPUT, "parse_error", f"{p}: {exc}")


def _params(args) -> HmaParams:
    try:
        if args.config:
            params = HmaParams.from_mapping(read_config(args.config))
        else:
            params = HmaParams.profile(args.profile)
        overrides = {}
        for item in args.set or ():
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"--set expects key=value, got {item!r}")
            overrides[key.strip()] = value.strip()
        if overrides:
            merged = {**{k: v for k, v in vars(params).items()}, **overrides}
            params = HmaParams.from_mapping({k: ("none" if v is None else v) for k, v in merged.items()})
        if args.seed is not None:
            params = replace(params, seed=args.seed)
        if args.time_limit is not None:
            params = replace(params, time_limit=args.time_limit)
        if getattr(args, "workers", None) is not None:
            params = replace(params, workers=args.workers)
        params = replace(params, workers=bench.worker_cap(params.workers))
    except (OSError, ValueError, TypeError) as exc:
        _fail(EXIT_INPUT, "bad_parameters", str(exc))
    return params


def cmd_solve(args) -> int:
    instance = _load(args.instance)
    params = _params(args)
    try:
        result = hma_solve(instance, params)
    except InstanceInfeasibleError as exc:
        _fail(EXIT_INFEASIBLE, "infeasible_instance", str(exc))
    sol = result.solution
    report = check_feasibility(instance, sol)
    out = Path(args.out) if args.out else Path(f"{instance.name or Path(args.instance).stem}.solution.json")
    write_solution(instance, sol, out)
    record = {
        "instance": instance.name,
        "seed": params.seed,
        "tc": sol.tc,
        "k": sol.k,
        "feasible": report.feasible,
        "construction_tc": result.construction_tc,
        "time_to_best": result.time_to_best,
        "wall_time": result.elapsed,
        "iterations": result.iterations,
        "memetic_rounds": result.memetic_rounds,
        "solution_file": str(out),
        "stats": result.stats,
    }
    if args.record:
        record["log"] = [list(entry) for entry in result.log]
        Path(args.record).write_text(json.dumps(record, indent=1) + "\n")
        record.pop("log")
        record["log_file"] = args.record
    print(json.dumps(record))
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_validate(args) -> int:
    instance = _load(args.instance)
    sol_path = Path(args.solution)
    if not sol_path.is_file():
        _fail(EXIT_INPUT, "missing_file", f"no such file: {sol_path}")
    try:
        sol = read_solution(sol_path.read_text(), instance)
    except ChecksumMismatchError as exc:
        _fail(EXIT_CHECKSUM, "checksum_mismatch", str(exc))
    except (ValueError, KeyError, TypeError) as exc:
        _fail(EXIT_INPUT, "parse_error", f"{sol_path}: {exc}")
    report = check_feasibility(instance, sol)
    for tag in sorted(report.constraints):
        verdict = "ok" if report.constraints[tag] else "VIOLATED"
        print(f"({tag}) {CONSTRAINT_NAMES.get(tag, '')}: {verdict}")
    for r_idx, pos, tag in report.violations[:20]:
        print(f"  route {r_idx} position {pos}: constraint ({tag})")
    for err in report.errors:
        print(f"  {err}")
    print(f"TC {report.tc:.2f}")
    print("feasible" if report.feasible else "infeasible")
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_bench(args) -> int:
    manifest = Path(args.manifest)
    if not manifest.is_file():
        _fail(EXIT_INPUT, "missing_file", f"no such file: {manifest}")
    paths = bench.read_manifest(manifest)
    params = _params(args)
    try:
        parallel = bench.worker_cap(args.parallel)
    except ValueError as exc:
        _fail(EXIT_INPUT, "bad_parameters", str(exc))
    records = bench.run_bench(paths, args.reps, replace(params, workers=1), parallel,
                              solutions_dir=args.solutions_dir)
    text = bench.write_csv(records, args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    for p in (args.bench_csv, args.reference):
        if not Path(p).is_file():
            _fail(EXIT_INPUT, "missing_file", f"no such file: {p}")
    try:
        rows = bench.read_csv(args.bench_csv)
        reference = bench.read_reference(args.reference)
    except (ValueError, KeyError) as exc:
        _fail(EXIT_INPUT, "parse_error", str(exc))
    report = bench.gap_report(bench.best_from_csv(rows), reference)
    text = bench.format_report(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    for name in report.missing:
        print(json.dumps({"warning": "missing_reference", "instance": name}), file=sys.stderr)
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.kind == "jd":
        inst = generate_jd_like(args.customers, args.stations, args.seed, name=args.name or "")
        text = write_jd(inst)
    else:
        inst = generate_small(args.seed, M=args.customers, P=args.stations)
        if args.name:
            inst = inst.replace(name=args.name)
        text = write_akb(inst)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _add_params(p):
    p.add_argument("--profile", default="akb_small",
                   choices=sorted(f.stem for f in PROFILE_DIR.glob("*.cfg")))
    p.add_argument("--config", help="key = value parameter file (replaces --profile)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one parameter")
    p.add_argument("--seed", type=int)
    p.add_argument("--time-limit", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evrp-hma")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance")
    p.add_argument("instance")
    _add_params(p)
    p.add_argument("--workers", type=int, help="processes for subproblem search")
    p.add_argument("--out", help="solution file (default <name>.solution.json)")
    p.add_argument("--record", help="write the run record with its improvement log here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("validate", help="check a solution against an instance")
    p.add_argument("instance")
    p.add_argument("solution")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="repeated runs over a manifest of instances")
    p.add_argument("manifest")
    _add_params(p)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--solutions-dir")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="gap of benchmark results against reference costs")
    p.add_argument("bench_csv")
    p.add_argument("reference", help="CSV with columns instance,tc")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen", help="write a synthetic instance")
    p.add_argument("kind", choices=("small", "jd"))
    p.add_argument("--customers", type=int, default=5)
    p.add_argument("--stations", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(json.dumps({"error": "io_error", "message": str(exc)}), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
