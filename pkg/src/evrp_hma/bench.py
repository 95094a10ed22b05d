"""Batch runs, CSV records and gap reports.

CSV schema ``evrp-hma-bench/1``: one row per run (``row = run``) followed by
one row per instance (``row = aggregate``).  Run rows carry the seed, the
best cost, the vehicle count, the time at which the best solution was found
(``time_to_best``) and the total ``wall_time``; aggregate rows fill
``best``/``avg``/``std`` over the successful runs of that instance.  The two
timing columns are the only ones that differ between identical reruns.

Reference tables for gap reports are two-column CSVs ``instance,tc``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .hma import HmaParams, hma_solve
from .instance_io import load_instance, write_solution
from .model import check_feasibility

SCHEMA = "evrp-hma-bench/1"
WORKERS_ENV = "EVRP_HMA_WORKERS"
TIMING_COLUMNS = ("time_to_best", "wall_time")
STAT_COLUMNS = ("psi_only", "ssi_only", "shared", "failures")


@dataclass
class RunRecord:
    instance: str
    rep: int
    seed: int
    tc: float = math.nan
    k: int = 0
    feasible: bool = False
    time_to_best: float = math.nan
    wall_time: float = math.nan
    solution_file: str = ""
    status: str = "ok"
    error: str = ""
    stats: dict = field(default_factory=dict)


@dataclass
class InstanceSummary:
    instance: str
    runs: int
    best: float
    avg: float
    std: float
    k_best: int


@dataclass
class GapRow:
    instance: str
    tc: float
    reference: float | None
    gap: float | None  # fraction; negative means better than the reference


@dataclass
class GapReport:
    rows: list
    mean_gap: float
    missing: list


def worker_cap(requested: int) -> int:
    """``requested`` limited by the environment override, never below one."""
    raw = os.environ.get(WORKERS_ENV, "").strip()
    cap = requested
    if raw:
        try:
            cap = min(cap, int(raw))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, cap)


def derive_seed(base: int, instance: str, rep: int) -> int:
    """Stable per-run seed, independent of run order and worker count."""
    digest = hashlib.sha256(f"{base}:{instance}:{rep}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def read_manifest(path) -> list:
    """Instance paths, one per line, relative to the manifest's directory."""
    path = Path(path)
    out = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            p = Path(line)
            out.append(p if p.is_absolute() else path.parent / p)
    return out


def run_one(path, rep: int, params: HmaParams, solutions_dir=None) -> RunRecord:
    path = Path(path)
    name = path.stem
    seed = params.seed
    rec = RunRecord(name, rep, seed)
    try:
        instance = load_instance(path)
        name = instance.name or name
        rec.instance = name
        result = hma_solve(instance, params)
    except Exception as exc:  # recorded so the batch keeps going
        rec.status = "error"
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    sol = result.solution
    rec.tc = sol.tc
    rec.k = sol.k
    rec.feasible = check_feasibility(instance, sol).feasible
    rec.time_to_best = result.time_to_best
    rec.wall_time = result.elapsed
    rec.stats = {key: result.stats.get(key, 0) for key in STAT_COLUMNS}
    if solutions_dir is not None:
        target = Path(solutions_dir) / f"{name}.rep{rep}.seed{seed}.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        write_solution(instance, sol, target)
        rec.solution_file = str(target)
    if not rec.feasible:
        rec.status = "infeasible"
    return rec


def _run_task(task):
    return run_one(*task)


def run_bench(paths, reps: int, params: HmaParams, parallel: int = 1, base_seed: int | None = None,
              solutions_dir=None) -> list:
    """Run every instance ``reps`` times with derived seeds; results come back in input order."""
    base = params.seed if base_seed is None else base_seed
    tasks = []
    for path in paths:
        stem = Path(path).stem
        for rep in range(reps):
            tasks.append((path, rep, replace(params, seed=derive_seed(base, stem, rep)), solutions_dir))
    workers = worker_cap(parallel)
    if workers == 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_run_task, tasks))


def summarize(records) -> list:
    groups = {}
    for rec in records:
        groups.setdefault(rec.instance, []).append(rec)
    out = []
    for name, recs in groups.items():
        good = [r for r in recs if r.status == "ok"]
        if not good:
            out.append(InstanceSummary(name, 0, math.nan, math.nan, math.nan, 0))
            continue
        tcs = [r.tc for r in good]
        best = min(good, key=lambda r: (r.tc, r.rep))
        std = statistics.stdev(tcs) if len(tcs) > 1 else 0.0
        out.append(InstanceSummary(name, len(good), best.tc, statistics.fmean(tcs), std, best.k))
    return out


RUN_COLUMNS = ["schema", "row", "instance", "rep", "seed", "status", "tc", "k", "feasible",
               "time_to_best", "wall_time", "best", "avg", "std", "runs", *STAT_COLUMNS,
               "solution_file", "error"]


def write_csv(records, path=None) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RUN_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        row = {"schema": SCHEMA, "row": "run", "instance": rec.instance, "rep": rec.rep, "seed": rec.seed,
               "status": rec.status, "tc": _num(rec.tc), "k": rec.k, "feasible": int(rec.feasible),
               "time_to_best": _num(rec.time_to_best), "wall_time": _num(rec.wall_time),
               "solution_file": rec.solution_file, "error": rec.error}
        row.update({key: rec.stats.get(key, "") for key in STAT_COLUMNS})
        writer.writerow(row)
    for s in summarize(records):
        writer.writerow({"schema": SCHEMA, "row": "aggregate", "instance": s.instance, "runs": s.runs,
                         "k": s.k_best, "best": _num(s.best), "avg": _num(s.avg), "std": _num(s.std)})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _num(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        if row.get("schema") != SCHEMA:
            raise ValueError(f"{path}: unsupported schema {row.get('schema')!r}")
    return rows


def strip_timing(text: str) -> str:
    """The CSV with timing columns blanked, for determinism comparisons."""
    rows = list(csv.DictReader(text.splitlines()))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RUN_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({**row, **{c: "" for c in TIMING_COLUMNS}})
    return buf.getvalue()


def read_reference(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["instance"].strip()] = float(row["tc"])
    return out


def gap(tc: float, reference: float) -> float:
    return (tc - reference) / reference


def gap_report(best_by_instance: dict, reference: dict) -> GapReport:
    """Gap of each instance's best cost against the reference table.

    Instances without a reference row are listed in ``missing`` and left
    out of the mean.
    """
    rows, missing = [], []
    for name in sorted(best_by_instance):
        tc = best_by_instance[name]
        ref = reference.get(name)
        if ref is None:
            missing.append(name)
            rows.append(GapRow(name, tc, None, None))
        else:
            rows.append(GapRow(name, tc, ref, gap(tc, ref)))
    gaps = [r.gap for r in rows if r.gap is not None and not math.isnan(r.gap)]
    return GapReport(rows, statistics.fmean(gaps) if gaps else math.nan, missing)


def best_from_csv(rows) -> dict:
    out = {}
    for row in rows:
        if row["row"] == "aggregate" and row["best"]:
            out[row["instance"]] = float(row["best"])
    return out


def format_report(report: GapReport) -> str:
    lines = ["instance,tc,reference,gap_percent,flag"]
    for r in report.rows:
        if r.reference is None:
            lines.append(f"{r.instance},{r.tc:.2f},,,missing-reference")
        else:
            lines.append(f"{r.instance},{r.tc:.2f},{r.reference:.2f},{100 * r.gap:.2f},")
    mean = "" if math.isnan(report.mean_gap) else f"{100 * report.mean_gap:.2f}"
    lines.append(f"mean,,,{mean},")
    return "\n".join(lines) + "\n"


def record_dict(rec: RunRecord) -> dict:
    return asdict(rec)

