"""Command-line front end: plan, run, compare, export.

Exit codes: 0 success, 1 validation error, 2 safety violation in a simulated run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .dp import InfeasibleProblem, SpeedProfile, evaluate_profile, plan_eco_cruise, template_problem
from .route import RouteError, RouteProfile, bundled_route, load_route, route_hash
from .sim import (CASE_NAMES, TRACE_FIELDS, Scenario, ScenarioError, SimReport, TraceRecord,
                  compare_cases, run_scenario, standard_case)
from .vehicle import FuelModelParams, PowertrainLimits, VehicleParams, dump_params, load_params

log = logging.getLogger("ecodrive")

EXIT_OK, EXIT_INVALID, EXIT_UNSAFE = 0, 1, 2
ALL_TRACE_FIELDS = tuple(TraceRecord.__dataclass_fields__)


class CliError(Exception):
    """Bad input; maps to exit code 1."""


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_dir() -> Path:
    env = os.environ.get("ECODRIVE_CACHE_DIR")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "ecodrive"


# -- inputs ---------------------------------------------------------------------

def _load_route(path: Optional[str]) -> RouteProfile:
    if path is None:
        return bundled_route()
    try:
        return load_route(Path(path))
    except FileNotFoundError as exc:
        raise CliError(f"route file not found: {path}") from exc
    except (RouteError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"invalid route file {path}: {exc}") from exc


def _load_vehicle(path: Optional[str]) -> tuple[VehicleParams, FuelModelParams, PowertrainLimits]:
    if path is None:
        return VehicleParams(), FuelModelParams(), PowertrainLimits()
    try:
        return load_params(Path(path))
    except FileNotFoundError as exc:
        raise CliError(f"vehicle file not found: {path}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"invalid vehicle file {path}: {exc}") from exc


def _params_hash(vehicle, fuel, limits) -> str:
    blob = json.dumps(dump_params(vehicle, fuel, limits), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def profile_cache_path(route: RouteProfile, vehicle, fuel, limits) -> Path:
    return cache_dir() / f"eco_{route_hash(route)[:16]}_{_params_hash(vehicle, fuel, limits)}.csv"


def plan_profile(route, vehicle, fuel, limits, workers: int = 1) -> tuple[SpeedProfile, Path, bool]:
    """Eco-Cruise profile from the cache, solving and storing it on a miss."""
    path = profile_cache_path(route, vehicle, fuel, limits)
    if path.exists():
        prof = SpeedProfile.from_csv(path.read_text())
        total = evaluate_profile(prof, vehicle, fuel, route, limits)
        return SpeedProfile(prof.stations_m, prof.target_speed_m_s, total), path, True
    template = template_problem(route, vehicle, fuel, limits)
    prof = plan_eco_cruise(template, workers=workers)
    atomic_write(path, prof.to_csv())
    return prof, path, False


def _parse_cases(spec: str) -> list:
    """'all', '1,3,5' or paths to named scenario JSON files."""
    if spec.strip().lower() == "all":
        return list(CASE_NAMES)
    out = []
    for item in (x.strip() for x in spec.split(",")):
        if not item:
            continue
        if item.isdigit():
            cid = int(item)
            if cid not in CASE_NAMES:
                raise CliError(f"unknown case id {cid}; expected 1..5 or a scenario file")
            out.append(cid)
        elif item.endswith(".json"):
            out.append(Path(item))
        else:
            raise CliError(f"cannot interpret case {item!r}")
    if not out:
        raise CliError("no cases selected")
    return out


def named_scenario(path: Path, route: RouteProfile, seed: int, **common) -> Scenario:
    """A user scenario: a base case plus overrides read from JSON.

    Recognised keys: name, base_case, seed, v2i, traffic, v2v, follow_capability,
    duration_s.
    """
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise CliError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"scenario file {path} is not valid JSON: {exc}") from exc
    known = {"name", "base_case", "seed", "v2i", "traffic", "v2v", "follow_capability", "duration_s"}
    extra = set(doc) - known
    if extra:
        raise CliError(f"scenario file {path}: unknown key(s) {sorted(extra)}")
    name = str(doc.get("name", path.stem))
    try:
        sc = standard_case(int(doc.get("base_case", 2)), route, int(doc.get("seed", seed)), **common)
        hl = sc.hl
        if "v2i" in doc:
            hl = replace(hl, v2i=bool(doc["v2i"]))
        if "follow_capability" in doc:
            hl = replace(hl, follow_capability=str(doc["follow_capability"]))
        sc = replace(sc, case_id=name, name=name, hl=hl,
                     traffic=bool(doc.get("traffic", sc.traffic)),
                     v2v=bool(doc.get("v2v", sc.v2v)),
                     duration_s=float(doc.get("duration_s", sc.duration_s)))
        sc.validate()
    except (ScenarioError, ValueError) as exc:
        raise CliError(f"scenario file {path}: {exc}") from exc
    return sc


def _run_one(sc: Scenario):
    return run_scenario(sc)


# -- subcommands ---------------------------------------------------------------

def cmd_plan(args) -> int:
    route = _load_route(args.route)
    vehicle, fuel, limits = _load_vehicle(args.vehicle)
    try:
        prof, path, hit = plan_profile(route, vehicle, fuel, limits, args.workers)
    except InfeasibleProblem as exc:
        raise CliError(f"Eco-Cruise problem infeasible at stage {exc.stage}: {exc}") from exc
    print(f"{'cache hit' if hit else 'planned'}: {path}")
    print(f"stations: {len(prof.stations_m)}  predicted fuel: {prof.total_fuel_g:.3f} g")
    return EXIT_OK


def comparison_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "scenario", "total_fuel_g", "reduction_pct"])
    for r in rows:
        red = "" if r["reduction_pct"] is None else f"{r['reduction_pct']:.2f}"
        w.writerow([r["case"], r["scenario"], f"{r['total_fuel_g']:.2f}", red])
    return buf.getvalue()


def _baseline(reports: dict):
    if 3 in reports:
        return 3
    return sorted(reports, key=str)[0]


def _print_table(rows: list[dict], baseline) -> None:
    print(f"{'case':<8}{'fuel [g]':>12}{'reduction vs ' + str(baseline) + ' [%]':>24}  name")
    for r in rows:
        red = "-" if r["reduction_pct"] is None else f"{r['reduction_pct']:.2f}"
        print(f"{str(r['case']):<8}{r['total_fuel_g']:>12.2f}{red:>24}  {r['scenario']}")


def cmd_run(args) -> int:
    route = _load_route(args.route)
    vehicle, fuel, limits = _load_vehicle(args.vehicle)
    cases = _parse_cases(args.cases)
    if args.dt is not None and not args.dt > 0:
        raise CliError("--dt must be positive")
    try:
        eco, _, _ = plan_profile(route, vehicle, fuel, limits, args.workers)
    except InfeasibleProblem as exc:
        raise CliError(f"Eco-Cruise problem infeasible at stage {exc.stage}: {exc}") from exc
    common = dict(vehicle=vehicle, fuel=fuel, limits=limits, eco_profile=eco, dp_workers=args.workers)
    if args.dt is not None:
        common["dt_s"] = args.dt
    scenarios = []
    for c in cases:
        if isinstance(c, Path):
            scenarios.append(named_scenario(c, route, args.seed, **common))
        else:
            scenarios.append(standard_case(c, route, args.seed, **common))
    ids = [sc.case_id for sc in scenarios]
    if len(set(map(str, ids))) != len(ids):
        raise CliError(f"duplicate case ids: {ids}")

    out = Path(args.out)
    if args.jobs > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, scenarios))
    else:
        results = [_run_one(sc) for sc in scenarios]

    reports: dict = {}
    unsafe = []
    for sc, (trace, report) in zip(scenarios, results):
        case_dir = out / str(sc.case_id)
        atomic_write(case_dir / "trace.csv", trace.to_csv(ALL_TRACE_FIELDS))
        atomic_write(case_dir / "report.json", report.to_json())
        reports[sc.case_id] = report
        status = []
        if report.collision:
            status.append(f"COLLISION ({report.collision_detail or 'see trace'})")
        if report.red_violations:
            status.append(f"{report.red_violations} red-light crossing(s)")
        if status:
            unsafe.append(sc.case_id)
        flag = "; ".join(status) if status else "ok"
        print(f"case {sc.case_id}: {report.total_fuel_g:.3f} g, {report.travel_time_s:.1f} s, {flag}")
    if len(reports) >= 2:
        base = _baseline(reports)
        rows = compare_cases(reports, baseline=base)
        atomic_write(out / "comparison.csv", comparison_csv(rows))
        _print_table(rows, base)
    if unsafe:
        print(f"safety violation in case(s): {', '.join(map(str, unsafe))}", file=sys.stderr)
        return EXIT_UNSAFE
    return EXIT_OK


def _collect_reports(paths: list[str]) -> dict:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*/report.json")))
        elif p.exists():
            files.append(p)
        else:
            raise CliError(f"no such report or directory: {p}")
    reports: dict = {}
    for f in files:
        try:
            rep = SimReport.from_json(f.read_text())
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CliError(f"unreadable report {f}: {exc}") from exc
        if rep.case_id in reports:
            raise CliError(f"case {rep.case_id} appears in more than one report")
        reports[rep.case_id] = rep
    return reports


def cmd_compare(args) -> int:
    reports = _collect_reports(args.reports)
    if len(reports) < 2:
        raise CliError("compare needs at least two reports")
    base = args.baseline if args.baseline is not None else _baseline(reports)
    if isinstance(base, str) and base.isdigit():
        base = int(base)
    try:
        rows = compare_cases(reports, baseline=base)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    _print_table(rows, base)
    if args.out:
        atomic_write(Path(args.out), comparison_csv(rows))
    return EXIT_OK


def export_trace(text: str, fields: list[str], every: int = 1) -> str:
    """Select columns (in the order given) and keep every ``every``-th row."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration as exc:
        raise CliError("trace file is empty") from exc
    unknown = [f for f in fields if f not in header]
    if unknown:
        raise CliError(f"unknown field(s) {unknown}; valid fields: {', '.join(header)}")
    if every < 1:
        raise CliError("--every must be >= 1")
    cols = [header.index(f) for f in fields]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for i, row in enumerate(reader):
        if i % every == 0:
            w.writerow([row[c] for c in cols])
    return buf.getvalue()


def cmd_export(args) -> int:
    path = Path(args.trace)
    if path.is_dir():
        path = path / "trace.csv"
    if not path.exists():
        raise CliError(f"trace not found: {path}")
    fields = [f.strip() for f in args.fields.split(",") if f.strip()]
    text = export_trace(path.read_text(), fields, args.every)
    if args.out:
        atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecodrive", description="Eco-driving CAV simulation toolkit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--route", help="route JSON (default: bundled route)")
        sp.add_argument("--vehicle", help="vehicle/fuel/limits JSON (default: built-in parameters)")
        sp.add_argument("--workers", type=int, default=1, help="threads for the DP solver")

    sp = sub.add_parser("plan", help="solve and cache the Eco-Cruise profile")
    common(sp)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("run", help="simulate cases and write traces and reports")
    common(sp)
    sp.add_argument("--cases", default="all", help="'all', ids like 1,2,5, or scenario .json files")
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--out", default="runs")
    sp.add_argument("--dt", type=float, default=None, help="time step override [s]")
    sp.add_argument("--jobs", type=int, default=1, help="cases to simulate in parallel")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="fuel table from report files or a run directory")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--baseline", default=None, help="reference case (default 3, else the first)")
    sp.add_argument("--out", help="write the table as CSV")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("export", help="plot-ready columns from a trace")
    sp.add_argument("trace", help="trace.csv or a case directory")
    sp.add_argument("--fields", default=",".join(TRACE_FIELDS))
    sp.add_argument("--every", type=int, default=1, help="keep every n-th row")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are validation errors here
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
