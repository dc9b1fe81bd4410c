"""Command-line front end.

Exit codes: 0 optimal, 1 input error, 2 infeasible, 3 stopped on the time
budget with a gap. Settings resolve as flags > config file > defaults and the
effective configuration is printed to stderr on every run.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import samples
from .acoustics import BAND_LABELS, FLOOR, N_BANDS, EdgeAcoustics, propagate_path
from .components import Catalog, CatalogError
from .economics import EconomicParams, EconomicsError
from .fitting import BASES, FitError, fit_model
from .loadgen import DemandError, cluster_load_cases, hourly_matrix, load_demands
from .network import NetworkError, NetworkGraph, NetworkLookupError
from .problem import CompileError, Options
from .solver import SolutionError, pareto_sweep, solve_airflow, solve_coupled, solve_sequential
from .solver.solution import Solution, design_from_purchases

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_BUDGET = 0, 1, 2, 3
THREADS_ENV = "VENTOPT_THREADS"
FIXTURES = {
    "chain": samples.chain_fixture,
    "mini": samples.mini_fixture,
    "case_study": samples.case_study_fixture,
    "tradeoff": samples.tradeoff_fixture,
}
INPUT_ERRORS = (NetworkError, NetworkLookupError, CatalogError, EconomicsError, DemandError, CompileError,
                SolutionError, FitError, ValueError, KeyError, OSError)


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    network: Optional[str] = None
    catalog: Optional[str] = None
    economics: Optional[str] = None
    demands: Optional[str] = None
    loadcases: Optional[str] = None
    fixture: Optional[str] = None
    mode: str = "coupled"
    noise_limit: Optional[float] = None
    limits: list = field(default_factory=list)
    tol: float = 1e-3
    seed: int = 0
    threads: int = 1
    time_budget: Optional[float] = None
    length_step_m: float = 0.01
    out: str = "."

    def validate(self):
        if self.mode not in ("airflow", "coupled", "sequential"):
            raise InputError(f"mode: unknown mode {self.mode!r}")
        for key in ("network", "catalog", "economics", "demands", "loadcases"):
            p = getattr(self, key)
            if p is not None and not Path(p).is_file():
                raise InputError(f"{key}: file not found: {p}")
        if self.fixture is not None and self.fixture not in FIXTURES:
            raise InputError(f"fixture: unknown fixture {self.fixture!r} (known: {', '.join(FIXTURES)})")
        if self.noise_limit is not None and not self.noise_limit > 0:
            raise InputError("noise_limit: must be positive")
        if any(not x > 0 for x in self.limits):
            raise InputError("limits: must be positive")
        if not 0 < self.tol <= 0.1:
            raise InputError("tol: must lie in (0, 0.1]")
        if self.threads < 1:
            raise InputError("threads: must be at least 1")
        if self.time_budget is not None and self.time_budget <= 0:
            raise InputError("time_budget: must be positive")
        if self.length_step_m <= 0:
            raise InputError("length_step_m: must be positive")
        return self


def _default_threads():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV}: not an integer: {raw!r}") from None


def resolve_config(args) -> RunConfig:
    """Merge defaults, the config file and explicit flags (in that order)."""
    merged = asdict(RunConfig())
    merged["threads"] = _default_threads()
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise InputError(f"config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise InputError("config: expected a JSON object")
        unknown = set(data) - set(merged) - {"format_version"}
        if unknown:
            raise InputError(f"config: unknown keys {sorted(unknown)}")
        base = Path(args.config).resolve().parent
        for k, v in data.items():
            if k in ("network", "catalog", "economics", "demands", "loadcases") and v is not None:
                v = str(base / v)
            if k != "format_version":
                merged[k] = v
    for k in merged:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    try:
        cfg = RunConfig(**merged)
        cfg.tol = float(cfg.tol)
        cfg.seed = int(cfg.seed)
        cfg.threads = int(cfg.threads)
        cfg.limits = [float(x) for x in cfg.limits]
        cfg.noise_limit = None if cfg.noise_limit is None else float(cfg.noise_limit)
        cfg.time_budget = None if cfg.time_budget is None else float(cfg.time_budget)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config: {exc}") from None
    return cfg.validate()


def _dump_config(cmd, cfg, stream):
    d = {"command": cmd, **asdict(cfg)}
    stream.write("effective config: " + json.dumps(d, sort_keys=True) + "\n")


# ------------------------------------------------------------------ inputs

def _inputs(cfg: RunConfig):
    if cfg.fixture:
        g, cat, econ = FIXTURES[cfg.fixture]()
    else:
        if cfg.network is None or cfg.catalog is None:
            raise InputError("network and catalog are required (or name a fixture)")
        g = NetworkGraph.load(cfg.network, validate=False)
        cat = Catalog.load(cfg.catalog)
        econ = EconomicParams()
    if cfg.economics:
        try:
            econ = EconomicParams.from_dict(json.loads(Path(cfg.economics).read_text()))
        except json.JSONDecodeError as exc:
            raise InputError(f"economics: line {exc.lineno}: {exc.msg}") from None
    if cfg.loadcases:
        try:
            lc = json.loads(Path(cfg.loadcases).read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"loadcases: line {exc.lineno}: {exc.msg}") from None
        g = g.with_scenarios(lc)
    return g, cat, econ


def _model(cfg: RunConfig, force_mode=None):
    from .modelbuild import build_model

    g, cat, econ = _inputs(cfg)
    mode = force_mode or cfg.mode
    opts = Options(mode="airflow_only" if mode == "airflow" else "coupled",
                   noise_limit=cfg.noise_limit, length_step_m=cfg.length_step_m)
    return build_model(g, cat, econ, options=opts)


def _exit_for(sol: Solution) -> int:
    if sol.status == "optimal":
        return EXIT_OK
    if sol.status == "budget":
        return EXIT_BUDGET
    return EXIT_INFEASIBLE


def _solve(cfg, model, mode):
    if mode == "airflow":
        return solve_airflow(model, tol=cfg.tol, time_budget=cfg.time_budget)
    if mode == "sequential":
        return solve_sequential(model, tol=cfg.tol, time_budget=cfg.time_budget)
    return solve_coupled(model, tol=cfg.tol, time_budget=cfg.time_budget)


def _stamp(sol: Solution, cfg: RunConfig):
    sol.metadata.update({"seed": cfg.seed, "threads": cfg.threads})


# ------------------------------------------------------------------ commands

def cmd_loadcases(cfg: RunConfig, args, out: Path) -> int:
    if cfg.demands is None:
        raise InputError("demands: a demand file is required")
    rooms = load_demands(cfg.demands)
    X = hourly_matrix(rooms)
    if not 1 <= args.clusters <= len(X):
        raise InputError(f"clusters: need 1..{len(X)}, got {args.clusters}")
    lc = cluster_load_cases(X, args.clusters, seed=cfg.seed, room_ids=[r.id for r in rooms],
                            ceil_to_max=args.ceil_to_max)
    lc.dump(out / "loadcases.json")
    print(f"wrote {out / 'loadcases.json'} ({args.clusters} load cases)")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, args, out: Path) -> int:
    from .modelbuild import assignment_from_solution, dump_assignment

    model = _model(cfg)
    sol = _solve(cfg, model, cfg.mode)
    _stamp(sol, cfg)
    sol.dump(out / "solution.json")
    (out / "costs.csv").write_text(sol.cost_csv())
    (out / "rooms.csv").write_text(sol.rooms_csv())
    if sol.design is not None:
        dump_assignment(assignment_from_solution(model, sol), out / "assignment.json")
    if args.compare_sequential and cfg.mode == "coupled":
        seq = solve_sequential(model, tol=cfg.tol, time_budget=cfg.time_budget)
        _stamp(seq, cfg)
        seq.dump(out / "sequential_solution.json")
    print(f"status {sol.status}, objective {sol.objective:.6f} EUR")
    if sol.certificate:
        print("certificate: " + json.dumps(sol.certificate, sort_keys=True))
    return _exit_for(sol)


def cmd_pareto(cfg: RunConfig, args, out: Path) -> int:
    if not cfg.limits:
        raise InputError("limits: give at least one limit")
    limits = sorted(set(cfg.limits), reverse=True)
    model = _model(cfg, force_mode="coupled")
    front = pareto_sweep(model, limits, tol=cfg.tol, time_budget=cfg.time_budget)
    seq = None
    if args.compare_sequential:
        seq = [solve_sequential(model, pt["limit"], tol=cfg.tol, time_budget=cfg.time_budget)
               if math.isfinite(pt["limit"]) else pt["solution"] for pt in front.points]
    front.dump(out / "pareto.json")
    (out / "pareto.csv").write_text(front.to_csv(seq))
    print(f"{len(front.points)} front points")
    if not front.points:
        return EXIT_INFEASIBLE
    if any(pt["solution"].status == "budget" for pt in front.points):
        return EXIT_BUDGET
    return EXIT_OK


class _TraceDesign:
    """Per-edge acoustics of an evaluated design in the form the path tracer reads."""

    def __init__(self, problem, design, ev):
        self.p = problem
        self.D, self.N = problem.edge_acoustics(design, ev)

    def edge_acoustics(self, eid, scenario):
        p = self.p
        i, si = p.epos[eid], p.scen.index(scenario)
        kind = p.graph.edges[eid].slot
        d, n = self.D[i, si], self.N[i, si]
        if kind == "fan_station":
            on = bool(np.any(n > FLOOR))
            return EdgeAcoustics(kind, fan_noises=(n,) if on else (), active=on)
        return EdgeAcoustics(kind, damping=d, flow_noise=n, active=True)


def trace_rows(model, sol: Solution, room: str, scenario: Optional[str] = None):
    p = model.problem
    g = p.graph
    if room not in g.rooms:
        raise InputError(f"room: {room!r} is not a room of the network")
    if not g.path_to_room(room):
        raise InputError(f"room: {room!r} has an empty path")
    if scenario is None:
        scenario = max(p.scen, key=lambda s: (g.room_flow(room, s), -p.scen.index(s)))
    elif scenario not in p.scen:
        raise InputError(f"scenario: unknown scenario {scenario!r}")
    design = design_from_purchases(p, sol.purchases)
    bought = (sol.purchases or {}).get("vfcs") or {}
    pins = {v.index: bool(bought[v.edge]) for v in p.vfcs if v.edge in bought}
    ev = p.evaluate(design, with_acoustics=True, limits=np.full(p.R, np.inf), vfc_pins=pins)
    if ev.dispatch is None:
        raise InputError(f"solution cannot be operated: {ev.reason}")
    return propagate_path(g, room, scenario, _TraceDesign(p, design, ev))


def trace_csv(tr) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "edge", "kind", "band", "level_in_db", "damping_db", "flow_noise_db", "level_out_db"])
    for k, row in enumerate(tr.rows):
        for b in range(N_BANDS):
            w.writerow([k, row.edge, row.kind, BAND_LABELS[b], f"{row.level_in[b]:.6f}", f"{row.damping[b]:.6f}",
                        f"{row.flow_noise[b]:.6f}", f"{row.level_out[b]:.6f}"])
    w.writerow([len(tr.rows), tr.room, "room_dba", "A", "", "", "", f"{tr.room_dba:.6f}"])
    return buf.getvalue()


def cmd_trace(cfg: RunConfig, args, out: Path) -> int:
    if not args.solution:
        raise InputError("solution: a solution file is required")
    sol = Solution.load(args.solution)
    if not sol.purchases:
        raise InputError("solution: file holds no design")
    model = _model(cfg, force_mode="coupled")
    tr = trace_rows(model, sol, args.room, args.scenario)
    (out / "trace.csv").write_text(trace_csv(tr))
    print(f"room {tr.room} scenario {tr.scenario}: {tr.room_dba:.4f} dB(A)")
    return EXIT_OK


def _read_samples(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InputError(f"{path}: no sample rows")
    cols = {}
    for no, row in enumerate(rows, start=2):
        for k, v in row.items():
            try:
                cols.setdefault(k, []).append(float(v))
            except (TypeError, ValueError):
                raise InputError(f"{path}: line {no}: column {k!r} is not numeric") from None
    return cols


def cmd_fit(cfg: RunConfig, args, out: Path) -> int:
    if not args.samples:
        raise InputError("samples: give at least one EQUATION=FILE pair")
    results = {}
    for item in args.samples:
        eq, sep, path = item.partition("=")
        if not sep or eq not in BASES:
            raise InputError(f"samples: expected EQUATION=FILE with EQUATION in {sorted(BASES)}, got {item!r}")
        try:
            results[eq] = fit_model(_read_samples(path), eq)
        except FitError as exc:
            raise InputError(f"fit {eq}: {exc}") from None
    coef = {"format_version": 1,
            "equations": {eq: {"coefficients": np.asarray(r["coefficients"]).tolist(), "r2": r["r2"]}
                          for eq, r in sorted(results.items())}}
    (out / "coefficients.json").write_text(json.dumps(coef, indent=2, sort_keys=True) + "\n")
    if cfg.catalog:
        if not args.entity:
            raise InputError("entity: needed to place coefficients into a catalog")
        data = Catalog.load(cfg.catalog).to_dict()
        for eq, r in results.items():
            section, key = BASES[eq].catalog_key
            if args.entity not in data[section]:
                raise InputError(f"entity: {args.entity!r} is not in catalog section {section}")
            data[section][args.entity][key] = np.asarray(r["coefficients"]).tolist()
        Catalog.from_dict(data).dump(out / "catalog.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["equation", "target", "r2", "below_floor"])
    low = 0
    for eq, r in sorted(results.items()):
        scores = r["r2"] if isinstance(r["r2"], list) else [r["r2"]]
        for tgt, s in zip(BASES[eq].targets, scores):
            flag = s < args.r2_floor
            low += flag
            w.writerow([eq, tgt, f"{s:.6f}", "yes" if flag else "no"])
    (out / "r2_report.csv").write_text(buf.getvalue())
    print(f"fitted {len(results)} equations; {low} scores below {args.r2_floor}")
    return EXIT_OK


def cmd_export_model(cfg: RunConfig, args, out: Path) -> int:
    from .modelbuild import export_model

    model = _model(cfg)
    text = export_model(model)
    (out / "model.txt").write_text(text)
    c = model.counts()
    print(f"{c['variables']} variables, {c['constraints']} constraints")
    return EXIT_OK


def cmd_check_solution(cfg: RunConfig, args, out: Path) -> int:
    from .modelbuild import check_solution, load_assignment, parse_model

    if not args.model or not args.assignment:
        raise InputError("model and assignment files are required")
    model = parse_model(Path(args.model).read_text())
    rep = check_solution(model, load_assignment(args.assignment), tol=args.check_tol)
    (out / "check_report.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    print(rep.summary())
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


COMMANDS = {
    "loadcases": cmd_loadcases, "fit": cmd_fit, "optimize": cmd_optimize, "pareto": cmd_pareto,
    "trace": cmd_trace, "export-model": cmd_export_model, "check-solution": cmd_check_solution,
}


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _limits(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--network")
    common.add_argument("--catalog")
    common.add_argument("--economics")
    common.add_argument("--loadcases", help="load-case file replacing the network's scenarios")
    common.add_argument("--fixture", help=f"bundled synthetic input: {', '.join(FIXTURES)}")
    common.add_argument("--mode", choices=["airflow", "coupled", "sequential"])
    common.add_argument("--noise-limit", dest="noise_limit", type=float, help="uniform room limit, dB(A)")
    common.add_argument("--tol", type=float, help="relative optimality gap")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help=f"default from ${THREADS_ENV}")
    common.add_argument("--time-budget", dest="time_budget", type=float, help="seconds")
    common.add_argument("--length-step", dest="length_step_m", type=float, help="silencer length grid, m")
    common.add_argument("--out", help="output directory")

    p = _Parser(prog="ventopt", description="Life-cycle cost design of ventilation networks under noise limits.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("loadcases", parents=[common], help="cluster hourly demands into weighted load cases")
    s.add_argument("--demands")
    s.add_argument("-k", "--clusters", type=int, default=3)
    s.add_argument("--ceil-to-max", action="store_true", help="round each cluster up to its largest member")

    s = sub.add_parser("fit", parents=[common], help="fit characteristic-equation coefficients")
    s.add_argument("--samples", action="append", default=[], metavar="EQUATION=FILE")
    s.add_argument("--entity", help="catalog entry receiving the coefficients")
    s.add_argument("--r2-floor", dest="r2_floor", type=float, default=0.9)

    s = sub.add_parser("optimize", parents=[common], help="solve one design problem")
    s.add_argument("--compare-sequential", action="store_true")

    s = sub.add_parser("pareto", parents=[common], help="sweep noise limits")
    s.add_argument("--limits", type=_limits, help="comma-separated limits, dB(A)")
    s.add_argument("--compare-sequential", action="store_true")

    s = sub.add_parser("trace", parents=[common], help="octave-band trace along one room's path")
    s.add_argument("--solution")
    s.add_argument("--room", required=True)
    s.add_argument("--scenario", help="default: the scenario with the largest room flow")

    sub.add_parser("export-model", parents=[common], help="write the algebraic model as text")

    s = sub.add_parser("check-solution", parents=[common], help="residual check of an assignment")
    s.add_argument("--model")
    s.add_argument("--assignment")
    s.add_argument("--check-tol", dest="check_tol", type=float, default=1e-6)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code in (EXIT_OK, EXIT_INPUT) else EXIT_INPUT
    try:
        cfg = resolve_config(args)
        _dump_config(args.command, cfg, sys.stderr)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args, out)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
