"""Command-line front end.

Subcommands ``parse``, ``estimate``, ``attack`` and ``sweep``. Line ids are
0-based rows of the case's branch table; buses are printed with their
external numbers from the case file.

Exit codes: 0 success, 1 usage error, 2 unreadable input, 3 no hidden attack.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import AttackPlan, normal_conditions, solve_change
from .case_io import (
    CaseDocument,
    CaseParseError,
    MeterPlacement,
    Scenario,
    ScenarioError,
    builtin_case,
    load_case,
    load_scenario,
    random_injection_placement,
    save_scenario,
    to_grid,
)
from .estimator import bad_data_check, estimate, generate_measurements, topology_process
from .grid import Grid, GridError
from .synthesis import SynthesisConfig, SynthesisResult, forge_measurements, optimal_attack, surrogate, synthesize_for_line

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3
SWEEP_HEADER = ["case", "fraction", "trial_seed", "optimal_line", "jam_count", "feasible", "wall_time_ms"]
SUMMARY_HEADER = ["case", "fraction", "trials", "feasible", "mean_jam_count"]
MAX_RESAMPLES = 20


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- shared helpers --------------------------------------------------------------


def resolve_case(spec: str) -> CaseDocument:
    """A path to a case file, or the name of a bundled case (``case14``...)."""
    path = Path(spec)
    if not path.exists():
        try:
            path = builtin_case(spec)
        except FileNotFoundError:
            raise FileNotFoundError(f"no case file or bundled case named {spec!r}") from None
    return load_case(path)


def parse_injections(text: str) -> float | list[int]:
    """``0.5`` is a fraction of buses; ``2,9,14`` lists external bus numbers."""
    text = text.strip()
    if "," not in text and "." in text:
        value = float(text)
        if not 0.0 <= value <= 1.0:
            raise UsageError("injection fraction must lie in [0, 1]")
        return value
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot read injection spec {text!r}") from None


def build_grid(doc: CaseDocument, injections: float | list[int], seed: int) -> Grid:
    if isinstance(injections, float):
        placement = random_injection_placement(doc, injections, np.random.default_rng(seed))
    else:
        index = {b.number: i for i, b in enumerate(doc.buses)}
        unknown = [b for b in injections if b not in index]
        if unknown:
            raise UsageError(f"unknown injection bus(es) {unknown}")
        placement = MeterPlacement.all_flows(doc, [index[b] for b in injections])
    return to_grid(doc, placement)


def true_state(grid: Grid, seed: int) -> np.ndarray:
    """State used to check a plan on the real grid: uniform angles in [-0.5, 0.5]."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    return rng.uniform(-0.5, 0.5, grid.n_buses)


def _line_desc(grid: Grid, k: int) -> dict:
    l = grid.lines[k]
    return {"id": k, "from": grid.label(l.from_bus), "to": grid.label(l.to_bus)}


def _emit(data: dict, fmt: str, text: str) -> None:
    if fmt == "json":
        print(json.dumps(data, indent=2, sort_keys=True))
    else:
        print(text)


# --- parse -----------------------------------------------------------------------


def cmd_parse(args) -> int:
    doc = resolve_case(args.case)
    in_service = [b for b in doc.branches if b.in_service]
    grid = to_grid(doc, MeterPlacement.all_flows(doc))
    data = {
        "case": doc.name,
        "buses": len(doc.buses),
        "branches": len(doc.branches),
        "in_service": len(in_service),
        "reference_bus": doc.buses[doc.reference_bus].number,
        "connected": grid.is_connected(),
        "base_mva": doc.base_mva,
    }
    text = (
        f"{doc.name}: {data['buses']} buses, {data['branches']} branches "
        f"({data['in_service']} in service), reference bus {data['reference_bus']}, "
        f"{'connected' if data['connected'] else 'disconnected'}"
    )
    _emit(data, args.format, text)
    return EXIT_OK


# --- estimate --------------------------------------------------------------------


def cmd_estimate(args) -> int:
    if args.scenario:
        scen = load_scenario(Path(args.scenario).read_text())
        grid = scen.grid
        x = scen.true_state if scen.true_state is not None else true_state(grid, args.seed)
        plan = AttackPlan(scen.attacked_breakers, scen.jammed_flows)
        name = grid.name or Path(args.scenario).stem
    else:
        doc = resolve_case(args.case)
        grid = build_grid(doc, parse_injections(args.injections), args.seed)
        x = true_state(grid, args.seed)
        plan = AttackPlan()
        name = doc.name
    if plan.attacked_breakers or plan.jammed_flows:
        reported, ms = forge_measurements(grid, plan, x)
    else:
        reported, ms = np.ones(grid.n_lines, dtype=bool), generate_measurements(grid, x, args.noise, args.seed)
    result = estimate(topology_process(grid, reported), ms)
    truth = x - x[grid.reference_bus]
    error = float(np.max(np.abs(result.x_hat - truth)))
    passed = bad_data_check(result, args.threshold)
    data = {
        "case": name,
        "observable": result.observable,
        "residual_norm": result.residual_norm,
        "bad_data_check": "pass" if passed else "fail",
        "max_state_error": error,
        "undetermined_buses": [grid.label(b) for b in result.undetermined_buses],
        "x_hat": result.x_hat.tolist(),
    }
    text = "\n".join(
        [
            f"case {name}: {'observable' if result.observable else 'NOT observable'}",
            f"residual norm {result.residual_norm:.3e} ({'pass' if passed else 'FAIL'} at {args.threshold:g})",
            f"max |x_hat - x| {error:.3e}",
        ]
    )
    _emit(data, args.format, text)
    return EXIT_OK


# --- attack ----------------------------------------------------------------------


def verify_on_grid(grid: Grid, plan: AttackPlan, x: np.ndarray) -> dict:
    """Run the defender's pipeline on the forged readings for the real grid."""
    reported, ms = forge_measurements(grid, plan, x)
    result = estimate(topology_process(grid, reported), ms)
    shift = float(np.max(np.abs(result.x_hat - (x - x[grid.reference_bus]))))
    hidden = result.observable and bad_data_check(result, 1e-8) and shift > 1e-9
    return {"hidden": bool(hidden), "residual_norm": result.residual_norm, "state_shift": shift}


def cmd_attack(args) -> int:
    doc = resolve_case(args.case)
    grid = build_grid(doc, parse_injections(args.injections), args.seed)
    config = SynthesisConfig(surrogate_state_seed=args.surrogate_seed, solver=args.solver)
    if args.line is not None:
        if not 0 <= args.line < grid.n_lines:
            raise UsageError(f"line must be in 0..{grid.n_lines - 1}")
        res = synthesize_for_line(grid, args.line, config)
    else:
        res = optimal_attack(grid, config)
    data = {"case": doc.name, "injection_buses": [grid.label(b) for b in grid.injection_buses], "solver": res.solver_used}
    if not res.feasible:
        data.update(feasible=False, reason=res.reason)
        _emit(data, args.format, f"infeasible: {res.reason}")
        return EXIT_INFEASIBLE
    x = true_state(grid, args.seed)
    real = solve_change(grid, res.plan, x)
    verdict = verify_on_grid(grid, res.plan, x)
    data.update(
        feasible=True,
        attacked_line=_line_desc(grid, res.line),
        jammed=[_line_desc(grid, k) for k in res.jam_set],
        jam_count=res.jam_count,
        certificate=res.certificate.tolist(),
        verification=verdict,
    )
    jams = ", ".join(f"{d['id']} ({d['from']}-{d['to']})" for d in data["jammed"])
    a = data["attacked_line"]
    text = "\n".join(
        [
            f"attack breaker on line {a['id']} ({a['from']}-{a['to']})",
            f"jam {res.jam_count} flow(s): {jams}",
            "certificate c: " + " ".join(f"{v:.4g}" for v in res.certificate),
            f"hidden: {'yes' if verdict['hidden'] else 'no'} "
            f"(residual {verdict['residual_norm']:.2e}, state shift {verdict['state_shift']:.3g})",
        ]
    )
    _emit(data, args.format, text)
    if args.save_scenario:
        scen = Scenario(
            grid, res.plan.attacked_breakers, res.plan.jammed_flows, real.change, x, notes=[f"case {doc.name}"]
        )
        Path(args.save_scenario).write_text(save_scenario(scen))
    return EXIT_OK


# --- sweep -----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    case_path: str
    injection_fractions: tuple[float, ...]
    trials_per_fraction: int
    seed: int
    output_path: str | None = None
    workers: int = 1
    timing: bool = True

    def __post_init__(self):
        if self.trials_per_fraction < 1:
            raise UsageError("trials must be at least 1")
        if not self.injection_fractions:
            raise UsageError("need at least one injection fraction")
        if any(not 0 < f <= 1 for f in self.injection_fractions):
            raise UsageError("injection fractions must lie in (0, 1]")
        object.__setattr__(self, "injection_fractions", tuple(sorted(self.injection_fractions)))


@dataclass(frozen=True)
class SweepRow:
    case_name: str
    fraction: float
    trial_seed: int
    optimal_line: int | None
    jam_count: int | None
    feasible: bool
    wall_time: float

    def as_csv(self, timing: bool) -> list[str]:
        return [
            self.case_name,
            f"{self.fraction:g}",
            str(self.trial_seed),
            "" if self.optimal_line is None else str(self.optimal_line),
            "" if self.jam_count is None else str(self.jam_count),
            str(self.feasible).lower(),
            f"{self.wall_time * 1000:.1f}" if timing else "",
        ]


def trial_grid(doc: CaseDocument, fraction: float, trial_seed: int) -> tuple[Grid, SynthesisConfig]:
    """Placement and adversary config for one sweep trial.

    Placements whose surrogate breaks the normal-operating assumptions are
    redrawn from the same seeded stream.
    """
    rng = np.random.default_rng(trial_seed)
    config = SynthesisConfig(surrogate_state_seed=trial_seed)
    for attempt in range(MAX_RESAMPLES):
        grid = to_grid(doc, random_injection_placement(doc, fraction, rng))
        problems = normal_conditions(*surrogate(grid, config))
        if not problems:
            return grid, config
        log.warning("trial %d placement %d resampled: %s", trial_seed, attempt, "; ".join(problems))
    raise RuntimeError(f"trial {trial_seed}: no placement meets normal operating conditions")


def run_trial(doc: CaseDocument, fraction: float, trial_seed: int) -> SweepRow:
    start = time.perf_counter()
    grid, config = trial_grid(doc, fraction, trial_seed)
    res: SynthesisResult = optimal_attack(grid, config)
    elapsed = time.perf_counter() - start
    return SweepRow(
        doc.name,
        fraction,
        trial_seed,
        res.line if res.feasible else None,
        res.jam_count,
        res.feasible,
        elapsed,
    )


def run_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """One row per (fraction, trial), in that order; trial seeds are ``seed + t``.

    The same placement seeds are reused for every fraction.
    """
    doc = resolve_case(cfg.case_path)
    jobs = [(f, cfg.seed + t) for f in cfg.injection_fractions for t in range(cfg.trials_per_fraction)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(run_trial, [doc] * len(jobs), *zip(*jobs)))
    return [run_trial(doc, f, s) for f, s in jobs]


def summarize(rows: list[SweepRow]) -> list[dict]:
    out = []
    for f in sorted({r.fraction for r in rows}):
        group = [r for r in rows if r.fraction == f]
        counts = [r.jam_count for r in group if r.feasible]
        out.append(
            {
                "case": group[0].case_name,
                "fraction": f,
                "trials": len(group),
                "feasible": len(counts),
                "mean_jam_count": float(np.mean(counts)) if counts else None,
            }
        )
    return out


def rows_csv(rows: list[SweepRow], timing: bool) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow(r.as_csv(timing))
    return buf.getvalue()


def summary_csv(summary: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for s in summary:
        mean = "" if s["mean_jam_count"] is None else f"{s['mean_jam_count']:.4f}"
        w.writerow([s["case"], f"{s['fraction']:g}", s["trials"], s["feasible"], mean])
    return buf.getvalue()


def summary_path(out: Path) -> Path:
    return out.with_name(out.stem + "_summary" + (out.suffix or ".csv"))


def cmd_sweep(args) -> int:
    fractions = tuple(float(t) for t in args.fractions.split(",") if t.strip())
    cfg = SweepConfig(args.case, fractions, args.trials, args.seed, args.out, args.workers, not args.no_timing)
    rows = run_sweep(cfg)
    summary = summarize(rows)
    if cfg.output_path:
        out = Path(cfg.output_path)
        out.write_text(rows_csv(rows, cfg.timing))
        summary_path(out).write_text(summary_csv(summary))
    if args.format == "json":
        print(json.dumps({"summary": summary}, indent=2, sort_keys=True))
    elif cfg.output_path:
        print(summary_csv(summary), end="")
    else:
        print(rows_csv(rows, cfg.timing), end="")
        print(summary_csv(summary), end="")
    return EXIT_OK


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="breakerjam", description="Breaker-jammer attacks on DC state estimation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, injections=True):
        sp.add_argument("--case", required=True, help="case file path or bundled name (case14, case30, case57, triangle)")
        if injections:
            sp.add_argument("--injections", default="0.5", help="fraction of buses (0.5) or bus list (2,9,14)")
            sp.add_argument("--seed", type=int, default=0, help="placement and state seed")
        sp.add_argument("--format", choices=("text", "json"), default="text")

    sp = sub.add_parser("parse", help="summarize a case file")
    common(sp, injections=False)
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("estimate", help="run the state estimator on honest or forged readings")
    sp.add_argument("--case", help="case file path or bundled name")
    sp.add_argument("--scenario", help="scenario file with a plan to replay")
    sp.add_argument("--injections", default="0.5")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise", type=float, default=0.0, help="measurement noise standard deviation")
    sp.add_argument("--threshold", type=float, default=1e-6, help="residual threshold")
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("attack", help="synthesize a hidden attack")
    common(sp)
    which = sp.add_mutually_exclusive_group(required=True)
    which.add_argument("--line", type=int, help="attack the breaker of this line id")
    which.add_argument("--optimal", action="store_true", help="pick the line needing fewest jams")
    sp.add_argument("--solver", choices=("l1_relaxation", "exhaustive", "both"), default="l1_relaxation")
    sp.add_argument("--surrogate-seed", type=int, default=0)
    sp.add_argument("--save-scenario", metavar="PATH", help="write the plan and true state as a scenario file")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("sweep", help="mean jam count against injection-meter density")
    sp.add_argument("--case", required=True)
    sp.add_argument("--fractions", default="0.25,0.5,0.75")
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="CSV path; the summary goes next to it as <name>_summary.csv")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--no-timing", action="store_true", help="leave wall_time_ms empty so reruns are byte-identical")
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "estimate" and not (args.case or args.scenario):
        print("breakerjam estimate: error: give --case or --scenario", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"breakerjam {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseParseError, ScenarioError, GridError, FileNotFoundError, ValueError) as exc:
        print(f"breakerjam {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
