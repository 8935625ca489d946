"""Acceptance criteria, one test each.

Every test records a one-line verdict that the terminal summary prints as
``criterion N: PASS|FAIL - detail``, then asserts it.
"""

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from breakerjam.analysis import (
    AttackKernel,
    AttackPlan,
    NormalConditionsWarning,
    build_reduced_graph,
    coloring_from_change,
    solve_change,
    theorem1_report,
)
from breakerjam.case_io import builtin_case, load_case
from breakerjam.cli import SweepConfig, rows_csv, run_sweep, summarize
from breakerjam.estimator import bad_data_check, estimate, generate_measurements, measurement_rows, topology_process
from breakerjam.grid import simple_grid
from breakerjam.synthesis import (
    SynthesisConfig,
    all_line_attacks,
    exhaustive_jams,
    forge_measurements,
    optimal_attack,
    reduce_to_single_breaker,
    synthesize_for_line,
)
from conftest import TRIANGLE_B, TRIANGLE_X, ieee_grid, record_acceptance

pytestmark = pytest.mark.slow

IEEE = ("case14", "case30", "case57")
GOLDEN_DIR = Path(__file__).parent / "goldens"
EXHAUSTIVE_BUDGET = 6
# placement seeds for the oracle corpus, fixed before any comparison was run
ORACLE_SEEDS = range(1000, 1010)
SUBGRAPH_SEEDS = range(1000, 1002)
# criterion 5 spans two parametrized cases; their verdicts merge here
ACCEPTANCE_5: dict = {}


def verdict(number: int, ok: bool, detail: str) -> None:
    record_acceptance(number, ok, detail)
    assert ok, detail


def true_state(grid, seed=0):
    return np.random.default_rng(seed).uniform(-0.5, 0.5, grid.n_buses)


def theorem1_of(grid, plan, x):
    res = solve_change(grid, plan, x)
    assert res.feasible, res.reason
    plan = plan.with_change(res.change)
    col = coloring_from_change(grid, plan, res.change)
    return theorem1_report(build_reduced_graph(grid, plan, col, x), col)


# --- shared corpora (built once per module) -------------------------------------------


@pytest.fixture(scope="module")
def optimal_runs(ieee_docs):
    """Optimal attack per IEEE fixture at 50% injections, seed 0, with its runtime."""
    out = {}
    for name in IEEE:
        grid = ieee_grid(ieee_docs[name], 0.5, 0)
        start = time.perf_counter()
        res = optimal_attack(grid)
        out[name] = (grid, res, time.perf_counter() - start)
    return out


@pytest.fixture(scope="module")
def multi_breaker_plans(ieee_docs):
    """Feasible plans with two or three attacked breakers on seeded IEEE-14 placements.

    Jam sets come from exact enumeration up to two jams beyond the attacked lines.
    """
    doc = ieee_docs["case14"]
    plans, seed = [], 0
    start = time.perf_counter()
    while len(plans) < 100 and seed < 5000:
        rng = np.random.default_rng([seed, 2])
        grid = ieee_grid(doc, (0.25, 0.5, 0.75)[seed % 3], seed)
        x = true_state(grid, seed)
        attacked = rng.choice(grid.n_lines, size=2 + seed % 2, replace=False)
        kernel = AttackKernel(grid, attacked, x)
        plan, _ = exhaustive_jams(kernel, len(kernel.forced_jams) + 2)
        if plan is not None:
            plans.append((grid, plan, x))
        seed += 1
    return plans, time.perf_counter() - start


def _small_grids():
    """Triangle, path and star fixtures under every injection placement."""
    grids = []
    for mask in range(8):
        inj = [b for b in range(3) if mask >> b & 1]
        grids.append((f"triangle inj={inj}", simple_grid(3, [(0, 1), (1, 2), (0, 2)], TRIANGLE_B, injections=inj)))
    for mask in range(16):
        inj = [b for b in range(4) if mask >> b & 1]
        grids.append((f"path4 inj={inj}", simple_grid(4, [(0, 1), (1, 2), (2, 3)], [1.0, 2.0, 3.0], injections=inj)))
        grids.append((f"star4 inj={inj}", simple_grid(4, [(0, 1), (0, 2), (0, 3)], [1.0, 2.0, 3.0], injections=inj)))
    return grids


def _ieee14_subgraphs(doc):
    """Induced subgraphs on IEEE-14 buses 0..k-1 (connected ones), plus the full grid."""
    full = ieee_grid(doc, 1.0, 0)
    grids = []
    for k in range(5, 14):
        edges = [(l.from_bus, l.to_bus) for l in full.lines if l.from_bus < k and l.to_bus < k]
        b = [l.susceptance for l in full.lines if l.from_bus < k and l.to_bus < k]
        for fraction in (0.25, 0.5, 0.75):
            for seed in SUBGRAPH_SEEDS:
                rng = np.random.default_rng(seed)
                inj = sorted(rng.choice(k, size=max(1, round(fraction * k)), replace=False).tolist())
                g = simple_grid(k, edges, b, injections=inj, name=f"ieee14[:{k}]")
                if g.is_connected():
                    grids.append((f"ieee14[:{k}] f={fraction} seed={seed}", g))
    for seed in ORACLE_SEEDS:
        fraction = (0.25, 0.5, 0.75)[seed % 3]
        grids.append((f"ieee14 f={fraction} seed={seed}", ieee_grid(doc, fraction, seed)))
    return grids


@pytest.fixture(scope="module")
def oracle_runs(ieee_docs):
    """(grid label, grid, line, result with both solvers) over every line of every small grid."""
    runs = []
    config = SynthesisConfig(solver="both", max_exhaustive_jams=EXHAUSTIVE_BUDGET)
    for label, grid in _small_grids() + _ieee14_subgraphs(ieee_docs["case14"]):
        assert grid.n_lines <= 20
        for k in range(grid.n_lines):
            runs.append((label, grid, k, synthesize_for_line(grid, k, config)))
    return runs


# --- criteria -----------------------------------------------------------------------


def test_criterion_1_hidden_attack_end_to_end(optimal_runs):
    ok, parts = True, []
    for name, (grid, res, elapsed) in optimal_runs.items():
        if not res.feasible:
            ok = False
            parts.append(f"{name} no feasible attack ({res.reason})")
            continue
        x = true_state(grid)
        reported, ms = forge_measurements(grid, res.plan, x)
        est = estimate(topology_process(grid, reported), ms)
        shift = float(np.max(np.abs(est.x_hat - (x - x[grid.reference_bus]))))
        case_ok = est.observable and est.residual_norm <= 1e-8 and shift > 1e-3 and elapsed < 60
        ok &= case_ok
        parts.append(
            f"{name} line {res.line} jams {res.jam_count} residual {est.residual_norm:.1e} "
            f"shift {shift:.3f} {elapsed:.1f}s"
        )
    verdict(1, ok, "; ".join(parts))


def test_criterion_2_single_breaker_reduction(multi_breaker_plans):
    plans, build_time = multi_breaker_plans
    start = time.perf_counter()
    good = 0
    for grid, plan, x in plans:
        single = reduce_to_single_breaker(grid, plan, x)
        if (
            len(single.attacked_breakers) == 1
            and single.attacked_breakers <= plan.attacked_breakers
            and solve_change(grid, single, x).feasible
        ):
            good += 1
    elapsed = time.perf_counter() - start
    ok = len(plans) >= 100 and good == len(plans) and elapsed + build_time < 60
    verdict(
        2,
        ok,
        f"{good}/{len(plans)} multi-breaker plans reduced to a feasible single-breaker plan; "
        f"{build_time:.1f}s to build, {elapsed:.1f}s to reduce",
    )


def test_criterion_3_colors_and_boundary_meters(optimal_runs, multi_breaker_plans, oracle_runs, scenario14, ieee_docs):
    corpus = []
    for grid, res, _ in optimal_runs.values():
        if res.feasible:
            corpus.append(("optimal " + grid.name, grid, res.plan, true_state(grid)))
    for grid, plan, x in multi_breaker_plans[0]:
        corpus.append(("multi-breaker", grid, plan, x))
        corpus.append(("reduced", grid, reduce_to_single_breaker(grid, plan, x), x))
    for label, grid, _, res in oracle_runs:
        if res.feasible:
            corpus.append((label, grid, res.plan, true_state(grid, 1)))
    for seed in range(10):
        grid = ieee_grid(ieee_docs["case14"], (0.25, 0.5, 0.75)[seed % 3], seed)
        for res in all_line_attacks(grid):
            if res.feasible:
                corpus.append((f"ieee14 seed {seed}", grid, res.plan, true_state(grid, seed)))
    grid, plan, x = scenario14
    corpus.append(("two-breaker scenario", grid, plan, x))
    ring = simple_grid(3, [(0, 1), (1, 2), (0, 2)], TRIANGLE_B, injections=[0, 1, 2])
    corpus.append(("metered triangle", ring, AttackPlan({0}, {0, 1, 2}), TRIANGLE_X))

    bad, rings, skipped = [], 0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NormalConditionsWarning)
        for label, grid, plan, x in corpus:
            # plans synthesized on a surrogate are checked on a true state; count any that fail there
            if not solve_change(grid, plan, x).feasible:
                skipped += 1
                continue
            rep = theorem1_of(grid, plan, x)
            if not rep.holds:
                bad.append(label)
                rings += rep.degenerate_ring
    checked = len(corpus) - skipped
    detail = f"{checked - len(bad)}/{checked} feasible plans satisfy colors-1 boundary meters at full rank"
    if skipped:
        detail += f" ({skipped} plans infeasible on the test state, skipped)"
    if bad:
        detail += f"; {len(bad)} violate ({rings} closed rings of metered supernodes), e.g. {', '.join(bad[:3])}"
    verdict(3, not bad, detail)


def test_criterion_4_oracle_equivalence(oracle_runs):
    agree = beyond = 0
    mismatches = []
    for label, _, k, res in oracle_runs:
        exact, relaxed = res.jam_count, res.relaxation_jam_count
        if exact == relaxed:
            agree += 1
        elif exact is None and relaxed is not None and relaxed > EXHAUSTIVE_BUDGET:
            beyond += 1
        else:
            mismatches.append(f"{label} line {k}: exhaustive {exact} vs l1 {relaxed}")
    grids = len({label for label, *_ in oracle_runs})
    detail = (
        f"{grids} grids, {len(oracle_runs)} lines: {agree} agree, "
        f"{beyond} beyond the {EXHAUSTIVE_BUDGET}-jam exhaustive budget, {len(mismatches)} mismatches"
    )
    if mismatches:
        detail += " (" + "; ".join(mismatches[:4]) + ")"
    verdict(4, not mismatches, detail)


@pytest.mark.parametrize("name", ["case14", "case30"])
def test_criterion_5_jam_count_trend(name):
    rows = run_sweep(SweepConfig(name, (0.25, 0.5, 0.75), 20, 0, timing=False))
    means = [s["mean_jam_count"] for s in summarize(rows)]
    trend_ok = None not in means and all(a <= b for a, b in zip(means, means[1:]))
    golden = GOLDEN_DIR / f"sweep_{name}.csv"
    golden_ok = golden.exists() and golden.read_text() == rows_csv(rows, timing=False)
    detail = f"{name} mean jams " + ", ".join("-" if m is None else f"{m:.2f}" for m in means)
    detail += "; golden " + ("matches" if golden_ok else "differs or missing")
    previous = ACCEPTANCE_5.get("detail")
    ACCEPTANCE_5["ok"] = ACCEPTANCE_5.get("ok", True) and trend_ok and golden_ok
    ACCEPTANCE_5["detail"] = detail if previous is None else previous + " | " + detail
    record_acceptance(5, ACCEPTANCE_5["ok"], ACCEPTANCE_5["detail"])
    assert trend_ok and golden_ok, detail


def test_criterion_6_state_independence(optimal_runs):
    ok, parts = True, []
    for name, (grid, first, _) in optimal_runs.items():
        picks = {(first.line, first.jam_set)}
        for seed in range(1, 10):
            res = optimal_attack(grid, SynthesisConfig(surrogate_state_seed=seed))
            picks.add((res.line, res.jam_set))
        ok &= len(picks) == 1
        parts.append(f"{name} {len(picks)} distinct answer(s) over 10 seeds")
    verdict(6, ok, "; ".join(parts))


def _critical(grid, mask, i):
    """Measurement ``i`` is critical when dropping its row lowers the rank."""
    H = measurement_rows(grid, mask)
    return np.linalg.matrix_rank(np.delete(H, i, axis=0)) < np.linalg.matrix_rank(H)


def test_criterion_7_estimator_sanity(ieee_docs, triangle, path3):
    grids = [("triangle", triangle), ("path3", path3)] + [(n, ieee_grid(ieee_docs[n], 0.5, 0)) for n in IEEE]
    worst_err = worst_gauge = 0.0
    checked = missed = 0
    for _, grid in grids:
        x = true_state(grid, 5)
        ms = generate_measurements(grid, x)
        est = estimate(grid, ms)
        worst_err = max(worst_err, float(np.max(np.abs(est.x_hat - (x - x[grid.reference_bus])))))
        shifted = estimate(grid, generate_measurements(grid, x + 3.7))
        worst_gauge = max(worst_gauge, float(np.max(np.abs(shifted.x_hat - est.x_hat))))
        n_f = int(ms.received_flow_mask.sum())
        for i in range(n_f + len(ms.z_inj)):
            if _critical(grid, ms.received_flow_mask, i):
                continue
            z_f, z_inj = ms.z_f.copy(), ms.z_inj.copy()
            if i < n_f:
                z_f[np.flatnonzero(ms.received_flow_mask)[i]] += 0.1
            else:
                z_inj[i - n_f] += 0.1
            bad = type(ms)(z_f, z_inj, ms.received_flow_mask, ms.injection_buses)
            checked += 1
            missed += bad_data_check(estimate(grid, bad), 1e-6)
    ok = worst_err <= 1e-9 and worst_gauge <= 1e-9 and checked > 0 and missed == 0
    verdict(
        7,
        ok,
        f"round-trip error {worst_err:.1e}, gauge drift {worst_gauge:.1e}, "
        f"{checked - missed}/{checked} redundant perturbations detected",
    )


def test_criterion_8_manifest(manifest):
    parts, ok = [], True
    for name, counts in sorted(manifest.items()):
        doc = load_case(builtin_case(name))
        got = {
            "buses": len(doc.buses),
            "branches": len(doc.branches),
            "in_service": sum(1 for br in doc.branches if br.in_service),
        }
        ok &= got == counts
        parts.append(f"{name} {got['buses']}/{got['branches']}/{got['in_service']}")
    verdict(8, ok, "buses/branches/in service: " + ", ".join(parts))
