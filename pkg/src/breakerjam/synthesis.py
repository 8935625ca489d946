"""The adversary's side: choose which flows to jam for a breaker attack, pick the
cheapest single-breaker attack, shrink multi-breaker plans to one breaker and
forge what the control center receives.

The adversary knows topology and meter placement but neither the state nor the
susceptances; it plans against a random surrogate state (and, by default,
random distinct susceptances). Feasibility of a jam set is a structural
property, so under generic surrogates the plan carries over to the real grid.
"""
from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Literal

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .analysis import AttackKernel, AttackPlan, ContractViolation, _incidence, solve_change
from .estimator import MeasurementSet, generate_measurements
from .grid import Grid, flows

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-7
# (radius in hops, extra binding meters) per widening round of the active-set search
ACTIVE_ROUNDS = ((2, 2), (3, 3))
# tried only when those rounds give nothing: any distance, up to four extra meters
ESCALATION_ROUNDS = ((None, 4),)
ESCALATION_LIMIT = 128

Solver = Literal["l1_relaxation", "exhaustive", "both"]


@dataclass(frozen=True)
class SynthesisConfig:
    surrogate_state_seed: int = 0
    surrogate_susceptance_mode: Literal["use_true", "random_distinct"] = "random_distinct"
    solver: Solver = "l1_relaxation"
    max_exhaustive_jams: int = 6

    def __post_init__(self):
        if self.max_exhaustive_jams < 1:
            raise ValueError("max_exhaustive_jams must be at least 1")
        if self.solver not in ("l1_relaxation", "exhaustive", "both"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.surrogate_susceptance_mode not in ("use_true", "random_distinct"):
            raise ValueError(f"unknown susceptance mode {self.surrogate_susceptance_mode!r}")


@dataclass(frozen=True)
class SynthesisResult:
    lines: tuple[int, ...]
    plan: AttackPlan | None
    solver_used: str
    reason: str = ""
    relaxation_jam_count: int | None = None

    @property
    def feasible(self) -> bool:
        return self.plan is not None

    @property
    def line(self) -> int:
        return self.lines[0]

    @property
    def jam_count(self) -> int | None:
        return None if self.plan is None else len(self.plan.jammed_flows)

    @property
    def certificate(self) -> np.ndarray | None:
        return None if self.plan is None else self.plan.induced_change

    @property
    def jam_set(self) -> tuple[int, ...]:
        return () if self.plan is None else tuple(sorted(self.plan.jammed_flows))


# --- surrogates ---------------------------------------------------------------


def _distinct_uniform(rng: np.random.Generator, n: int, low: float, high: float, min_gap: float = 1e-6) -> np.ndarray:
    while True:
        v = rng.uniform(low, high, n)
        if n < 2 or np.min(np.diff(np.sort(v))) > min_gap:
            return v


def surrogate(grid: Grid, config: SynthesisConfig) -> tuple[Grid, np.ndarray]:
    """Grid and state the adversary plans against.

    State entries are uniform on [0.5, 1.5], redrawn until every line flow is
    nonzero and the flow magnitudes are pairwise distinct.
    """
    rng = np.random.default_rng(config.surrogate_state_seed)
    g = grid
    if config.surrogate_susceptance_mode == "random_distinct":
        g = grid.with_susceptances(_distinct_uniform(rng, grid.n_lines, 0.5, 1.5))
    for _ in range(1000):
        x = rng.uniform(0.5, 1.5, grid.n_buses)
        f = np.abs(flows(g, x))
        if np.min(f) > 1e-6 and (len(f) < 2 or np.min(np.diff(np.sort(f))) > 1e-9):
            return g, x
    raise RuntimeError("could not draw a surrogate state with distinct nonzero flows")


# --- jam-set search -----------------------------------------------------------


def _candidates(kernel: AttackKernel) -> list[int]:
    return sorted(kernel.metered - kernel.forced_jams)


def exhaustive_jams(kernel: AttackKernel, budget: int) -> tuple[AttackPlan | None, str]:
    """Smallest feasible jam set, searched in increasing size then lexicographic order."""
    forced = kernel.forced_jams
    if kernel.islanded:
        return None, "disconnection: attacked breakers island part of the grid (rank condition fails)"
    if not np.any(np.abs(kernel.rhs) > 0):
        return None, "c = 0 only: no injection meter sees the attacked flows"
    cands = _candidates(kernel)
    for extra in range(0, max(0, budget - len(forced)) + 1):
        for combo in combinations(cands, extra):
            jams = forced.union(combo)
            res = kernel.solve(jams)
            if res.feasible:
                return AttackPlan(kernel.attacked, jams, res.change), ""
    return None, f"no feasible jam set with at most {budget} jams"


def _l1_step(
    kernel: AttackKernel,
    obj_lines: list[int],
    M: np.ndarray,
    active: list[int],
    groups: np.ndarray,
    pin: int,
) -> np.ndarray | None:
    """Minimise sum_l |c_from(l) - c_to(l)| over ``obj_lines``.

    Buses sharing a label in ``groups`` (joined by glued lines) carry one
    common change. The injection rows of the ``active`` buses hold with their
    right-hand side scaled by a free factor ``s``, and the change across ``pin``
    is fixed to 1 so that a cut costs its line count.
    """
    k = int(groups.max()) + 1
    P = np.zeros((len(groups), k))
    P[np.arange(len(groups)), groups] = 1.0
    ref = groups[kernel.grid.reference_bus]
    free = [j for j in range(k) if j != ref]
    pin_row = (M[pin] @ P)[free]
    if not np.any(pin_row):
        return None
    Mo = (M[obj_lines] @ P)[:, free]
    Mo = Mo[np.any(Mo != 0, axis=1)]
    n, m = len(free), len(Mo)
    # variables: c (free groups), t >= |Mo c|, s
    cost = np.concatenate([np.zeros(n), np.ones(m), [0.0]])
    A_ub = np.block([[Mo, -np.eye(m), np.zeros((m, 1))], [-Mo, -np.eye(m), np.zeros((m, 1))]])
    rows = [kernel.row_of[b] for b in active]
    A_eq = np.vstack(
        [
            np.hstack([(kernel.lhs[rows] @ P)[:, free], np.zeros((len(rows), m)), -kernel.rhs[rows][:, None]]),
            np.concatenate([pin_row, np.zeros(m + 1)])[None, :],
        ]
    )
    b_eq = np.concatenate([np.zeros(len(rows)), [1.0]])
    bounds = [(None, None)] * n + [(0, None)] * m + [(None, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(2 * m), A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    values = np.zeros(k)
    values[free] = res.x[:n]
    return values[groups]


def _prune(kernel: AttackKernel, jams: frozenset[int], order: list[int]) -> tuple[frozenset[int], np.ndarray]:
    """Drop jams one at a time (in ``order``) while the plan stays feasible."""
    best = kernel.solve(jams)
    for k in order:
        if k in kernel.forced_jams or k not in jams:
            continue
        trial = kernel.solve(jams - {k})
        if trial.feasible:
            jams, best = jams - {k}, trial
    return jams, best.change


def _polish(kernel: AttackKernel, jams: frozenset[int], change: np.ndarray) -> tuple[frozenset[int], np.ndarray]:
    """Drop single jams, or swap two jams for one, while the plan stays feasible.

    The new jam in a swap must touch an endpoint of one of the two released lines.
    """
    frm, to = kernel.grid.endpoints()
    touching: dict[int, list[int]] = {}
    for k in _candidates(kernel):
        touching.setdefault(int(frm[k]), []).append(k)
        touching.setdefault(int(to[k]), []).append(k)
    improved = True
    while improved:
        improved = False
        movable = sorted(jams - kernel.forced_jams)
        for j in movable:
            res = kernel.solve(jams - {j})
            if res.feasible:
                jams, change = jams - {j}, res.change
                improved = True
                break
        if improved:
            continue
        for pair in combinations(movable, 2):
            base = jams.difference(pair)
            near = {k for j in pair for bus in (int(frm[j]), int(to[j])) for k in touching.get(bus, ())}
            for k in sorted(near):
                if k in jams:
                    continue
                res = kernel.solve(base | {k})
                if res.feasible:
                    jams, change = base | {k}, res.change
                    improved = True
                    break
            if improved:
                break
    return jams, change


def _level_set_cuts(kernel: AttackKernel, c: np.ndarray, levels: int):
    """Jam sets obtained by thresholding ``c`` at up to ``levels`` values.

    Every metered line whose endpoints fall in different bands is jammed. Yields
    (number of thresholds, jam set) pairs.
    """
    frm, to = kernel.grid.endpoints()
    metered = np.array(sorted(kernel.metered), dtype=int)
    vals = np.unique(np.round(c, 9))
    cuts = (vals[:-1] + vals[1:]) / 2
    for r in range(1, levels + 1):
        for taus in combinations(cuts, r):
            band = np.searchsorted(np.array(taus), c)
            crossing = metered[band[frm[metered]] != band[to[metered]]]
            yield r, kernel.forced_jams | frozenset(int(k) for k in crossing)


def _active_sets(kernel: AttackKernel, limit: int, rounds=ACTIVE_ROUNDS):
    """Candidate sets of injection meters whose constraints bind, at most ``limit`` of them.

    Metered endpoints of attacked lines always bind. Further metered buses join
    in ``rounds`` of (radius in hops or None for any, extra meters); the default
    takes up to two within two hops, then up to three within three.
    """
    grid = kernel.grid
    frm, to = grid.endpoints()
    ends = {int(frm[k]) for k in kernel.attacked} | {int(to[k]) for k in kernel.attacked}
    metered = set(kernel.row_of)
    required = sorted(ends & metered)
    adj: dict[int, set[int]] = {}
    for a, b in zip(frm, to):
        adj.setdefault(int(a), set()).add(int(b))
        adj.setdefault(int(b), set()).add(int(a))
    hops = {b: 0 for b in ends}
    frontier, d = set(ends), 0
    while frontier:
        d += 1
        frontier = {n for b in frontier for n in adj.get(b, ())} - set(hops)
        hops.update((n, d) for n in frontier)
    seen: set[tuple[int, ...]] = set()
    for radius, extra in rounds:
        reach = len(hops) if radius is None else radius
        optional = sorted(b for b in metered - set(required) if hops.get(b, reach + 1) <= reach)
        for r in range(extra + 1):
            for combo in combinations(optional, r):
                active = tuple(sorted(required + list(combo)))
                if active in seen:
                    continue
                if len(seen) == limit:
                    return
                seen.add(active)
                yield list(active)


def _relaxation_pass(kernel, M, closed, obj, max_active_sets, found, tried, rounds=ACTIVE_ROUNDS) -> str:
    """One sweep of pinned l1 relaxations; feasible roundings land in ``found``."""
    frm, to = kernel.grid.endpoints()
    reason = ""
    for active in _active_sets(kernel, max_active_sets, rounds):
        inactive = set(kernel.row_of) - set(active)
        glued = [k for k in closed if frm[k] in inactive or to[k] in inactive]
        glued_set = set(glued)
        n = kernel.grid.n_buses
        _, groups = connected_components(coo_matrix((np.ones(len(glued)), (frm[glued], to[glued])), shape=(n, n)))
        at_active = [k for k in obj if (frm[k] in active or to[k] in active) and k not in glued_set]
        pins = sorted(kernel.attacked) + at_active
        for pin in pins:
            c = _l1_step(kernel, obj, M, active, groups, pin)
            if c is None:
                continue
            diff = np.abs(M[obj] @ c)
            scale = max(1.0, float(diff.max(initial=0.0)))
            support = kernel.forced_jams | frozenset(k for k, d in zip(obj, diff) if d > SUPPORT_TOL * scale)
            order = [obj[i] for i in np.argsort(diff, kind="stable")]
            for n_cuts, jams in ((0, support), *_level_set_cuts(kernel, c, len(active))):
                if jams in tried:
                    continue
                tried.add(jams)
                res = kernel.solve(jams)
                if not res.feasible:
                    reason = f"relaxation support rejected: {res.reason}"
                    if n_cuts != 1:
                        continue
                    # a single cut can be one jam short, e.g. of isolating an unmetered bus
                    res, jams = _repair(kernel, jams, obj, tried)
                    if res is None:
                        continue
                jams, change = _prune(kernel, jams, order)
                found.setdefault(tuple(sorted(jams)), change)
    return reason


def _repair(kernel, jams, obj, tried):
    """First feasible set made by adding one jam next to the current ones, in line order."""
    frm, to = kernel.grid.endpoints()
    ends = {int(frm[j]) for j in jams} | {int(to[j]) for j in jams}
    for k in obj:
        if k in jams or not (int(frm[k]) in ends or int(to[k]) in ends):
            continue
        grown = jams | {k}
        if grown in tried:
            continue
        tried.add(grown)
        res = kernel.solve(grown)
        if res.feasible:
            return res, grown
    return None, jams


def l1_jams(kernel: AttackKernel, max_active_sets: int = 64, polish_top: int = 3) -> tuple[AttackPlan | None, str]:
    """Jam set from l1 relaxations of the sparsest-jam problem.

    For each guess of which injection constraints bind, every other metered bus
    is tied to its neighbours, and the total jump across metered lines is
    minimised with one jump pinned to 1. Each relaxed solution is rounded by
    thresholding; feasible roundings are pruned, the best few are improved by
    jam removals and two-for-one swaps, and the sparsest one is kept. If no
    guess yields a plan, a wider set of guesses is tried once.
    """
    if kernel.islanded:
        return None, "disconnection: attacked breakers island part of the grid (rank condition fails)"
    if not np.any(np.abs(kernel.rhs) > 0):
        return None, "c = 0 only: no injection meter sees the attacked flows"
    grid = kernel.grid
    M = _incidence(grid)
    closed = [k for k in range(grid.n_lines) if grid.lines[k].breaker_closed and k not in kernel.attacked]
    obj = _candidates(kernel)
    # zero or one jam beyond the forced ones: settle exactly, the LP cannot do better
    quick, _ = exhaustive_jams(kernel, len(kernel.forced_jams) + 1)
    if quick is not None or not obj:
        return quick, "" if quick is not None else kernel.solve(kernel.forced_jams).reason

    found: dict[tuple[int, ...], np.ndarray] = {}
    tried: set[frozenset[int]] = set()
    reason = _relaxation_pass(kernel, M, closed, obj, max_active_sets, found, tried)
    if not found:
        # some optima bind many far meters; widen once before giving up
        reason = _relaxation_pass(kernel, M, closed, obj, ESCALATION_LIMIT, found, tried, ESCALATION_ROUNDS) or reason
    if not found:
        return None, reason or "injection constraints admit no change vector"
    # a rounded support can sit one jam above the optimum; swap locally from the best few
    best = sorted(found, key=lambda j: (len(j), j))[:polish_top]
    for jams in best:
        polished, change = _polish(kernel, frozenset(jams), found[jams])
        found.setdefault(tuple(sorted(polished)), change)
    jams = min(found, key=lambda j: (len(j), j))
    return AttackPlan(kernel.attacked, jams, found[jams]), ""


# --- public API ------------------------------------------------------------------


def synthesize_for_lines(grid: Grid, lines: Iterable[int], config: SynthesisConfig = SynthesisConfig()) -> SynthesisResult:
    """Cheapest jam set hiding an attack on the breakers of ``lines``."""
    lines = tuple(sorted(set(int(k) for k in lines)))
    for k in lines:
        if not 0 <= k < grid.n_lines:
            raise IndexError(f"no line {k}")
    g, x = surrogate(grid, config)
    kernel = AttackKernel(g, lines, x)
    if config.solver == "l1_relaxation":
        plan, reason = l1_jams(kernel)
        return SynthesisResult(lines, plan, "l1_relaxation", reason)
    plan, reason = exhaustive_jams(kernel, config.max_exhaustive_jams)
    if config.solver == "exhaustive":
        return SynthesisResult(lines, plan, "exhaustive", reason)
    l1_plan, _ = l1_jams(kernel)
    l1_count = None if l1_plan is None else len(l1_plan.jammed_flows)
    exact = None if plan is None else len(plan.jammed_flows)
    if l1_count != exact:
        log.warning("l1 relaxation found %s jams, exhaustive search %s (lines %s)", l1_count, exact, lines)
    return SynthesisResult(lines, plan, "both", reason, relaxation_jam_count=l1_count)


def synthesize_for_line(grid: Grid, line: int, config: SynthesisConfig = SynthesisConfig()) -> SynthesisResult:
    return synthesize_for_lines(grid, (line,), config)


def optimal_attack(
    grid: Grid, config: SynthesisConfig = SynthesisConfig(), executor: Executor | None = None
) -> SynthesisResult:
    """Best single-breaker attack: fewest jams, ties to the lowest line id."""
    results = all_line_attacks(grid, config, executor)
    feasible = [r for r in results if r.feasible]
    if not feasible:
        reasons = sorted({r.reason for r in results})
        return SynthesisResult((), None, config.solver, "no line admits a hidden attack: " + "; ".join(reasons))
    return min(feasible, key=lambda r: (r.jam_count, r.line, r.jam_set))


def all_line_attacks(
    grid: Grid, config: SynthesisConfig = SynthesisConfig(), executor: Executor | None = None
) -> list[SynthesisResult]:
    ids = range(grid.n_lines)
    if executor is None:
        return [synthesize_for_line(grid, k, config) for k in ids]
    return list(executor.map(synthesize_for_line, [grid] * grid.n_lines, ids, [config] * grid.n_lines))


def reduce_to_single_breaker(grid: Grid, multi_plan: AttackPlan, x) -> AttackPlan:
    """Close all but one attacked breaker, keeping every jam.

    Breakers whose flow reaches an injection meter are tried first, in line order.
    """
    base = solve_change(grid, multi_plan, x)
    if not base.feasible:
        raise ContractViolation(f"input plan is not feasible: {base.reason}")
    if len(multi_plan.attacked_breakers) == 1:
        return multi_plan if multi_plan.induced_change is not None else multi_plan.with_change(base.change)
    metered_buses = set(grid.injection_buses)

    def seen(k: int) -> bool:
        l = grid.lines[k]
        return l.from_bus in metered_buses or l.to_bus in metered_buses

    order = sorted(multi_plan.attacked_breakers, key=lambda k: (not seen(k), k))
    reasons = []
    for k in order:
        trial = AttackPlan({k}, multi_plan.jammed_flows)
        res = solve_change(grid, trial, x)
        if res.feasible:
            return trial.with_change(res.change)
        reasons.append(f"line {k}: {res.reason}")
    raise ContractViolation("no single kept breaker gives a feasible plan: " + "; ".join(reasons))


def forge_measurements(grid: Grid, plan: AttackPlan, true_x) -> tuple[np.ndarray, MeasurementSet]:
    """Breaker statuses and readings the control center receives under ``plan``.

    Surviving readings are the true ones, untouched.
    """
    honest = generate_measurements(grid, true_x)
    reported = np.array([l.breaker_closed for l in grid.lines], dtype=bool)
    reported[list(plan.attacked_breakers)] = False
    mask = honest.received_flow_mask.copy()
    mask[list(plan.jammed_flows)] = False
    z_f = np.where(mask, honest.z_f, 0.0)
    return reported, MeasurementSet(z_f, honest.z_inj, mask, honest.injection_buses)
