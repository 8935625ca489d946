"""Feasibility of breaker-jammer attacks.

An attack opens the breakers of ``attacked_breakers`` (the operator believes those
lines are out) and blocks the flow readings of ``jammed_flows``. It stays hidden
iff the estimator, fed the untouched surviving readings over the falsified
topology, converges with zero residual to a unique state ``x + c`` with ``c != 0``.
In terms of ``c`` this requires

* every metered, unjammed line to have equal ``c`` at both ends;
* every attacked metered line to be jammed;
* at every injection meter, the pre-attack flow leaving over attacked lines to
  equal the change-flow leaving over the lines still believed closed;
* the post-attack measurement matrix to have rank ``n - 1``.

Buses tied together by unjammed flow readings must share one value of ``c``.
The module works in that reduced space: one unknown per flow-connected group.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .grid import Grid, component_labels, flows

TOL = 1e-9


class ContractViolation(ValueError):
    pass


class NormalConditionsWarning(UserWarning):
    """Flows or susceptances coincide; genericity arguments may not apply."""


class AttackPlan:
    """Attacked breakers, jammed flow meters and (optionally) the change they cause."""

    __slots__ = ("attacked_breakers", "jammed_flows", "induced_change")

    def __init__(self, attacked_breakers: Iterable[int] = (), jammed_flows: Iterable[int] = (), induced_change=None):
        self.attacked_breakers = frozenset(int(k) for k in attacked_breakers)
        self.jammed_flows = frozenset(int(k) for k in jammed_flows)
        self.induced_change = None if induced_change is None else np.asarray(induced_change, dtype=float)

    def with_change(self, c) -> "AttackPlan":
        return AttackPlan(self.attacked_breakers, self.jammed_flows, c)

    def __eq__(self, other):
        if not isinstance(other, AttackPlan):
            return NotImplemented
        if self.attacked_breakers != other.attacked_breakers or self.jammed_flows != other.jammed_flows:
            return False
        a, b = self.induced_change, other.induced_change
        if a is None or b is None:
            return a is None and b is None
        return np.array_equal(a, b)

    def __hash__(self):
        return hash((self.attacked_breakers, self.jammed_flows))

    def __repr__(self):
        return f"AttackPlan(attacked={sorted(self.attacked_breakers)}, jammed={sorted(self.jammed_flows)})"


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    change: np.ndarray | None = None
    reason: str = ""

    def __bool__(self):
        return self.feasible


@dataclass(frozen=True)
class Coloring:
    color_of: np.ndarray
    value_of: np.ndarray
    reference_color: int

    @property
    def n_colors(self) -> int:
        return len(self.value_of)

    def members(self, color: int) -> list[int]:
        return [int(b) for b in np.flatnonzero(self.color_of == color)]


@dataclass(frozen=True)
class Supernode:
    color: int
    buses: tuple[int, ...]
    has_injection: bool
    synthetic_injection: float


@dataclass(frozen=True)
class ReducedEdge:
    u: int
    v: int
    susceptance: float
    line: int | None = None


@dataclass(frozen=True)
class ReducedGraph:
    supernodes: tuple[Supernode, ...]
    edges: tuple[ReducedEdge, ...]
    artificial_links: tuple[ReducedEdge, ...]
    n_colors: int
    reference_color: int
    boundary_buses: frozenset[int] = frozenset()
    boundary_injection_buses: frozenset[int] = frozenset()

    def constraint_system(self) -> tuple[np.ndarray, np.ndarray]:
        """Rows of the reduced injection constraints over color values.

        Row ``i`` belongs to the ``i``-th injection-carrying supernode and reads
        ``sum_e B_e (c_color(u) - c_color(v)) = synthetic_injection``.
        """
        metered = [i for i, s in enumerate(self.supernodes) if s.has_injection]
        A = np.zeros((len(metered), self.n_colors))
        rhs = np.array([self.supernodes[i].synthetic_injection for i in metered])
        pos = {s: r for r, s in enumerate(metered)}
        for e in self.edges:
            cu, cv = self.supernodes[e.u].color, self.supernodes[e.v].color
            for node, mine, other in ((e.u, cu, cv), (e.v, cv, cu)):
                if node in pos:
                    A[pos[node], mine] += e.susceptance
                    A[pos[node], other] -= e.susceptance
        return A, rhs


@dataclass(frozen=True)
class Theorem1Report:
    n_colors: int
    boundary_injections: int
    rank: int
    augmented_rank: int
    every_color_constrained: bool
    degenerate_ring: bool

    @property
    def count_ok(self) -> bool:
        return self.boundary_injections == self.n_colors - 1

    @property
    def holds(self) -> bool:
        return self.count_ok and self.rank == self.n_colors - 1 and self.every_color_constrained


# --- individual conditions -----------------------------------------------------


def _available_flows(grid: Grid, plan: AttackPlan) -> list[int]:
    return [k for k, l in enumerate(grid.lines) if l.flow_metered and k not in plan.jammed_flows]


def _post_attack_closed(grid: Grid, plan: AttackPlan) -> np.ndarray:
    closed = np.array([l.breaker_closed for l in grid.lines], dtype=bool)
    closed[list(plan.attacked_breakers)] = False
    return closed


def _incidence(grid: Grid) -> np.ndarray:
    frm, to = grid.endpoints()
    M = np.zeros((grid.n_lines, grid.n_buses))
    k = np.arange(grid.n_lines)
    M[k, frm] = 1.0
    M[k, to] = -1.0
    return M


def _injection_system(grid: Grid, plan: AttackPlan, x) -> tuple[np.ndarray, np.ndarray]:
    """``M_inj'(D - D_a) B M`` and ``M_inj' D_a B M x`` as dense arrays."""
    M = _incidence(grid)
    b = grid.susceptances()
    inj = list(grid.injection_buses)
    closed = _post_attack_closed(grid, plan)
    lhs = M[:, inj].T @ ((b * closed)[:, None] * M)
    attacked = np.zeros(grid.n_lines)
    attacked[list(plan.attacked_breakers)] = 1.0
    rhs = M[:, inj].T @ (attacked * flows(grid, np.asarray(x, dtype=float)))
    return lhs, rhs


def check_flow_condition(grid: Grid, plan: AttackPlan, c) -> bool:
    c = np.asarray(c, dtype=float)
    frm, to = grid.endpoints()
    avail = _available_flows(grid, plan)
    return bool(np.all(np.abs(c[frm[avail]] - c[to[avail]]) <= TOL))


def check_breaker_jam_condition(grid: Grid, plan: AttackPlan) -> bool:
    metered = set(grid.metered_lines)
    return (plan.attacked_breakers & metered) <= plan.jammed_flows


def check_injection_condition(grid: Grid, plan: AttackPlan, x, c) -> bool:
    lhs, rhs = _injection_system(grid, plan, x)
    return bool(np.all(np.abs(lhs @ np.asarray(c, dtype=float) - rhs) <= TOL))


def check_rank_condition(grid: Grid, plan: AttackPlan) -> bool:
    return _post_attack_rank(grid, plan) == grid.n_buses - 1


def _post_attack_rank(grid: Grid, plan: AttackPlan) -> int:
    M = _incidence(grid)
    b = grid.susceptances()
    BM = b[:, None] * M
    avail = [k for k in _available_flows(grid, plan)]
    lhs, _ = _injection_system(grid, plan, np.zeros(grid.n_buses))
    A = np.vstack([BM[avail], lhs])
    return _rank(A)


def _rank(A: np.ndarray) -> int:
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > TOL * max(1.0, s[0])))


def normal_conditions(grid: Grid, x, tol: float = 1e-9) -> list[str]:
    """Ways in which ``(grid, x)`` breaks the genericity assumptions (empty if none)."""
    problems = []
    f = flows(grid, x)
    if np.any(np.abs(f) <= tol):
        problems.append("some line flows are zero")
    if _has_close_pair(np.abs(f), tol):
        problems.append("line flow magnitudes are not pairwise distinct")
    if _has_close_pair(grid.susceptances(), tol):
        problems.append("susceptances are not pairwise distinct")
    return problems


def _has_close_pair(values: np.ndarray, tol: float) -> bool:
    v = np.sort(values)
    return bool(np.any(np.diff(v) <= tol))


# --- joint solve -----------------------------------------------------------------


class AttackKernel:
    """Feasibility checks for a fixed set of attacked breakers and a fixed state.

    The injection system does not depend on the jam set, so searches over many
    jam sets reuse it.
    """

    def __init__(self, grid: Grid, attacked: Iterable[int], x):
        self.grid = grid
        self.attacked = frozenset(int(k) for k in attacked)
        self.x = np.asarray(x, dtype=float)
        self.metered = frozenset(grid.metered_lines)
        self.lhs, self.rhs = _injection_system(grid, AttackPlan(self.attacked), self.x)
        self.row_of = {b: r for r, b in enumerate(grid.injection_buses)}
        closed = _post_attack_closed(grid, AttackPlan(self.attacked))
        self.islanded = len(set(component_labels(grid.n_buses, grid.lines, np.flatnonzero(closed)))) > 1
        self._rhs_scale = max(1.0, float(np.max(np.abs(self.rhs), initial=0.0)))
        frm, to = grid.endpoints()
        self._frm, self._to = frm.tolist(), to.tolist()
        self._metered_sorted = sorted(self.metered)
        self._cache: dict[frozenset[int], Feasibility] = {}

    def _flow_components(self, jammed: frozenset[int]) -> tuple[np.ndarray, int]:
        """Components joined by available flow meters, numbered by smallest bus.

        A plain union-find: the kernel is called thousands of times per search on
        small graphs, where building a sparse matrix per call dominates.
        """
        parent = list(range(self.grid.n_buses))

        def root(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for k in self._metered_sorted:
            if k not in jammed:
                a, b = root(self._frm[k]), root(self._to[k])
                if a != b:
                    parent[max(a, b)] = min(a, b)
        order: dict[int, int] = {}
        labels = np.array([order.setdefault(root(i), len(order)) for i in range(self.grid.n_buses)])
        return labels, len(order)

    @property
    def forced_jams(self) -> frozenset[int]:
        return self.attacked & self.metered

    def solve(self, jammed: Iterable[int]) -> Feasibility:
        jammed = frozenset(jammed)
        hit = self._cache.get(jammed)
        if hit is None:
            hit = self._cache[jammed] = self._solve(jammed)
        return hit

    def _solve(self, jammed: frozenset[int]) -> Feasibility:
        grid = self.grid
        missing = sorted(self.forced_jams - jammed)
        if missing:
            return Feasibility(False, None, f"breaker-jam condition violated: attacked metered line(s) {missing} not jammed")
        if any(not 0 <= k < grid.n_lines for k in self.attacked | jammed):
            return Feasibility(False, None, "plan references unknown lines")
        if not self.attacked:
            return Feasibility(False, None, "c = 0 only: no breaker is attacked")
        if self.islanded:
            return Feasibility(False, None, "disconnection: attacked breakers island part of the grid (rank condition fails)")

        labels, k = self._flow_components(jammed)
        if k == 1:
            return Feasibility(False, None, "flow condition forces single color (c = 0 only)")

        if self.lhs.shape[0] < k - 1:
            return Feasibility(False, None, "rank condition fails: estimate would not be unique")
        ref = labels[grid.reference_bus]
        onehot = np.zeros((grid.n_buses, k))
        onehot[np.arange(grid.n_buses), labels] = 1.0
        A = self.lhs @ onehot
        free = [j for j in range(k) if j != ref]
        A = A[:, free]
        if _rank(A) < k - 1:
            return Feasibility(False, None, "rank condition fails: estimate would not be unique")
        sol, *_ = np.linalg.lstsq(A, self.rhs, rcond=None)
        if np.any(np.abs(A @ sol - self.rhs) > TOL * self._rhs_scale):
            return Feasibility(False, None, "injection condition unsatisfiable")
        values = np.zeros(k)
        values[free] = sol
        c = values[labels]
        if np.max(np.abs(c)) <= TOL:
            return Feasibility(False, None, "c = 0 only: attack leaves the estimate unchanged")
        return Feasibility(True, c, "")


def solve_change(grid: Grid, plan: AttackPlan, x) -> Feasibility:
    """Solve the hiding conditions for ``c`` (reference pinned) without warnings.

    Returns the first violated condition as ``reason`` when infeasible.
    """
    return AttackKernel(grid, plan.attacked_breakers, x).solve(plan.jammed_flows)


def is_feasible(grid: Grid, plan: AttackPlan, x) -> Feasibility:
    """Check all four hiding conditions; on success ``change`` holds the unique ``c``.

    Emits :class:`NormalConditionsWarning` when flows or susceptances coincide.
    """
    problems = normal_conditions(grid, x)
    if problems:
        warnings.warn("; ".join(problems), NormalConditionsWarning, stacklevel=2)
    return solve_change(grid, plan, x)


# --- coloring and reduced graph -------------------------------------------------


def coloring_from_change(grid: Grid, plan: AttackPlan, c, tol: float = TOL) -> Coloring:
    """Color buses so that neighbours with equal ``c`` share a color.

    Colors are numbered by their smallest bus. ``plan`` is accepted for symmetry
    with the other checks; adjacency is the full line set of ``grid``.
    """
    c = np.asarray(c, dtype=float)
    frm, to = grid.endpoints()
    same = np.flatnonzero(np.abs(c[frm] - c[to]) <= tol)
    raw = component_labels(grid.n_buses, grid.lines, same)
    order: dict[int, int] = {}
    color_of = np.empty(grid.n_buses, dtype=int)
    for bus, lab in enumerate(raw):
        color_of[bus] = order.setdefault(int(lab), len(order))
    values = np.zeros(len(order))
    for bus in range(grid.n_buses):
        values[color_of[bus]] = c[bus]
    return Coloring(color_of, values, int(color_of[grid.reference_bus]))


def boundary_buses(grid: Grid, coloring: Coloring) -> frozenset[int]:
    frm, to = grid.endpoints()
    diff = coloring.color_of[frm] != coloring.color_of[to]
    return frozenset(int(b) for b in np.concatenate([frm[diff], to[diff]]))


def build_reduced_graph(grid: Grid, plan: AttackPlan, coloring: Coloring, x) -> ReducedGraph:
    """Contract the colored grid into supernodes.

    1. Per color, every boundary bus with an injection meter is its own supernode;
       the remaining buses of the color form one more supernode. Same-colored
       supernodes are joined by zero-susceptance artificial links.
    2. Every closed (not attacked) line between different colors becomes an edge
       between the corresponding supernodes. Supernodes without such an edge are
       dropped.
    3. A supernode's injection is the net pre-attack flow leaving it over attacked
       lines, matching the sign of the change-flow on the left-hand side.
    """
    c = coloring.value_of[coloring.color_of]
    if not check_flow_condition(grid, plan, c):
        raise ContractViolation("coloring puts an available flow measurement between two colors")

    boundary = boundary_buses(grid, coloring)
    node_of = np.full(grid.n_buses, -1)
    groups: list[tuple[int, list[int], bool]] = []
    for color in range(coloring.n_colors):
        rest = []
        for bus in coloring.members(color):
            if bus in boundary and grid.buses[bus].injection_metered:
                node_of[bus] = len(groups)
                groups.append((color, [bus], True))
            else:
                rest.append(bus)
        if rest:
            node_of[rest] = len(groups)
            groups.append((color, rest, False))

    frm, to = grid.endpoints()
    closed = _post_attack_closed(grid, plan)
    raw_edges = []
    for k in np.flatnonzero(closed):
        u, v = node_of[frm[k]], node_of[to[k]]
        if groups[u][0] != groups[v][0]:
            raw_edges.append((int(u), int(v), grid.lines[k].susceptance, int(k)))

    keep = sorted({u for u, *_ in raw_edges} | {v for _, v, *_ in raw_edges})
    renum = {old: new for new, old in enumerate(keep)}

    f = flows(grid, np.asarray(x, dtype=float))
    outflow = np.zeros(grid.n_buses)
    for k in plan.attacked_breakers:
        outflow[frm[k]] += f[k]
        outflow[to[k]] -= f[k]

    supernodes = tuple(
        Supernode(groups[old][0], tuple(groups[old][1]), groups[old][2], float(outflow[groups[old][1]].sum()))
        for old in keep
    )
    edges = tuple(ReducedEdge(renum[u], renum[v], b, k) for u, v, b, k in raw_edges)
    links = []
    for i in range(len(supernodes)):
        for j in range(i + 1, len(supernodes)):
            if supernodes[i].color == supernodes[j].color:
                links.append(ReducedEdge(i, j, 0.0))
    metered_boundary = frozenset(b for b in boundary if grid.buses[b].injection_metered)
    return ReducedGraph(
        supernodes, edges, tuple(links), coloring.n_colors, coloring.reference_color, boundary, metered_boundary
    )


def solve_reduced(reduced: ReducedGraph) -> np.ndarray | None:
    """Color values solving the reduced constraints, or ``None`` if not unique/consistent."""
    A, rhs = reduced.constraint_system()
    free = [j for j in range(reduced.n_colors) if j != reduced.reference_color]
    A = A[:, free]
    if _rank(A) < len(free):
        return None
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    if np.any(np.abs(A @ sol - rhs) > TOL * max(1.0, float(np.max(np.abs(rhs), initial=0.0)))):
        return None
    values = np.zeros(reduced.n_colors)
    values[free] = sol
    return values


def theorem1_report(reduced: ReducedGraph, coloring: Coloring) -> Theorem1Report:
    A, rhs = reduced.constraint_system()
    free = [j for j in range(coloring.n_colors) if j != coloring.reference_color]
    Af = A[:, free]
    rank = _rank(Af)
    aug = _rank(np.column_stack([Af, rhs])) if A.shape[0] else 0
    constrained = bool(np.all(np.any(np.abs(Af) > TOL, axis=0))) if free else True
    return Theorem1Report(
        n_colors=coloring.n_colors,
        boundary_injections=len(reduced.boundary_injection_buses),
        rank=rank,
        augmented_rank=aug,
        every_color_constrained=constrained,
        degenerate_ring=A.shape[0] > aug,
    )


def verify_theorem1(reduced: ReducedGraph, coloring: Coloring) -> bool:
    """Boundary injections number exactly colors - 1 and their constraints are independent."""
    return theorem1_report(reduced, coloring).holds
