"""In-memory DC grid and the matrices used by the state estimator and the attack model.

Conventions: buses and lines are addressed by zero-based dense indices. Line ``k``
is oriented ``from_bus -> to_bus`` and contributes row ``k`` of the incidence
matrix ``M`` with ``+1`` at ``from_bus`` and ``-1`` at ``to_bus``. The flow
selector ``T`` and breaker matrix ``D`` are square ``n_E x n_E`` diagonals, so an
unmetered line is a zero on the diagonal rather than a missing row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GridError(ValueError):
    """Raised when a grid violates its structural invariants."""


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float
    breaker_closed: bool = True
    flow_metered: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise GridError(f"line {self.from_bus}->{self.to_bus} is a self loop")
        if not (math.isfinite(self.susceptance) and self.susceptance > 0):
            raise GridError(f"susceptance must be finite and positive, got {self.susceptance!r}")


@dataclass(frozen=True)
class Bus:
    injection_metered: bool = False
    is_reference: bool = False


@dataclass(frozen=True)
class Grid:
    """Buses and lines of a DC network together with meter placement.

    ``bus_labels`` optionally records the external bus numbers (e.g. from a case
    file) so that reports can speak the same language as the input data.
    """

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    name: str = ""
    bus_labels: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        if self.bus_labels is not None:
            object.__setattr__(self, "bus_labels", tuple(int(b) for b in self.bus_labels))
        n = len(self.buses)
        if n < 2:
            raise GridError("a grid needs at least two buses")
        if not self.lines:
            raise GridError("a grid needs at least one line")
        refs = [i for i, b in enumerate(self.buses) if b.is_reference]
        if len(refs) != 1:
            raise GridError(f"exactly one reference bus required, found {len(refs)}")
        for k, line in enumerate(self.lines):
            if not (0 <= line.from_bus < n and 0 <= line.to_bus < n):
                raise GridError(f"line {k} references a bus outside 0..{n - 1}")
        if self.bus_labels is not None and len(self.bus_labels) != n:
            raise GridError("bus_labels must have one entry per bus")

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def reference_bus(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.is_reference)

    @property
    def injection_buses(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.buses) if b.injection_metered)

    @property
    def metered_lines(self) -> tuple[int, ...]:
        return tuple(k for k, line in enumerate(self.lines) if line.flow_metered)

    @property
    def closed_lines(self) -> tuple[int, ...]:
        return tuple(k for k, line in enumerate(self.lines) if line.breaker_closed)

    def label(self, bus: int) -> int:
        """External number of ``bus`` (dense index when no labels are recorded)."""
        return self.bus_labels[bus] if self.bus_labels is not None else bus

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        frm = np.fromiter((l.from_bus for l in self.lines), dtype=np.intp, count=self.n_lines)
        to = np.fromiter((l.to_bus for l in self.lines), dtype=np.intp, count=self.n_lines)
        return frm, to

    def susceptances(self) -> np.ndarray:
        return np.array([l.susceptance for l in self.lines], dtype=float)

    def with_susceptances(self, values: Sequence[float]) -> "Grid":
        if len(values) != self.n_lines:
            raise GridError("need one susceptance per line")
        lines = tuple(replace(l, susceptance=float(b)) for l, b in zip(self.lines, values))
        return replace(self, lines=lines)

    def with_placement(
        self,
        *,
        flow_metered: Iterable[int] | None = None,
        injection_metered: Iterable[int] | None = None,
        reference: int | None = None,
    ) -> "Grid":
        """Copy of the grid with meters moved. ``None`` keeps the current setting."""
        lines = self.lines
        if flow_metered is not None:
            fm = set(flow_metered)
            _check_ids(fm, self.n_lines, "line")
            lines = tuple(replace(l, flow_metered=k in fm) for k, l in enumerate(lines))
        buses = self.buses
        if injection_metered is not None:
            im = set(injection_metered)
            _check_ids(im, self.n_buses, "bus")
            buses = tuple(replace(b, injection_metered=i in im) for i, b in enumerate(buses))
        if reference is not None:
            _check_ids({reference}, self.n_buses, "bus")
            buses = tuple(replace(b, is_reference=i == reference) for i, b in enumerate(buses))
        return replace(self, lines=lines, buses=buses)

    def components(self, lines: Iterable[int] | None = None) -> list[list[int]]:
        """Connected components of the bus graph using ``lines`` (default: closed lines).

        Components are sorted by their smallest bus so that the output is canonical.
        """
        if lines is None:
            lines = self.closed_lines
        labels = component_labels(self.n_buses, self.lines, lines)
        groups: dict[int, list[int]] = {}
        for bus, lab in enumerate(labels):
            groups.setdefault(int(lab), []).append(bus)
        return sorted(groups.values(), key=lambda g: g[0])

    def is_connected(self) -> bool:
        return len(self.components()) == 1


def component_labels(n_buses: int, lines: Sequence[Line], use: Iterable[int]) -> np.ndarray:
    """Component label per bus for the subgraph made of the line ids in ``use``."""
    use = list(use)
    if not use:
        return np.arange(n_buses)
    rows = np.array([lines[k].from_bus for k in use])
    cols = np.array([lines[k].to_bus for k in use])
    adj = sp.coo_matrix((np.ones(len(use)), (rows, cols)), shape=(n_buses, n_buses))
    _, labels = connected_components(adj, directed=False)
    return labels


def _check_ids(ids: set[int], n: int, kind: str) -> None:
    bad = sorted(i for i in ids if not 0 <= i < n)
    if bad:
        raise GridError(f"unknown {kind} id(s) {bad}")


@dataclass(frozen=True)
class GridMatrices:
    incidence: sp.csr_matrix
    susceptance_diag: sp.dia_matrix
    flow_selector: sp.dia_matrix
    injection_selector: sp.csc_matrix
    breaker_diag: sp.dia_matrix
    injection_buses: tuple[int, ...] = field(default=())

    @property
    def shape(self) -> tuple[int, int]:
        return self.incidence.shape


def incidence_matrix(grid: Grid) -> sp.csr_matrix:
    frm, to = grid.endpoints()
    m = grid.n_lines
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([frm, to])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, grid.n_buses))


def build_matrices(grid: Grid, *, require_connected: bool = True) -> GridMatrices:
    """Assemble ``M``, ``B``, ``T``, ``M_inj`` and ``D`` for ``grid``.

    Raises :class:`GridError` naming the islands if the closed-breaker graph is
    disconnected and ``require_connected`` is set.
    """
    if require_connected:
        comps = grid.components()
        if len(comps) > 1:
            named = "; ".join("{" + ", ".join(str(grid.label(b)) for b in c) + "}" for c in comps)
            raise GridError(f"operational graph is disconnected: {named}")
    M = incidence_matrix(grid)
    m = grid.n_lines
    B = sp.diags(grid.susceptances(), format="dia")
    T = sp.diags(np.array([1.0 if l.flow_metered else 0.0 for l in grid.lines]), format="dia")
    D = sp.diags(np.array([1.0 if l.breaker_closed else 0.0 for l in grid.lines]), format="dia")
    inj = grid.injection_buses
    M_inj = M.tocsc()[:, list(inj)] if inj else sp.csc_matrix((m, 0))
    return GridMatrices(M, B, T, M_inj, D, inj)


def measurement_matrix(matrices: GridMatrices) -> sp.csr_matrix:
    """Stack metered flow rows ``B_ab M_ab`` above injection rows ``M_inj' B M``.

    Injection rows only count lines whose breaker is closed.
    """
    M, B, T, D = matrices.incidence, matrices.susceptance_diag, matrices.flow_selector, matrices.breaker_diag
    BM = (B @ M).tocsr()
    metered = np.flatnonzero(T.diagonal())
    flow_rows = BM[metered]
    inj_rows = (matrices.injection_selector.T @ D @ BM).tocsr()
    return sp.vstack([flow_rows, inj_rows], format="csr")


def flows(grid: Grid, x: np.ndarray) -> np.ndarray:
    """Line flows ``B (x_from - x_to)`` for every line, regardless of breaker status."""
    frm, to = grid.endpoints()
    x = np.asarray(x, dtype=float)
    return grid.susceptances() * (x[frm] - x[to])


def simple_grid(
    n_buses: int,
    edges: Sequence[tuple[int, int]],
    susceptances: Sequence[float] | None = None,
    *,
    injections: Iterable[int] = (),
    unmetered: Iterable[int] = (),
    reference: int = 0,
    name: str = "",
) -> Grid:
    """Convenience constructor for small hand-written grids (tests, examples)."""
    if susceptances is None:
        susceptances = [1.0] * len(edges)
    unmetered = set(unmetered)
    injections = set(injections)
    lines = tuple(
        Line(a, b, float(s), True, k not in unmetered)
        for k, ((a, b), s) in enumerate(zip(edges, susceptances))
    )
    buses = tuple(Bus(i in injections, i == reference) for i in range(n_buses))
    return Grid(buses, lines, name=name)
