"""Reading MATPOWER-style case files and the native scenario format.

Supported case dialect
----------------------
Only the ``bus`` and ``branch`` tables and ``baseMVA`` are read. A table starts
with ``mpc.<name> = [`` and ends with ``];``. Rows are whitespace separated
numbers terminated by ``;`` or a newline. ``%`` starts a comment. Any other
``mpc.*`` table (``gen``, ``gencost``, ...) is skipped with a logged warning.

bus columns used:    1 ``bus_i`` (external number), 2 ``type`` (3 = reference)
branch columns used: 1 ``fbus``, 2 ``tbus``, 4 ``x`` (reactance),
                     11 ``status`` (defaults to 1 if the column is absent)

DC susceptance of a branch is ``1/x``; resistance is ignored.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .grid import Bus, Grid, GridError, Line

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"


class CaseParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ScenarioError(ValueError):
    """Malformed, truncated or wrong-version scenario file."""


@dataclass(frozen=True)
class BusRecord:
    number: int
    type: int


@dataclass(frozen=True)
class BranchRecord:
    from_bus: int
    to_bus: int
    reactance: float
    in_service: bool = True

    @property
    def susceptance(self) -> float:
        return 1.0 / self.reactance


@dataclass(frozen=True)
class CaseDocument:
    name: str
    base_mva: float
    buses: tuple[BusRecord, ...]
    branches: tuple[BranchRecord, ...]

    @property
    def reference_bus(self) -> int:
        """Dense index of the first type-3 bus (0 if the case declares none)."""
        for i, b in enumerate(self.buses):
            if b.type == 3:
                return i
        return 0


@dataclass(frozen=True)
class MeterPlacement:
    """Where meters sit. Line ids index the case's branch table, bus ids the bus table."""

    flow_metered_lines: frozenset[int]
    injection_metered_buses: frozenset[int]
    reference_bus: int

    @classmethod
    def all_flows(cls, doc: CaseDocument, injections: Iterable[int] = (), reference: int | None = None):
        return cls(
            frozenset(range(len(doc.branches))),
            frozenset(injections),
            doc.reference_bus if reference is None else reference,
        )


_TABLE_START = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[(.*)$")
_SCALAR = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^;\[]+);")
_FUNC = re.compile(r"^\s*function\s+\w+\s*=\s*(\w+)")


def parse_case(text: str, name: str | None = None) -> CaseDocument:
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    base_mva = 100.0
    case_name = name
    current: str | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0]
        if current is None:
            if not line.strip():
                continue
            if m := _FUNC.match(line):
                case_name = case_name or m.group(1)
                continue
            if m := _TABLE_START.match(line):
                current = m.group(1)
                if current not in ("bus", "branch"):
                    log.warning("ignoring unsupported table mpc.%s", current)
                tables[current] = []
                line = m.group(2)
            elif m := _SCALAR.match(line):
                if m.group(1) == "baseMVA":
                    try:
                        base_mva = float(m.group(2))
                    except ValueError:
                        raise CaseParseError(f"bad baseMVA {m.group(2).strip()!r}", lineno) from None
                continue
            else:
                continue
        end = "]" in line
        body = line.split("]", 1)[0]
        for chunk in body.split(";"):
            tokens = chunk.split()
            if not tokens:
                continue
            if current in ("bus", "branch"):
                try:
                    tables[current].append((lineno, [float(t) for t in tokens]))
                except ValueError:
                    raise CaseParseError(f"non-numeric entry in mpc.{current} row: {chunk.strip()!r}", lineno) from None
        if end:
            current = None
    if current is not None:
        raise CaseParseError(f"unterminated table mpc.{current}")
    for required in ("bus", "branch"):
        if required not in tables:
            raise CaseParseError(f"missing mpc.{required} table")

    buses = []
    for lineno, row in tables["bus"]:
        if len(row) < 2:
            raise CaseParseError("bus row needs at least bus_i and type", lineno)
        buses.append(BusRecord(int(row[0]), int(row[1])))
    known = {b.number for b in buses}
    if len(known) != len(buses):
        raise CaseParseError("duplicate bus numbers in mpc.bus")

    branches = []
    for lineno, row in tables["branch"]:
        if len(row) < 4:
            raise CaseParseError("branch row needs at least fbus, tbus, r, x", lineno)
        f, t = int(row[0]), int(row[1])
        for b in (f, t):
            if b not in known:
                raise CaseParseError(f"branch references unknown bus {b}", lineno)
        status = bool(row[10]) if len(row) > 10 else True
        if row[3] == 0 and status:
            raise CaseParseError(f"branch {f}-{t} has zero reactance", lineno)
        branches.append(BranchRecord(f, t, row[3], status))
    return CaseDocument(case_name or "case", base_mva, tuple(buses), tuple(branches))


def load_case(path: str | Path) -> CaseDocument:
    path = Path(path)
    return parse_case(path.read_text(), name=path.stem)


def builtin_case(name: str) -> Path:
    """Path of a bundled case file, e.g. ``builtin_case("case14")``."""
    path = DATA_DIR / f"{name}.m"
    if not path.exists():
        raise FileNotFoundError(f"no bundled case {name!r}")
    return path


def to_grid(doc: CaseDocument, placement: MeterPlacement) -> Grid:
    """Build a :class:`Grid` from a parsed case.

    Bus ids are the row positions in the bus table; line ids are assigned to
    in-service branches in table order. A placement that meters an out-of-service
    branch is rejected.
    """
    index = {b.number: i for i, b in enumerate(doc.buses)}
    n = len(doc.buses)
    for i in (*placement.injection_metered_buses, placement.reference_bus):
        if not 0 <= i < n:
            raise GridError(f"placement references unknown bus id {i}")
    for k in placement.flow_metered_lines:
        if not 0 <= k < len(doc.branches):
            raise GridError(f"placement references unknown branch id {k}")
        if not doc.branches[k].in_service:
            br = doc.branches[k]
            raise GridError(f"placement meters out-of-service branch {k} ({br.from_bus}-{br.to_bus})")
    lines = []
    for k, br in enumerate(doc.branches):
        if not br.in_service:
            continue
        # negative reactances (series compensation) keep their magnitude in the DC model
        lines.append(Line(index[br.from_bus], index[br.to_bus], abs(br.susceptance), True, k in placement.flow_metered_lines))
    buses = tuple(
        Bus(i in placement.injection_metered_buses, i == placement.reference_bus) for i in range(n)
    )
    grid = Grid(buses, tuple(lines), name=doc.name, bus_labels=tuple(b.number for b in doc.buses))
    comps = grid.components()
    if len(comps) > 1:
        named = "; ".join("{" + ", ".join(str(grid.label(b)) for b in c) + "}" for c in comps)
        raise GridError(f"operational graph is disconnected: {named}")
    return grid


def random_injection_placement(doc: CaseDocument, fraction: float, rng: np.random.Generator) -> MeterPlacement:
    """All flows metered, injection meters on ``round(fraction * n)`` random buses (at least one)."""
    if not 0 < fraction <= 1:
        raise ValueError("injection fraction must lie in (0, 1]")
    n = len(doc.buses)
    k = max(1, int(round(fraction * n)))
    chosen = rng.choice(n, size=k, replace=False)
    return MeterPlacement.all_flows(doc, (int(i) for i in chosen))


# --- scenario files -------------------------------------------------------------

SCENARIO_MAGIC = "breakerjam-scenario"
SCENARIO_VERSION = 1


@dataclass
class Scenario:
    grid: Grid
    attacked_breakers: frozenset[int] = frozenset()
    jammed_flows: frozenset[int] = frozenset()
    induced_change: np.ndarray | None = None
    true_state: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.attacked_breakers == other.attacked_breakers
            and self.jammed_flows == other.jammed_flows
            and _arr_eq(self.induced_change, other.induced_change)
            and _arr_eq(self.true_state, other.true_state)
        )


def _arr_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(np.asarray(a), np.asarray(b))


def save_scenario(s: Scenario) -> str:
    """Serialize a scenario to the line-oriented text format (see README)."""
    g = s.grid
    out = [f"{SCENARIO_MAGIC} {SCENARIO_VERSION}"]
    out += [f"# {n}" for n in s.notes]
    out.append(f"name {g.name}" if g.name else "name")
    out.append(f"buses {g.n_buses}")
    for i, b in enumerate(g.buses):
        label = g.bus_labels[i] if g.bus_labels is not None else "-"
        out.append(f"bus {i} {label} {int(b.injection_metered)} {int(b.is_reference)}")
    out.append(f"lines {g.n_lines}")
    for k, l in enumerate(g.lines):
        out.append(f"line {k} {l.from_bus} {l.to_bus} {l.susceptance!r} {int(l.breaker_closed)} {int(l.flow_metered)}")
    out.append("attack " + " ".join(map(str, sorted(s.attacked_breakers))))
    out.append("jam " + " ".join(map(str, sorted(s.jammed_flows))))
    if s.induced_change is not None:
        out.append("change " + " ".join(repr(float(v)) for v in s.induced_change))
    if s.true_state is not None:
        out.append("state " + " ".join(repr(float(v)) for v in s.true_state))
    out.append("end")
    return "\n".join(line.rstrip() for line in out) + "\n"


def load_scenario(text: str) -> Scenario:
    rows = []
    for raw in text.splitlines():
        stripped = raw.strip()
        if stripped and not stripped.startswith("#"):
            rows.append(stripped.split())
    if not rows or rows[0][0] != SCENARIO_MAGIC:
        raise ScenarioError("not a scenario file (missing header)")
    if len(rows[0]) != 2 or rows[0][1] != str(SCENARIO_VERSION):
        raise ScenarioError(f"unsupported scenario version {' '.join(rows[0][1:])!r}")
    if rows[-1] != ["end"]:
        raise ScenarioError("truncated scenario: missing 'end'")
    rows = rows[1:-1]

    name = ""
    n_buses = n_lines = None
    buses: list[Bus] = []
    labels: list[int] = []
    lines: list[Line] = []
    attack: frozenset[int] = frozenset()
    jam: frozenset[int] = frozenset()
    change = state = None
    try:
        for row in rows:
            tag, args = row[0], row[1:]
            if tag == "name":
                name = " ".join(args)
            elif tag == "buses":
                n_buses = int(args[0])
            elif tag == "bus":
                if int(args[0]) != len(buses):
                    raise ScenarioError(f"bus records out of order at {' '.join(row)!r}")
                labels.append(None if args[1] == "-" else int(args[1]))
                buses.append(Bus(args[2] == "1", args[3] == "1"))
            elif tag == "lines":
                n_lines = int(args[0])
            elif tag == "line":
                if int(args[0]) != len(lines):
                    raise ScenarioError(f"line records out of order at {' '.join(row)!r}")
                lines.append(Line(int(args[1]), int(args[2]), float(args[3]), args[4] == "1", args[5] == "1"))
            elif tag == "attack":
                attack = frozenset(int(a) for a in args)
            elif tag == "jam":
                jam = frozenset(int(a) for a in args)
            elif tag == "change":
                change = np.array([float(a) for a in args])
            elif tag == "state":
                state = np.array([float(a) for a in args])
            else:
                raise ScenarioError(f"unknown record {tag!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed record: {exc}") from None
    if n_buses is None or n_lines is None or len(buses) != n_buses or len(lines) != n_lines:
        raise ScenarioError("bus/line counts do not match the declared totals")
    if any(lb is None for lb in labels) and any(lb is not None for lb in labels):
        raise ScenarioError("bus labels must be given for all buses or none")
    try:
        grid = Grid(tuple(buses), tuple(lines), name=name, bus_labels=None if None in labels else tuple(labels))
    except GridError as exc:
        raise ScenarioError(f"invalid grid: {exc}") from None
    for ids, what in ((attack, "attack"), (jam, "jam")):
        if any(not 0 <= k < n_lines for k in ids):
            raise ScenarioError(f"{what} record references an unknown line")
    for vec, what in ((change, "change"), (state, "state")):
        if vec is not None and len(vec) != n_buses:
            raise ScenarioError(f"{what} vector has wrong length")
    return Scenario(grid, attack, jam, change, state)
