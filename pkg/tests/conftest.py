import json
import logging

import numpy as np
import pytest

from breakerjam.case_io import DATA_DIR, builtin_case, load_case, random_injection_placement, to_grid
from breakerjam.grid import simple_grid

logging.getLogger("breakerjam.case_io").setLevel(logging.ERROR)

TRIANGLE_B = (1.0, 2.0, 3.0)
TRIANGLE_X = np.array([0.0, -0.3, -0.5])


@pytest.fixture
def triangle():
    """Lines (0,1), (1,2), (0,2) with B = 1, 2, 3; all flows metered, injection at bus 0."""
    return simple_grid(3, [(0, 1), (1, 2), (0, 2)], TRIANGLE_B, injections=[0])


@pytest.fixture
def path3():
    return simple_grid(3, [(0, 1), (1, 2)], [1.0, 2.0], injections=[1])


@pytest.fixture
def two_bus():
    return simple_grid(2, [(0, 1)], [2.0])


@pytest.fixture(scope="session")
def manifest():
    return json.loads((DATA_DIR / "manifest.json").read_text())


@pytest.fixture(scope="session")
def ieee_docs():
    return {name: load_case(builtin_case(name)) for name in ("case14", "case30", "case57")}


def ieee_grid(doc, fraction=0.5, seed=0):
    return to_grid(doc, random_injection_placement(doc, fraction, np.random.default_rng(seed)))


@pytest.fixture
def scenario14(ieee_docs):
    """Two attacked breakers on IEEE-14 leaving three colors.

    Meters at external buses 2, 9, 14 (bus 2 ends up interior); breakers on
    9-10 and 9-14 attacked; flows 4-9, 7-9, 9-10, 9-14, 13-14 jammed.
    """
    from breakerjam.analysis import AttackPlan
    from breakerjam.case_io import MeterPlacement

    doc = ieee_docs["case14"]
    grid = to_grid(doc, MeterPlacement.all_flows(doc, [1, 8, 13]))
    x = np.random.default_rng(7).uniform(-0.5, 0.5, grid.n_buses)
    return grid, AttackPlan({15, 16}, {8, 14, 15, 16, 19}), x


# --- acceptance verdicts ---------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
