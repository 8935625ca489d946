import numpy as np
import pytest

from breakerjam.analysis import AttackPlan
from breakerjam.case_io import (
    CaseParseError,
    MeterPlacement,
    Scenario,
    ScenarioError,
    builtin_case,
    load_case,
    load_scenario,
    parse_case,
    save_scenario,
    to_grid,
)
from breakerjam.grid import GridError, simple_grid
from breakerjam.synthesis import optimal_attack
from conftest import ieee_grid

TWO_LINE = """\
mpc.bus = [
 1 3;
 2 1;
];
mpc.branch = [
 1 2 0 0.1 0 0 0 0 0 0 1;
 2 99 0 0.1 0 0 0 0 0 0 1;
];
"""


@pytest.mark.parametrize("name", ["case14", "case30", "case57", "triangle"])
def test_fixture_counts_match_manifest(name, manifest):
    doc = load_case(builtin_case(name))
    assert len(doc.buses) == manifest[name]["buses"]
    assert len(doc.branches) == manifest[name]["branches"]
    assert sum(b.in_service for b in doc.branches) == manifest[name]["in_service"]


def test_susceptance_is_inverse_reactance():
    doc = load_case(builtin_case("case14"))
    br = doc.branches[0]
    assert br.reactance == pytest.approx(0.05917)
    assert br.susceptance == pytest.approx(1 / 0.05917)
    assert doc.base_mva == 100
    assert doc.reference_bus == 0


def test_unknown_bus_is_named():
    with pytest.raises(CaseParseError, match="99") as err:
        parse_case(TWO_LINE)
    assert err.value.line == 7


def test_malformed_row_reports_line_number():
    text = TWO_LINE.replace(" 2 1;", " 2 x;")
    with pytest.raises(CaseParseError) as err:
        parse_case(text)
    assert err.value.line == 3


def test_zero_reactance_rejected():
    text = TWO_LINE.replace("2 99 0 0.1", "2 1 0 0.1").replace("1 2 0 0.1", "1 2 0 0")
    with pytest.raises(CaseParseError, match="zero reactance"):
        parse_case(text)


def test_unsupported_tables_are_skipped_with_warning(caplog):
    text = "mpc.gen = [\n 1 0 0;\n];\n" + TWO_LINE.replace("2 99", "2 1")
    with caplog.at_level("WARNING", logger="breakerjam.case_io"):
        doc = parse_case(text)
    assert len(doc.branches) == 2
    assert "mpc.gen" in caplog.text


def test_to_grid_all_flows_metered():
    doc = load_case(builtin_case("case14"))
    grid = to_grid(doc, MeterPlacement.all_flows(doc))
    assert all(l.flow_metered for l in grid.lines)
    assert grid.bus_labels == tuple(range(1, 15))


def test_empty_injection_set():
    doc = load_case(builtin_case("case57"))
    grid = to_grid(doc, MeterPlacement.all_flows(doc, ()))
    assert grid.injection_buses == ()


def _with_out_of_service():
    text = TWO_LINE.replace("2 99", "2 1").replace("2 1 0 0.1 0 0 0 0 0 0 1;", "2 1 0 0.1 0 0 0 0 0 0 0;")
    return parse_case(text)


def test_out_of_service_branch_dropped():
    doc = _with_out_of_service()
    grid = to_grid(doc, MeterPlacement(frozenset({0}), frozenset(), 0))
    assert grid.n_lines == 1


def test_placement_on_dropped_branch_rejected():
    doc = _with_out_of_service()
    with pytest.raises(GridError, match="out-of-service"):
        to_grid(doc, MeterPlacement(frozenset({0, 1}), frozenset(), 0))


def test_to_grid_is_deterministic(ieee_docs):
    a = ieee_grid(ieee_docs["case30"], seed=3)
    b = ieee_grid(ieee_docs["case30"], seed=3)
    assert a == b


def test_round_trip_triangle():
    g = simple_grid(3, [(0, 1), (1, 2), (0, 2)], [1.0, 2.0, 1 / 3], injections=[0], name="tri")
    s = Scenario(g)
    assert load_scenario(save_scenario(s)) == s


def test_round_trip_ieee14_with_plan(ieee_docs):
    grid = ieee_grid(ieee_docs["case14"])
    result = optimal_attack(grid)
    plan = result.plan
    s = Scenario(grid, plan.attacked_breakers, plan.jammed_flows, plan.induced_change, np.linspace(0, 1, 14))
    back = load_scenario(save_scenario(s))
    assert back == s
    assert AttackPlan(back.attacked_breakers, back.jammed_flows, back.induced_change) == plan


def test_truncated_scenario_rejected(triangle):
    text = save_scenario(Scenario(triangle, frozenset({0}), frozenset({0, 2})))
    with pytest.raises(ScenarioError):
        load_scenario(text[: len(text) // 2])


def test_scenario_version_mismatch(triangle):
    text = save_scenario(Scenario(triangle)).replace("breakerjam-scenario 1", "breakerjam-scenario 9")
    with pytest.raises(ScenarioError, match="version"):
        load_scenario(text)


def test_scenario_schema_violation(triangle):
    text = save_scenario(Scenario(triangle)).replace("line 1 1 2", "line 1 1 7")
    with pytest.raises(ScenarioError):
        load_scenario(text)
