"""Hidden breaker-jammer topology attacks on DC power-grid state estimation."""

from .analysis import (
    AttackPlan,
    Coloring,
    ContractViolation,
    Feasibility,
    NormalConditionsWarning,
    ReducedGraph,
    build_reduced_graph,
    check_breaker_jam_condition,
    check_flow_condition,
    check_injection_condition,
    check_rank_condition,
    coloring_from_change,
    is_feasible,
    solve_reduced,
    theorem1_report,
    verify_theorem1,
)
from .case_io import (
    CaseDocument,
    CaseParseError,
    MeterPlacement,
    Scenario,
    ScenarioError,
    builtin_case,
    load_case,
    load_scenario,
    parse_case,
    random_injection_placement,
    save_scenario,
    to_grid,
)
from .estimator import (
    EstimateResult,
    MeasurementSet,
    bad_data_check,
    estimate,
    generate_measurements,
    topology_process,
)
from .grid import Bus, Grid, GridError, GridMatrices, Line, build_matrices, measurement_matrix, simple_grid
from .synthesis import (
    SynthesisConfig,
    SynthesisResult,
    forge_measurements,
    optimal_attack,
    reduce_to_single_breaker,
    synthesize_for_line,
    synthesize_for_lines,
)

__version__ = "0.1.0"
