"""Circular bus line simulation, look-ahead speed regulation, and
branch-and-bound selection of dedicated bus lane locations."""

from .control import (
    ExpectedTimes,
    LookaheadController,
    RolloutState,
    build_expected_times,
    build_state,
    delta_travel_time,
    expected_dwell,
    expected_intersection_delay,
    select_action,
)
from .metrics import (
    PassengerReport,
    StabilityReport,
    action_cost,
    dch,
    fsi,
    fsi_std,
    passenger_stats,
    sigma_h,
    stability_report,
)
from .model import (
    BusLineSegment,
    BusSpec,
    ConstraintSpec,
    DeploymentPattern,
    LineConfig,
    PassengerProfile,
    PRESETS,
    RingTimeMap,
    RoadSegment,
    Scenario,
    ScenarioError,
    SignalPlan,
    SigmaRule,
    Stop,
    constraint_check,
    load_reference_scenario,
    load_scenario,
    reference_scenario_path,
    route_offset,
    scenario_to_json,
    validate,
    validate_pattern,
)
from .optimize import (
    MonteCarloEvaluator,
    SearchNode,
    SearchResult,
    SyntheticEvaluator,
    branch_and_bound,
    enumerate_oracle,
    evaluate_pattern,
)
from .simulate import (
    BusState,
    CtpRecord,
    SimOutcome,
    SimulationError,
    StopQueue,
    detect_bunching,
    execute_dwell,
    instantaneous_headway,
    run_simulation,
    sample_travel_time,
    signal_delay,
)

__version__ = "0.1.0"
