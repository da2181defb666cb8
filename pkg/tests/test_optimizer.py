import itertools

import numpy as np
import pytest

from dblsim.model import ConstraintSpec, DeploymentPattern
from dblsim.optimize import (
    MonteCarloEvaluator,
    SearchError,
    SyntheticEvaluator,
    branch_and_bound,
    enumerate_oracle,
    evaluate_pattern,
)

from conftest import shortened_scenario

FIVE_LOCATIONS = [2, 5, 17, 20, 25]


def test_evaluate_pattern_synthetic():
    evaluator = SyntheticEvaluator(lambda chosen: 100.0 - len(chosen))
    assert evaluate_pattern(evaluator, DeploymentPattern.of([2, 5, 17])) == 97.0


def test_evaluate_pattern_memoized():
    calls = []

    def fn(chosen):
        calls.append(chosen)
        return float(len(chosen))

    evaluator = SyntheticEvaluator(fn)
    p = DeploymentPattern.of([5, 2])
    first = evaluate_pattern(evaluator, p)
    second = evaluate_pattern(evaluator, p)
    assert first == second == 2.0
    assert len(calls) == 1
    assert evaluator.evaluations == 1


def test_branch_and_bound_root_feasible_returns_root(reference_config):
    evaluator = SyntheticEvaluator(lambda chosen: 10.0 - len(chosen))
    result = branch_and_bound(
        reference_config, ConstraintSpec(1e9, 1e9), evaluator, FIVE_LOCATIONS
    )
    assert result.optimal_locations == tuple(sorted(FIVE_LOCATIONS))
    assert result.nodes_generated == 1
    assert result.feasible_nodes == 1


def test_branch_and_bound_monotone_matches_enumeration(reference_config):
    # feasible iff at most two locations are kept
    limits = ConstraintSpec(6.0, 1e9)  # each F1 is 2.5-3.25, three always exceed
    evaluator = SyntheticEvaluator(lambda chosen: float(len(FIVE_LOCATIONS) - len(chosen)))
    bb = branch_and_bound(reference_config, limits, evaluator, FIVE_LOCATIONS)
    oracle = enumerate_oracle(
        reference_config, limits, SyntheticEvaluator(evaluator.fn), FIVE_LOCATIONS
    )
    assert bb.feasible and oracle.feasible
    assert bb.optimal_objective == oracle.optimal_objective
    assert len(bb.optimal_locations) == 2
    assert bb.monotonicity_violations == []


def test_branch_and_bound_prunes_below_exhaustive(reference_config):
    rng = np.random.default_rng(0)
    noise = {}

    def objective(chosen):
        if chosen not in noise:
            noise[chosen] = rng.uniform(0.0, 0.5)
        return 50.0 - 4.0 * len(chosen) + noise[chosen]

    evaluator = SyntheticEvaluator(objective)
    result = branch_and_bound(
        reference_config, ConstraintSpec(10.0, 1e9), evaluator, FIVE_LOCATIONS
    )
    assert result.feasible
    assert result.nodes_generated < 32
    # every generated subset is unique (Proposition-style check ran inside)
    seen = {tuple(node.chosen) for node in result.node_log}
    assert len(seen) == result.nodes_generated


def test_branch_and_bound_incumbent_satisfies_constraints(reference_config):
    evaluator = SyntheticEvaluator(lambda chosen: 40.0 - 3.0 * len(chosen))
    limits = ConstraintSpec(14.0, 50.0)
    result = branch_and_bound(reference_config, limits, evaluator)
    assert result.feasible
    from dblsim.model import constraint_check

    chk = constraint_check(
        reference_config, DeploymentPattern.of(result.optimal_locations), limits
    )
    assert chk.feasible


def test_branch_and_bound_randomized_oracle_equivalence(reference_config):
    rng = np.random.default_rng(42)
    all_locations = list(reference_config.costed_segment_ids())
    for trial in range(40):
        k = int(rng.integers(2, 7))
        locations = sorted(rng.choice(all_locations, size=k, replace=False).tolist())
        f1_limit = float(rng.uniform(3.0, 12.0))
        f2_limit = float(rng.uniform(15.0, 60.0))
        slope = float(rng.uniform(0.5, 5.0))
        base = float(rng.uniform(10.0, 50.0))

        def objective(chosen, slope=slope, base=base):
            return base - slope * len(chosen)  # monotone decreasing in size

        limits = ConstraintSpec(f1_limit, f2_limit)
        bb = branch_and_bound(
            reference_config, limits, SyntheticEvaluator(objective), locations
        )
        oracle = enumerate_oracle(
            reference_config, limits, SyntheticEvaluator(objective), locations
        )
        assert bb.feasible == oracle.feasible
        if bb.feasible:
            assert bb.optimal_objective == oracle.optimal_objective
        assert bb.nodes_generated <= 2 ** len(locations)


def test_branch_and_bound_logs_monotonicity_violations(reference_config):
    # objective that *improves* when location 17 is removed
    def objective(chosen):
        value = 10.0 + len(chosen)
        if 17 in chosen:
            value += 5.0
        return value

    result = branch_and_bound(
        reference_config,
        ConstraintSpec(6.0, 1e9),
        SyntheticEvaluator(objective),
        [2, 5, 17],
    )
    assert result.monotonicity_violations
    parent, child, pv, cv = result.monotonicity_violations[0]
    assert cv < pv


def test_enumerate_oracle_hand_case(reference_config):
    locations = [2, 5, 17]
    values = {}

    def objective(chosen):
        return values.setdefault(chosen, 100.0 - 7.0 * len(chosen) + sum(chosen) * 0.01)

    limits = ConstraintSpec(1e9, 1e9)
    oracle = enumerate_oracle(
        reference_config, limits, SyntheticEvaluator(objective), locations
    )
    best = min(
        (
            objective(tuple(sorted(c)))
            for r in range(4)
            for c in itertools.combinations(locations, r)
        ),
    )
    assert oracle.optimal_objective == best
    assert oracle.optimal_locations == (2, 5, 17)
    assert oracle.nodes_generated == 8


def test_enumerate_oracle_infeasible_and_guard(reference_config):
    evaluator = SyntheticEvaluator(lambda chosen: 1.0)
    result = enumerate_oracle(
        reference_config, ConstraintSpec(-1.0, -1.0), evaluator, [2, 5]
    )
    assert not result.feasible
    with pytest.raises(SearchError):
        enumerate_oracle(
            reference_config, ConstraintSpec(1.0, 1.0), evaluator, list(range(21))
        )


def test_branch_and_bound_infeasible_limits(reference_config):
    evaluator = SyntheticEvaluator(lambda chosen: 1.0)
    result = branch_and_bound(
        reference_config, ConstraintSpec(-1.0, -1.0), evaluator, [2, 5]
    )
    assert not result.feasible
    assert result.optimal_locations is None


def test_ties_resolve_lexicographically(reference_config):
    evaluator = SyntheticEvaluator(lambda chosen: 5.0)  # everything ties
    oracle = enumerate_oracle(
        reference_config, ConstraintSpec(1e9, 1e9), evaluator, [5, 2]
    )
    assert oracle.optimal_locations == ()  # empty set is lexicographically least


def test_monte_carlo_evaluator_uses_common_seeds(reference_scenario):
    scenario = shortened_scenario(reference_scenario, seconds=900.0)
    evaluator = MonteCarloEvaluator(scenario.config, None, n_ev=2, base_seed=11)
    p = DeploymentPattern.of([2, 3])
    first = evaluator(tuple(sorted(p.chosen)))
    # memoized: identical object back without further simulation
    assert evaluator(tuple(sorted(p.chosen))) == first
    assert evaluator.evaluations == 1
    again = MonteCarloEvaluator(scenario.config, None, n_ev=2, base_seed=11)
    assert again(tuple(sorted(p.chosen))) == first


def test_monte_carlo_evaluator_parallel_matches_serial(reference_scenario):
    scenario = shortened_scenario(reference_scenario, seconds=900.0)
    serial = MonteCarloEvaluator(scenario.config, None, n_ev=2, base_seed=3)
    parallel = MonteCarloEvaluator(
        scenario.config, None, n_ev=2, base_seed=3, processes=2
    )
    chosen = (2, 3, 5)
    assert serial(chosen) == parallel(chosen)
