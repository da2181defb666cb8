"""Branch-and-bound selection of bus lane locations under cost limits.

The search tree starts from deploying every alternative location and removes
one location per branch; feasible nodes bound the search and the incumbent
is returned once the root's alternatives are exhausted. Objective values come
from a pluggable evaluator, usually seeded Monte Carlo replications of the
simulation.
"""

from __future__ import annotations

import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .metrics import stability_report
from .model import ConstraintSpec, DeploymentPattern, LineConfig, constraint_check
from .simulate import run_simulation


class SearchError(RuntimeError):
    pass


@dataclass
class SearchNode:
    node_id: int
    parent_id: Optional[int]
    removed_location: Optional[int]
    chosen: tuple[int, ...]
    objective: float
    feasible: bool
    pruned: bool = False
    checked: bool = False


@dataclass
class SearchResult:
    optimal_locations: Optional[tuple[int, ...]]
    optimal_objective: Optional[float]
    nodes_generated: int
    feasible_nodes: int
    evaluations_performed: int
    node_log: list[SearchNode]
    monotonicity_violations: list[tuple[tuple[int, ...], tuple[int, ...], float, float]]

    @property
    def feasible(self) -> bool:
        return self.optimal_locations is not None


# ---------------------------------------------------------------------------
# evaluators


def replication_report(args) -> dict:
    """One seeded run reduced to its report dict; picklable for pools."""
    from .metrics import passenger_stats

    config, pattern, controller_factory, seed = args
    controller = controller_factory() if controller_factory else None
    outcome = run_simulation(config, pattern, controller, seed)
    stability = stability_report(
        [rec.headways for rec in outcome.ctp_records],
        [rec.action for rec in outcome.ctp_records],
        outcome.bunched,
    )
    passengers = passenger_stats(outcome.completed_trips)
    return {
        "stability": stability.to_dict(),
        "passengers": passengers.to_dict(),
        "bunched": outcome.bunched,
    }


def batch_reports(
    config: LineConfig,
    pattern: DeploymentPattern,
    controller_factory,
    n_ev: int,
    base_seed: int = 0,
    processes: int = 1,
) -> list[dict]:
    """Reports for n_ev common-seeded replications, reduced in seed order."""
    jobs = [
        (config, pattern, controller_factory, (base_seed, j)) for j in range(n_ev)
    ]
    if processes > 1 and n_ev > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            return list(pool.map(replication_report, jobs))
    return [replication_report(job) for job in jobs]


def _replication_fsi(args) -> float:
    return replication_report(args)["stability"]["fsi"]


class MonteCarloEvaluator:
    """Mean stability index over seeded replications, memoized per pattern.

    Every pattern reuses the same replication seeds (base_seed, j) so that
    node comparisons see common random numbers and the search result is a
    deterministic function of the inputs.
    """

    def __init__(
        self,
        config: LineConfig,
        controller_factory: Optional[Callable[[], Callable]] = None,
        n_ev: int = 50,
        base_seed: int = 0,
        processes: int = 1,
    ):
        if n_ev < 1:
            raise ValueError("n_ev must be >= 1")
        self.config = config
        self.controller_factory = controller_factory
        self.n_ev = n_ev
        self.base_seed = base_seed
        self.processes = max(1, processes)
        self.evaluations = 0
        self._memo: dict[frozenset[int], float] = {}

    def __call__(self, chosen: Sequence[int]) -> float:
        key = frozenset(int(i) for i in chosen)
        if key in self._memo:
            return self._memo[key]
        pattern = DeploymentPattern(key)
        jobs = [
            (self.config, pattern, self.controller_factory, (self.base_seed, j))
            for j in range(self.n_ev)
        ]
        if self.processes > 1 and self.n_ev > 1:
            with ProcessPoolExecutor(max_workers=self.processes) as pool:
                values = list(pool.map(_replication_fsi, jobs))
        else:
            values = [_replication_fsi(job) for job in jobs]
        result = sum(values) / len(values)
        self.evaluations += 1
        self._memo[key] = result
        return result


class SyntheticEvaluator:
    """Deterministic objective injected for tests; memoized like the real one."""

    def __init__(self, fn: Callable[[tuple[int, ...]], float]):
        self.fn = fn
        self.evaluations = 0
        self._memo: dict[frozenset[int], float] = {}

    def __call__(self, chosen: Sequence[int]) -> float:
        key = frozenset(int(i) for i in chosen)
        if key in self._memo:
            return self._memo[key]
        value = float(self.fn(tuple(sorted(key))))
        self.evaluations += 1
        self._memo[key] = value
        return value


def evaluate_pattern(evaluator, pattern: DeploymentPattern) -> float:
    """Objective estimate for one deployment pattern."""
    return evaluator(tuple(sorted(pattern.chosen)))


# ---------------------------------------------------------------------------
# the search


@dataclass
class _TreeNode:
    node_id: int
    chosen: tuple[int, ...]
    remaining: list[int]
    objective: float
    feasible: bool
    parent: Optional["_TreeNode"]
    log: SearchNode


def branch_and_bound(
    config: LineConfig,
    constraints: ConstraintSpec,
    evaluator,
    locations: Optional[Sequence[int]] = None,
) -> SearchResult:
    """Exact search over subsets of the alternative locations.

    Bounding uses the running incumbent: nodes whose objective already meets
    or exceeds it are not branched, and feasible nodes retrace immediately
    since removing further locations only weakens the regulation. Each
    generated node holds a distinct subset; that uniqueness is asserted.
    """
    if locations is None:
        locations = config.costed_segment_ids()
    locations = list(dict.fromkeys(int(i) for i in locations))
    if not constraint_check(config, DeploymentPattern.of(()), constraints).feasible:
        return SearchResult(None, None, 0, 0, 0, [], [])

    big = sys.float_info.max
    incumbent: Optional[tuple[int, ...]] = None
    bound = big
    node_log: list[SearchNode] = []
    violations: list[tuple[tuple[int, ...], tuple[int, ...], float, float]] = []
    seen: set[frozenset[int]] = set()
    feasible_nodes = 0
    next_id = 0

    def make_node(
        chosen: tuple[int, ...],
        remaining: list[int],
        parent: Optional[_TreeNode],
        removed: Optional[int],
    ) -> _TreeNode:
        nonlocal next_id, feasible_nodes
        key = frozenset(chosen)
        if key in seen:
            raise SearchError(f"duplicate subset generated: {sorted(key)}")
        seen.add(key)
        objective = evaluator(chosen)
        feasible = constraint_check(
            config, DeploymentPattern.of(chosen), constraints
        ).feasible
        if feasible:
            feasible_nodes += 1
        if parent is not None and objective < parent.objective:
            violations.append((parent.chosen, chosen, parent.objective, objective))
        log = SearchNode(
            node_id=next_id,
            parent_id=None if parent is None else parent.node_id,
            removed_location=removed,
            chosen=chosen,
            objective=objective,
            feasible=feasible,
        )
        node_log.append(log)
        next_id += 1
        return _TreeNode(log.node_id, chosen, remaining, objective, feasible, parent, log)

    root = make_node(tuple(locations), list(locations), None, None)
    current: Optional[_TreeNode] = root

    while current is not None:
        node = current
        if node.objective >= bound:
            node.log.pruned = True
            current = node.parent
            continue
        if node.feasible:
            incumbent = node.chosen
            bound = node.objective
            current = node.parent  # removing more only increases the objective
            continue
        if not node.remaining:
            node.log.checked = True
            current = node.parent
            continue
        removed = node.remaining.pop(0)
        child_chosen = tuple(i for i in node.chosen if i != removed)
        child = make_node(child_chosen, list(node.remaining), node, removed)
        current = child

    if incumbent is None:
        return SearchResult(
            None, None, len(node_log), feasible_nodes,
            getattr(evaluator, "evaluations", len(node_log)), node_log, violations,
        )
    final = constraint_check(config, DeploymentPattern.of(incumbent), constraints)
    if not final.feasible:
        raise SearchError("incumbent violates the constraints it was tested against")
    assert bound < big, "sentinel bound survived to output"
    return SearchResult(
        optimal_locations=tuple(sorted(incumbent)),
        optimal_objective=bound,
        nodes_generated=len(node_log),
        feasible_nodes=feasible_nodes,
        evaluations_performed=getattr(evaluator, "evaluations", len(node_log)),
        node_log=node_log,
        monotonicity_violations=violations,
    )


def enumerate_oracle(
    config: LineConfig,
    constraints: ConstraintSpec,
    evaluator,
    locations: Optional[Sequence[int]] = None,
) -> SearchResult:
    """Exhaustive argmin over every feasible subset; the testing reference.

    Ties resolve to the lexicographically smallest sorted subset.
    """
    if locations is None:
        locations = config.costed_segment_ids()
    locations = list(dict.fromkeys(int(i) for i in locations))
    if len(locations) > 20:
        raise SearchError(f"enumeration over {len(locations)} locations refused")
    best: Optional[tuple[int, ...]] = None
    best_value = math.inf
    count = 0
    feasible_nodes = 0
    for mask in range(1 << len(locations)):
        chosen = tuple(
            loc for bit, loc in enumerate(locations) if mask >> bit & 1
        )
        count += 1
        if not constraint_check(
            config, DeploymentPattern.of(chosen), constraints
        ).feasible:
            continue
        feasible_nodes += 1
        value = evaluator(tuple(sorted(chosen)))
        key = tuple(sorted(chosen))
        if value < best_value or (value == best_value and best is not None and key < best):
            best = key
            best_value = value
    if best is None:
        return SearchResult(None, None, count, 0, 0, [], [])
    return SearchResult(
        optimal_locations=best,
        optimal_objective=best_value,
        nodes_generated=count,
        feasible_nodes=feasible_nodes,
        evaluations_performed=getattr(evaluator, "evaluations", feasible_nodes),
        node_log=[],
        monotonicity_violations=[],
    )
