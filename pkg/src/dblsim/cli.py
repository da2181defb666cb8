"""Command line front end: simulate one run, evaluate replications of a
strategy, or search for the best bus lane deployment."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .control import LookaheadController
from .metrics import passenger_stats, stability_report
from .model import (
    ConstraintSpec,
    DeploymentPattern,
    PRESETS,
    Scenario,
    ScenarioError,
    load_scenario,
    reference_scenario_path,
    validate,
    validate_pattern,
)
from .optimize import MonteCarloEvaluator, branch_and_bound
from .simulate import SimOutcome, run_simulation

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3


class ControllerFactory:
    """Picklable maker of per-replication controllers."""

    def __init__(self, depth: Optional[int], gamma: float):
        self.depth = depth
        self.gamma = gamma

    def __call__(self):
        if self.depth is None:
            return None
        return LookaheadController(self.depth, self.gamma)


def _parse_pattern(args, scenario: Scenario) -> DeploymentPattern:
    if args.preset:
        return DeploymentPattern.preset(args.preset)
    if args.pattern:
        ids = [int(tok) for tok in args.pattern.replace(",", " ").split()]
        return DeploymentPattern.of(ids)
    return DeploymentPattern.of(())


def _controller_factory(args) -> ControllerFactory:
    return ControllerFactory(args.lookahead, args.gamma)


def _run_report(outcome: SimOutcome) -> dict:
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
        "passenger_ledger": outcome.passenger_ledger,
    }


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_trajectories(path: Path, outcome: SimOutcome) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bus_id", "stop_id", "arrival_s", "departure_s"])
        for bus_id in outcome.bus_ids:
            for stop_id, arrival, departure in outcome.trajectories[bus_id]:
                writer.writerow([bus_id, stop_id, repr(arrival), repr(departure)])


def _write_ctps(path: Path, outcome: SimOutcome) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["time_s", "bus_id"]
        header += [f"h_{b}" for b in outcome.bus_ids]
        header.append("action")
        writer.writerow(header)
        for rec in outcome.ctp_records:
            row = [repr(rec.time), rec.departing_bus]
            row += [repr(h) for h in rec.headways]
            row.append(repr(rec.action))
            writer.writerow(row)


AGGREGATE_COLUMNS = [
    "c_H", "sigma_c", "n_T", "a_sum", "a_mean", "a_std", "n_M",
    "bunch_fraction", "bunch",
    "n_p", "t_W", "sigma_W", "t_R", "sigma_R", "t_Tr", "sigma_Tr",
]


def aggregate_reports(reports: Sequence[dict]) -> dict:
    """Mean of each per-replication metric, matching the table layout."""

    def mean_of(path0, path1):
        values = [r[path0][path1] for r in reports if r[path0][path1] is not None]
        if not values:
            return None
        return sum(values) / len(values)

    bunch_fraction = sum(1 for r in reports if r["bunched"]) / len(reports)
    return {
        "c_H": mean_of("stability", "fsi"),
        "sigma_c": mean_of("stability", "fsi_std"),
        "n_T": mean_of("stability", "n_ctp"),
        "a_sum": mean_of("stability", "action_abs_sum"),
        "a_mean": mean_of("stability", "action_abs_mean"),
        "a_std": mean_of("stability", "action_abs_std"),
        "n_M": mean_of("stability", "n_actions"),
        "bunch_fraction": bunch_fraction,
        "bunch": "Yes" if bunch_fraction > 0.5 else "No",
        "n_p": mean_of("passengers", "n_p"),
        "t_W": mean_of("passengers", "wait_mean"),
        "sigma_W": mean_of("passengers", "wait_std"),
        "t_R": mean_of("passengers", "ride_mean"),
        "sigma_R": mean_of("passengers", "ride_std"),
        "t_Tr": mean_of("passengers", "travel_mean"),
        "sigma_Tr": mean_of("passengers", "travel_std"),
    }


def _write_aggregate_csv(path: Path, row: dict) -> None:
    def cell(value):
        if value is None:
            return ""
        if isinstance(value, str):
            return value
        return repr(float(value))

    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        writer.writerow([cell(row[c]) for c in AGGREGATE_COLUMNS])


def cmd_simulate(args, scenario: Scenario) -> int:
    pattern = _parse_pattern(args, scenario)
    controller = _controller_factory(args)()
    outcome = run_simulation(scenario.config, pattern, controller, (args.seed, 0))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_trajectories(out_dir / "trajectories.csv", outcome)
    _write_ctps(out_dir / "ctps.csv", outcome)
    report = _run_report(outcome)
    report["seed"] = args.seed
    report["pattern"] = sorted(pattern.chosen)
    _write_json(out_dir / "report.json", report)
    print(f"bunched: {'yes' if outcome.bunched else 'no'}")
    print(f"wrote {out_dir}/trajectories.csv, ctps.csv, report.json")
    return EXIT_OK


def cmd_evaluate(args, scenario: Scenario) -> int:
    pattern = _parse_pattern(args, scenario)
    reps = args.reps or scenario.default_reps
    factory = _controller_factory(args)
    reports = []
    for j in range(reps):
        outcome = run_simulation(
            scenario.config, pattern, factory(), (args.seed, j)
        )
        reports.append(_run_report(outcome))
    aggregate = aggregate_reports(reports)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "replications.json", reports)
    _write_aggregate_csv(out_dir / "aggregate.csv", aggregate)
    shown = {k: aggregate[k] for k in ("c_H", "sigma_c", "n_T", "a_mean", "n_M", "bunch", "t_W")}
    print(json.dumps(shown, sort_keys=True))
    print(f"wrote {out_dir}/replications.json, aggregate.csv")
    return EXIT_OK


def cmd_optimize(args, scenario: Scenario) -> int:
    if args.limits:
        f1, f2 = (float(tok) for tok in args.limits.split(","))
        constraints = ConstraintSpec(f1, f2)
    elif scenario.constraints is not None:
        constraints = scenario.constraints
    else:
        print("error: no constraints given (scenario or --limits)", file=sys.stderr)
        return EXIT_VALIDATION
    locations = None
    if args.pattern:
        locations = [int(tok) for tok in args.pattern.replace(",", " ").split()]
    depth = args.lookahead if args.lookahead is not None else 2
    evaluator = MonteCarloEvaluator(
        scenario.config,
        controller_factory=ControllerFactory(depth, args.gamma),
        n_ev=args.reps or scenario.default_reps,
        base_seed=args.seed,
    )
    result = branch_and_bound(scenario.config, constraints, evaluator, locations)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "search_log.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["node_id", "parent_id", "removed_location", "chosen_set",
             "objective", "feasible", "pruned"]
        )
        for node in result.node_log:
            writer.writerow([
                node.node_id,
                "" if node.parent_id is None else node.parent_id,
                "" if node.removed_location is None else node.removed_location,
                "|".join(str(i) for i in node.chosen),
                repr(node.objective),
                int(node.feasible),
                int(node.pruned),
            ])
    payload = {
        "optimal_locations": (
            None if result.optimal_locations is None else list(result.optimal_locations)
        ),
        "objective": result.optimal_objective,
        "nodes_generated": result.nodes_generated,
        "feasible_nodes": result.feasible_nodes,
        "evaluations_performed": result.evaluations_performed,
        "monotonicity_violations": len(result.monotonicity_violations),
    }
    _write_json(out_dir / "result.json", payload)
    if not result.feasible:
        print("no feasible deployment satisfies the constraints", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(
        f"optimal locations: {list(result.optimal_locations)}  "
        f"objective: {result.optimal_objective:.4f}  "
        f"nodes: {result.nodes_generated}  feasible: {result.feasible_nodes}"
    )
    print(f"wrote {out_dir}/result.json, search_log.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dblsim",
        description="Circular bus line simulator and bus lane deployment optimizer",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("simulate", cmd_simulate),
        ("evaluate", cmd_evaluate),
        ("optimize", cmd_optimize),
    ):
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True,
                       help="scenario JSON path, or 'reference' for the bundled line")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--reps", type=int, default=None,
                       help="replications (default: scenario's default_reps)")
        p.add_argument("--lookahead", type=int, default=None, metavar="N",
                       help="look-ahead depth; omit for no control")
        p.add_argument("--gamma", type=float, default=0.5)
        group = p.add_mutually_exclusive_group()
        group.add_argument("--pattern", help="deployed segment ids, e.g. '2,3,5'")
        group.add_argument("--preset", choices=sorted(PRESETS),
                           help="named deployment preset")
        p.add_argument("--out-dir", default="out")
        p.add_argument("--limits", default=None, metavar="F1,F2",
                       help="influence and budget limits for optimize")
        p.set_defaults(fn=fn)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = args.scenario
        if path == "reference":
            path = reference_scenario_path()
        scenario = load_scenario(path)
    except (ScenarioError, OSError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    problems = validate(scenario.config)
    if args.preset or args.pattern:
        try:
            problems += validate_pattern(scenario.config, _parse_pattern(args, scenario))
        except (ScenarioError, ValueError) as exc:
            problems.append(str(exc))
    if problems:
        for problem in problems:
            print(f"validation: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.fn(args, scenario)
    except BrokenPipeError:
        raise
    except Exception as exc:  # keep crashes distinguishable from infeasibility
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
