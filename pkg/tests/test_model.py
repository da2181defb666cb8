import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dblsim.model import (
    ConstraintSpec,
    DeploymentPattern,
    PRESETS,
    RingTimeMap,
    ScenarioError,
    config_from_dict,
    config_to_dict,
    constraint_check,
    geometry,
    load_reference_scenario,
    load_scenario,
    route_offset,
    scenario_to_json,
    validate,
)

from conftest import toy_config

INFLUENCE_COSTS = {2: 2.5, 5: 2.65, 11: 3.0, 17: 2.85, 20: 3.25,
               21: 3.0, 25: 2.65, 29: 3.0, 33: 3.0, 34: 3.05}

REF = load_reference_scenario().config


def test_reference_instance_validates_clean(reference_config):
    assert validate(reference_config) == []


def test_reference_shape(reference_config):
    assert reference_config.n_stops == 36
    assert reference_config.n_buses == 11
    assert len(reference_config.road_segments) == 51
    assert reference_config.ring_length_km == pytest.approx(21.35)
    assert len(reference_config.signals) == 15


def test_destination_series_violation_is_reported(reference_config):
    bad_stop = dataclasses.replace(
        reference_config.stops[4],
        destination_series=(0.4, 0.5),  # sums to 0.9
    )
    stops = list(reference_config.stops)
    stops[4] = bad_stop
    bad = dataclasses.replace(reference_config, stops=tuple(stops))
    problems = validate(bad)
    assert len(problems) == 1
    assert f"stop {bad_stop.id}" in problems[0]
    assert "destination_series" in problems[0]


def test_loader_does_not_hide_bad_series(reference_scenario):
    doc = config_to_dict(reference_scenario)
    doc["stops"][0]["destination_series"] = [0.4, 0.5]
    scenario = config_from_dict(doc)
    problems = validate(scenario.config)
    assert any("destination_series" in p for p in problems)


def test_ring_length_mismatch_is_reported(reference_config):
    bad = dataclasses.replace(reference_config, ring_length_km=22.35)
    problems = validate(bad)
    assert len(problems) == 1
    assert "ring_length_km" in problems[0]


def test_route_offset_examples(reference_config):
    assert route_offset(reference_config, 1, 0.0) == 0.0
    assert route_offset(reference_config, 1, 1.0) == pytest.approx(0.6)
    assert route_offset(reference_config, 36, 1.0) == pytest.approx(0.0, abs=1e-9)


def test_route_offset_unknown_segment(reference_config):
    with pytest.raises(ValueError):
        route_offset(reference_config, 99, 0.5)
    with pytest.raises(ValueError):
        route_offset(reference_config, 1, 1.5)


def test_route_offset_monotone_and_periodic(reference_config):
    samples = []
    for bls in reference_config.bus_line_segments:
        for frac in (0.0, 0.25, 0.5, 0.75):
            samples.append(route_offset(reference_config, bls.id, frac))
    assert samples == sorted(samples)
    assert len(set(samples)) == len(samples)
    # terminal point wraps onto the origin
    assert route_offset(reference_config, 36, 1.0) == samples[0]


def test_constraint_check_reference_deployment(reference_config):
    chk = constraint_check(
        reference_config,
        DeploymentPattern.of([5, 11, 20, 21, 25, 29, 33, 34]),
        ConstraintSpec(25.0, 70.0),
    )
    assert chk.feasible
    assert chk.influence_sum == pytest.approx(23.6, abs=0.01)
    assert chk.money_sum == pytest.approx(69.29, abs=0.01)


def test_constraint_check_empty(reference_config):
    chk = constraint_check(
        reference_config, DeploymentPattern.of([]), ConstraintSpec(0.0, 0.0)
    )
    assert chk.feasible
    assert chk.influence_sum == 0.0
    assert chk.money_sum == 0.0


def test_constraint_check_infeasible_influence(reference_config):
    chk = constraint_check(
        reference_config,
        DeploymentPattern.of([2, 5, 17, 20, 25]),
        ConstraintSpec(10.0, 1e9),
    )
    assert not chk.feasible
    assert chk.influence_sum == pytest.approx(13.9, abs=0.01)


@given(st.sets(st.sampled_from(sorted(INFLUENCE_COSTS)), max_size=10))
@settings(max_examples=60, deadline=None)
def test_constraint_check_monotone_under_removal(chosen):
    limits = ConstraintSpec(25.0, 70.0)
    if not constraint_check(REF, DeploymentPattern.of(chosen), limits).feasible:
        return
    for drop in chosen:
        smaller = DeploymentPattern.of(chosen - {drop})
        assert constraint_check(REF, smaller, limits).feasible


def test_serialization_round_trip_is_byte_identical(reference_scenario):
    text = scenario_to_json(reference_scenario)
    again = scenario_to_json(load_scenario(text, is_text=True))
    assert text == again


def test_presets_match_reference_sets():
    assert PRESETS["11BLS"] == (2, 3, 5, 11, 17, 20, 21, 25, 29, 33, 34)
    assert PRESETS["9BLS"] == (2, 3, 5, 11, 17, 20, 21, 25, 29)
    assert PRESETS["7BLS"] == (2, 3, 5, 11, 17, 20, 21)
    assert PRESETS["5BLS"] == (2, 3, 5, 11, 17)
    assert PRESETS["3BLS"] == (2, 3, 5)
    with pytest.raises(ScenarioError):
        DeploymentPattern.preset("13BLS")


def test_signal_default_positions_at_boundaries(reference_config):
    geo = geometry(reference_config)
    legs16 = geo.legs[16]
    assert [leg.length_km for leg in legs16] == pytest.approx([0.2, 0.25, 0.1])
    assert [s.intersection_id for s in legs16[0].signals_after] == [7]
    assert [s.intersection_id for s in legs16[1].signals_after] == [8]
    assert legs16[2].signals_after == ()


def test_ring_time_map_wraps_and_adjusts():
    config = toy_config([1.0, 1.0], eligible={1}, rates=0.0)
    deployed = RingTimeMap(config, DeploymentPattern.of([1]))
    # segment 1 at 50 km/h, segment 2 at 35 km/h
    assert deployed.gap_time(0.0, 1.0) == pytest.approx(3600 / 50)
    assert deployed.gap_time(1.0, 1.0) == pytest.approx(3600 / 35)
    lap = deployed.gap_time(0.5, 2.0)
    assert lap == pytest.approx(3600 / 50 + 3600 / 35)
    interval = deployed.action_interval(1, 10.0)
    assert deployed.gap_time(0.0, 1.0, [interval]) == pytest.approx(3600 / 60)
    with pytest.raises(ValueError):
        deployed.action_interval(1, -50.0)


def test_backlog_prices_stops_inside_gap():
    config = toy_config([1.0, 1.0], rates=[6.0, 0.0])  # stop 1 loads, stop 2 idle
    ring = RingTimeMap(config, DeploymentPattern.of([]))
    backlog = ring.backlog({1: 0.0, 2: 0.0})
    rho = (6.0 / 60.0) * 2.0  # rate/s times mean boarding seconds
    expected_extra = 100.0 * rho * (1 + rho)
    # gap from mid segment 2 over stop 1 into segment 1
    base = ring.gap_time(1.5, 1.0)
    loaded = ring.gap_time(1.5, 1.0, backlog=backlog, now=100.0)
    assert loaded - base == pytest.approx(expected_extra)
    # a gap that stops short of stop 1 is unaffected
    assert ring.gap_time(1.2, 0.5, backlog=backlog, now=100.0) == pytest.approx(
        ring.gap_time(1.2, 0.5)
    )
