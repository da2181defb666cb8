import json

import pytest

from dblsim.model import (
    BusLineSegment,
    BusSpec,
    DEFAULT_ACTION_SET,
    LineConfig,
    PassengerProfile,
    RoadSegment,
    Scenario,
    SigmaRule,
    SignalPlan,
    Stop,
    config_from_dict,
    config_to_dict,
    load_reference_scenario,
)


def toy_config(
    seg_km,
    rates=0.0,
    eligible=(),
    buses=((1, 50, 1, 0.0), (2, 50, 2, 0.0)),
    common_speed=35.0,
    dbl_speed=50.0,
    sigma=(0.0, 0.0),
    signals=(),
    profiles=((1.0, 2.0, 0.5),),
    observation=3600.0,
    action_set=DEFAULT_ACTION_SET,
    series=(1.0,),
):
    """Small ring with one road segment per bus line segment."""
    n = len(seg_km)
    if isinstance(rates, (int, float)):
        rates = [float(rates)] * n
    stops = tuple(
        Stop(id=i + 1, arrival_rate_per_min=rates[i], destination_series=tuple(series))
        for i in range(n)
    )
    roads = tuple(
        RoadSegment(
            id=i + 1,
            length_km=seg_km[i],
            has_dbl=False,
            base_speed_kmh=common_speed,
            noise_sigma_s=sigma[0] * seg_km[i],
        )
        for i in range(n)
    )
    bls = tuple(
        BusLineSegment(
            id=i + 1,
            road_segments=(i + 1,),
            from_stop=i + 1,
            to_stop=(i + 1) % n + 1,
            eligible_for_dbl=(i + 1) in eligible,
            action_set_kmh=tuple(action_set) if (i + 1) in eligible else (0.0,),
        )
        for i in range(n)
    )
    plans = tuple(
        SignalPlan(
            intersection_id=k + 1,
            host_segment=spec["host"],
            red_s=spec["red"],
            green_s=spec["green"],
            initial_phase=spec.get("phase", "green"),
            initial_remaining_s=spec.get("remaining", spec["green"]),
            position_on_segment=spec.get("position", 0.5),
        )
        for k, spec in enumerate(signals)
    )
    return LineConfig(
        stops=stops,
        road_segments=roads,
        bus_line_segments=bls,
        signals=plans,
        buses=tuple(BusSpec(*b) for b in buses),
        passenger_profiles=tuple(PassengerProfile(*p) for p in profiles),
        ring_length_km=sum(seg_km),
        observation_period_s=observation,
        common_speed_kmh=common_speed,
        dbl_speed_kmh=dbl_speed,
        sigma_rule=SigmaRule(sigma[0], sigma[1]),
    )


@pytest.fixture(scope="session")
def reference_scenario() -> Scenario:
    return load_reference_scenario()


@pytest.fixture(scope="session")
def reference_config(reference_scenario):
    return reference_scenario.config


def shortened_scenario(reference_scenario, seconds=1800.0) -> Scenario:
    doc = config_to_dict(reference_scenario)
    doc["run"]["observation_period_s"] = seconds
    return config_from_dict(doc)


@pytest.fixture(scope="session")
def short_scenario(reference_scenario) -> Scenario:
    return shortened_scenario(reference_scenario)


@pytest.fixture()
def short_scenario_file(tmp_path, reference_scenario):
    doc = config_to_dict(reference_scenario)
    doc["run"]["observation_period_s"] = 1200.0
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path
