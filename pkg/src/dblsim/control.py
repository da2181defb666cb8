"""Look-ahead speed regulation on deployed bus lane segments.

At a controlled departure the controller rolls a deterministic expected-value
copy of the line forward over the next N departures, scoring every reachable
regulating speed by the squared headway deviation it leaves behind, and
returns the discounted cost minimizer for the first level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .metrics import action_cost
from .model import (
    DeploymentPattern,
    LineConfig,
    RingTimeMap,
    SignalPlan,
    geometry,
)
from .simulate import SimSnapshot

KMH_TO_S_PER_KM = 3600.0


def expected_intersection_delay(plan: SignalPlan) -> float:
    """Mean wait of a uniformly arriving bus: red^2 over twice the cycle."""
    return plan.red_s**2 / (2.0 * plan.cycle_s)


def delta_travel_time(
    config: LineConfig, bls_id: int, action_kmh: float, deployed: bool
) -> float:
    """Travel time change over one segment traversal due to a regulating
    speed; zero for segments without deployed bus lanes."""
    if not deployed or action_kmh == 0.0:
        return 0.0
    base = config.dbl_speed_kmh
    if base + action_kmh <= 0.0:
        raise ValueError(f"action {action_kmh} km/h stalls segment {bls_id}")
    seg = config.bus_line_segment(bls_id)
    total_km = sum(config.road_segment(r).length_km for r in seg.road_segments)
    return KMH_TO_S_PER_KM * total_km * (1.0 / (base + action_kmh) - 1.0 / base)


def expected_dwell(
    arrival_est: float,
    last_departure: float,
    rate_per_s: float,
    mean_board_s: float,
    alight_est_s: float,
) -> float:
    """Dwell estimate before the bus reaches the stop: boarding of everyone
    accumulated since the last service (plus the ones arriving during the
    dwell itself, to first order) against the alighting workload."""
    rho = rate_per_s * mean_board_s
    if rho >= 1.0:
        raise ValueError(
            f"stop demand is unstable: rate*boarding time = {rho:.3f} >= 1"
        )
    waited = max(0.0, arrival_est - last_departure)
    return max(waited * rho * (1.0 + rho), alight_est_s)


@dataclass(frozen=True)
class ExpectedTimes:
    """Deterministic traversal and dwell expectations for one deployment."""

    seg_time_s: dict[int, float]  # per segment: cruise + expected signal delays
    delta_s: dict[int, dict[float, float]]  # per segment, per action
    stop_rate_per_s: dict[int, float]
    mean_board_s: float
    intersection_delay_s: dict[int, float]


def build_expected_times(
    config: LineConfig, pattern: DeploymentPattern
) -> ExpectedTimes:
    seg_time: dict[int, float] = {}
    delta: dict[int, dict[float, float]] = {}
    inter: dict[int, float] = {}
    for plan in config.signals:
        inter[plan.intersection_id] = expected_intersection_delay(plan)
    for bls in config.bus_line_segments:
        deployed = bls.id in pattern.chosen
        speed = config.dbl_speed_kmh if deployed else config.common_speed_kmh
        total_km = sum(config.road_segment(r).length_km for r in bls.road_segments)
        cruise = KMH_TO_S_PER_KM * total_km / speed
        signal = sum(
            inter[p.intersection_id]
            for p in config.signals
            if p.host_segment == bls.id
        )
        seg_time[bls.id] = cruise + signal
        actions = bls.action_set_kmh if deployed else (0.0,)
        delta[bls.id] = {
            a: delta_travel_time(config, bls.id, a, deployed) for a in actions
        }
    return ExpectedTimes(
        seg_time_s=seg_time,
        delta_s=delta,
        stop_rate_per_s={
            s.id: s.arrival_rate_per_min / 60.0 for s in config.stops
        },
        mean_board_s=config.mean_board_s(),
        intersection_delay_s=inter,
    )


@dataclass
class RolloutState:
    """Compressed line state at a departure, times relative to that instant."""

    bus_ids: tuple[int, ...]
    target_stop: dict[int, int]
    time_to_activation: dict[int, float]
    arrival_time: dict[int, float]
    anchor: dict[int, tuple[float, float, float, float]]  # (t0, x0, t1, x1)
    alight_seconds: dict[int, dict[int, float]]
    latest_service: dict[int, float]
    active_actions: tuple[tuple[int, float, float], ...]  # (segment, action, until)
    pattern: DeploymentPattern
    departing_bus: int


def build_state(
    snapshot: SimSnapshot, expected: Optional[ExpectedTimes] = None
) -> RolloutState:
    """Target stops, activation intervals and service history at a departure.

    A dwelling bus targets its current stop with its known departure time; a
    cruising bus targets the stop ahead, its activation adding the expected
    dwell on top of the known arrival.
    """
    config = snapshot.config
    if expected is None:
        expected = build_expected_times(config, snapshot.pattern)
    geo = geometry(config)
    now = snapshot.now
    bus_ids = tuple(sorted(snapshot.target_stop))
    target: dict[int, int] = {}
    t_act: dict[int, float] = {}
    arr: dict[int, float] = {}
    anchor: dict[int, tuple[float, float, float, float]] = {}
    latest = {
        sid: td - now for sid, td in snapshot.last_departure.items()
    }
    for b in bus_ids:
        stop = snapshot.target_stop[b]
        target[b] = stop
        pos = snapshot.position_km[b]
        if snapshot.dwelling[b]:
            arr[b] = 0.0
            t_act[b] = max(0.0, snapshot.depart_time[b] - now)
            anchor[b] = (0.0, pos, 0.0, pos)
        else:
            arr_rel = max(0.0, snapshot.arrive_time[b] - now)
            arr[b] = arr_rel
            alight = snapshot.alight_seconds[b].get(stop, 0.0)
            dwell = expected_dwell(
                arr_rel,
                latest.get(stop, -now),
                expected.stop_rate_per_s[stop],
                expected.mean_board_s,
                alight,
            )
            t_act[b] = arr_rel + dwell
            ring = geo.ring_length_km
            stop_x = geo.stop_km[stop]
            forward = (stop_x - pos) % ring
            anchor[b] = (0.0, pos, arr_rel, pos + forward)
    active = tuple(
        (bls, act, until - now)
        for bls, act, until in snapshot.active.values()
    )
    return RolloutState(
        bus_ids=bus_ids,
        target_stop=target,
        time_to_activation=t_act,
        arrival_time=arr,
        anchor=anchor,
        alight_seconds={b: dict(snapshot.alight_seconds[b]) for b in bus_ids},
        latest_service=latest,
        active_actions=active,
        pattern=snapshot.pattern,
        departing_bus=snapshot.departing_bus,
    )


def _position(anchor: tuple[float, float, float, float], tau: float) -> float:
    t0, x0, t1, x1 = anchor
    if tau >= t1:
        return x1
    if tau <= t0 or t1 == t0:
        return x0
    return x0 + (x1 - x0) * (tau - t0) / (t1 - t0)


def select_action(
    config: LineConfig,
    state: RolloutState,
    expected: ExpectedTimes,
    depth: int,
    gamma: float,
    ring_map: Optional[RingTimeMap] = None,
) -> float:
    """Depth-N nested minimization over future regulating speeds.

    At each level the bus with the smallest time to activation departs (ties
    to the lowest id); every speed in its segment's action set is tried, the
    line is rolled forward on expected times, and costs back up as
    ``c + gamma * child``. Returns the level-1 minimizer.
    """
    if depth < 1:
        depth = 1
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    if ring_map is None:
        ring_map = RingTimeMap(config, state.pattern)
    geo = geometry(config)
    pattern = state.pattern
    ids = list(state.bus_ids)
    n = len(ids)
    e = [state.target_stop[b] for b in ids]
    t_act = [state.time_to_activation[b] for b in ids]
    anchors = [state.anchor[b] for b in ids]
    manifests = [state.alight_seconds[b] for b in ids]
    backlog = ring_map.backlog(state.latest_service)
    latest = dict(state.latest_service)
    active = [
        ring_map.action_interval(bls, act) + (until,)
        for bls, act, until in state.active_actions
        if act != 0.0
    ]
    stop_km = geo.stop_km
    ring = geo.ring_length_km

    def level(e, t_act, anchors, backlog, latest, active, k) -> tuple[float, float]:
        if k == 1:
            # the bus whose departure raised this decision activates first,
            # even when order-preserving floors tie other departure times
            b = ids.index(state.departing_bus)
        else:
            b = 0
            for i in range(1, n):
                if t_act[i] < t_act[b]:
                    b = i
        tau = t_act[b]
        stop = e[b]
        seg = config.segment_from_stop(stop)
        deployed = seg.id in pattern.chosen
        actions = seg.action_set_kmh if deployed else (0.0,)
        next_stop = seg.to_stop
        x_stop = stop_km[stop]
        seg_len = (stop_km[next_stop] - x_stop) % ring or ring

        # price each speed at the decision instant: the activated bus still
        # sits at its departure stop and the candidate action adjusts the
        # conversion over the segment it is about to enter
        positions = [
            x_stop if i == b else _position(anchors[i], tau) for i in range(n)
        ]
        live = [iv[:3] for iv in active if iv[3] > tau]

        best = math.inf
        best_action = 0.0
        for a in actions:
            travel = expected.seg_time_s[seg.id] + expected.delta_s[seg.id][a]
            arrival = tau + travel
            own_anchor = (tau, x_stop, arrival, x_stop + seg_len)
            intervals = live
            if a != 0.0:
                intervals = live + [ring_map.action_interval(seg.id, a)]
            h = ring_map.headways(positions, intervals, backlog, tau)
            cost = action_cost(h)
            if k < depth:
                alight = manifests[b].get(next_stop, 0.0)
                dwell = expected_dwell(
                    arrival,
                    latest.get(next_stop, 0.0),
                    expected.stop_rate_per_s[next_stop],
                    expected.mean_board_s,
                    alight,
                )
                new_e = list(e)
                new_e[b] = next_stop
                new_t = list(t_act)
                new_t[b] = arrival + dwell
                new_anchors = list(anchors)
                new_anchors[b] = own_anchor
                new_backlog = backlog.copy()
                new_backlog.override(next_stop, arrival)
                new_latest = dict(latest)
                new_latest[next_stop] = arrival
                new_active = [iv for iv in active if iv[3] > tau]
                if a != 0.0:
                    new_active.append(
                        ring_map.action_interval(seg.id, a) + (arrival,)
                    )
                child, _ = level(
                    new_e, new_t, new_anchors, new_backlog, new_latest,
                    new_active, k + 1,
                )
                cost = cost + gamma * child
            if cost < best:
                best = cost
                best_action = a
        return best, best_action

    total, chosen = level(e, t_act, anchors, backlog, latest, active, 1)
    assert math.isfinite(total), "look-ahead never produced a finite cost"
    level_one = config.segment_from_stop(state.target_stop[state.departing_bus])
    allowed = (
        level_one.action_set_kmh if level_one.id in pattern.chosen else (0.0,)
    )
    assert chosen in allowed
    return chosen


class LookaheadController:
    """Stateful wrapper binding the look-ahead policy to simulator snapshots."""

    def __init__(self, depth: int = 3, gamma: float = 0.5):
        if depth < 1:
            raise ValueError("look-ahead depth must be >= 1")
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        self.depth = depth
        self.gamma = gamma
        self._cache: dict[tuple[int, frozenset[int]], tuple] = {}

    def _context(self, config: LineConfig, pattern: DeploymentPattern):
        key = (id(config), pattern.chosen)
        ctx = self._cache.get(key)
        if ctx is None:
            ctx = (
                build_expected_times(config, pattern),
                RingTimeMap(config, pattern),
                config,
            )
            self._cache[key] = ctx
        return ctx

    def __call__(self, snapshot: SimSnapshot) -> float:
        expected, ring_map, _ = self._context(snapshot.config, snapshot.pattern)
        state = build_state(snapshot, expected)
        return select_action(
            snapshot.config, state, expected, self.depth, self.gamma, ring_map
        )
