"""Discrete-event simulation of the circular bus line.

Buses alternate dwell, per-road-segment cruising with sampled noise, and
signal waits. Every departure is a critical time point: all instantaneous
headways are recorded and, when the entered segment has a deployed bus lane,
the controller picks the regulating speed for that traversal.
"""

from __future__ import annotations

import heapq
from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .model import (
    DeploymentPattern,
    LineConfig,
    RingTimeMap,
    RoadSegment,
    SignalPlan,
    geometry,
    route_offset,
    validate,
    validate_pattern,
)

KMH_TO_S_PER_KM = 3600.0

BUNCH_SPACING_KM = 0.05
BUNCH_DURATION_S = 300.0
BUNCH_SAMPLE_S = 10.0


class SimulationError(RuntimeError):
    """A run could not be completed (bad inputs or controller failure)."""


# ---------------------------------------------------------------------------
# elementary stochastic pieces


def sample_travel_time(segment: RoadSegment, rng: np.random.Generator) -> float:
    """Sampled traversal seconds: expectation plus zero-mean normal noise,
    floored at 20% of the expectation so a draw can never run backwards."""
    expected = KMH_TO_S_PER_KM * segment.length_km / segment.base_speed_kmh
    noise = rng.normal(0.0, segment.noise_sigma_s)
    return max(0.2 * expected, expected + noise)


def signal_delay(plan: SignalPlan, arrival_s: float) -> float:
    """Seconds until the next green interval starts; 0 when already green.

    The phase timeline starts at time zero in the plan's initial phase with
    ``initial_remaining_s`` left; intervals are half-open, so an arrival at
    the exact start of green passes immediately.
    """
    if arrival_s < plan.initial_remaining_s:
        if plan.initial_phase == "green":
            return 0.0
        return plan.initial_remaining_s - arrival_s
    t = (arrival_s - plan.initial_remaining_s) % plan.cycle_s
    if plan.initial_phase == "green":  # red comes next after the initial slice
        return plan.red_s - t if t < plan.red_s else 0.0
    return 0.0 if t < plan.green_s else plan.cycle_s - t


# ---------------------------------------------------------------------------
# runtime state


class StopQueue:
    """Waiting passengers of one stop, ordered by arrival.

    Passengers denied boarding (full bus) simply stay at the head of the
    queue with their original arrival time.
    """

    __slots__ = ("stop_id", "arrival_s", "dest", "board_s", "alight_s", "ptr",
                 "last_departure_time")

    def __init__(
        self,
        stop_id: int,
        arrival_s: np.ndarray,
        dest: np.ndarray,
        board_s: np.ndarray,
        alight_s: np.ndarray,
    ):
        self.stop_id = stop_id
        self.arrival_s = arrival_s
        self.dest = dest
        self.board_s = board_s
        self.alight_s = alight_s
        self.ptr = 0
        self.last_departure_time = 0.0

    @property
    def generated(self) -> int:
        return len(self.arrival_s)

    @property
    def still_waiting(self) -> int:
        return len(self.arrival_s) - self.ptr


class BusRuntime:
    """Mutable per-bus state while a run is in progress."""

    __slots__ = (
        "id", "capacity", "stop", "target_stop", "depart_time", "arrive_time",
        "active_bls", "active_action", "onboard", "onboard_count",
        "itin_t", "itin_x", "trajectory", "cur_arrival",
    )

    def __init__(self, bus_id: int, capacity: int, stop: int, start_km: float):
        self.id = bus_id
        self.capacity = capacity
        self.stop: Optional[int] = stop
        self.target_stop: Optional[int] = None
        self.depart_time = 0.0
        self.arrive_time = 0.0
        self.active_bls: Optional[int] = None
        self.active_action = 0.0
        # onboard passengers grouped by destination: (alight_s, wait_s, board_ref)
        self.onboard: dict[int, list[tuple[float, float, float]]] = {}
        self.onboard_count = 0
        self.itin_t: list[float] = [0.0]
        self.itin_x: list[float] = [start_km]
        self.trajectory: list[tuple[int, float, float]] = []
        self.cur_arrival = 0.0

    def position_km(self, t: float) -> float:
        """Unwrapped km along the ring at time ``t`` (piecewise linear)."""
        ts, xs = self.itin_t, self.itin_x
        i = bisect_right(ts, t)
        if i >= len(ts):
            return xs[-1]
        if i == 0:
            return xs[0]
        t0, t1 = ts[i - 1], ts[i]
        if t1 == t0:
            return xs[i]
        w = (t - t0) / (t1 - t0)
        return xs[i - 1] + w * (xs[i] - xs[i - 1])


@dataclass(frozen=True)
class BusState:
    """Public snapshot of one bus at an instant."""

    bus_id: int
    phase: str  # dwelling | cruising | at_signal
    target_stop: int
    position: tuple[int, float]  # (bus line segment id, fraction traversed)
    arrival_time_at_target: float
    departure_time: float
    onboard: Mapping[tuple[int, float], int]  # (destination, alight_s) -> count
    active_action: float


@dataclass(frozen=True)
class CtpRecord:
    """Headway snapshot taken at one bus departure."""

    time: float
    departing_bus: int
    headways: tuple[float, ...]  # ordered by bus id
    action: float


@dataclass
class SimOutcome:
    """Everything observable from one seeded run."""

    ctp_records: list[CtpRecord]
    trajectories: dict[int, list[tuple[int, float, float]]]
    completed_trips: list[tuple[float, float]]  # (wait_s, ride_s)
    action_log: list[float]  # nonzero regulating speeds, in decision order
    bunched: bool
    itineraries: dict[int, tuple[list[float], list[float]]]
    passenger_ledger: dict[str, int]
    bus_ids: tuple[int, ...] = ()


@dataclass
class SimSnapshot:
    """What the controller may observe at a departure event."""

    now: float
    departing_bus: int
    config: LineConfig
    pattern: DeploymentPattern
    ring_map: RingTimeMap
    # per bus id
    dwelling: dict[int, bool]
    target_stop: dict[int, int]
    position_km: dict[int, float]
    arrive_time: dict[int, float]  # absolute; == now for dwelling buses
    depart_time: dict[int, float]  # absolute; only meaningful when dwelling
    alight_seconds: dict[int, dict[int, float]]
    active: dict[int, tuple[int, float, float]]  # bus -> (bls, action, until)
    last_departure: dict[int, float]


Controller = Callable[[SimSnapshot], float]


# ---------------------------------------------------------------------------
# dwell execution


def execute_dwell(
    bus: BusRuntime,
    queue: StopQueue,
    arrival_s: float,
    rng_stream: Optional[np.random.Generator] = None,
    *,
    min_departure_s: float = 0.0,
    trip_sink: Optional[list[tuple[float, float]]] = None,
) -> tuple[float, int, int, int]:
    """Alight, board, and fix the departure time for one stop visit.

    Boarding is FIFO while capacity lasts and keeps admitting passengers
    whose arrivals fall before the provisional door close; the dwell is the
    larger of total boarding and total alighting time. Returns
    ``(departure_s, boarded, alighted, denied)``.
    """
    alighters = bus.onboard.pop(queue.stop_id, [])
    alight_total = 0.0
    for alight_s, wait_s, board_ref in alighters:
        alight_total += alight_s
        if trip_sink is not None:
            trip_sink.append((wait_s, arrival_s - board_ref))
    bus.onboard_count -= len(alighters)

    arrivals = queue.arrival_s
    n = len(arrivals)
    board_total = 0.0
    boarded = 0
    ptr = queue.ptr
    while ptr < n and bus.onboard_count < bus.capacity:
        t_pax = float(arrivals[ptr])
        close = max(arrival_s + max(board_total, alight_total), min_departure_s)
        if t_pax > arrival_s and t_pax >= close:
            break
        wait_s = max(0.0, arrival_s - t_pax)
        board_ref = max(arrival_s, t_pax)
        dest = int(queue.dest[ptr])
        bus.onboard.setdefault(dest, []).append(
            (float(queue.alight_s[ptr]), wait_s, board_ref)
        )
        bus.onboard_count += 1
        board_total += float(queue.board_s[ptr])
        boarded += 1
        ptr += 1
    queue.ptr = ptr
    departure_s = max(arrival_s + max(board_total, alight_total), min_departure_s)
    denied = int(np.searchsorted(arrivals[ptr:], departure_s, side="right"))
    return departure_s, boarded, len(alighters), denied


# ---------------------------------------------------------------------------
# headways


def instantaneous_headway(
    config: LineConfig,
    states: Sequence[BusState],
    bus_id: int,
    pattern: DeploymentPattern,
    now: float = 0.0,
    last_departure: Optional[Mapping[int, float]] = None,
) -> float:
    """Time headway of one bus to its nearest preceding bus.

    The spatial gap converts to time through the expected cruising speeds of
    the covered segments, including any regulating speed currently active on
    them, the expected delay of signals inside the gap and, when per-stop
    last service times are given, the expected dwell backlog of the stops
    inside the gap.
    """
    ring_map = RingTimeMap(config, pattern)
    positions = [
        route_offset(config, state.position[0], state.position[1])
        for state in states
    ]
    active = []
    for state in states:
        if state.active_action != 0.0 and state.position[0] in pattern.chosen:
            active.append(ring_map.action_interval(state.position[0], state.active_action))
    backlog = None
    if last_departure is not None:
        backlog = ring_map.backlog(last_departure)
    headways = ring_map.headways(positions, active, backlog, now)
    for state, h in zip(states, headways):
        if state.bus_id == bus_id:
            return h
    raise ValueError(f"bus {bus_id} not present in states")


# ---------------------------------------------------------------------------
# passenger generation


def _generate_passengers(
    config: LineConfig, seed_seq: np.random.SeedSequence
) -> dict[int, StopQueue]:
    """Poisson arrivals per stop over the observation period, with sampled
    destinations and passenger profiles. Independent of the deployment, so
    common base seeds share identical demand across patterns."""
    horizon = config.observation_period_s
    order = [b.from_stop for b in config.bus_line_segments]
    pos_of = {s: k for k, s in enumerate(order)}
    profiles = config.passenger_profiles
    shares = np.array([p.share for p in profiles])
    shares = shares / shares.sum()
    board = np.array([p.board_s for p in profiles])
    alight = np.array([p.alight_s for p in profiles])
    queues: dict[int, StopQueue] = {}
    children = seed_seq.spawn(len(config.stops))
    for child, stop in zip(children, config.stops):
        rng = np.random.default_rng(child)
        rate = stop.arrival_rate_per_min / 60.0
        if rate <= 0.0:
            empty = np.empty(0)
            queues[stop.id] = StopQueue(stop.id, empty, empty, empty, empty)
            continue
        times: list[np.ndarray] = []
        total = 0.0
        size = int(rate * horizon * 1.2) + 16
        while total <= horizon:
            gaps = rng.exponential(1.0 / rate, size=size)
            chunk = total + np.cumsum(gaps)
            times.append(chunk)
            total = chunk[-1]
        arrivals = np.concatenate(times)
        arrivals = arrivals[arrivals < horizon]
        n = len(arrivals)
        series = np.array(stop.destination_series)
        offsets = rng.choice(len(series), size=n, p=series / series.sum())
        here = pos_of[stop.id]
        dests = np.array(
            [order[(here + 1 + int(off)) % len(order)] for off in offsets]
        )
        kind = rng.choice(len(profiles), size=n, p=shares)
        queues[stop.id] = StopQueue(
            stop.id, arrivals, dests, board[kind], alight[kind]
        )
    return queues


# ---------------------------------------------------------------------------
# the run


_ARRIVE, _DEPART = 0, 1


def run_simulation(
    config: LineConfig,
    pattern: DeploymentPattern,
    controller: Optional[Controller],
    seed,
) -> SimOutcome:
    """One seeded, fully deterministic run over the observation period."""
    problems = validate(config) + validate_pattern(config, pattern)
    if problems:
        raise SimulationError("invalid configuration: " + "; ".join(problems))
    if config.n_buses < 2:
        raise SimulationError("a run needs at least two buses")

    geo = geometry(config)
    ring_map = RingTimeMap(config, pattern)
    horizon = config.observation_period_s
    seed_seq = np.random.SeedSequence(seed)
    pax_parent, travel_seq = seed_seq.spawn(2)
    queues = _generate_passengers(config, pax_parent)
    travel_rng = np.random.default_rng(travel_seq)

    # per-segment traversal plan under this deployment
    seg_speed: dict[int, float] = {}
    seg_legs: dict[int, tuple] = {}
    action_sets: dict[int, tuple[float, ...]] = {}
    for bls in config.bus_line_segments:
        deployed = bls.id in pattern.chosen
        speed = config.dbl_speed_kmh if deployed else config.common_speed_kmh
        coeff = (
            config.sigma_rule.dbl_s_per_km if deployed
            else config.sigma_rule.common_s_per_km
        )
        seg_speed[bls.id] = speed
        seg_legs[bls.id] = tuple(
            (leg.length_km, coeff * leg.length_km, leg.signals_after)
            for leg in geo.legs[bls.id]
        )
        action_sets[bls.id] = bls.action_set_kmh if deployed else (0.0,)

    buses = {
        spec.id: BusRuntime(
            spec.id, spec.capacity, spec.initial_stop, geo.stop_km[spec.initial_stop]
        )
        for spec in config.buses
    }
    bus_ids = tuple(sorted(buses))
    completed: list[tuple[float, float]] = []
    ctp_records: list[CtpRecord] = []
    action_log: list[float] = []
    ledger = {"generated": sum(q.generated for q in queues.values()),
              "boarded": 0, "denied_events": 0}

    # Service order is preserved: a bus cannot depart a stop before the bus
    # that arrived ahead of it, nor finish a segment before the bus that
    # entered it earlier. Without this, trailing buses skip through dwelling
    # leaders at cruise pace and every run collapses into one mega-bunch.
    last_departure_sched: dict[int, float] = {}
    last_arrival_sched: dict[int, float] = {}

    events: list[tuple[float, int, int]] = []
    initial_order = sorted(
        config.buses, key=lambda s: (s.initial_activation_delay_s, s.id)
    )
    for spec in initial_order:
        bus = buses[spec.id]
        floor = max(
            spec.initial_activation_delay_s,
            last_departure_sched.get(spec.initial_stop, 0.0),
        )
        dep, boarded, _, denied = execute_dwell(
            bus, queues[spec.initial_stop], 0.0,
            min_departure_s=floor, trip_sink=completed,
        )
        ledger["boarded"] += boarded
        ledger["denied_events"] += denied
        bus.depart_time = dep
        bus.cur_arrival = 0.0
        last_departure_sched[spec.initial_stop] = dep
        heapq.heappush(events, (dep, _DEPART, spec.id))

    def positions_at(t: float) -> list[float]:
        return [buses[b].position_km(t) for b in bus_ids]

    def active_intervals(t: float):
        out = []
        for b in bus_ids:
            bus = buses[b]
            if (
                bus.active_bls is not None
                and bus.active_action != 0.0
                and t < bus.arrive_time
            ):
                out.append(ring_map.action_interval(bus.active_bls, bus.active_action))
        return out

    while events:
        t, kind, bus_id = heapq.heappop(events)
        if t > horizon:
            break
        bus = buses[bus_id]
        if kind == _ARRIVE:
            stop_id = bus.target_stop
            assert stop_id is not None
            bus.stop = stop_id
            bus.target_stop = None
            bus.active_bls = None
            bus.active_action = 0.0
            bus.cur_arrival = t
            dep, boarded, _, denied = execute_dwell(
                bus, queues[stop_id], t,
                min_departure_s=last_departure_sched.get(stop_id, 0.0),
                trip_sink=completed,
            )
            ledger["boarded"] += boarded
            ledger["denied_events"] += denied
            if bus.onboard_count > bus.capacity:
                raise SimulationError(f"capacity exceeded on bus {bus_id}")
            bus.depart_time = dep
            last_departure_sched[stop_id] = dep
            heapq.heappush(events, (dep, _DEPART, bus_id))
            continue

        # departure: a critical time point
        stop_id = bus.stop
        assert stop_id is not None
        seg = config.segment_from_stop(stop_id)
        action = 0.0
        if controller is not None and len(action_sets[seg.id]) > 1:
            snapshot = _make_snapshot(
                config, pattern, ring_map, buses, bus_ids, queues, bus_id, t
            )
            try:
                action = float(controller(snapshot))
            except Exception as exc:
                raise SimulationError(
                    f"controller failed at t={t:.3f} for bus {bus_id}: {exc}"
                ) from exc
            if action not in action_sets[seg.id]:
                raise SimulationError(
                    f"controller returned {action}, not in the action set of "
                    f"segment {seg.id}"
                )

        bus.trajectory.append((stop_id, bus.cur_arrival, t))
        queues[stop_id].last_departure_time = t
        bus.stop = None
        bus.target_stop = seg.to_stop
        bus.active_bls = seg.id
        bus.active_action = action

        # lay down the whole traversal now; nothing can interfere mid-segment
        x = bus.itin_x[-1]
        if bus.itin_t[-1] < t:
            bus.itin_t.append(t)
            bus.itin_x.append(x)
        t_cur = t
        speed = seg_speed[seg.id] + action
        for length_km, sigma_s, plans in seg_legs[seg.id]:
            expected = KMH_TO_S_PER_KM * length_km / speed
            noise = travel_rng.normal(0.0, sigma_s)
            dt = max(0.2 * expected, expected + noise)
            t_cur += dt
            x += length_km
            bus.itin_t.append(t_cur)
            bus.itin_x.append(x)
            for plan in plans:
                wait = signal_delay(plan, t_cur)
                if wait > 0.0:
                    t_cur += wait
                    bus.itin_t.append(t_cur)
                    bus.itin_x.append(x)
        floor = last_arrival_sched.get(seg.id, 0.0)
        if t_cur < floor:
            t_cur = floor
            bus.itin_t.append(t_cur)
            bus.itin_x.append(x)
        last_arrival_sched[seg.id] = t_cur
        bus.arrive_time = t_cur
        heapq.heappush(events, (t_cur, _ARRIVE, bus_id))

        # log the CTP with the fresh action already in force
        backlog = ring_map.backlog(
            {sid: q.last_departure_time for sid, q in queues.items()}
        )
        headways = ring_map.headways(
            positions_at(t), active_intervals(t), backlog, t
        )
        ctp_records.append(
            CtpRecord(t, bus_id, tuple(headways), action)
        )
        if action != 0.0:
            action_log.append(action)

    itineraries = {b: (buses[b].itin_t, buses[b].itin_x) for b in bus_ids}
    bunched = detect_bunching(itineraries, geo.ring_length_km, horizon_s=horizon)
    trajectories = {b: buses[b].trajectory for b in bus_ids}
    ledger["onboard_at_end"] = sum(buses[b].onboard_count for b in bus_ids)
    ledger["still_waiting"] = sum(q.still_waiting for q in queues.values())
    ledger["completed"] = len(completed)
    return SimOutcome(
        ctp_records=ctp_records,
        trajectories=trajectories,
        completed_trips=completed,
        action_log=action_log,
        bunched=bunched,
        itineraries=itineraries,
        passenger_ledger=ledger,
        bus_ids=bus_ids,
    )


def _make_snapshot(
    config: LineConfig,
    pattern: DeploymentPattern,
    ring_map: RingTimeMap,
    buses: dict[int, BusRuntime],
    bus_ids: tuple[int, ...],
    queues: dict[int, StopQueue],
    departing: int,
    now: float,
) -> SimSnapshot:
    dwelling = {}
    target = {}
    pos = {}
    arrive = {}
    depart = {}
    manifests = {}
    active = {}
    for b in bus_ids:
        bus = buses[b]
        if bus.stop is not None:
            dwelling[b] = True
            target[b] = bus.stop
            arrive[b] = now
            depart[b] = bus.depart_time
        else:
            dwelling[b] = False
            assert bus.target_stop is not None
            target[b] = bus.target_stop
            arrive[b] = bus.arrive_time
            depart[b] = bus.arrive_time  # controller adds its dwell estimate
            if bus.active_bls is not None and bus.active_action != 0.0:
                active[b] = (bus.active_bls, bus.active_action, bus.arrive_time)
        pos[b] = bus.position_km(now)
        manifests[b] = {
            dest: sum(rec[0] for rec in group)
            for dest, group in bus.onboard.items()
        }
    last_dep = {sid: q.last_departure_time for sid, q in queues.items()}
    return SimSnapshot(
        now=now,
        departing_bus=departing,
        config=config,
        pattern=pattern,
        ring_map=ring_map,
        dwelling=dwelling,
        target_stop=target,
        position_km=pos,
        arrive_time=arrive,
        depart_time=depart,
        alight_seconds=manifests,
        active=active,
        last_departure=last_dep,
    )


# ---------------------------------------------------------------------------
# bunching


def detect_bunching(
    itineraries: Mapping[int, tuple[Sequence[float], Sequence[float]]],
    ring_length_km: float,
    *,
    horizon_s: float,
    spacing_km: float = BUNCH_SPACING_KM,
    min_duration_s: float = BUNCH_DURATION_S,
    sample_s: float = BUNCH_SAMPLE_S,
) -> bool:
    """True when some bus pair stays within ``spacing_km`` of ring distance
    for at least ``min_duration_s``, judged on a fixed sampling grid."""
    ids = sorted(itineraries)
    if len(ids) < 2:
        return False
    grid = np.arange(0.0, horizon_s + 1e-9, sample_s)
    pos = np.empty((len(ids), len(grid)))
    for k, bus_id in enumerate(ids):
        ts, xs = itineraries[bus_id]
        pos[k] = np.interp(grid, np.asarray(ts), np.asarray(xs))
    pos %= ring_length_km
    need = max(1, int(round(min_duration_s / sample_s)))
    window = np.ones(need)
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            d = np.abs(pos[i] - pos[j])
            close = np.minimum(d, ring_length_km - d) < spacing_km
            if len(close) >= need and np.any(
                np.convolve(close.astype(float), window, mode="valid") >= need
            ):
                return True
    return False
