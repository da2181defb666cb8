"""Domain model for a circular bus line.

Configuration schema and validation, ring geometry, the spatial-to-temporal
conversion used for headway evaluation, and deployment constraint checks.
"""

from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Iterable, Iterator, Mapping, Optional

KMH_TO_S_PER_KM = 3600.0

DEFAULT_ACTION_SET = (-10.0, -5.0, 0.0, 5.0, 10.0)

#: Named deployment patterns over the eligible bus line segments.
PRESETS: dict[str, tuple[int, ...]] = {
    "11BLS": (2, 3, 5, 11, 17, 20, 21, 25, 29, 33, 34),
    "9BLS": (2, 3, 5, 11, 17, 20, 21, 25, 29),
    "7BLS": (2, 3, 5, 11, 17, 20, 21),
    "5BLS": (2, 3, 5, 11, 17),
    "3BLS": (2, 3, 5),
}

REFERENCE_SCENARIO = "reference_line.json"


class ScenarioError(ValueError):
    """Raised when a scenario document cannot be parsed into a LineConfig."""


@dataclass(frozen=True)
class Stop:
    """A bus stop on the ring with its passenger demand."""

    id: int
    arrival_rate_per_min: float
    #: probability that a generated passenger travels n stops downstream
    #: (element 0 is the immediately following stop).
    destination_series: tuple[float, ...]


@dataclass(frozen=True)
class RoadSegment:
    """Stretch of road between two neighboring stops or intersections.

    Speed and noise fields describe the segment without a deployed bus lane;
    :func:`effective_road_segment` derives the deployed view.
    """

    id: int
    length_km: float
    has_dbl: bool
    base_speed_kmh: float
    noise_sigma_s: float


@dataclass(frozen=True)
class BusLineSegment:
    """Portion of the line between two adjacent stops; the deployment unit."""

    id: int
    road_segments: tuple[int, ...]
    from_stop: int
    to_stop: int
    eligible_for_dbl: bool
    action_set_kmh: tuple[float, ...]
    influence_cost: Optional[float] = None
    money_cost: Optional[float] = None


@dataclass(frozen=True)
class SignalPlan:
    """Pre-timed two-phase signal on the bus approach of an intersection."""

    intersection_id: int
    host_segment: int
    red_s: float
    green_s: float
    initial_phase: str  # "red" | "green"
    initial_remaining_s: float
    position_on_segment: float  # fraction of the host bus line segment

    @property
    def cycle_s(self) -> float:
        return self.red_s + self.green_s


@dataclass(frozen=True)
class BusSpec:
    id: int
    capacity: int
    initial_stop: int
    initial_activation_delay_s: float


@dataclass(frozen=True)
class PassengerProfile:
    """Passenger class defined by its service times and demand share."""

    share: float
    board_s: float
    alight_s: float


@dataclass(frozen=True)
class SigmaRule:
    """Travel time noise, seconds of standard deviation per km of segment."""

    common_s_per_km: float = 5.0
    dbl_s_per_km: float = 2.0


@dataclass(frozen=True)
class LineConfig:
    """Immutable description of the circular line; safe to share across runs."""

    stops: tuple[Stop, ...]
    road_segments: tuple[RoadSegment, ...]
    bus_line_segments: tuple[BusLineSegment, ...]
    signals: tuple[SignalPlan, ...]
    buses: tuple[BusSpec, ...]
    passenger_profiles: tuple[PassengerProfile, ...]
    ring_length_km: float
    observation_period_s: float
    common_speed_kmh: float
    dbl_speed_kmh: float
    sigma_rule: SigmaRule

    @property
    def n_stops(self) -> int:
        return len(self.stops)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def stop(self, stop_id: int) -> Stop:
        return _indexes(self).stops[stop_id]

    def road_segment(self, rs_id: int) -> RoadSegment:
        return _indexes(self).roads[rs_id]

    def bus_line_segment(self, bls_id: int) -> BusLineSegment:
        return _indexes(self).bls[bls_id]

    def segment_from_stop(self, stop_id: int) -> BusLineSegment:
        """The bus line segment a bus enters when departing ``stop_id``."""
        return _indexes(self).bls_by_from_stop[stop_id]

    def successor_stop(self, stop_id: int) -> int:
        return self.segment_from_stop(stop_id).to_stop

    def eligible_segment_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.bus_line_segments if b.eligible_for_dbl)

    def costed_segment_ids(self) -> tuple[int, ...]:
        """Eligible segments carrying both cost figures; the default search set."""
        return tuple(
            b.id
            for b in self.bus_line_segments
            if b.eligible_for_dbl
            and b.influence_cost is not None
            and b.money_cost is not None
        )

    def mean_board_s(self) -> float:
        return sum(p.share * p.board_s for p in self.passenger_profiles)


@dataclass(frozen=True)
class DeploymentPattern:
    """Set of bus line segments where dedicated lanes are installed."""

    chosen: frozenset[int]

    @classmethod
    def of(cls, ids: Iterable[int]) -> "DeploymentPattern":
        return cls(frozenset(int(i) for i in ids))

    @classmethod
    def preset(cls, name: str) -> "DeploymentPattern":
        try:
            return cls.of(PRESETS[name])
        except KeyError:
            raise ScenarioError(f"unknown preset {name!r}; options: {sorted(PRESETS)}")

    def __contains__(self, bls_id: int) -> bool:
        return bls_id in self.chosen

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.chosen))

    def __len__(self) -> int:
        return len(self.chosen)

    def as_vector(self, ordered_ids: Iterable[int]) -> tuple[int, ...]:
        return tuple(1 if i in self.chosen else 0 for i in ordered_ids)


@dataclass(frozen=True)
class ConstraintSpec:
    """Upper limits on total traffic influence and total installation money."""

    influence_limit: float
    budget_limit: float


@dataclass(frozen=True)
class ConstraintCheck:
    feasible: bool
    influence_sum: float
    money_sum: float


@dataclass(frozen=True)
class Scenario:
    """A parsed scenario file: the line plus optimization inputs."""

    config: LineConfig
    constraints: Optional[ConstraintSpec]
    default_reps: int


# ---------------------------------------------------------------------------
# index and geometry caches


@dataclass(frozen=True)
class _Indexes:
    stops: dict[int, Stop]
    roads: dict[int, RoadSegment]
    bls: dict[int, BusLineSegment]
    bls_by_from_stop: dict[int, BusLineSegment]


@lru_cache(maxsize=16)
def _indexes(config: LineConfig) -> _Indexes:
    return _Indexes(
        stops={s.id: s for s in config.stops},
        roads={r.id: r for r in config.road_segments},
        bls={b.id: b for b in config.bus_line_segments},
        bls_by_from_stop={b.from_stop: b for b in config.bus_line_segments},
    )


@dataclass(frozen=True)
class Leg:
    """One uninterrupted cruise piece of a bus line segment traversal."""

    length_km: float
    road_segment_id: int
    signals_after: tuple[SignalPlan, ...]


@dataclass(frozen=True)
class RingGeometry:
    ring_length_km: float
    stop_km: dict[int, float]
    bls_start_km: dict[int, float]
    bls_length_km: dict[int, float]
    rs_start_km: dict[int, float]
    legs: dict[int, tuple[Leg, ...]]  # per bus line segment, in travel order
    ring_bls_order: tuple[int, ...]


@lru_cache(maxsize=16)
def geometry(config: LineConfig) -> RingGeometry:
    """Lay the bus line segments end to end starting at the first from_stop."""
    idx = _indexes(config)
    stop_km: dict[int, float] = {}
    bls_start: dict[int, float] = {}
    bls_len: dict[int, float] = {}
    rs_start: dict[int, float] = {}
    legs: dict[int, tuple[Leg, ...]] = {}
    offset = 0.0
    order = tuple(b.id for b in config.bus_line_segments)
    signals_by_host: dict[int, list[SignalPlan]] = {}
    for plan in config.signals:
        signals_by_host.setdefault(plan.host_segment, []).append(plan)

    for bls in config.bus_line_segments:
        bls_start[bls.id] = offset
        stop_km.setdefault(bls.from_stop, offset)
        length = 0.0
        for rs_id in bls.road_segments:
            rs_start[rs_id] = offset + length
            length += idx.roads[rs_id].length_km
        bls_len[bls.id] = length
        legs[bls.id] = _build_legs(
            bls, idx, length, tuple(signals_by_host.get(bls.id, ()))
        )
        offset += length
    return RingGeometry(
        ring_length_km=offset,
        stop_km=stop_km,
        bls_start_km=bls_start,
        bls_length_km=bls_len,
        rs_start_km=rs_start,
        legs=legs,
        ring_bls_order=order,
    )


def _build_legs(
    bls: BusLineSegment,
    idx: _Indexes,
    total_km: float,
    plans: tuple[SignalPlan, ...],
) -> tuple[Leg, ...]:
    # Cut the segment at every road segment boundary and signal position;
    # attach each signal after the leg that ends at its position.
    cuts: dict[float, list[SignalPlan]] = {}
    for plan in plans:
        at = min(max(plan.position_on_segment, 0.0), 1.0) * total_km
        cuts.setdefault(at, []).append(plan)
    legs: list[Leg] = []
    walked = 0.0
    for rs_id in bls.road_segments:
        rs_len = idx.roads[rs_id].length_km
        rs_end = walked + rs_len
        inner = sorted(p for p in cuts if walked < p < rs_end)
        piece_start = walked
        for p in inner:
            legs.append(Leg(p - piece_start, rs_id, tuple(cuts[p])))
            piece_start = p
        at_end = tuple(cuts.get(rs_end, ())) if rs_end < total_km else ()
        legs.append(Leg(rs_end - piece_start, rs_id, at_end))
        walked = rs_end
    if legs and total_km in cuts:
        last = legs[-1]
        legs[-1] = replace(last, signals_after=last.signals_after + tuple(cuts[total_km]))
    if 0.0 in cuts:  # signal exactly at segment start waits before the first leg
        first = legs[0]
        legs[0] = Leg(0.0, first.road_segment_id, tuple(cuts[0.0]))
        legs.insert(1, first)
    return tuple(legs)


def route_offset(config: LineConfig, segment_id: int, fraction: float) -> float:
    """Km offset along the ring of a point on a bus line segment.

    The ring origin is the from_stop of the first listed segment; offsets wrap
    modulo the ring length.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    geo = geometry(config)
    try:
        start = geo.bls_start_km[segment_id]
    except KeyError:
        raise ValueError(f"unknown bus line segment id: {segment_id!r}") from None
    return (start + fraction * geo.bls_length_km[segment_id]) % geo.ring_length_km


def effective_road_segment(
    config: LineConfig, rs_id: int, deployed: bool
) -> RoadSegment:
    """A road segment as it behaves under the given deployment state."""
    rs = config.road_segment(rs_id)
    if not deployed:
        return rs
    return replace(
        rs,
        has_dbl=True,
        base_speed_kmh=config.dbl_speed_kmh,
        noise_sigma_s=config.sigma_rule.dbl_s_per_km * rs.length_km,
    )


def constraint_check(
    config: LineConfig, pattern: DeploymentPattern, spec: ConstraintSpec
) -> ConstraintCheck:
    """Total influence and money of a pattern against their limits."""
    influence = 0.0
    money = 0.0
    for bls_id in pattern.chosen:
        bls = config.bus_line_segment(bls_id)
        influence += bls.influence_cost or 0.0
        money += bls.money_cost or 0.0
    feasible = influence <= spec.influence_limit and money <= spec.budget_limit
    return ConstraintCheck(feasible, influence, money)


def validate_pattern(config: LineConfig, pattern: DeploymentPattern) -> list[str]:
    eligible = set(config.eligible_segment_ids())
    return [
        f"pattern: segment {i} is not eligible for a dedicated bus lane"
        for i in sorted(pattern.chosen)
        if i not in eligible
    ]


# ---------------------------------------------------------------------------
# validation


_SERIES_TOL = 1e-9
_RING_TOL = 1e-6


def validate(config: LineConfig) -> list[str]:
    """All invariant violations in the configuration; empty when sound."""
    out: list[str] = []
    n_stops = len(config.stops)

    seen_stop_ids = set()
    for stop in config.stops:
        where = f"stop {stop.id}"
        if stop.id in seen_stop_ids:
            out.append(f"{where}: duplicate id")
        seen_stop_ids.add(stop.id)
        if stop.arrival_rate_per_min < 0:
            out.append(f"{where}: arrival_rate_per_min must be >= 0")
        total = sum(stop.destination_series)
        if abs(total - 1.0) > _SERIES_TOL:
            out.append(
                f"{where}: destination_series sums to {total:.6f}, expected 1"
            )
        if any(p < 0 for p in stop.destination_series):
            out.append(f"{where}: destination_series has a negative probability")
        if len(stop.destination_series) > n_stops - 1:
            out.append(
                f"{where}: destination_series longer than number of stops - 1"
            )

    roads = {}
    for rs in config.road_segments:
        where = f"road segment {rs.id}"
        if rs.id in roads:
            out.append(f"{where}: duplicate id")
        roads[rs.id] = rs
        if rs.length_km <= 0:
            out.append(f"{where}: length_km must be > 0")
        if rs.base_speed_kmh <= 0:
            out.append(f"{where}: base_speed_kmh must be > 0")
        if rs.noise_sigma_s < 0:
            out.append(f"{where}: noise_sigma_s must be >= 0")

    used_rs: set[int] = set()
    segs = config.bus_line_segments
    for pos, bls in enumerate(segs):
        where = f"bus line segment {bls.id}"
        succ = segs[(pos + 1) % len(segs)]
        if bls.to_stop != succ.from_stop:
            out.append(
                f"{where}: to_stop {bls.to_stop} does not chain to the next "
                f"segment's from_stop {succ.from_stop}"
            )
        if 0.0 not in bls.action_set_kmh:
            out.append(f"{where}: action_set_kmh must contain 0")
        if not bls.eligible_for_dbl and tuple(bls.action_set_kmh) != (0.0,):
            out.append(f"{where}: ineligible segment must have action set {{0}}")
        if not bls.road_segments:
            out.append(f"{where}: road_segments is empty")
        for rs_id in bls.road_segments:
            if rs_id not in roads:
                out.append(f"{where}: unknown road segment {rs_id}")
            elif rs_id in used_rs:
                out.append(f"{where}: road segment {rs_id} used twice on the ring")
            used_rs.add(rs_id)

    from_counts: dict[int, int] = {}
    to_counts: dict[int, int] = {}
    for bls in segs:
        from_counts[bls.from_stop] = from_counts.get(bls.from_stop, 0) + 1
        to_counts[bls.to_stop] = to_counts.get(bls.to_stop, 0) + 1
    for stop in config.stops:
        if from_counts.get(stop.id, 0) != 1 or to_counts.get(stop.id, 0) != 1:
            out.append(
                f"stop {stop.id}: must be an endpoint of exactly two bus line segments"
            )

    for plan in config.signals:
        where = f"intersection {plan.intersection_id}"
        if plan.red_s <= 0:
            out.append(f"{where}: red_s must be > 0")
        if plan.green_s <= 0:
            out.append(f"{where}: green_s must be > 0")
        if plan.initial_phase not in ("red", "green"):
            out.append(f"{where}: initial_phase must be 'red' or 'green'")
        else:
            limit = plan.red_s if plan.initial_phase == "red" else plan.green_s
            if not 0.0 <= plan.initial_remaining_s <= limit:
                out.append(
                    f"{where}: initial_remaining_s outside the initial phase duration"
                )
        if not 0.0 <= plan.position_on_segment <= 1.0:
            out.append(f"{where}: position_on_segment must be within [0, 1]")
        if not any(b.id == plan.host_segment for b in segs):
            out.append(f"{where}: unknown host segment {plan.host_segment}")

    stop_ids = {s.id for s in config.stops}
    for bus in config.buses:
        where = f"bus {bus.id}"
        if bus.capacity <= 0:
            out.append(f"{where}: capacity must be > 0")
        if bus.initial_stop not in stop_ids:
            out.append(f"{where}: initial_stop {bus.initial_stop} does not exist")
        if bus.initial_activation_delay_s < 0:
            out.append(f"{where}: initial_activation_delay_s must be >= 0")

    share_total = sum(p.share for p in config.passenger_profiles)
    if config.passenger_profiles and abs(share_total - 1.0) > _SERIES_TOL:
        out.append(
            f"passenger_profiles: shares sum to {share_total:.6f}, expected 1"
        )
    for k, prof in enumerate(config.passenger_profiles):
        if prof.board_s <= 0 or prof.alight_s <= 0:
            out.append(f"passenger profile {k}: service times must be > 0")
        if prof.share < 0:
            out.append(f"passenger profile {k}: share must be >= 0")

    total_len = sum(rs.length_km for rs in config.road_segments)
    if abs(total_len - config.ring_length_km) > _RING_TOL:
        out.append(
            f"ring_length_km {config.ring_length_km:.6f} does not match the "
            f"road segment total {total_len:.6f}"
        )
    if config.common_speed_kmh <= 0 or config.dbl_speed_kmh <= 0:
        out.append("run: speeds must be > 0")
    if config.observation_period_s <= 0:
        out.append("run: observation_period_s must be > 0")
    return out


# ---------------------------------------------------------------------------
# spatial-to-temporal conversion


class ServiceBacklog:
    """Last service times per stop, shaped for fast gap queries.

    The expected dwell a trailing bus faces at a stop grows with the time the
    stop has gone unserved; a backlog binds those times to one evaluation
    context so headway conversion can price the stops inside a gap.
    """

    __slots__ = ("_map", "_td", "_cum_ktd", "_overrides")

    def __init__(self, ring_map: "RingTimeMap", last_service: Mapping[int, float]):
        self._map = ring_map
        self._td = [last_service.get(sid, 0.0) for sid in ring_map.stop_point_ids]
        cum = [0.0]
        for k, td in zip(ring_map.stop_point_slopes, self._td):
            cum.append(cum[-1] + k * td)
        self._cum_ktd = cum
        self._overrides: dict[int, float] = {}

    def override(self, stop_id: int, last_service: float) -> None:
        """Shadow one stop's service time without rebuilding the prefix sums."""
        idx = self._map.stop_point_index.get(stop_id)
        if idx is not None:
            self._overrides[idx] = last_service

    def copy(self) -> "ServiceBacklog":
        dup = object.__new__(ServiceBacklog)
        dup._map = self._map
        dup._td = self._td
        dup._cum_ktd = self._cum_ktd
        dup._overrides = dict(self._overrides)
        return dup

    def cost_between(self, u: float, v: float, now: float) -> float:
        """Expected dwell seconds at the stops strictly inside (u, v)."""
        m = self._map
        skm = m.stop_point_km
        if not skm:
            return 0.0
        length = m.ring_length_km
        cum_k = m.stop_point_cum_k
        slopes = m.stop_point_slopes
        total = 0.0
        for shift in (0.0, length):
            lo = bisect_right(skm, u - shift)
            hi = bisect_left(skm, v - shift)
            if hi > lo:
                total += now * (cum_k[hi] - cum_k[lo]) - (
                    self._cum_ktd[hi] - self._cum_ktd[lo]
                )
                for idx, td in self._overrides.items():
                    if lo <= idx < hi:
                        base = slopes[idx] * (now - self._td[idx])
                        total += max(0.0, slopes[idx] * (now - td)) - base
        return total


class RingTimeMap:
    """Expected traversal times along the ring for one deployment pattern.

    Converts a spatial gap into the seconds a bus needs to cover it: cruising
    at the expected segment speeds, waiting the expected delay at signals, and
    dwelling at the stops strictly inside the gap for the backlog they have
    accumulated. Active regulating speeds adjust the deployed stretches they
    cover.
    """

    def __init__(self, config: LineConfig, pattern: DeploymentPattern):
        geo = geometry(config)
        self.ring_length_km = geo.ring_length_km
        self._starts: list[float] = []
        self._rates: list[float] = []  # seconds per km
        self._cum: list[float] = []
        self._span: dict[int, tuple[float, float]] = {}
        self._speed: dict[int, float] = {}
        elapsed = 0.0
        for bls in config.bus_line_segments:
            deployed = bls.id in pattern.chosen
            speed = config.dbl_speed_kmh if deployed else config.common_speed_kmh
            start = geo.bls_start_km[bls.id]
            length = geo.bls_length_km[bls.id]
            self._span[bls.id] = (start, start + length)
            self._speed[bls.id] = speed
            self._starts.append(start)
            self._rates.append(KMH_TO_S_PER_KM / speed)
            self._cum.append(elapsed)
            elapsed += length * KMH_TO_S_PER_KM / speed
        self.cruise_lap_s = elapsed

        signal_points: dict[float, float] = {}
        for plan in config.signals:
            start = geo.bls_start_km[plan.host_segment]
            length_seg = geo.bls_length_km[plan.host_segment]
            at = (start + plan.position_on_segment * length_seg) % geo.ring_length_km
            delay = plan.red_s**2 / (2.0 * plan.cycle_s)
            signal_points[at] = signal_points.get(at, 0.0) + delay
        self._sig_km = sorted(signal_points)
        self._sig_cum = [0.0]
        for km in self._sig_km:
            self._sig_cum.append(self._sig_cum[-1] + signal_points[km])

        board = config.mean_board_s()
        stop_points: list[tuple[float, int, float]] = []
        for stop in config.stops:
            rho = (stop.arrival_rate_per_min / 60.0) * board
            stop_points.append(
                (geo.stop_km[stop.id] % geo.ring_length_km, stop.id, rho * (1.0 + rho))
            )
        stop_points.sort()
        self.stop_point_km = [p[0] for p in stop_points]
        self.stop_point_ids = [p[1] for p in stop_points]
        self.stop_point_slopes = [p[2] for p in stop_points]
        self.stop_point_index = {sid: i for i, (_, sid, _) in enumerate(stop_points)}
        self.stop_point_cum_k = [0.0]
        for k in self.stop_point_slopes:
            self.stop_point_cum_k.append(self.stop_point_cum_k[-1] + k)

    def backlog(self, last_service: Mapping[int, float]) -> ServiceBacklog:
        return ServiceBacklog(self, last_service)

    def _signal_between(self, u: float, v: float) -> float:
        if not self._sig_km:
            return 0.0
        length = self.ring_length_km
        total = 0.0
        for shift in (0.0, length):
            lo = bisect_right(self._sig_km, u - shift)
            hi = bisect_left(self._sig_km, v - shift)
            if hi > lo:
                total += self._sig_cum[hi] - self._sig_cum[lo]
        return total

    def offset_time(self, x_km: float) -> float:
        """Seconds from the ring origin to offset ``x_km`` at base speeds."""
        i = bisect_right(self._starts, x_km) - 1
        return self._cum[i] + (x_km - self._starts[i]) * self._rates[i]

    def action_interval(
        self, bls_id: int, action_kmh: float
    ) -> tuple[float, float, float]:
        """(start_km, end_km, extra seconds per km) for an active action."""
        start, end = self._span[bls_id]
        v = self._speed[bls_id]
        if v + action_kmh <= 0:
            raise ValueError(f"action {action_kmh} stalls segment {bls_id}")
        delta = KMH_TO_S_PER_KM * (1.0 / (v + action_kmh) - 1.0 / v)
        return (start, end, delta)

    def gap_time(
        self,
        x_km: float,
        gap_km: float,
        active: Iterable[tuple[float, float, float]] = (),
        backlog: Optional[ServiceBacklog] = None,
        now: float = 0.0,
    ) -> float:
        """Seconds to cover a forward gap of ``gap_km`` starting at ``x_km``,
        including expected delays at the signals and, when a backlog is
        given, the expected dwell at the stops strictly inside the gap."""
        length = self.ring_length_km
        u = x_km % length
        v = u + gap_km
        if v <= length:
            base = (
                self.offset_time(v) - self.offset_time(u)
                if v < length
                else self.cruise_lap_s - self.offset_time(u)
            )
        else:
            base = (
                self.cruise_lap_s - self.offset_time(u) + self.offset_time(v - length)
            )
        for s, e, delta in active:
            if delta == 0.0:
                continue
            cover = max(0.0, min(v, e) - max(u, s))
            cover += max(0.0, min(v, e + length) - max(u, s + length))
            base += delta * cover
        base += self._signal_between(u, v)
        if backlog is not None:
            base += backlog.cost_between(u, v, now)
        return base

    def headways(
        self,
        positions_km: list[float],
        active: Iterable[tuple[float, float, float]] = (),
        backlog: Optional[ServiceBacklog] = None,
        now: float = 0.0,
    ) -> list[float]:
        """Per-bus time headway to the nearest preceding bus, position order
        matching the input list.

        The preceding bus is the nearest one at strictly positive ring
        distance ahead; when every other bus sits at exactly the same
        position there is no such bus and the headway degenerates to zero.
        """
        n = len(positions_km)
        if n < 2:
            raise ValueError("headways need at least two buses")
        length = self.ring_length_km
        pos = [p % length for p in positions_km]
        order = sorted(range(n), key=pos.__getitem__)
        active = tuple(active)
        out = [0.0] * n
        for rank, i in enumerate(order):
            here = pos[i]
            gap = 0.0
            for step in range(1, n):
                j = order[(rank + step) % n]
                ahead = (pos[j] - here) % length
                if ahead > 0.0:
                    gap = ahead
                    break
            out[i] = (
                self.gap_time(here, gap, active, backlog, now) if gap > 0.0 else 0.0
            )
        return out


# ---------------------------------------------------------------------------
# scenario files


def _resolve_signal_positions(
    raw_signals: list[dict],
    bls_list: list[BusLineSegment],
    roads: dict[int, RoadSegment],
) -> list[SignalPlan]:
    """Fill in missing positions: road segment boundaries in listed order,
    mid-segment once the boundaries run out."""
    boundary_cursor: dict[int, int] = {}
    plans: list[SignalPlan] = []
    bls_by_id = {b.id: b for b in bls_list}
    for raw in raw_signals:
        host = int(raw["bus_line_segment"])
        position = raw.get("position_on_segment")
        if position is None:
            bls = bls_by_id.get(host)
            if bls is None:
                raise ScenarioError(f"signal hosted by unknown segment {host}")
            lengths = [roads[r].length_km for r in bls.road_segments]
            total = sum(lengths)
            k = boundary_cursor.get(host, 0)
            boundary_cursor[host] = k + 1
            if k < len(lengths) - 1:
                position = sum(lengths[: k + 1]) / total
            else:
                position = 0.5
        plans.append(
            SignalPlan(
                intersection_id=int(raw["id"]),
                host_segment=host,
                red_s=float(raw["red_s"]),
                green_s=float(raw["green_s"]),
                initial_phase=str(raw["initial_phase"]),
                initial_remaining_s=float(raw["initial_remaining_s"]),
                position_on_segment=float(position),
            )
        )
    return plans


def _normalized_series(values: Iterable[float]) -> tuple[float, ...]:
    series = tuple(float(v) for v in values)
    total = sum(series)
    # Rescale away table rounding; anything further off is a data error the
    # validator must surface untouched.
    if 1e-12 < abs(total - 1.0) <= 1e-3:
        return tuple(v / total for v in series)
    return series


def config_from_dict(doc: dict) -> Scenario:
    try:
        run = doc.get("run", {})
        common_speed = float(run.get("common_speed_kmh", 35.0))
        dbl_speed = float(run.get("dbl_speed_kmh", 50.0))
        sigma = SigmaRule(
            common_s_per_km=float(run.get("sigma_common_s_per_km", 5.0)),
            dbl_s_per_km=float(run.get("sigma_dbl_s_per_km", 2.0)),
        )
        stops = tuple(
            Stop(
                id=int(s["id"]),
                arrival_rate_per_min=float(s["arrival_rate_per_min"]),
                destination_series=_normalized_series(s["destination_series"]),
            )
            for s in doc["stops"]
        )
        roads = {}
        for r in doc["segments"]:
            length = float(r["length_km"])
            roads[int(r["id"])] = RoadSegment(
                id=int(r["id"]),
                length_km=length,
                has_dbl=False,
                base_speed_kmh=common_speed,
                noise_sigma_s=sigma.common_s_per_km * length,
            )
        bls_list = []
        for b in doc["bus_line_segments"]:
            eligible = bool(b.get("eligible_for_dbl", False))
            default_actions = DEFAULT_ACTION_SET if eligible else (0.0,)
            actions = tuple(
                float(a) for a in b.get("action_set_kmh", default_actions)
            )
            bls_list.append(
                BusLineSegment(
                    id=int(b["id"]),
                    road_segments=tuple(int(r) for r in b["road_segments"]),
                    from_stop=int(b["from_stop"]),
                    to_stop=int(b["to_stop"]),
                    eligible_for_dbl=eligible,
                    action_set_kmh=actions,
                    influence_cost=(
                        None if b.get("influence_cost") is None else float(b["influence_cost"])
                    ),
                    money_cost=(
                        None if b.get("money_cost") is None else float(b["money_cost"])
                    ),
                )
            )
        signals = _resolve_signal_positions(doc.get("signals", []), bls_list, roads)
        buses = tuple(
            BusSpec(
                id=int(b["id"]),
                capacity=int(b["capacity"]),
                initial_stop=int(b["initial_stop"]),
                initial_activation_delay_s=float(b["initial_activation_delay_s"]),
            )
            for b in doc["buses"]
        )
        profiles = tuple(
            PassengerProfile(
                share=float(p["share"]),
                board_s=float(p["board_s"]),
                alight_s=float(p["alight_s"]),
            )
            for p in doc["passenger_profiles"]
        )
        total_len = sum(r.length_km for r in roads.values())
        config = LineConfig(
            stops=stops,
            road_segments=tuple(roads[k] for k in sorted(roads)),
            bus_line_segments=tuple(bls_list),
            signals=tuple(signals),
            buses=buses,
            passenger_profiles=profiles,
            ring_length_km=float(run.get("ring_length_km", total_len)),
            observation_period_s=float(run.get("observation_period_s", 14400.0)),
            common_speed_kmh=common_speed,
            dbl_speed_kmh=dbl_speed,
            sigma_rule=sigma,
        )
        constraints = None
        if "constraints" in doc:
            constraints = ConstraintSpec(
                influence_limit=float(doc["constraints"]["influence_limit"]),
                budget_limit=float(doc["constraints"]["budget_limit"]),
            )
        return Scenario(
            config=config,
            constraints=constraints,
            default_reps=int(run.get("default_reps", 50)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario document: {exc}") from exc


def config_to_dict(scenario: Scenario) -> dict:
    config = scenario.config
    doc: dict = {
        "stops": [
            {
                "id": s.id,
                "arrival_rate_per_min": s.arrival_rate_per_min,
                "destination_series": list(s.destination_series),
            }
            for s in config.stops
        ],
        "segments": [
            {"id": r.id, "length_km": r.length_km} for r in config.road_segments
        ],
        "bus_line_segments": [
            {
                "id": b.id,
                "road_segments": list(b.road_segments),
                "from_stop": b.from_stop,
                "to_stop": b.to_stop,
                "eligible_for_dbl": b.eligible_for_dbl,
                "action_set_kmh": list(b.action_set_kmh),
                "influence_cost": b.influence_cost,
                "money_cost": b.money_cost,
            }
            for b in config.bus_line_segments
        ],
        "signals": [
            {
                "id": p.intersection_id,
                "bus_line_segment": p.host_segment,
                "red_s": p.red_s,
                "green_s": p.green_s,
                "initial_phase": p.initial_phase,
                "initial_remaining_s": p.initial_remaining_s,
                "position_on_segment": p.position_on_segment,
            }
            for p in config.signals
        ],
        "buses": [
            {
                "id": b.id,
                "capacity": b.capacity,
                "initial_stop": b.initial_stop,
                "initial_activation_delay_s": b.initial_activation_delay_s,
            }
            for b in config.buses
        ],
        "passenger_profiles": [
            {"share": p.share, "board_s": p.board_s, "alight_s": p.alight_s}
            for p in config.passenger_profiles
        ],
        "run": {
            "observation_period_s": config.observation_period_s,
            "common_speed_kmh": config.common_speed_kmh,
            "dbl_speed_kmh": config.dbl_speed_kmh,
            "sigma_common_s_per_km": config.sigma_rule.common_s_per_km,
            "sigma_dbl_s_per_km": config.sigma_rule.dbl_s_per_km,
            "ring_length_km": config.ring_length_km,
            "default_reps": scenario.default_reps,
        },
    }
    if scenario.constraints is not None:
        doc["constraints"] = {
            "influence_limit": scenario.constraints.influence_limit,
            "budget_limit": scenario.constraints.budget_limit,
        }
    return doc


def scenario_to_json(scenario: Scenario) -> str:
    return json.dumps(config_to_dict(scenario), indent=2, sort_keys=True) + "\n"


def load_scenario(path_or_text: str, *, is_text: bool = False) -> Scenario:
    if is_text:
        raw = path_or_text
    else:
        with open(path_or_text, "r", encoding="utf-8") as fh:
            raw = fh.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def load_reference_scenario() -> Scenario:
    """The bundled reference line: 36 stops, 11 buses, 21.35 km ring."""
    text = (
        resources.files("dblsim").joinpath(f"data/{REFERENCE_SCENARIO}").read_text()
    )
    return load_scenario(text, is_text=True)


def reference_scenario_path() -> str:
    return str(resources.files("dblsim").joinpath(f"data/{REFERENCE_SCENARIO}"))
