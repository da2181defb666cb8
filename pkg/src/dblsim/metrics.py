"""Stability and service-level indices.

All functions are pure; reports are plain dataclasses ready for JSON export.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence


def dch(headways: Sequence[float]) -> float:
    """Mean headway over all buses at one instant (dynamic circle headway)."""
    if not headways:
        raise ValueError("dch of an empty headway list")
    return sum(headways) / len(headways)


def sigma_h(headways: Sequence[float]) -> float:
    """Population standard deviation of the instantaneous headways."""
    if not headways:
        raise ValueError("sigma_h of an empty headway list")
    mean = dch(headways)
    return math.sqrt(sum((h - mean) ** 2 for h in headways) / len(headways))


def fsi(sigma_series: Sequence[float]) -> float:
    """Mean of the per-instant headway deviations over all surveillance points."""
    if not sigma_series:
        raise ValueError("fsi of an empty series")
    return sum(sigma_series) / len(sigma_series)


def fsi_std(sigma_series: Sequence[float]) -> float:
    """Sample standard deviation (n-1 denominator) of the deviation series."""
    if len(sigma_series) < 2:
        raise ValueError("fsi_std needs at least two values")
    mean = fsi(sigma_series)
    return math.sqrt(
        sum((s - mean) ** 2 for s in sigma_series) / (len(sigma_series) - 1)
    )


def action_cost(headways: Sequence[float]) -> float:
    """Sum of squared headway deviations from their mean; the rollout cost."""
    if not headways:
        raise ValueError("action_cost of an empty headway list")
    mean = dch(headways)
    return sum((h - mean) ** 2 for h in headways)


@dataclass(frozen=True)
class StabilityReport:
    """Headway stability and control effort of one simulation run."""

    fsi: float
    fsi_std: float
    n_ctp: int
    action_abs_sum: Optional[float]
    action_abs_mean: Optional[float]
    action_abs_std: Optional[float]
    n_actions: int
    bunched: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PassengerReport:
    """Waiting/riding/travel time statistics over completed trips."""

    n_p: int
    wait_mean: Optional[float]
    wait_std: Optional[float]
    ride_mean: Optional[float]
    ride_std: Optional[float]
    travel_mean: Optional[float]
    travel_std: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    mean = sum(values) / len(values)
    if len(values) < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def stability_report(
    ctp_headways: Sequence[Sequence[float]],
    actions: Sequence[float],
    bunched: bool,
) -> StabilityReport:
    """Aggregate the per-departure headway snapshots and applied actions.

    Action statistics cover the absolute values of nonzero regulating speeds
    only; a run without any is reported with null action fields.
    """
    series = [sigma_h(h) for h in ctp_headways]
    nonzero = [abs(a) for a in actions if a != 0.0]
    if nonzero:
        a_mean, a_std = _mean_std(nonzero)
        a_sum: Optional[float] = sum(nonzero)
    else:
        a_mean = a_std = a_sum = None
    return StabilityReport(
        fsi=fsi(series),
        fsi_std=fsi_std(series) if len(series) >= 2 else 0.0,
        n_ctp=len(series),
        action_abs_sum=a_sum,
        action_abs_mean=a_mean,
        action_abs_std=a_std,
        n_actions=len(nonzero),
        bunched=bunched,
    )


def passenger_stats(completed_trips: Sequence[tuple[float, float]]) -> PassengerReport:
    """Means and sample deviations of wait, ride and total travel time.

    ``completed_trips`` holds (wait_s, ride_s) pairs for passengers who
    finished their trip; an empty set yields the explicit empty report.
    """
    if not completed_trips:
        return PassengerReport(0, None, None, None, None, None, None)
    waits = [w for w, _ in completed_trips]
    rides = [r for _, r in completed_trips]
    travels = [w + r for w, r in completed_trips]
    w_mean, w_std = _mean_std(waits)
    r_mean, r_std = _mean_std(rides)
    t_mean, t_std = _mean_std(travels)
    return PassengerReport(
        n_p=len(completed_trips),
        wait_mean=w_mean,
        wait_std=w_std,
        ride_mean=r_mean,
        ride_std=r_std,
        travel_mean=t_mean,
        travel_std=t_std,
    )
