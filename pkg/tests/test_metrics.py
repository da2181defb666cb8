import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dblsim.metrics import (
    action_cost,
    dch,
    fsi,
    fsi_std,
    passenger_stats,
    sigma_h,
    stability_report,
)

headway_lists = st.lists(
    st.floats(min_value=0.0, max_value=5000.0, allow_nan=False), min_size=2, max_size=16
)


def test_dch_examples():
    assert dch([600.0] * 11) == 600.0
    assert dch([500.0, 700.0]) == 600.0
    assert dch([700.0, 500.0]) == dch([500.0, 700.0])
    with pytest.raises(ValueError):
        dch([])


def test_sigma_h_examples():
    assert sigma_h([42.0, 42.0, 42.0]) == 0.0
    assert sigma_h([500.0, 700.0]) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        sigma_h([])


@given(headway_lists, st.floats(min_value=0.0, max_value=10.0))
@settings(max_examples=100, deadline=None)
def test_sigma_h_homogeneous(headways, c):
    assert sigma_h([c * h for h in headways]) == pytest.approx(
        c * sigma_h(headways), abs=1e-6
    )


@given(headway_lists, st.floats(min_value=-100.0, max_value=100.0))
@settings(max_examples=100, deadline=None)
def test_translation_equivariance(headways, c):
    shifted = [h + c for h in headways]
    assert dch(shifted) == pytest.approx(dch(headways) + c, abs=1e-6)
    assert sigma_h(shifted) == pytest.approx(sigma_h(headways), abs=1e-6)


def test_fsi_examples():
    assert fsi([10.0, 20.0, 30.0]) == 20.0
    assert fsi([7.5] * 40) == 7.5
    with pytest.raises(ValueError):
        fsi([])


def test_fsi_std_examples():
    assert fsi_std([10.0, 20.0, 30.0]) == pytest.approx(10.0)
    assert fsi_std([4.0] * 10) == 0.0
    assert fsi_std([3.0, 3.0]) == 0.0
    with pytest.raises(ValueError):
        fsi_std([5.0])


def test_fsi_std_matches_textbook_sample_std():
    rng = np.random.default_rng(5)
    for _ in range(200):
        series = list(rng.uniform(0, 1000, size=rng.integers(2, 40)))
        assert fsi_std(series) == pytest.approx(statistics.stdev(series), rel=1e-9)


def test_action_cost_examples():
    assert action_cost([500.0, 700.0]) == pytest.approx(20000.0)
    assert action_cost([123.0] * 7) == 0.0


@given(headway_lists)
@settings(max_examples=150, deadline=None)
def test_action_cost_identity(headways):
    lhs = action_cost(headways)
    rhs = len(headways) * sigma_h(headways) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_passenger_stats_singleton():
    report = passenger_stats([(100.0, 200.0)])
    assert report.n_p == 1
    assert report.wait_mean == 100.0
    assert report.ride_mean == 200.0
    assert report.travel_mean == 300.0
    assert report.wait_std == 0.0 and report.travel_std == 0.0


def test_passenger_stats_identical_pair():
    report = passenger_stats([(50.0, 80.0), (50.0, 80.0)])
    assert report.wait_std == 0.0
    assert report.ride_std == 0.0
    assert report.travel_mean == pytest.approx(130.0)


def test_passenger_stats_empty_marker():
    report = passenger_stats([])
    assert report.n_p == 0
    assert report.wait_mean is None
    assert report.travel_std is None


def test_passenger_travel_is_wait_plus_ride():
    rng = np.random.default_rng(11)
    trips = [(float(w), float(r)) for w, r in rng.uniform(0, 800, size=(500, 2))]
    report = passenger_stats(trips)
    assert report.travel_mean == pytest.approx(
        report.wait_mean + report.ride_mean, abs=1e-6
    )


def test_stability_report_counts_nonzero_actions_only():
    records = [[100.0, 120.0], [90.0, 130.0], [100.0, 100.0]]
    actions = [0.0, -5.0, 10.0, 0.0, 5.0]
    report = stability_report(records, actions, bunched=False)
    assert report.n_ctp == 3
    assert report.n_actions == 3
    assert report.action_abs_sum == pytest.approx(20.0)
    assert report.action_abs_mean == pytest.approx(20.0 / 3.0)
    assert report.fsi == pytest.approx((10.0 + 20.0 + 0.0) / 3.0)
    assert not report.bunched


def test_stability_report_no_actions_marked_null():
    report = stability_report([[10.0, 30.0]], [0.0, 0.0], bunched=True)
    assert report.n_actions == 0
    assert report.action_abs_mean is None
    assert report.action_abs_sum is None
    assert report.bunched
