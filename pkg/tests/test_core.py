import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scenario_of, straight_track
from noisesim.core import (
    AgentTrack,
    Polyline,
    RoadMap,
    densify_polyline,
    make_track,
    road_frame,
    validate_scenario,
    wrap_angle,
)
from noisesim.errors import NoiseSimError


def test_well_formed_two_track_scenario_is_valid(two_lane):
    sc = scenario_of([straight_track(0), straight_track(1, x0=30.0, y=3.6)])
    report = validate_scenario(sc, two_lane)
    assert report.ok and report.violations == []


def test_extra_frame_is_a_frame_count_violation(two_lane):
    t = straight_track(0)
    long = AgentTrack(0, 4.5, 1.8, np.vstack([t.states, t.states[-1:]]))
    assert "frame-count" in validate_scenario(scenario_of([long]), two_lane).kinds()


def test_unwrapped_heading_is_flagged(two_lane):
    t = straight_track(0)
    states = t.states.copy()
    states[5, 3] = 1.5 * math.pi
    report = validate_scenario(scenario_of([t.replace(states=states)]), two_lane)
    assert [(v.kind, v.agent_id, v.frame) for v in report.violations] == [("heading-range", 0, 5)]


def test_other_invariants_are_reported(two_lane):
    dup = scenario_of([straight_track(0), straight_track(0, y=3.6)])
    assert "duplicate-agent-id" in validate_scenario(dup).kinds()
    hidden = straight_track(2, valid=np.r_[np.zeros(11), np.ones(80)])
    assert "no-history" in validate_scenario(scenario_of([hidden])).kinds()
    fast = straight_track(3, speed=80.0)
    assert "step-too-large" in validate_scenario(scenario_of([fast])).kinds()
    noisy_test = scenario_of([straight_track(0)], split="test", provenance="corrupted")
    assert "test-not-clean" in validate_scenario(noisy_test).kinds()
    many = scenario_of([straight_track(i, x0=10.0 * i) for i in range(33)])
    assert "too-many-tracks" in validate_scenario(many).kinds()


def test_validation_is_repeatable(two_lane):
    sc = scenario_of([straight_track(0), straight_track(0)])
    assert validate_scenario(sc, two_lane) == validate_scenario(sc, two_lane)


def test_road_frame_examples(two_lane):
    rf = road_frame(two_lane, (10.0, 0.5))
    assert rf.lane_index == 0 and rf.lateral_offset == pytest.approx(0.5) and not rf.offroad
    assert road_frame(two_lane, (10.0, 6.0)).offroad
    assert road_frame(two_lane, (10.0, 1.8)).lane_index == 0
    assert road_frame(two_lane, (10.0, 3.7)).lane_index == 1
    assert road_frame(two_lane, (10.0, -1.9)).offroad
    assert not road_frame(two_lane, (10.0, 5.4)).offroad  # on the edge counts as on-road


def test_empty_map_has_no_road_frame():
    with pytest.raises(NoiseSimError) as exc:
        road_frame(RoadMap("empty", ()), (0.0, 0.0))
    assert exc.value.code == "no-centerlines"


@settings(max_examples=60, deadline=None)
@given(x=st.floats(5.0, 900.0), shift=st.floats(-4.0, 90.0), y=st.floats(-5.0, 9.0))
def test_offroad_is_invariant_under_longitudinal_shift(two_lane, x, shift, y):
    assert road_frame(two_lane, (x, y)).offroad == road_frame(two_lane, (x + shift, y)).offroad


def test_densify_examples():
    out = densify_polyline(Polyline("centerline", [(0, 0), (11, 0)]), 10)
    np.testing.assert_allclose(out.points[:, 0], np.arange(12.0))
    three = Polyline("centerline", [(0, 0), (5, 0), (5, 5)])
    assert len(densify_polyline(three, 10).points) == 23
    assert densify_polyline(three, 0) == three
    with pytest.raises(NoiseSimError) as exc:
        densify_polyline(Polyline("centerline", [(0, 0)]))
    assert exc.value.code == "degenerate-polyline"


@settings(max_examples=50, deadline=None)
@given(pts=st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=2, max_size=8),
       k=st.integers(0, 12))
def test_densify_preserves_length_and_endpoints(pts, k):
    line = Polyline("centerline", pts)
    out = densify_polyline(line, k)
    assert len(out.points) == len(pts) + k * (len(pts) - 1)
    np.testing.assert_array_equal(out.points[[0, -1]], line.points[[0, -1]])
    assert out.arc_length == pytest.approx(line.arc_length, rel=1e-9, abs=1e-9)


@given(st.floats(-50, 50))
def test_wrap_angle_range(a):
    w = float(wrap_angle(a))
    assert -math.pi <= w < math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


def test_make_track_zeroes_invalid_frames():
    t = make_track(1, np.ones((91, 2)), valid=np.r_[np.ones(11), np.zeros(80)])
    assert np.all(t.states[11:, :4] == 0.0)
    with pytest.raises(ValueError):
        t.states[0, 0] = 5.0  # states are read-only
