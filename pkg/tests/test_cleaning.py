import numpy as np
from hypothesis import given, settings, strategies as st

from conftest import scenario_of, straight_track
from noisesim.cleaning import (
    CleaningConfig,
    clean,
    filter_offroad,
    filter_short,
    filter_steep_lateral,
    resolve_overlaps,
)
from noisesim.core import N_FRAMES, make_track
from noisesim.noise import NoiseConfig, corrupt
from noisesim.synth import SynthConfig, build_freeway_map, generate_scenario


def _ids(sc):
    return [t.agent_id for t in sc.tracks]


def _lateral_sweep(agent_id, lateral, over, x0=0.0):
    """Track moving 'over' metres forward while shifting 'lateral' metres sideways."""
    x = x0 + np.linspace(0.0, over, N_FRAMES)
    y = np.linspace(0.0, lateral, N_FRAMES)
    return make_track(agent_id, np.column_stack([x, y]))


def test_offroad(two_lane):
    off = straight_track(1, y=8.0)
    graze = make_track(2, np.column_stack([np.linspace(0, 90, N_FRAMES), 5.4 + 0.5 * np.sin(np.arange(N_FRAMES))]))
    sc = scenario_of([straight_track(0), off, graze])
    assert _ids(filter_offroad(sc, two_lane)) == [0, 2]
    ok = scenario_of([straight_track(0)])
    assert filter_offroad(ok, two_lane) == ok


def test_steep_lateral(two_lane):
    cfg = CleaningConfig()
    sc = scenario_of([_lateral_sweep(0, 10.8, 10.0), _lateral_sweep(1, 3.6, 100.0, x0=100.0),
                      straight_track(2, x0=300.0)])
    assert _ids(filter_steep_lateral(sc, two_lane, cfg)) == [1, 2]


def test_short_boundary():
    def track(i, n):
        return straight_track(i, valid=np.arange(N_FRAMES) < n)
    sc = scenario_of([track(0, 5), track(1, 10), track(2, 91)])
    assert _ids(filter_short(sc)) == [1, 2]


def test_overlap_rule():
    a, b = straight_track(0), straight_track(1, x0=2.0)
    assert _ids(resolve_overlaps(scenario_of([a, b]))) == [0]
    far = straight_track(1, x0=4.6)
    assert _ids(resolve_overlaps(scenario_of([a, far]))) == [0, 1]
    c = straight_track(2, x0=1.0)
    assert _ids(resolve_overlaps(scenario_of([a, b, c]))) == [0]
    # A-B and B-C overlap but A-C does not: removing B first keeps C
    chain = [straight_track(0), straight_track(1, x0=3.0), straight_track(2, x0=6.0)]
    assert _ids(resolve_overlaps(scenario_of(chain))) == [0, 2]


def test_clean_removes_exactly_the_planted_tracks(two_lane):
    good = [straight_track(0), straight_track(1, x0=40.0, y=3.6), straight_track(2, x0=80.0)]
    graze = make_track(3, np.column_stack([700 + np.linspace(0, 90, N_FRAMES),
                                           5.4 + 0.5 * np.sin(np.arange(N_FRAMES))]))
    planted = [
        straight_track(10, x0=300.0, y=8.0),
        _lateral_sweep(11, 10.8, 10.0, x0=500.0),
        straight_track(12, x0=600.0, valid=np.arange(N_FRAMES) < 5),
        straight_track(13, x0=41.0, y=3.6),
    ]
    sc = scenario_of(good + [graze] + planted)
    out = clean(sc, two_lane)
    assert _ids(out) == [0, 1, 2, 3]
    assert out.provenance == "cleaned"
    assert clean(out, two_lane) == out
    quiet = scenario_of(good)
    assert clean(quiet, two_lane).replace(provenance="clean") == quiet


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), jx=st.floats(0, 3.0), frag=st.floats(0, 1), drop=st.floats(0, 0.9))
def test_clean_is_idempotent_subset_filter(seed, jx, frag, drop):
    rmap = build_freeway_map(4, 1500.0)
    sc = corrupt(generate_scenario(SynthConfig(seed=seed, n_vehicles=20), rmap, "c"),
                 NoiseConfig(jitter_sigma_xy=jx, dropout_rate=drop, fragmentation_rate=frag, seed=seed))
    once = clean(sc, rmap)
    assert clean(once, rmap) == once
    before = {t.agent_id: t for t in sc.tracks}
    for t in once.tracks:
        assert before[t.agent_id] == t
