import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scenario_of, straight_track
from noisesim.core import HISTORY_FRAMES, N_FRAMES, make_track
from noisesim.errors import NoiseSimError
from noisesim.metrics import (
    COMPOSITES,
    HistogramSpec,
    MetricsConfig,
    MetricsReport,
    component_features,
    evaluate,
    histogram_likelihood,
    min_ade,
)
from noisesim.rollout import ConstantSpeedPolicy, ReplayPolicy, rollout

BIN2 = HistogramSpec(0.0, 1.0, 2)


def test_histogram_likelihood_examples():
    sim = np.full(10, 0.2)
    assert histogram_likelihood(sim, [0.1, 0.3], BIN2) == pytest.approx(10.1 / 10.2, abs=1e-6)
    assert histogram_likelihood(sim, [0.9, 0.7], BIN2) == pytest.approx(0.1 / 10.2, abs=1e-6)
    rng = np.random.default_rng(0)
    assert histogram_likelihood(rng.random(10_000), rng.random(10_000), BIN2) == pytest.approx(0.5, abs=0.02)
    # clamping: out-of-range values land in the edge bins
    assert histogram_likelihood(sim, [-5.0], BIN2) == pytest.approx(10.1 / 10.2)
    with pytest.raises(NoiseSimError) as exc:
        histogram_likelihood(sim, [], BIN2)
    assert exc.value.code == "no-ground-truth"


@settings(max_examples=40, deadline=None)
@given(sim=st.lists(st.floats(-2, 3), min_size=1, max_size=50), gt=st.lists(st.floats(-2, 3), min_size=1, max_size=50),
       seed=st.integers(0, 1000))
def test_histogram_likelihood_is_permutation_invariant_and_bounded(sim, gt, seed):
    spec = HistogramSpec(0.0, 1.0, 5)
    a = histogram_likelihood(sim, gt, spec)
    rng = np.random.default_rng(seed)
    b = histogram_likelihood(rng.permutation(sim), rng.permutation(gt), spec)
    assert a == pytest.approx(b, rel=1e-12)
    assert 0.0 < a <= 1.0


def test_component_features_examples(two_lane):
    sc = scenario_of([straight_track(0), straight_track(1, x0=5.0), straight_track(2, x0=400.0, y=8.0)])
    f = component_features(sc, two_lane)
    assert np.allclose(f["accel"], 0.0) and np.allclose(f["angular_speed"], 0.0)
    assert np.allclose(f["speed"], 20.0)
    n = N_FRAMES - HISTORY_FRAMES
    np.testing.assert_allclose(f["nearest_distance"][:n], 5.0)
    assert not f["collision"][: 2 * n].any()
    assert f["offroad"][2 * n:].all() and not f["offroad"][: 2 * n].any()


def test_min_ade_examples(two_lane):
    gt = scenario_of([straight_track(0)])
    assert min_ade([gt], gt) == 0.0
    shifted = scenario_of([straight_track(0, y=1.0)])
    assert min_ade([shifted], gt) == pytest.approx(1.0)
    two = scenario_of([straight_track(0, y=2.0)])
    half = scenario_of([straight_track(0, y=0.5)])
    assert min_ade([two, half], gt) == pytest.approx(0.5)
    orphan = scenario_of([straight_track(9)])
    with pytest.raises(NoiseSimError) as exc:
        min_ade([orphan], gt)
    assert exc.value.code == "no-overlap"


def test_min_ade_skips_invalid_ground_truth_frames():
    valid = np.arange(N_FRAMES) < 50
    gt = scenario_of([straight_track(0, valid=valid)])
    sim = scenario_of([make_track(0, np.where(valid[:, None], straight_track(0).xy, 1e6))])
    assert min_ade([sim], gt) == 0.0


def test_constant_velocity_corpus_scores_zero_min_ade(two_lane):
    items = [(scenario_of([straight_track(0, speed=s), straight_track(1, x0=60, y=3.6, speed=s + 2)], sid=f"c{s}"),
              two_lane) for s in (10.0, 15.0, 25.0)]
    rep = evaluate(items, ConstantSpeedPolicy(), MetricsConfig(k_rollouts=2))
    assert rep.aggregate["min_ade"] == pytest.approx(0.0, abs=1e-9)


def test_replay_dominates_and_report_is_deterministic(small_corpus):
    scs, rmap = small_corpus
    items = [(s, rmap) for s in scs[:6]]
    cfg = MetricsConfig(k_rollouts=4)
    rep = evaluate(items, ReplayPolicy(), cfg, seed=1)
    const = evaluate(items, ConstantSpeedPolicy(), cfg, seed=1)
    assert rep.aggregate["min_ade"] == 0.0
    for key in list(COMPOSITES) + ["realism"]:
        assert rep.aggregate[key] >= const.aggregate[key]
        assert 0.0 <= rep.aggregate[key] <= 1.0
    assert rep.dumps() == evaluate(items, ReplayPolicy(), cfg, seed=1).dumps()
    assert MetricsReport.from_json(rep.to_json()).dumps() == rep.dumps()


def test_min_ade_monotone_in_k(small_corpus):
    scs, rmap = small_corpus
    from noisesim.rollout import IdmPolicy
    runs = rollout(scs[0], rmap, ConstantSpeedPolicy(), K=1) + rollout(scs[0], rmap, IdmPolicy(), K=1)
    assert min_ade(runs, scs[0]) <= min_ade(runs[:1], scs[0])


def test_metrics_config_validation():
    with pytest.raises(ValueError):
        MetricsConfig(smoothing=0.0)
    with pytest.raises(ValueError):
        MetricsConfig(histograms={"speed": (0, 1, 1)})
