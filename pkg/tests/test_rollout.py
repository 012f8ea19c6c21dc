import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scenario_of, straight_track
from noisesim.core import AgentState, HISTORY_FRAMES, N_FRAMES
from noisesim.errors import NoiseSimError
from noisesim.policy import Architecture, PolicyParameters
from noisesim.rollout import (
    ConstantSpeedPolicy,
    IdmPolicy,
    LearnedPolicy,
    ReplayPolicy,
    constant_speed_step,
    rollout,
    rollout_batch,
    sample_token,
)
from noisesim.tokenizer import build_vocab, extract_deltas


def test_constant_speed_step():
    s = AgentState(0.0, 0.0, 0.0, 0.0, True)
    assert constant_speed_step(s, (10.0, 0.0), 0.1)[:2] == (1.0, 0.0)
    for _ in range(80):
        s = constant_speed_step(s, (10.0, 0.0), 0.1)
    assert s.x == pytest.approx(80.0)
    assert constant_speed_step(s, (0.0, 0.0), 0.1) == s


def test_sample_token_statistics():
    assert sample_token(np.array([5.0, 0.0, 0.0]), 0.0, np.random.default_rng(0)) == 0
    assert sample_token(np.array([1.0, 3.0, 3.0]), 0.0, np.random.default_rng(0)) == 1
    rng = np.random.default_rng(1)
    draws = [sample_token(np.array([1000.0, 0.0]), 1.0, rng) for _ in range(10_000)]
    assert np.mean(np.array(draws) == 0) > 0.999
    draws = np.array([sample_token(np.zeros(4), 1.0, rng) for _ in range(10_000)])
    assert np.all(np.abs(np.bincount(draws, minlength=4) / 1e4 - 0.25) <= 0.02)


def test_constant_speed_rollout_is_exact_extrapolation(two_lane):
    sc = scenario_of([straight_track(0, speed=17.0), straight_track(1, x0=40.0, y=3.6, speed=23.0)])
    out = rollout(sc, two_lane, ConstantSpeedPolicy(), K=3)
    assert len(out) == 3
    for r in out:
        for a, b in zip(r.tracks, sc.tracks):
            np.testing.assert_allclose(a.xy, b.xy, atol=1e-9)
            np.testing.assert_array_equal(a.states[:HISTORY_FRAMES], b.states[:HISTORY_FRAMES])


def test_missing_history_is_an_error(two_lane):
    late = straight_track(0, valid=np.arange(N_FRAMES) > 20)
    with pytest.raises(NoiseSimError) as exc:
        rollout(scenario_of([late]), two_lane, ConstantSpeedPolicy(), K=1)
    assert exc.value.code == "missing-history"


def test_idm_rollout_keeps_lane_and_order(small_corpus):
    scs, rmap = small_corpus
    sc = scs[0]
    batch = rollout_batch(sc, rmap, IdmPolicy(), K=2)
    st = batch.states[0]
    lat0 = rmap.project(st[:, HISTORY_FRAMES - 1, :2]).lateral_offset
    for f in range(HISTORY_FRAMES, N_FRAMES):
        np.testing.assert_allclose(rmap.project(st[:, f, :2]).lateral_offset, lat0, atol=1e-6)
    assert np.array_equal(batch.states[0], batch.states[1])


@pytest.fixture(scope="module")
def learned(small_corpus):
    scs, rmap = small_corpus
    vocab = build_vocab(extract_deltas(scs), 64, 0.5)
    arch = Architecture(vocab.size)
    theta = np.random.default_rng(0).normal(0, 0.2, arch.n_params)
    return LearnedPolicy(PolicyParameters(arch, theta), vocab)


def test_learned_policy_determinism(small_corpus, learned):
    scs, rmap = small_corpus
    sc = scs[1]
    greedy = rollout_batch(sc, rmap, learned, K=4, temperature=0.0, master_seed=3)
    assert all(np.array_equal(greedy.states[0], greedy.states[k]) for k in range(4))
    a = rollout_batch(sc, rmap, learned, K=4, temperature=1.0, master_seed=3)
    b = rollout_batch(sc, rmap, learned, K=4, temperature=1.0, master_seed=3)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states[0], a.states[1])
    np.testing.assert_array_equal(a.states[:, :, :HISTORY_FRAMES],
                                  np.broadcast_to(np.stack([t.states for t in sc.tracks])[:, :HISTORY_FRAMES],
                                                  a.states[:, :, :HISTORY_FRAMES].shape))


def test_learned_policy_vocab_mismatch(learned):
    with pytest.raises(NoiseSimError) as exc:
        LearnedPolicy(PolicyParameters(Architecture(7), np.zeros(Architecture(7).n_params)), learned.vocab)
    assert exc.value.code == "shape-mismatch"


def test_replay_reproduces_ground_truth(small_corpus):
    scs, rmap = small_corpus
    out = rollout(scs[2], rmap, ReplayPolicy(), K=2)
    assert out[0] == scs[2]


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 4))
def test_rollouts_are_nested_in_k(small_corpus, learned, seed, k):
    scs, rmap = small_corpus
    small = rollout_batch(scs[3], rmap, learned, K=k, master_seed=seed)
    big = rollout_batch(scs[3], rmap, learned, K=k + 2, master_seed=seed)
    assert np.array_equal(small.states, big.states[:k])
