import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisesim.corpus import scenario_to_json
from noisesim.errors import NoiseSimError
from noisesim.noise import NoiseConfig, corrupt, drop_unobserved
from noisesim.synth import SynthConfig, build_freeway_map, generate_scenario

MAP = build_freeway_map(4, 1500.0)
CLEAN = generate_scenario(SynthConfig(seed=1, n_vehicles=24), MAP, "n0")


def _valid_count(sc):
    return sum(int(t.valid.sum()) for t in sc.tracks)


def test_zero_config_is_identity():
    out = corrupt(CLEAN, NoiseConfig(seed=3))
    assert out.provenance == "corrupted"
    assert out.replace(provenance="clean") == CLEAN


def test_full_dropout_invalidates_everything():
    out = corrupt(CLEAN, NoiseConfig(dropout_rate=1.0))
    assert _valid_count(out) == 0
    assert drop_unobserved(out).tracks == ()


def test_double_corruption_is_refused():
    with pytest.raises(NoiseSimError) as exc:
        corrupt(corrupt(CLEAN, NoiseConfig()), NoiseConfig())
    assert exc.value.code == "double-corruption"


def test_jitter_standard_deviation():
    cfg = NoiseConfig(jitter_sigma_xy=0.1, seed=8)
    diffs = []
    i = 0
    while sum(d.size for d in diffs) < 100_000:
        sc = generate_scenario(SynthConfig(seed=i, n_vehicles=32), MAP, f"j{i}")
        noisy = corrupt(sc, cfg)
        diffs.append((np.stack([t.xy for t in noisy.tracks]) - np.stack([t.xy for t in sc.tracks])).ravel())
        i += 1
    std = np.concatenate(diffs)[:100_000].std()
    assert 0.097 <= std <= 0.103


def test_dropout_fraction():
    cfg = NoiseConfig(dropout_rate=0.2, seed=2)
    frames = dropped = 0
    for i in range(6):
        sc = generate_scenario(SynthConfig(seed=i, n_vehicles=24), MAP, f"d{i}")
        frames += _valid_count(sc)
        dropped += _valid_count(sc) - _valid_count(corrupt(sc, cfg))
    assert frames >= 10_000
    assert abs(dropped / frames - 0.2) <= 0.02


def test_fragmentation_respects_track_cap():
    sc = generate_scenario(SynthConfig(seed=4, n_vehicles=30), MAP, "f")
    out = corrupt(sc, NoiseConfig(fragmentation_rate=1.0, seed=1))
    assert len(out.tracks) == 32
    ids = out.agent_ids
    assert len(set(ids)) == len(ids)
    assert _valid_count(out) == _valid_count(sc)


def test_track_stream_is_independent_of_other_tracks():
    cfg = NoiseConfig(jitter_sigma_xy=0.2, dropout_rate=0.1, occlusion_rate=0.5, seed=5)
    full = corrupt(CLEAN, cfg)
    alone = corrupt(CLEAN.replace(tracks=CLEAN.tracks[3:4]), cfg)
    assert alone.tracks[0] == full.tracks[3]


@settings(max_examples=25, deadline=None)
@given(jx=st.floats(0, 1), jh=st.floats(0, 0.2), drop=st.floats(0, 1), occ=st.floats(0, 1),
       frag=st.floats(0, 1), seed=st.integers(0, 2**63))
def test_degradation_properties(jx, jh, drop, occ, frag, seed):
    cfg = NoiseConfig(jx, jh, drop, occ, 5.0, frag, seed)
    out = corrupt(CLEAN, cfg)
    assert _valid_count(out) <= _valid_count(CLEAN)
    assert scenario_to_json(out) == scenario_to_json(corrupt(CLEAN, cfg))
    if frag == 0:
        for a, b in zip(CLEAN.tracks, out.tracks):
            assert not (b.valid & ~a.valid).any()
            if jx == 0 and jh == 0:
                keep = b.valid
                np.testing.assert_array_equal(a.states[keep], b.states[keep])


@given(jx=st.floats(0.01, 1.0), seed=st.integers(0, 2**32))
@settings(max_examples=10, deadline=None)
def test_jitter_preserves_mask(jx, seed):
    out = corrupt(CLEAN, NoiseConfig(jitter_sigma_xy=jx, jitter_sigma_heading=0.05, seed=seed))
    for a, b in zip(CLEAN.tracks, out.tracks):
        np.testing.assert_array_equal(a.valid, b.valid)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        NoiseConfig(dropout_rate=1.5)
    with pytest.raises(ValueError):
        NoiseConfig(jitter_sigma_xy=-0.1)
