import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import brentq

from noisesim.errors import NoiseSimError
from noisesim.idm import (
    IdmParams,
    calibrate_idm,
    equilibrium_gap,
    following_pairs,
    idm_accel,
    idm_grid,
    simulate_platoon,
)
from noisesim.synth import CorpusRecipe, SynthConfig, synthesize_corpus

P = IdmParams()


def test_free_road_limits():
    assert idm_accel(0.0, None, P) == P.a
    assert idm_accel(30.0, None, P) == 0.0


def test_follower_braking_value():
    assert idm_accel(20.0, (20.0, 32.0), P) == pytest.approx(-0.19753, abs=1e-5)


def test_equilibrium_gap_against_root_solve():
    root = brentq(lambda s: idm_accel(20.0, (20.0, s), P), 5.0, 200.0, xtol=1e-12)
    assert root == pytest.approx(35.722, abs=1e-3)
    assert equilibrium_gap(20.0, P) == pytest.approx(root, abs=1e-9)
    assert math.isinf(equilibrium_gap(30.0, P))


def test_nonpositive_gap_is_rejected():
    with pytest.raises(NoiseSimError) as exc:
        idm_accel(10.0, (10.0, 0.0), P)
    assert exc.value.code == "nonpositive-gap"
    with pytest.raises(ValueError):
        IdmParams(T=0.0)


def test_platoon_keeps_positive_gaps_through_a_wave():
    res = simulate_platoon(P, 10, lambda t: 20.0 + 8.0 * math.sin(2 * math.pi * t / 20.0), duration=60.0)
    assert res.gaps.min() > 0.0
    assert res.v.min() >= 0.0


def test_platoon_at_equilibrium_stays_put():
    res = simulate_platoon(P, 5, lambda t: 20.0, duration=30.0)
    np.testing.assert_allclose(res.v, 20.0, atol=1e-6)


def test_grid_order_and_trivial_calibration():
    grid = idm_grid(T=(1.0, 1.5), a=(0.5, 1.0))
    assert [(g.a, g.T) for g in grid] == [(0.5, 1.0), (1.0, 1.0), (0.5, 1.5), (1.0, 1.5)]
    scs, rmap = synthesize_corpus(CorpusRecipe(SynthConfig(lane_change_rate=0.0), n_scenarios=3, seed=4,
                                               wave_fraction=1.0))
    items = [(s, rmap) for s in scs]
    assert calibrate_idm(items, [P]).params == P
    # duplicated grid points tie; the first index wins
    assert calibrate_idm(items, [replace(P, T=3.0), P, P]).index == 1


def test_calibration_recovers_generator_parameters():
    truth = IdmParams(T=1.2, a=1.4)
    base = SynthConfig(idm=truth, lane_change_rate=0.0)
    scs, rmap = synthesize_corpus(CorpusRecipe(base, n_scenarios=6, seed=9, wave_fraction=1.0))
    items = [(s, rmap) for s in scs]
    assert sum(len(following_pairs(s, rmap)) for s in scs) > 10
    grid = idm_grid(T=(0.9, 1.2, 1.5, 1.8), a=(0.7, 1.0, 1.4, 2.0))
    assert calibrate_idm(items, grid).params == truth
    with pytest.raises(NoiseSimError) as exc:
        calibrate_idm([], grid)
    assert exc.value.code == "no-pairs"
