import numpy as np
import pytest

from noisesim.core import N_FRAMES, Scenario, make_track
from noisesim.synth import CorpusRecipe, SynthConfig, build_freeway_map, synthesize_corpus


@pytest.fixture(scope="session")
def two_lane():
    return build_freeway_map(2, 1000.0, 3.6, map_id="two-lane")


@pytest.fixture(scope="session")
def small_corpus():
    """Twelve mixed free-flow / wave scenarios on a four-lane freeway."""
    recipe = CorpusRecipe(base=SynthConfig(), n_scenarios=12, n_vehicles=(8, 16), seed=11)
    return synthesize_corpus(recipe)


def straight_track(agent_id, x0=0.0, y=0.0, speed=20.0, heading=0.0, length=4.5, valid=None):
    t = np.arange(N_FRAMES) * 0.1
    xy = np.column_stack([x0 + speed * t * np.cos(heading), y + speed * t * np.sin(heading)])
    return make_track(agent_id, xy, heading=np.full(N_FRAMES, heading), valid=valid, length=length)


def scenario_of(tracks, map_id="two-lane", split="train", provenance="clean", sid="sc"):
    return Scenario(sid, tuple(tracks), map_id, split, provenance)
