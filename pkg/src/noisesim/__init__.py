"""Synthetic freeway corpora, observation noise, motion tokens and noise-aware sim-agent training."""

from .core import AgentState, AgentTrack, Polyline, RoadMap, Scenario, road_frame, validate_scenario
from .errors import NoiseSimError
from .idm import IdmParams, calibrate_idm, idm_accel
from .losses import LossSpec, loss_ce, loss_focal, loss_label_smoothing, loss_symmetric_ce
from .metrics import MetricsConfig, MetricsReport, evaluate, histogram_likelihood, min_ade
from .noise import NoiseConfig, corrupt
from .rollout import ConstantSpeedPolicy, IdmPolicy, LearnedPolicy, ReplayPolicy, rollout
from .synth import CorpusRecipe, SynthConfig, build_freeway_map, generate_scenario
from .tokenizer import TokenVocab, build_vocab, decode, encode
from .training import TrainConfig, train

__version__ = "0.1.0"
