"""Observation corruption: fragmentation, occlusion, dropout and jitter.

Stages run in that fixed order. Every random draw comes from a stream keyed
by ``(seed, scenario_id, agent_id, fragment, stage)``, so corrupting one
track never depends on which other tracks are present.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HEADING, HISTORY_FRAMES, MAX_AGENTS, N_FRAMES, VALID, AgentTrack, Scenario, wrap_angle
from .errors import NoiseSimError
from .seeding import derive_rng


@dataclass(frozen=True)
class NoiseConfig:
    jitter_sigma_xy: float = 0.0
    jitter_sigma_heading: float = 0.0
    dropout_rate: float = 0.0
    occlusion_rate: float = 0.0
    occlusion_mean_len: float = 5.0
    fragmentation_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("dropout_rate", "occlusion_rate", "fragmentation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.jitter_sigma_xy < 0 or self.jitter_sigma_heading < 0:
            raise ValueError("jitter sigmas must be >= 0")
        if self.occlusion_mean_len < 1:
            raise ValueError("occlusion_mean_len must be >= 1 frame")


def _fragment(track: AgentTrack, cfg: NoiseConfig, scenario_id: str):
    """Split point in 1..N-1, or None when the track stays whole."""
    rng = derive_rng(cfg.seed, scenario_id, track.agent_id, "fragment")
    u, k = rng.random(), int(rng.integers(1, N_FRAMES))
    return k if u < cfg.fragmentation_rate else None


def _degrade(states: np.ndarray, cfg: NoiseConfig, key: tuple) -> np.ndarray:
    s = states.copy()
    n = len(s)
    valid = s[:, VALID] > 0.5

    rng = derive_rng(*key, "occlusion")
    for _ in range(int(rng.poisson(cfg.occlusion_rate))):
        start = int(rng.integers(0, n))
        length = int(rng.geometric(1.0 / cfg.occlusion_mean_len))
        valid[start:start + length] = False

    rng = derive_rng(*key, "dropout")
    valid &= ~(rng.random(n) < cfg.dropout_rate)

    rng = derive_rng(*key, "jitter")
    dxy = rng.normal(size=(n, 2))
    dh = rng.normal(size=n)
    if cfg.jitter_sigma_xy > 0:
        s[:, :2] += cfg.jitter_sigma_xy * dxy
    if cfg.jitter_sigma_heading > 0:
        s[:, HEADING] = wrap_angle(s[:, HEADING] + cfg.jitter_sigma_heading * dh)

    s[:, VALID] = valid
    s[~valid, :4] = 0.0
    return s


def corrupt(scenario: Scenario, config: NoiseConfig) -> Scenario:
    """Apply the corruption process to a clean scenario."""
    if scenario.provenance != "clean":
        raise NoiseSimError("double-corruption", f"{scenario.scenario_id} is {scenario.provenance}")
    sid = scenario.scenario_id
    next_id = max(scenario.agent_ids, default=-1) + 1
    count = len(scenario.tracks)
    parts: list[tuple[AgentTrack, int, np.ndarray]] = []  # (origin, fragment index, states)
    extra = []
    for t in scenario.tracks:
        split = _fragment(t, config, sid) if config.fragmentation_rate > 0 else None
        if split is not None and count < MAX_AGENTS:
            head = t.states.copy()
            head[split:, VALID] = 0.0
            head[split:, :4] = 0.0
            tail = t.states.copy()
            tail[:split, VALID] = 0.0
            tail[:split, :4] = 0.0
            parts.append((t, 0, head))
            extra.append((t, 1, tail, next_id))
            next_id += 1
            count += 1
        else:
            parts.append((t, 0, t.states))

    tracks = []
    for t, frag, states in parts:
        tracks.append(AgentTrack(t.agent_id, t.length, t.width,
                                 _degrade(states, config, (config.seed, sid, t.agent_id, frag))))
    for t, frag, states, new_id in extra:
        tracks.append(AgentTrack(new_id, t.length, t.width,
                                 _degrade(states, config, (config.seed, sid, t.agent_id, frag))))
    return scenario.replace(tracks=tuple(tracks), provenance="corrupted")


def drop_unobserved(scenario: Scenario) -> Scenario:
    """Remove tracks with no valid frame in the one-second history window."""
    keep = tuple(t for t in scenario.tracks if t.valid[:HISTORY_FRAMES].any())
    return scenario.replace(tracks=keep)
