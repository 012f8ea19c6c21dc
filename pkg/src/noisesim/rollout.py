"""Sim agents and the closed-loop rollout engine.

A rollout keeps frames 0-10 of every track verbatim and fills frames 11-90
for every agent. Learned agents act at the token rate: each step rebuilds all
contexts from the current simulated states, samples one token per agent and
decodes it into five 10 Hz frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import CURRENT_FRAME, DT, FUTURE_FRAMES, HISTORY_FRAMES, N_FRAMES, AgentState, AgentTrack, RoadMap, Scenario
from .errors import NoiseSimError
from .idm import IdmParams, idm_accel_array
from .policy import PolicyContext, PolicyParameters, forward, scene_features
from .seeding import derive_rng
from .tokenizer import TokenVocab, advance, nearest_token, world_to_delta

IDM_SUBSTEPS = 10
IDM_MIN_GAP = 0.1


def constant_speed_step(state: AgentState, velocity, dt: float) -> AgentState:
    """Straight-line extrapolation at fixed velocity and heading."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    vx, vy = velocity
    return state._replace(x=state.x + vx * dt, y=state.y + vy * dt)


def sample_tokens(logits: np.ndarray, temperature: float, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draws for rows of ``logits`` from uniforms ``u``.

    Temperature 0 is argmax (lowest index on ties) and ignores ``u``.
    """
    logits = np.asarray(logits, dtype=float)
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if temperature == 0:
        return np.argmax(logits, axis=-1)
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    cdf = np.cumsum(np.exp(z), axis=-1)
    target = np.asarray(u)[..., None] * cdf[..., -1:]
    idx = (cdf <= target).sum(axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1)


def sample_token(logits, temperature: float, rng: np.random.Generator) -> int:
    """One token from ``softmax(logits / temperature)``; one uniform is consumed per call."""
    u = rng.random()
    return int(sample_tokens(np.asarray(logits, dtype=float)[None], temperature, np.array([u]))[0])


# ------------------------------------------------------------------ policies


@dataclass(frozen=True)
class ConstantSpeedPolicy:
    name: str = "const"


@dataclass(frozen=True)
class IdmPolicy:
    params: IdmParams = field(default_factory=IdmParams)
    name: str = "idm"


@dataclass(frozen=True, eq=False)
class LearnedPolicy:
    params: PolicyParameters
    vocab: TokenVocab
    name: str = "learned"

    def __post_init__(self):
        if self.params.arch.vocab_size != self.vocab.size:
            raise NoiseSimError("shape-mismatch", "policy vocab size differs from the vocabulary")


@dataclass(frozen=True)
class ReplayPolicy:
    """Oracle that reproduces the recorded future."""

    name: str = "replay"


class RolloutBatch(NamedTuple):
    agent_ids: np.ndarray  # (N,)
    lengths: np.ndarray  # (N,)
    widths: np.ndarray  # (N,)
    states: np.ndarray  # (K, N, 91, 5)

    def scenarios(self, template: Scenario) -> list[Scenario]:
        out = []
        for k in range(self.states.shape[0]):
            tracks = tuple(AgentTrack(a, l, w, self.states[k, i])
                           for i, (a, l, w) in enumerate(zip(self.agent_ids, self.lengths, self.widths)))
            out.append(template.replace(tracks=tracks))
        return out


class _Start(NamedTuple):
    pos: np.ndarray  # (N, 2) at the current frame
    heading: np.ndarray  # (N,)
    velocity: np.ndarray  # (N, 2)
    z: np.ndarray  # (N,)


def _start_kinematics(history: np.ndarray, scenario_id: str, agent_ids) -> _Start:
    """Pose at the current frame and last observed velocity for each agent.

    When the current frame is missing, the last valid state is carried forward
    at the velocity between the last two valid history frames.
    """
    n = history.shape[0]
    pos = np.zeros((n, 2))
    heading = np.zeros(n)
    vel = np.zeros((n, 2))
    z = np.zeros(n)
    for i in range(n):
        frames = np.flatnonzero(history[i, :, 4] > 0.5)
        if len(frames) == 0:
            raise NoiseSimError("missing-history", f"{scenario_id}: agent {agent_ids[i]} has no valid history")
        last = frames[-1]
        if len(frames) > 1:
            prev = frames[-2]
            vel[i] = (history[i, last, :2] - history[i, prev, :2]) / ((last - prev) * DT)
        pos[i] = history[i, last, :2] + vel[i] * (CURRENT_FRAME - last) * DT
        heading[i] = history[i, last, 3]
        z[i] = history[i, last, 2]
    return _Start(pos, heading, vel, z)


def _future_const(start: _Start, K: int) -> np.ndarray:
    steps = np.arange(1, FUTURE_FRAMES + 1) * DT
    fut = np.zeros((start.pos.shape[0], FUTURE_FRAMES, 5))
    fut[..., :2] = start.pos[:, None, :] + steps[None, :, None] * start.velocity[:, None, :]
    fut[..., 2] = start.z[:, None]
    fut[..., 3] = start.heading[:, None]
    fut[..., 4] = 1.0
    return np.broadcast_to(fut, (K,) + fut.shape)


def _future_idm(start: _Start, lengths: np.ndarray, rmap: RoadMap, p: IdmParams, K: int) -> np.ndarray:
    """Longitudinal IDM along each agent's initial lane at a fixed lateral offset."""
    fb = rmap.project(start.pos)
    lane, station, lateral = fb.lane_index, fb.station.copy(), fb.lateral_offset
    along = np.cos(start.heading - fb.lane_heading)
    v = np.maximum(np.linalg.norm(start.velocity, axis=1) * np.sign(along), 0.0)
    n = len(lane)
    half = 0.5 * lengths

    def leaders():
        lead = np.full(n, -1)
        for ln in np.unique(lane):
            members = np.flatnonzero(lane == ln)
            order = members[np.lexsort((members, station[members]))]
            lead[order[:-1]] = order[1:]
        return lead

    fut = np.zeros((n, FUTURE_FRAMES, 5))
    h = DT / IDM_SUBSTEPS
    for f in range(FUTURE_FRAMES):
        for _ in range(IDM_SUBSTEPS):
            lead = leaders()
            has = lead >= 0
            li = np.maximum(lead, 0)
            gap = np.where(has, station[li] - station - half - half[li], np.inf)
            acc = idm_accel_array(v, np.where(has, v[li], v), np.where(has, np.maximum(gap, 1e-3), np.inf), p)
            v = np.maximum(v + acc * h, 0.0)
            new_station = station + v * h
            new_gap = np.where(has, new_station[li] - new_station - half - half[li], np.inf)
            # never close a gap that was open; stale overlaps from the input are left alone
            clamp = has & (new_gap < IDM_MIN_GAP) & (gap >= IDM_MIN_GAP)
            new_station = np.where(clamp, new_station[li] - half - half[li] - IDM_MIN_GAP, new_station)
            v = np.where(clamp, np.minimum(v, v[li]), v)
            station = new_station
        xy, hd = rmap.lane_point(lane, station, lateral)
        fut[:, f, :2] = xy
        fut[:, f, 2] = start.z
        fut[:, f, 3] = hd
        fut[:, f, 4] = 1.0
    return np.broadcast_to(fut, (K,) + fut.shape)


def _history_anchor(history: np.ndarray, start: _Start, frame: int):
    """Pose at ``frame``: recorded if valid, else back-extrapolated from the start pose."""
    ok = history[:, frame, 4] > 0.5
    back = start.pos - start.velocity * (CURRENT_FRAME - frame) * DT
    pos = np.where(ok[:, None], history[:, frame, :2], back)
    heading = np.where(ok, history[:, frame, 3], start.heading)
    return pos, heading


def _future_learned(history, start: _Start, policy: LearnedPolicy, rmap: RoadMap, K: int, temperature: float,
                    master_seed, agent_ids) -> np.ndarray:
    vocab = policy.vocab
    P = vocab.frames_per_token
    n_steps = FUTURE_FRAMES // P
    n = start.pos.shape[0]
    anchors = [CURRENT_FRAME - P * j for j in range(2, -1, -1)]  # 0, 5, 10
    poses = [_history_anchor(history, start, f) for f in anchors[:-1]] + [(start.pos, start.heading)]
    toks = [nearest_token(world_to_delta(a[0], a[1], b[0], b[1]), vocab)[0] for a, b in zip(poses[:-1], poses[1:])]

    tok_hist = np.broadcast_to(np.stack(toks, axis=-1), (K, n, 2)).copy()
    pos = np.broadcast_to(start.pos, (K, n, 2)).copy()
    heading = np.broadcast_to(start.heading, (K, n)).copy()
    prev_pos = np.broadcast_to(poses[-2][0], (K, n, 2)).copy()
    present = np.ones((K, n), dtype=bool)

    u = np.empty((K, n, n_steps))
    if temperature > 0:
        for k in range(K):
            for i, a in enumerate(agent_ids):
                u[k, i] = derive_rng(master_seed, k, int(a)).random(n_steps)

    fut = np.zeros((K, n, FUTURE_FRAMES, 5))
    for step in range(n_steps):
        feats = scene_features(pos, prev_pos, heading, present, present, rmap)
        logits, _ = forward(policy.params, PolicyContext(tok_hist.reshape(-1, 2), feats.reshape(K * n, -1)))
        tok = sample_tokens(logits, temperature, u[..., step].reshape(-1)).reshape(K, n)
        xy_steps, h_steps = advance(pos, heading, vocab.templates[tok], P)
        rows = slice(step * P, (step + 1) * P)
        fut[:, :, rows, :2] = xy_steps
        fut[:, :, rows, 3] = h_steps
        prev_pos = pos
        pos = xy_steps[..., -1, :]
        heading = h_steps[..., -1]
        tok_hist = np.stack([tok_hist[..., 1], tok], axis=-1)
    fut[..., 2] = start.z[None, :, None]
    fut[..., 4] = 1.0
    return fut


def rollout_batch(scenario: Scenario, rmap: RoadMap, policy, K: int = 32, temperature: float = 1.0,
                  master_seed: int = 0) -> RolloutBatch:
    """K closed-loop futures for every agent of ``scenario`` as one array."""
    if K < 1:
        raise ValueError("K must be >= 1")
    tracks = scenario.tracks
    ids = np.array([t.agent_id for t in tracks], dtype=np.int64)
    lengths = np.array([t.length for t in tracks])
    widths = np.array([t.width for t in tracks])
    full = np.stack([t.states for t in tracks]) if tracks else np.zeros((0, N_FRAMES, 5))
    history = full[:, :HISTORY_FRAMES]
    start = _start_kinematics(history, scenario.scenario_id, ids)

    if isinstance(policy, ReplayPolicy):
        fut = np.broadcast_to(full[:, HISTORY_FRAMES:], (K,) + full[:, HISTORY_FRAMES:].shape)
    elif isinstance(policy, ConstantSpeedPolicy):
        fut = _future_const(start, K)
    elif isinstance(policy, IdmPolicy):
        fut = _future_idm(start, lengths, rmap, policy.params, K)
    elif isinstance(policy, LearnedPolicy):
        fut = _future_learned(history, start, policy, rmap, K, temperature, master_seed, ids)
    else:
        raise TypeError(f"unsupported policy {policy!r}")

    states = np.empty((K, len(tracks), N_FRAMES, 5))
    states[:, :, :HISTORY_FRAMES] = history[None]
    states[:, :, HISTORY_FRAMES:] = fut
    return RolloutBatch(ids, lengths, widths, states)


def rollout(scenario: Scenario, rmap: RoadMap, policy, K: int = 32, temperature: float = 1.0,
            master_seed: int = 0) -> list[Scenario]:
    """K simulated scenarios sharing the input's history frames."""
    return rollout_batch(scenario, rmap, policy, K, temperature, master_seed).scenarios(scenario)
