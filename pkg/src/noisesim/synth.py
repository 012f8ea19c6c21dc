"""Clean ground-truth freeway scenarios from a seeded IDM + lane-change world.

Each lane's front-most vehicle tracks a reference speed (its desired speed,
or a slow sinusoid in wave mode); everyone behind it follows with IDM. Lane
changes fire stochastically, pass a gap-acceptance check, and are executed as
a fixed-duration cosine blend of the lateral position. The world is stepped
at 100 Hz and sampled at 10 Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import DT, MAX_AGENTS, N_FRAMES, AgentTrack, Polyline, RoadMap, Scenario, wrap_angle
from .corpus import assign_splits
from .errors import NoiseSimError
from .idm import IdmParams, idm_accel_array
from .seeding import derive_rng

VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 1.8
SUBSTEPS = 10
LANE_CHANGE_DURATION = 3.0
WAVE_PERIOD = 20.0
WAVE_AMPLITUDE = 0.4
MIN_BUMPER_GAP = 0.5
LEADER_TAU = 1.0  # s, speed-tracking time constant of lane leaders
LEADER_ACCEL = (-4.0, 2.0)
MIN_LANE_CHANGE_SPEED = 8.0


@dataclass(frozen=True)
class SynthConfig:
    lanes: int = 4
    length: float = 1500.0
    lane_width: float = 3.6
    n_vehicles: int = 24
    desired_speed: tuple[float, float] = (24.0, 30.0)
    initial_gap: tuple[float, float] = (20.0, 60.0)
    lane_change_rate: float = 0.02
    wave_mode: bool = False
    idm: IdmParams = field(default_factory=IdmParams)
    seed: int = 0
    warmup: float = 0.0  # seconds simulated before frame 0

    def __post_init__(self):
        if self.lanes < 1:
            raise ValueError("lanes must be >= 1")
        if not 0 < self.n_vehicles <= MAX_AGENTS:
            raise ValueError(f"n_vehicles must be in 1..{MAX_AGENTS}")
        for name in ("desired_speed", "initial_gap"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ValueError(f"{name} must be a non-empty range")
        if not 0.0 <= self.lane_change_rate <= 1.0:
            raise ValueError("lane_change_rate must be a probability")
        if self.length <= 0 or self.lane_width <= 0 or self.warmup < 0:
            raise ValueError("length, lane_width must be positive and warmup >= 0")


def build_freeway_map(lanes: int, length: float, lane_width: float = 3.6, map_id: str = "freeway",
                      spacing: float = 10.0) -> RoadMap:
    """Straight carriageway along +x with centerlines at ``y = i * lane_width``."""
    if lanes < 1 or length <= 0:
        raise ValueError("need lanes >= 1 and length > 0")
    n = max(2, int(round(length / spacing)) + 1)
    x = np.linspace(0.0, length, n)

    def line(kind, y):
        return Polyline(kind, np.column_stack([x, np.full(n, y), np.zeros(n)]))

    polylines = [line("centerline", i * lane_width) for i in range(lanes)]
    polylines += [line("boundary_dashed", (i + 0.5) * lane_width) for i in range(lanes - 1)]
    polylines.append(line("road_edge", -0.5 * lane_width))
    polylines.append(line("road_edge", (lanes - 0.5) * lane_width))
    return RoadMap(map_id, tuple(polylines), float(lane_width))


def _lane_layout(cfg: SynthConfig, rng: np.random.Generator):
    """Initial (lane, x) per vehicle; vehicles are listed lane by lane, front first."""
    per_lane = [len(range(i, cfg.n_vehicles, cfg.lanes)) for i in range(cfg.lanes)]
    v_cap = max(cfg.desired_speed[1], cfg.idm.v0)
    travel = v_cap * (cfg.warmup + (N_FRAMES - 1) * DT) + 20.0
    room = cfg.length - travel - 5.0
    lo, hi = cfg.initial_gap
    lanes, xs = [], []
    for lane, k in enumerate(per_lane):
        if k == 0:
            continue
        if k * VEHICLE_LENGTH + (k - 1) * lo > room:
            raise NoiseSimError("overcrowded", f"{k} vehicles do not fit in lane {lane} of a {cfg.length} m road")
        gaps = rng.uniform(lo, hi, size=k - 1)
        stagger = rng.uniform(0.0, 30.0)
        span = k * VEHICLE_LENGTH + gaps.sum() + stagger
        if span > room:
            excess = span - room
            slack = (gaps - lo).sum() + stagger
            shrink = 1.0 - excess / slack
            gaps = lo + (gaps - lo) * shrink
            stagger *= shrink
        front = cfg.length - travel - stagger
        x = front - np.concatenate([[0.0], np.cumsum(gaps + VEHICLE_LENGTH)])
        lanes.extend([lane] * k)
        xs.extend(x.tolist())
    return np.array(lanes), np.array(xs)


def generate_scenario(config: SynthConfig, rmap: RoadMap, scenario_id: str, split: str = "train") -> Scenario:
    """Simulate one clean 9 s scenario; fully determined by (config, scenario_id)."""
    cfg = config
    rng = derive_rng(cfg.seed, scenario_id, "synth")
    lane, x = _lane_layout(cfg, rng)
    n = len(x)
    desired = rng.uniform(*cfg.desired_speed, size=n)
    phase = rng.uniform(0.0, 2 * math.pi, size=cfg.lanes)
    p = cfg.idm
    w = cfg.lane_width

    def v_ref(t, idx):
        if not cfg.wave_mode:
            return desired[idx]
        return desired[idx] * (1.0 - WAVE_AMPLITUDE + WAVE_AMPLITUDE * np.cos(2 * math.pi * t / WAVE_PERIOD + phase[lane[idx]]))

    # every vehicle in a lane starts at that lane's leader speed
    v = np.empty(n)
    for ln in np.unique(lane):
        members = np.flatnonzero(lane == ln)
        front = members[np.argmax(x[members])]
        v[members] = v_ref(0.0, np.array([front]))[0]

    lc_active = np.zeros(n, dtype=bool)
    lc_start = np.zeros(n)
    y_from = lane * w
    y_to = y_from.copy()

    h = DT / SUBSTEPS
    total_frames = int(round(cfg.warmup / DT)) + N_FRAMES
    first_recorded = total_frames - N_FRAMES
    out = np.zeros((n, N_FRAMES, 5))

    def lateral(t):
        tau = np.clip((t - lc_start) / LANE_CHANGE_DURATION, 0.0, 1.0)
        blend = np.where(lc_active, 0.5 * (1.0 - np.cos(math.pi * tau)), 1.0)
        y = y_from + (y_to - y_from) * blend
        vy = np.where(lc_active & (tau < 1.0),
                      (y_to - y_from) * math.pi / (2 * LANE_CHANGE_DURATION) * np.sin(math.pi * tau), 0.0)
        return y, vy

    def predecessors():
        order = np.lexsort((-x, lane))
        pred = np.full(n, -1)
        same = lane[order[1:]] == lane[order[:-1]]
        pred[order[1:][same]] = order[:-1][same]
        return pred

    for frame in range(total_frames):
        t = frame * DT
        done = lc_active & (t - lc_start >= LANE_CHANGE_DURATION)
        lc_active &= ~done
        y, vy = lateral(t)
        if frame >= first_recorded:
            f = frame - first_recorded
            out[:, f, 0] = x
            out[:, f, 1] = y
            out[:, f, 3] = wrap_angle(np.arctan2(vy, np.maximum(v, 1e-3)))
            out[:, f, 4] = 1.0
        if frame == total_frames - 1:
            break

        # lane-change decisions at 10 Hz; draws are consumed for every vehicle
        attempt = rng.random(n) < cfg.lane_change_rate * DT
        direction = rng.random(n)
        for i in np.flatnonzero(attempt):
            if lc_active[i] or v[i] < MIN_LANE_CHANGE_SPEED:
                continue
            options = [ln for ln in (lane[i] - 1, lane[i] + 1) if 0 <= ln < cfg.lanes]
            if not options:
                continue
            target = options[min(int(direction[i] * len(options)), len(options) - 1)]
            others = np.flatnonzero(lane == target)
            ahead = others[x[others] > x[i]]
            behind = others[x[others] <= x[i]]
            ok = True
            if len(ahead):
                j = ahead[np.argmin(x[ahead])]
                ok &= x[j] - x[i] - VEHICLE_LENGTH >= p.s0 + v[i] * p.T
            if len(behind):
                j = behind[np.argmax(x[behind])]
                ok &= x[i] - x[j] - VEHICLE_LENGTH >= p.s0 + v[j] * p.T
            if ok:
                y_from[i] = y[i]
                y_to[i] = target * w
                lane[i] = target
                lc_active[i] = True
                lc_start[i] = t

        for k in range(SUBSTEPS):
            ts = t + k * h
            pred = predecessors()
            has_lead = pred >= 0
            gap = np.where(has_lead, x[np.maximum(pred, 0)] - x - VEHICLE_LENGTH, np.inf)
            v_lead = np.where(has_lead, v[np.maximum(pred, 0)], v)
            acc = idm_accel_array(v, v_lead, np.where(has_lead, np.maximum(gap, 1e-3), np.inf), p)
            leaders = np.flatnonzero(~has_lead)
            acc[leaders] = np.clip((v_ref(ts, leaders) - v[leaders]) / LEADER_TAU, *LEADER_ACCEL)
            v = np.maximum(v + acc * h, 0.0)
            x = x + v * h
            # hard floor on bumper gaps, applied front to back
            order = np.lexsort((-x, lane))
            for a, b in zip(order[:-1], order[1:]):
                if lane[a] == lane[b] and x[a] - x[b] - VEHICLE_LENGTH < MIN_BUMPER_GAP:
                    x[b] = x[a] - VEHICLE_LENGTH - MIN_BUMPER_GAP
                    v[b] = min(v[b], v[a])

    tracks = tuple(AgentTrack(i, VEHICLE_LENGTH, VEHICLE_WIDTH, out[i]) for i in range(n))
    return Scenario(scenario_id, tracks, rmap.map_id, split, "clean")


@dataclass(frozen=True)
class CorpusRecipe:
    """Mixture of free-flow and wave-mode scenarios with per-scenario vehicle counts."""

    base: SynthConfig = field(default_factory=SynthConfig)
    n_scenarios: int = 100
    wave_fraction: float = 0.5
    n_vehicles: tuple[int, int] = (16, 32)
    wave_warmup: float = 10.0
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    map_id: str = "freeway"


def synthesize_corpus(recipe: CorpusRecipe) -> tuple[list[Scenario], RoadMap]:
    base = replace(recipe.base, seed=recipe.seed)
    rmap = build_freeway_map(base.lanes, base.length, base.lane_width, recipe.map_id)
    ids = [f"s{i:05d}" for i in range(recipe.n_scenarios)]
    splits = assign_splits(ids, recipe.split_ratios, recipe.seed)
    scenarios = []
    for sid in ids:
        rng = derive_rng(recipe.seed, sid, "recipe")
        wave = bool(rng.random() < recipe.wave_fraction)
        count = int(rng.integers(recipe.n_vehicles[0], recipe.n_vehicles[1] + 1))
        cfg = replace(base, wave_mode=wave, n_vehicles=count, warmup=recipe.wave_warmup if wave else base.warmup)
        scenarios.append(generate_scenario(cfg, rmap, sid, splits[sid]))
    return scenarios, rmap


def generate_many(config: SynthConfig, rmap: RoadMap, scenario_ids: Sequence[str], split: str = "train"):
    return [generate_scenario(config, rmap, sid, split) for sid in scenario_ids]
