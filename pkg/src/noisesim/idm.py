"""Intelligent Driver Model: acceleration law, equilibrium, platoons, calibration."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, fields
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .core import DT, Scenario, RoadMap
from .errors import NoiseSimError
from .seeding import derive_rng


@dataclass(frozen=True)
class IdmParams:
    v0: float = 30.0  # desired speed, m/s
    T: float = 1.5  # time headway, s
    a: float = 1.0  # max acceleration, m/s^2
    b: float = 1.5  # comfortable deceleration, m/s^2
    s0: float = 2.0  # jam distance, m
    delta: float = 4.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"IdmParams.{f.name} must be positive")


def idm_accel(v: float, lead: tuple[float, float] | None, p: IdmParams) -> float:
    """IDM acceleration for speed ``v`` behind ``lead = (v_lead, gap)``.

    Without a leader only the free-road term ``a * (1 - (v/v0)**delta)`` remains.
    The desired dynamic gap is floored at zero so a much faster leader never
    induces braking.
    """
    free = 1.0 - (v / p.v0) ** p.delta
    if lead is None:
        return p.a * free
    v_lead, gap = lead
    if not gap > 0:
        raise NoiseSimError("nonpositive-gap", f"gap={gap}")
    s_star = max(p.s0 + v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a * p.b)), 0.0)
    return p.a * (free - (s_star / gap) ** 2)


def idm_accel_array(v, v_lead, gap, p: IdmParams, v0=None) -> np.ndarray:
    """Vectorised IDM; ``gap = inf`` means no leader. ``v0`` overrides ``p.v0``."""
    v = np.asarray(v, dtype=float)
    v0 = p.v0 if v0 is None else np.asarray(v0, dtype=float)
    s_star = p.s0 + v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a * p.b))
    s_star = np.maximum(s_star, 0.0)  # no "pull" from a faster leader
    with np.errstate(divide="ignore", invalid="ignore"):
        inter = np.where(np.isfinite(gap), (s_star / gap) ** 2, 0.0)
    return p.a * (1.0 - (v / v0) ** p.delta - inter)


def equilibrium_gap(v: float, p: IdmParams) -> float:
    """Steady-state bumper gap at speed ``v`` (requires ``v < v0``)."""
    ratio = 1.0 - (v / p.v0) ** p.delta
    if ratio <= 0:
        return math.inf
    return (p.s0 + v * p.T) / math.sqrt(ratio)


class PlatoonResult(NamedTuple):
    t: np.ndarray  # (steps,)
    x: np.ndarray  # (steps, n) front bumper positions, leader first
    v: np.ndarray  # (steps, n)
    gaps: np.ndarray  # (steps, n-1) bumper gaps


def simulate_platoon(
    p: IdmParams,
    n: int,
    leader_speed: Callable[[float], float],
    duration: float = 60.0,
    initial_speed: float | None = None,
    initial_gap: float | None = None,
    vehicle_length: float = 4.5,
    dt: float = 0.01,
    record_every: int = 10,
) -> PlatoonResult:
    """Single-lane platoon behind a speed-prescribed leader (semi-implicit Euler)."""
    v_init = leader_speed(0.0) if initial_speed is None else initial_speed
    gap0 = equilibrium_gap(v_init, p) if initial_gap is None else initial_gap
    x = -np.arange(n) * (gap0 + vehicle_length)
    v = np.full(n, float(v_init))
    steps = int(round(duration / dt))
    ts, xs, vs = [], [], []
    for k in range(steps + 1):
        t = k * dt
        if k % record_every == 0:
            ts.append(t)
            xs.append(x.copy())
            vs.append(v.copy())
        if k == steps:
            break
        gap = x[:-1] - x[1:] - vehicle_length
        acc = np.empty(n)
        acc[1:] = idm_accel_array(v[1:], v[:-1], np.maximum(gap, 1e-3), p)
        v_new = np.empty(n)
        v_new[0] = max(leader_speed(t + dt), 0.0)
        v_new[1:] = np.maximum(v[1:] + acc[1:] * dt, 0.0)
        x = x + v_new * dt
        v = v_new
    x_arr = np.array(xs)
    return PlatoonResult(np.array(ts), x_arr, np.array(vs), x_arr[:, :-1] - x_arr[:, 1:] - vehicle_length)


# ---------------------------------------------------------------- calibration


class FollowingPair(NamedTuple):
    follower_station: np.ndarray  # (m,) observed stations over the run
    leader_station: np.ndarray  # (m,)
    length_sum: float  # half lengths of both vehicles, summed


class CalibrationResult(NamedTuple):
    params: IdmParams
    error: float
    index: int
    errors: np.ndarray


def idm_grid(**ranges: Sequence[float]) -> list[IdmParams]:
    """Cartesian product of per-field values, in field order (last field fastest)."""
    names = [f.name for f in fields(IdmParams)]
    base = IdmParams()
    axes = [tuple(ranges.get(n, (getattr(base, n),))) for n in names]
    return [IdmParams(**dict(zip(names, combo))) for combo in itertools.product(*axes)]


def following_pairs(scenario: Scenario, rmap: RoadMap, min_frames: int = 30,
                    max_lateral: float = 0.5) -> list[FollowingPair]:
    """Longest uninterrupted car-following run for each follower in a scenario.

    A frame counts when both vehicles are valid, share the nearest centerline,
    sit within ``max_lateral`` of it (no lane change in progress) and nobody
    else is between them.
    """
    tracks = scenario.tracks
    n = len(tracks)
    if n < 2:
        return []
    xy = np.stack([t.xy for t in tracks])  # (n, F, 2)
    valid = np.stack([t.valid for t in tracks])
    fb = rmap.project(xy)
    lane = np.where(valid, fb.lane_index, -1)
    station = fb.station
    steady = valid & (np.abs(fb.lateral_offset) <= max_lateral)
    n_frames = xy.shape[1]
    leader = np.full((n, n_frames), -1)
    for f in range(n_frames):
        for ln in np.unique(lane[:, f]):
            if ln < 0:
                continue
            members = np.flatnonzero(lane[:, f] == ln)
            order = members[np.argsort(-station[members, f], kind="stable")]
            leader[order[1:], f] = order[:-1]
    pairs = []
    for i in range(n):
        best = None
        f = 0
        while f < n_frames:
            j = leader[i, f]
            if j < 0 or not (steady[i, f] and steady[j, f]):
                f += 1
                continue
            start = f
            while f < n_frames and leader[i, f] == j and steady[i, f] and steady[j, f]:
                f += 1
            if best is None or f - start > best[2] - best[1]:
                best = (j, start, f)
        if best is not None and best[2] - best[1] >= min_frames:
            j, a, b = best
            pairs.append(FollowingPair(station[i, a:b].copy(), station[j, a:b].copy(),
                                       0.5 * (tracks[i].length + tracks[j].length)))
    return pairs


def _replay_errors(pairs: list[FollowingPair], grid: list[IdmParams], substeps: int = 10) -> np.ndarray:
    """Mean squared speed error of IDM replay for every (grid point, pair)."""
    P = len(pairs)
    m_max = max(len(p.follower_station) for p in pairs)
    fol = np.full((P, m_max), np.nan)
    lead = np.full((P, m_max), np.nan)
    for k, p in enumerate(pairs):
        fol[k, : len(p.follower_station)] = p.follower_station
        lead[k, : len(p.leader_station)] = p.leader_station
    lengths = np.array([p.length_sum for p in pairs])
    m = np.array([len(p.follower_station) for p in pairs])
    # observed speeds: central differences inside the run, one-sided at its ends
    v_obs = np.full((P, m_max), np.nan)
    v_obs[:, 1:-1] = (fol[:, 2:] - fol[:, :-2]) / (2 * DT)
    v_obs[:, 0] = (fol[:, 1] - fol[:, 0]) / DT
    last = m - 1
    rows = np.arange(P)
    v_obs[rows, last] = (fol[rows, last] - fol[rows, last - 1]) / DT
    v_lead = np.full((P, m_max), np.nan)
    v_lead[:, :-1] = (lead[:, 1:] - lead[:, :-1]) / DT

    G = len(grid)
    arr = {name: np.array([getattr(g, name) for g in grid])[:, None] for name in ("v0", "T", "a", "b", "s0", "delta")}
    sqrt_ab = np.sqrt(arr["a"] * arr["b"])
    s = np.broadcast_to(fol[:, 0], (G, P)).copy()
    v = np.broadcast_to(v_obs[:, 0], (G, P)).copy()
    sq_err = np.zeros((G, P))
    count = np.zeros(P)
    h = DT / substeps
    for f in range(m_max):
        active = f < m
        err = np.where(active, v - v_obs[:, f], 0.0)
        sq_err += err**2
        count += active
        if f == m_max - 1:
            break
        nxt = (f + 1) < m
        for k in range(substeps):
            # leader position linearly interpolated between 10 Hz samples
            x_lead = lead[:, f] + v_lead[:, f] * (k * h)
            gap = np.maximum(x_lead - s - lengths, 1e-2)
            dv = v - v_lead[:, f]
            s_star = np.maximum(arr["s0"] + v * arr["T"] + v * dv / (2 * sqrt_ab), 0.0)
            acc = arr["a"] * (1.0 - (v / arr["v0"]) ** arr["delta"] - (s_star / gap) ** 2)
            v_new = np.maximum(v + acc * h, 0.0)
            s_new = s + v_new * h
            v = np.where(nxt, v_new, v)
            s = np.where(nxt, s_new, s)
    return sq_err / np.maximum(count, 1)


def calibrate_idm(
    corpus: Iterable[tuple[Scenario, RoadMap]],
    grid: Sequence[IdmParams],
    min_frames: int = 30,
    max_pairs: int | None = 2000,
    seed: int = 0,
) -> CalibrationResult:
    """Grid search for the IDM parameters that best replay observed followers.

    Each follower is re-simulated from its observed initial state behind its
    leader's observed trajectory; the score is the speed MSE averaged over
    pairs. Ties resolve to the lowest grid index.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty parameter grid")
    pairs: list[FollowingPair] = []
    for scenario, rmap in corpus:
        pairs.extend(following_pairs(scenario, rmap, min_frames=min_frames))
    if not pairs:
        raise NoiseSimError("no-pairs", "no car-following pairs found")
    if max_pairs is not None and len(pairs) > max_pairs:
        keep = np.sort(derive_rng(seed, "calibrate_idm").choice(len(pairs), max_pairs, replace=False))
        pairs = [pairs[i] for i in keep]
    per_pair = _replay_errors(pairs, grid)
    errors = per_pair.mean(axis=1)
    idx = int(np.argmin(errors))
    return CalibrationResult(grid[idx], float(errors[idx]), idx, errors)
