"""Likelihood-style realism scores and minADE for simulated futures.

Each component feature is histogrammed over the pooled rollouts of a
scenario; the score is the geometric-mean probability of the ground-truth
feature values under that smoothed histogram. Composites average their
components, and realism averages the three composites.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import DT, HISTORY_FRAMES, RoadMap, Scenario, wrap_angle
from .errors import NoiseSimError
from .rollout import RolloutBatch, rollout_batch
from .seeding import derive_seed


class HistogramSpec(NamedTuple):
    lo: float
    hi: float
    bins: int


DEFAULT_HISTOGRAMS = {
    "speed": HistogramSpec(0.0, 50.0, 50),
    "accel": HistogramSpec(0.0, 10.0, 40),
    "angular_speed": HistogramSpec(-1.0, 1.0, 40),
    "nearest_distance": HistogramSpec(0.0, 100.0, 50),
    "collision": HistogramSpec(0.0, 1.0, 2),
    "edge_distance": HistogramSpec(-10.0, 10.0, 40),
    "offroad": HistogramSpec(0.0, 1.0, 2),
}

COMPOSITES = {
    "kinematic": ("speed", "accel", "angular_speed"),
    "interactive": ("nearest_distance", "collision"),
    "map_based": ("edge_distance", "offroad"),
}


@dataclass(frozen=True)
class MetricsConfig:
    k_rollouts: int = 32
    temperature: float = 1.0
    smoothing: float = 0.1
    histograms: dict = field(default_factory=lambda: dict(DEFAULT_HISTOGRAMS))

    def __post_init__(self):
        hist = {k: HistogramSpec(*v) for k, v in self.histograms.items()}
        for name, h in hist.items():
            if h.bins < 2 or not h.hi > h.lo:
                raise ValueError(f"histogram {name!r} needs >= 2 bins and hi > lo")
        missing = {c for comp in COMPOSITES.values() for c in comp} - set(hist)
        if missing:
            raise ValueError(f"missing histogram specs: {sorted(missing)}")
        if not self.smoothing > 0 or self.k_rollouts < 1:
            raise ValueError("smoothing must be > 0 and k_rollouts >= 1")
        object.__setattr__(self, "histograms", hist)


def _bin(values: np.ndarray, spec: HistogramSpec) -> np.ndarray:
    lo, hi, bins = spec
    idx = np.floor((np.asarray(values, dtype=float) - lo) / (hi - lo) * bins)
    return np.clip(idx, 0, bins - 1).astype(np.int64)


def histogram_likelihood(sim_values, gt_values, spec: HistogramSpec, smoothing: float = 0.1) -> float:
    """exp(mean log p(gt)) under the Laplace-smoothed histogram of ``sim_values``."""
    sim = np.asarray(sim_values, dtype=float).reshape(-1)
    gt = np.asarray(gt_values, dtype=float).reshape(-1)
    if sim.size == 0:
        raise ValueError("sim_values must be non-empty")
    if gt.size == 0:
        raise NoiseSimError("no-ground-truth", "no ground-truth values to score")
    spec = HistogramSpec(*spec)
    counts = np.bincount(_bin(sim, spec), minlength=spec.bins)
    pmf = (counts + smoothing) / (sim.size + smoothing * spec.bins)
    return float(np.exp(np.mean(np.log(pmf[_bin(gt, spec)]))))


def _velocity(xy: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Central differences where both neighbours are valid, one-sided otherwise."""
    n_frames = xy.shape[-2]
    vel = np.full(xy.shape, np.nan)
    prev_ok = np.zeros_like(valid)
    next_ok = np.zeros_like(valid)
    prev_ok[..., 1:] = valid[..., 1:] & valid[..., :-1]
    next_ok[..., :-1] = valid[..., :-1] & valid[..., 1:]
    fwd = np.full(xy.shape, np.nan)
    bwd = np.full(xy.shape, np.nan)
    fwd[..., :-1, :] = (xy[..., 1:, :] - xy[..., :-1, :]) / DT
    bwd[..., 1:, :] = fwd[..., :-1, :]
    central = np.full(xy.shape, np.nan)
    if n_frames > 2:
        central[..., 1:-1, :] = (xy[..., 2:, :] - xy[..., :-2, :]) / (2 * DT)
    both = prev_ok & next_ok
    vel = np.where(both[..., None], central, np.where(next_ok[..., None], fwd, np.where(prev_ok[..., None], bwd, vel)))
    return vel


def state_features(states: np.ndarray, lengths: np.ndarray, rmap: RoadMap) -> dict[str, np.ndarray]:
    """Per-agent-per-future-frame features from ``(N, 91, 5)`` states; NaN marks excluded entries."""
    xy = states[..., :2]
    valid = states[..., 4] > 0.5
    heading = states[..., 3]
    vel = _velocity(xy, valid)
    speed = np.linalg.norm(vel, axis=-1)
    acc_vec = _velocity(vel, valid & np.isfinite(speed))
    accel = np.linalg.norm(acc_vec, axis=-1)
    ang = np.full(heading.shape, np.nan)
    ok = valid[:, 1:] & valid[:, :-1]
    ang[:, 1:] = np.where(ok, wrap_angle(heading[:, 1:] - heading[:, :-1]) / DT, np.nan)

    fut = slice(HISTORY_FRAMES, None)
    fxy, fvalid = xy[:, fut], valid[:, fut]
    n = len(states)
    d = np.linalg.norm(fxy[:, None] - fxy[None, :], axis=-1)  # (N, N, F)
    pair_ok = fvalid[:, None] & fvalid[None, :] & ~np.eye(n, dtype=bool)[..., None]
    d = np.where(pair_ok, d, np.inf)
    nearest = d.min(axis=1) if n > 1 else np.full(fxy.shape[:2], np.inf)
    limit = np.maximum(lengths[:, None], lengths[None, :])[..., None]
    collision = np.any(d < limit, axis=1).astype(float)

    fb = rmap.project(fxy)
    out = {
        "speed": speed[:, fut],
        "accel": accel[:, fut],
        "angular_speed": ang[:, fut],
        "nearest_distance": np.where(np.isfinite(nearest), nearest, np.nan),
        "collision": collision,
        "edge_distance": fb.edge_distance.astype(float),
        "offroad": fb.offroad.astype(float),
    }
    for k, v in out.items():
        out[k] = np.where(fvalid, v, np.nan)
    return out


def component_features(scenario: Scenario, rmap: RoadMap) -> dict[str, np.ndarray]:
    """Flat arrays of valid future-frame feature values, keyed by component."""
    if not scenario.tracks:
        return {k: np.zeros(0) for k in DEFAULT_HISTOGRAMS}
    states = np.stack([t.states for t in scenario.tracks])
    lengths = np.array([t.length for t in scenario.tracks])
    feats = state_features(states, lengths, rmap)
    return {k: v[np.isfinite(v)] for k, v in feats.items()}


def _ade_batch(states: np.ndarray, ids: np.ndarray, gt: Scenario) -> np.ndarray:
    """Per-rollout ADE over paired ids and frames valid in both."""
    gt_ids = {t.agent_id: t for t in gt.tracks}
    rows = [i for i, a in enumerate(ids) if int(a) in gt_ids]
    if not rows:
        raise NoiseSimError("no-overlap", f"{gt.scenario_id}: rollouts share no agent ids with ground truth")
    g = np.stack([gt_ids[int(ids[i])].states[HISTORY_FRAMES:] for i in rows])  # (M, F, 5)
    s = states[:, rows, HISTORY_FRAMES:]  # (K, M, F, 5)
    mask = (g[None, ..., 4] > 0.5) & (s[..., 4] > 0.5)
    if not mask.any(axis=(1, 2)).all():
        raise NoiseSimError("no-overlap", f"{gt.scenario_id}: no common valid future frames")
    err = np.linalg.norm(s[..., :2] - g[None, ..., :2], axis=-1)
    return np.where(mask, err, 0.0).sum(axis=(1, 2)) / mask.sum(axis=(1, 2))


def min_ade(rollouts: Sequence[Scenario] | RolloutBatch, gt: Scenario) -> float:
    """Min over rollouts of the mean displacement over (agents, valid future frames)."""
    if isinstance(rollouts, RolloutBatch):
        return float(_ade_batch(rollouts.states, rollouts.agent_ids, gt).min())
    best = math.inf
    for sc in rollouts:
        ids = np.array(sc.agent_ids)
        states = np.stack([t.states for t in sc.tracks])[None] if sc.tracks else np.zeros((1, 0, 91, 5))
        best = min(best, float(_ade_batch(states, ids, gt)[0]))
    if not math.isfinite(best):
        raise NoiseSimError("no-overlap", f"{gt.scenario_id}: no rollouts")
    return best


def score_scenario(batch: RolloutBatch, gt: Scenario, rmap: RoadMap, config: MetricsConfig) -> dict:
    gt_feats = component_features(gt, rmap)
    sim = [state_features(batch.states[k], batch.lengths, rmap) for k in range(batch.states.shape[0])]
    components = {}
    for name, spec in config.histograms.items():
        pooled = np.concatenate([f[name][np.isfinite(f[name])] for f in sim])
        g = gt_feats[name]
        if pooled.size == 0 or g.size == 0:
            components[name] = None  # e.g. a lone agent has no nearest neighbour
        else:
            components[name] = histogram_likelihood(pooled, g, spec, config.smoothing)
    row = {"scenario_id": gt.scenario_id}
    for comp, members in COMPOSITES.items():
        vals = [components[m] for m in members if components[m] is not None]
        row[comp] = float(np.mean(vals)) if vals else None
    present = [row[c] for c in COMPOSITES if row[c] is not None]
    row["realism"] = float(np.mean(present)) if present else None
    row["min_ade"] = float(_ade_batch(batch.states, batch.agent_ids, gt).min())
    row["components"] = components
    return row


@dataclass
class MetricsReport:
    policy: str
    seed: int
    per_scenario: list[dict]
    aggregate: dict

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1, allow_nan=False)

    @classmethod
    def from_json(cls, doc: dict) -> "MetricsReport":
        return cls(doc["policy"], int(doc["seed"]), doc["per_scenario"], doc["aggregate"])


def aggregate_rows(rows: list[dict]) -> dict:
    def mean(key, src=None):
        vals = [(r if src is None else r[src])[key] for r in rows]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    out = {k: mean(k) for k in ("realism", "kinematic", "interactive", "map_based", "min_ade")}
    names = sorted({n for r in rows for n in r["components"]})
    out["components"] = {n: mean(n, "components") for n in names}
    out["n_scenarios"] = len(rows)
    return out


def evaluate_scenario(scenario: Scenario, rmap: RoadMap, policy, config: MetricsConfig, seed: int) -> dict:
    try:
        batch = rollout_batch(scenario, rmap, policy, config.k_rollouts, config.temperature,
                              derive_seed(seed, scenario.scenario_id))
        return score_scenario(batch, scenario, rmap, config)
    except NoiseSimError as exc:
        raise NoiseSimError(exc.code, f"{scenario.scenario_id}: {exc}") from exc


def _evaluate_job(args):
    return evaluate_scenario(*args)


def evaluate(items: Iterable[tuple[Scenario, RoadMap]], policy, config: MetricsConfig = MetricsConfig(),
             seed: int = 0, jobs: int = 1) -> MetricsReport:
    """Roll out and score every scenario; the aggregate is a plain mean over scenarios."""
    items = list(items)
    if not items:
        raise NoiseSimError("empty-split", "nothing to evaluate")
    args = [(sc, rmap, policy, config, seed) for sc, rmap in items]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_evaluate_job, args, chunksize=4))
    else:
        rows = [_evaluate_job(a) for a in args]
    return MetricsReport(getattr(policy, "name", type(policy).__name__), int(seed), rows, aggregate_rows(rows))
