"""Track-level postprocessing filters. Filters drop whole tracks and never edit coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RoadMap, Scenario


@dataclass(frozen=True)
class CleaningConfig:
    max_lateral_per_station: tuple[float, float] = (7.2, 15.0)  # (lateral m, longitudinal m)
    min_track_frames: int = 10

    def __post_init__(self):
        lat, lon = self.max_lateral_per_station
        if not (lat > 0 and lon > 0 and self.min_track_frames > 0):
            raise ValueError("cleaning thresholds must be positive")


def _keep(scenario: Scenario, mask) -> Scenario:
    return scenario.replace(tracks=tuple(t for t, k in zip(scenario.tracks, mask) if k))


def filter_offroad(scenario: Scenario, rmap: RoadMap) -> Scenario:
    """Drop tracks whose every valid state is off-road; grazing tracks stay."""
    keep = []
    for t in scenario.tracks:
        valid = t.valid
        if not valid.any():
            keep.append(False)
            continue
        offroad = rmap.project(t.xy[valid]).offroad
        keep.append(not bool(offroad.all()))
    return _keep(scenario, keep)


def _reference_frame(rmap: RoadMap, xy: np.ndarray):
    """(station, lateral) against the first centerline, continuous across lanes."""
    ix = rmap._centerline_index[0]
    proj = ix.project(xy)
    return proj.station, proj.lateral


def steep_lateral(track, rmap: RoadMap, config: CleaningConfig) -> bool:
    max_lat, window = config.max_lateral_per_station
    valid = track.valid
    if valid.sum() < 2:
        return False
    station, lateral = _reference_frame(rmap, track.xy[valid])
    travel = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(station)))])
    within = np.abs(travel[:, None] - travel[None, :]) <= window
    sweep = np.abs(lateral[:, None] - lateral[None, :])
    return bool(np.any(within & (sweep > max_lat)))


def filter_steep_lateral(scenario: Scenario, rmap: RoadMap, config: CleaningConfig = CleaningConfig()) -> Scenario:
    """Drop tracks that sweep more than the lateral threshold within the longitudinal window."""
    return _keep(scenario, [not steep_lateral(t, rmap, config) for t in scenario.tracks])


def filter_short(scenario: Scenario, config: CleaningConfig = CleaningConfig()) -> Scenario:
    return _keep(scenario, [int(t.valid.sum()) >= config.min_track_frames for t in scenario.tracks])


def resolve_overlaps(scenario: Scenario) -> Scenario:
    """Scan pairs in listing order and drop the later track of any overlapping pair.

    Two tracks overlap when, at some frame where both are valid, their centers
    are closer than the longer of the two vehicle lengths.
    """
    tracks = scenario.tracks
    n = len(tracks)
    if n < 2:
        return scenario
    xy = np.stack([t.xy for t in tracks])
    valid = np.stack([t.valid for t in tracks])
    lengths = np.array([t.length for t in tracks])
    removed = np.zeros(n, dtype=bool)
    for i in range(n):
        if removed[i]:
            continue
        for j in range(i + 1, n):
            if removed[j]:
                continue
            shared = valid[i] & valid[j]
            if not shared.any():
                continue
            d = np.linalg.norm(xy[i, shared] - xy[j, shared], axis=1)
            if np.any(d < max(lengths[i], lengths[j])):
                removed[j] = True
    return _keep(scenario, ~removed)


def clean(scenario: Scenario, rmap: RoadMap, config: CleaningConfig = CleaningConfig()) -> Scenario:
    """Off-road, steep-lateral, short, then overlap filtering; marks the result ``cleaned``."""
    out = filter_offroad(scenario, rmap)
    out = filter_steep_lateral(out, rmap, config)
    out = filter_short(out, config)
    out = resolve_overlaps(out)
    return out.replace(provenance="cleaned")
