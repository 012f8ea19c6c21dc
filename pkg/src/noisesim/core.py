"""Scenario and road-map data model, validation, and road-frame geometry.

A scenario holds up to 32 agent tracks sampled at 10 Hz over 91 frames:
frames 0-10 are the one-second history (frame 10 is the current frame) and
frames 11-90 are the 80-step future. Each track stores its states as a
``(91, 5)`` float array with columns ``x, y, z, heading, valid``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoiseSimError

N_FRAMES = 91
CURRENT_FRAME = 10
HISTORY_FRAMES = CURRENT_FRAME + 1
FUTURE_FRAMES = N_FRAMES - HISTORY_FRAMES
DT = 0.1
MAX_AGENTS = 32
MAX_SPEED = 70.0
MAX_STEP = MAX_SPEED * DT

SPLITS = ("train", "val", "test")
PROVENANCES = ("clean", "corrupted", "cleaned")
POLYLINE_KINDS = ("centerline", "boundary_solid", "boundary_dashed", "road_edge")

X, Y, Z, HEADING, VALID = range(5)


def wrap_angle(angle):
    """Wrap radians into [-pi, pi)."""
    return (np.asarray(angle, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi


class AgentState(NamedTuple):
    x: float
    y: float
    z: float = 0.0
    heading: float = 0.0
    valid: bool = True


def _arrays_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class AgentTrack:
    agent_id: int
    length: float
    width: float
    states: np.ndarray  # (N_FRAMES, 5)

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim != 2 or states.shape[1] != 5:
            raise NoiseSimError("bad-states", f"states must be (frames, 5), got {states.shape}")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "agent_id", int(self.agent_id))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "width", float(self.width))

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.length == other.length
            and self.width == other.width
            and _arrays_equal(self.states, other.states)
        )

    __hash__ = None

    @property
    def valid(self) -> np.ndarray:
        return self.states[:, VALID] > 0.5

    @property
    def xy(self) -> np.ndarray:
        return self.states[:, X:Y + 1]

    @property
    def heading(self) -> np.ndarray:
        return self.states[:, HEADING]

    def state(self, frame: int) -> AgentState:
        s = self.states[frame]
        return AgentState(float(s[X]), float(s[Y]), float(s[Z]), float(s[HEADING]), bool(s[VALID] > 0.5))

    def replace(self, **changes) -> "AgentTrack":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Scenario:
    scenario_id: str
    tracks: tuple[AgentTrack, ...]
    map_id: str
    split: str = "train"
    provenance: str = "clean"

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.scenario_id == other.scenario_id
            and self.map_id == other.map_id
            and self.split == other.split
            and self.provenance == other.provenance
            and len(self.tracks) == len(other.tracks)
            and all(a == b for a, b in zip(self.tracks, other.tracks))
        )

    __hash__ = None

    @property
    def agent_ids(self) -> list[int]:
        return [t.agent_id for t in self.tracks]

    def track(self, agent_id: int) -> AgentTrack:
        for t in self.tracks:
            if t.agent_id == agent_id:
                return t
        raise KeyError(agent_id)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Polyline:
    kind: str
    points: np.ndarray  # (n, 3)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 2 and pts.shape[1] == 2:
            pts = np.column_stack([pts, np.zeros(len(pts))])
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise NoiseSimError("bad-polyline", f"points must be (n, 3), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __eq__(self, other):
        if not isinstance(other, Polyline):
            return NotImplemented
        return self.kind == other.kind and _arrays_equal(self.points, other.points)

    __hash__ = None

    @property
    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


class _Projection(NamedTuple):
    distance: np.ndarray
    lateral: np.ndarray
    station: np.ndarray
    tangent: np.ndarray


class _PolylineIndex:
    """Nearest-segment projection onto a planar polyline.

    Candidate segments come from a KD-tree over the polyline resampled at
    <= 1 m, then the exact perpendicular projection is taken over the hit
    segment and its two neighbours.
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float)[:, :2]
        self.a = pts[:-1]
        seg = pts[1:] - pts[:-1]
        self.seg_len = np.linalg.norm(seg, axis=1)
        safe = np.where(self.seg_len > 0, self.seg_len, 1.0)
        self.dir = seg / safe[:, None]
        self.station0 = np.concatenate([[0.0], np.cumsum(self.seg_len)[:-1]])
        samples, owners = [], []
        for i, (a, length) in enumerate(zip(self.a, self.seg_len)):
            n = max(1, int(math.ceil(length / 1.0)))
            t = np.arange(n) / n
            samples.append(a + np.outer(t * length, self.dir[i]))
            owners.append(np.full(n, i))
        samples.append(pts[-1:])
        owners.append(np.array([len(self.a) - 1]))
        self.owner = np.concatenate(owners)
        self.tree = cKDTree(np.concatenate(samples))

    def project(self, xy: np.ndarray) -> _Projection:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        nseg = len(self.a)
        _, hit = self.tree.query(xy)
        centre = self.owner[hit]
        cand = np.clip(centre[:, None] + np.array([-1, 0, 1]), 0, nseg - 1)  # (P, 3)
        a = self.a[cand]
        d = self.dir[cand]
        rel = xy[:, None, :] - a
        t = np.clip(np.einsum("pkj,pkj->pk", rel, d), 0.0, self.seg_len[cand])
        foot = a + t[..., None] * d
        dist = np.linalg.norm(xy[:, None, :] - foot, axis=2)
        # candidates are in ascending segment order, so argmin keeps the lowest on ties
        k = np.argmin(dist, axis=1)
        rows = np.arange(len(xy))
        best = cand[rows, k]
        dsel = d[rows, k]
        relsel = rel[rows, k]
        lateral = dsel[:, 0] * relsel[:, 1] - dsel[:, 1] * relsel[:, 0]
        station = self.station0[best] + t[rows, k]
        tangent = np.arctan2(dsel[:, 1], dsel[:, 0])
        return _Projection(dist[rows, k], lateral, station, tangent)

    def point_at(self, station: np.ndarray, lateral: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inverse projection: (station, left offset) -> (xy, tangent heading)."""
        station = np.asarray(station, dtype=float)
        idx = np.clip(np.searchsorted(self.station0, station, side="right") - 1, 0, len(self.a) - 1)
        d = self.dir[idx]
        base = self.a[idx] + (station - self.station0[idx])[..., None] * d
        normal = np.stack([-d[..., 1], d[..., 0]], axis=-1)
        xy = base + np.asarray(lateral, dtype=float)[..., None] * normal
        return xy, np.arctan2(d[..., 1], d[..., 0])


class FrameBatch(NamedTuple):
    """Vectorised road-frame coordinates for a batch of points."""

    lane_index: np.ndarray
    lateral_offset: np.ndarray
    station: np.ndarray
    offroad: np.ndarray
    edge_distance: np.ndarray  # signed, positive inside the carriageway
    lane_heading: np.ndarray


class RoadFrame(NamedTuple):
    lane_index: int
    lateral_offset: float
    station: float
    offroad: bool


@dataclass(frozen=True, eq=False)
class RoadMap:
    map_id: str
    polylines: tuple[Polyline, ...]
    nominal_lane_width: float = 3.6

    def __post_init__(self):
        object.__setattr__(self, "polylines", tuple(self.polylines))

    def __eq__(self, other):
        if not isinstance(other, RoadMap):
            return NotImplemented
        return (
            self.map_id == other.map_id
            and self.nominal_lane_width == other.nominal_lane_width
            and len(self.polylines) == len(other.polylines)
            and all(a == b for a, b in zip(self.polylines, other.polylines))
        )

    __hash__ = None

    def of_kind(self, kind: str) -> list[Polyline]:
        return [p for p in self.polylines if p.kind == kind]

    @property
    def centerlines(self) -> list[Polyline]:
        return self.of_kind("centerline")

    @cached_property
    def _centerline_index(self) -> list[_PolylineIndex]:
        return [_PolylineIndex(p.points) for p in self.centerlines]

    @cached_property
    def _edge_index(self):
        edges = self.of_kind("road_edge")
        if len(edges) != 2:
            return None
        idx = [_PolylineIndex(e.points) for e in edges]
        # orientation reference: a centerline point is on-road by construction
        ref = self.centerlines[0].points[:1, :2]
        ref_sign = np.array([np.sign(i.project(ref).lateral[0]) or 1.0 for i in idx])
        return idx, ref_sign

    def project(self, xy) -> FrameBatch:
        """Road-frame coordinates for an ``(..., 2)`` array of points."""
        if not self.centerlines:
            raise NoiseSimError("no-centerlines", f"map {self.map_id!r} has no centerlines")
        xy = np.asarray(xy, dtype=float)
        shape = xy.shape[:-1]
        flat = xy.reshape(-1, 2)
        projs = [ix.project(flat) for ix in self._centerline_index]
        dist = np.stack([p.distance for p in projs])
        lane = np.argmin(dist, axis=0)
        cols = np.arange(flat.shape[0])
        lateral = np.stack([p.lateral for p in projs])[lane, cols]
        station = np.stack([p.station for p in projs])[lane, cols]
        tangent = np.stack([p.tangent for p in projs])[lane, cols]
        edges = self._edge_index
        if edges is None:
            offroad = np.zeros(flat.shape[0], dtype=bool)
            edge_dist = np.full(flat.shape[0], np.inf)
        else:
            idx, ref_sign = edges
            s0 = idx[0].project(flat).lateral * ref_sign[0]
            s1 = idx[1].project(flat).lateral * ref_sign[1]
            offroad = (s0 < 0) | (s1 < 0)
            mag = np.minimum(np.abs(s0), np.abs(s1))
            edge_dist = np.where(offroad, -mag, mag)
        return FrameBatch(
            lane.reshape(shape),
            lateral.reshape(shape),
            station.reshape(shape),
            offroad.reshape(shape),
            edge_dist.reshape(shape),
            tangent.reshape(shape),
        )

    def lane_point(self, lane_index, station, lateral=0.0):
        """xy and tangent heading at ``station`` along a centerline, offset left by ``lateral``."""
        lane_index = np.asarray(lane_index)
        station = np.broadcast_to(np.asarray(station, dtype=float), lane_index.shape)
        lateral = np.broadcast_to(np.asarray(lateral, dtype=float), lane_index.shape)
        xy = np.zeros(lane_index.shape + (2,))
        heading = np.zeros(lane_index.shape)
        for i, ix in enumerate(self._centerline_index):
            m = lane_index == i
            if np.any(m):
                xy[m], heading[m] = ix.point_at(station[m], lateral[m])
        return xy, heading


def road_frame(rmap: RoadMap, point) -> RoadFrame:
    """Lane index, signed lateral offset, station and off-road flag for one point.

    The lane is the nearest centerline by perpendicular distance (lowest index
    on ties); a point is off-road when it lies outside the strip bounded by the
    two road-edge polylines. Points exactly on an edge count as on-road.
    """
    fb = rmap.project(np.asarray(point, dtype=float)[:2])
    return RoadFrame(int(fb.lane_index), float(fb.lateral_offset), float(fb.station), bool(fb.offroad))


def densify_polyline(polyline: Polyline, k: int = 10) -> Polyline:
    """Insert ``k`` evenly spaced linear interpolants between consecutive points."""
    pts = polyline.points
    if len(pts) < 2:
        raise NoiseSimError("degenerate-polyline", "need at least two points")
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return Polyline(polyline.kind, pts.copy())
    t = np.arange(k + 1) / (k + 1)  # 0, 1/(k+1), ..., k/(k+1)
    a, b = pts[:-1], pts[1:]
    body = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    out = np.concatenate([body.reshape(-1, 3), pts[-1:]])
    return Polyline(polyline.kind, out)


@dataclass(frozen=True)
class Violation:
    kind: str
    agent_id: int | None = None
    frame: int | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:  # truthy when valid
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def validate_map(rmap: RoadMap) -> list[Violation]:
    out = []
    if not rmap.centerlines:
        out.append(Violation("map-no-centerline", detail=rmap.map_id))
    n_edges = len(rmap.of_kind("road_edge"))
    if n_edges != 2:
        out.append(Violation("map-road-edges", detail=f"{n_edges} road_edge polylines"))
    for i, p in enumerate(rmap.polylines):
        if p.kind not in POLYLINE_KINDS:
            out.append(Violation("map-polyline-kind", detail=f"polyline {i}: {p.kind!r}"))
        if len(p.points) >= 2 and np.any(np.all(np.diff(p.points, axis=0) == 0, axis=1)):
            out.append(Violation("map-duplicate-point", detail=f"polyline {i}"))
    return out


def validate_scenario(scenario: Scenario, rmap: RoadMap | None = None) -> ValidationReport:
    """Collect every invariant violation in ``scenario`` (and ``rmap`` if given)."""
    v: list[Violation] = []
    if len(scenario.tracks) > MAX_AGENTS:
        v.append(Violation("too-many-tracks", detail=f"{len(scenario.tracks)} > {MAX_AGENTS}"))
    seen = set()
    for t in scenario.tracks:
        if t.agent_id in seen:
            v.append(Violation("duplicate-agent-id", t.agent_id))
        seen.add(t.agent_id)
    if scenario.split not in SPLITS:
        v.append(Violation("split", detail=repr(scenario.split)))
    if scenario.provenance not in PROVENANCES:
        v.append(Violation("provenance", detail=repr(scenario.provenance)))
    if scenario.split == "test" and scenario.provenance != "clean":
        v.append(Violation("test-not-clean", detail=scenario.provenance))
    if rmap is not None:
        if rmap.map_id != scenario.map_id:
            v.append(Violation("map-mismatch", detail=f"{scenario.map_id} vs {rmap.map_id}"))
        v.extend(validate_map(rmap))

    for t in scenario.tracks:
        if not (t.length > 0 and t.width > 0):
            v.append(Violation("dimensions", t.agent_id, detail=f"{t.length}x{t.width}"))
        if t.states.shape[0] != N_FRAMES:
            v.append(Violation("frame-count", t.agent_id, detail=f"{t.states.shape[0]} frames"))
        valid = t.valid
        if not np.any(valid[:HISTORY_FRAMES]):
            v.append(Violation("no-history", t.agent_id))
        vs = t.states[valid]
        frames = np.flatnonzero(valid)
        bad = ~np.all(np.isfinite(vs[:, :4]), axis=1)
        for f in frames[bad]:
            v.append(Violation("non-finite", t.agent_id, int(f)))
        h = vs[:, HEADING]
        out_of_range = ~((h >= -np.pi) & (h < np.pi))
        for f in frames[out_of_range & ~bad]:
            v.append(Violation("heading-range", t.agent_id, int(f)))
        if len(frames) >= 2:
            step = np.linalg.norm(np.diff(vs[:, :2], axis=0), axis=1)
            consecutive = np.diff(frames) == 1
            for i in np.flatnonzero(consecutive & (step > MAX_STEP)):
                v.append(Violation("step-too-large", t.agent_id, int(frames[i + 1]), f"{step[i]:.3f} m"))
    return ValidationReport(v)


def make_track(agent_id: int, xy: Sequence, heading=None, valid=None, length: float = 4.5,
               width: float = 1.8, z=None) -> AgentTrack:
    """Convenience constructor from per-frame arrays (heading defaults to 0)."""
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    states = np.zeros((n, 5))
    states[:, :2] = xy
    states[:, Z] = 0.0 if z is None else z
    states[:, HEADING] = 0.0 if heading is None else heading
    states[:, VALID] = 1.0 if valid is None else np.asarray(valid, dtype=float)
    states[states[:, VALID] < 0.5, :4] = 0.0
    return AgentTrack(agent_id, length, width, states)
