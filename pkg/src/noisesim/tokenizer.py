"""Motion tokens: agent-frame displacement deltas and a disk-cover vocabulary.

A delta is ``(dx, dy, dheading)`` over one token period, expressed in the
agent frame at the start of the period. Distances between deltas use

    d(a, b) = hypot(a.dx - b.dx, a.dy - b.dy) + w_h * |wrap(a.dh - b.dh)|
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .core import DT, HEADING, MAX_SPEED, AgentState, AgentTrack, Scenario, wrap_angle
from .errors import NoiseSimError
from .seeding import derive_rng

DEFAULT_SIZE = 512
DEFAULT_EPSILON = 0.25


class MotionDelta(NamedTuple):
    dx: float
    dy: float
    dheading: float


def period_frames(token_period: float) -> int:
    k = int(round(token_period / DT))
    if k < 1 or abs(k * DT - token_period) > 1e-9:
        raise ValueError(f"token_period must be a positive multiple of {DT} s, got {token_period}")
    return k


@dataclass(frozen=True, eq=False)
class TokenVocab:
    templates: np.ndarray  # (C, 3)
    epsilon: float = DEFAULT_EPSILON
    w_h: float = 1.0
    token_period: float = 0.5
    seed: int = 0
    doublings: int = 0  # how many times epsilon had to be doubled while building
    requested_epsilon: float | None = None

    def __post_init__(self):
        tpl = np.array(self.templates, dtype=float).reshape(-1, 3)
        if len(tpl) < 1:
            raise ValueError("vocabulary needs at least one template")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        tpl.setflags(write=False)
        object.__setattr__(self, "templates", tpl)

    @property
    def size(self) -> int:
        return len(self.templates)

    @property
    def coverage_radius(self) -> float:
        return self.epsilon

    @property
    def frames_per_token(self) -> int:
        return period_frames(self.token_period)

    def to_json(self) -> dict:
        return {
            "templates": self.templates.tolist(),
            "epsilon": self.epsilon,
            "w_h": self.w_h,
            "token_period": self.token_period,
            "seed": self.seed,
            "doublings": self.doublings,
            "requested_epsilon": self.requested_epsilon,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TokenVocab":
        return cls(np.asarray(doc["templates"], dtype=float), float(doc["epsilon"]), float(doc["w_h"]),
                   float(doc["token_period"]), int(doc.get("seed", 0)), int(doc.get("doublings", 0)),
                   doc.get("requested_epsilon"))

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, TokenVocab):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None


def delta_distance(a, b, w_h: float = 1.0) -> np.ndarray:
    """Broadcasting delta metric between ``(..., 3)`` arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pos = np.hypot(a[..., 0] - b[..., 0], a[..., 1] - b[..., 1])
    return pos + w_h * np.abs(wrap_angle(a[..., 2] - b[..., 2]))


def world_to_delta(xy0, h0, xy1, h1) -> np.ndarray:
    """Displacement from pose 0 to pose 1 in the agent frame of pose 0."""
    xy0, xy1 = np.asarray(xy0, dtype=float), np.asarray(xy1, dtype=float)
    h0 = np.asarray(h0, dtype=float)
    d = xy1 - xy0
    c, s = np.cos(h0), np.sin(h0)
    dx = c * d[..., 0] + s * d[..., 1]
    dy = -s * d[..., 0] + c * d[..., 1]
    return np.stack([dx, dy, wrap_angle(np.asarray(h1) - h0)], axis=-1)


def track_deltas(track: AgentTrack, frames_per_token: int, offset: int = 0):
    """Deltas between consecutive anchors ``offset, offset+P, ...``.

    Returns ``(deltas, ok, anchors)`` where ``ok`` marks pairs whose two
    anchors are valid and whose displacement respects the speed bound.
    """
    anchors = np.arange(offset, track.states.shape[0], frames_per_token)
    st = track.states[anchors]
    valid = st[:, 4] > 0.5
    deltas = world_to_delta(st[:-1, :2], st[:-1, HEADING], st[1:, :2], st[1:, HEADING])
    bound = MAX_SPEED * frames_per_token * DT
    ok = valid[:-1] & valid[1:] & (np.hypot(deltas[:, 0], deltas[:, 1]) <= bound)
    return deltas, ok, anchors


def _scenarios(corpus) -> Iterable[Scenario]:
    for item in corpus:
        yield item[0] if isinstance(item, tuple) else item


def extract_deltas(corpus, token_period: float = 0.5) -> np.ndarray:
    """All valid anchor-pair deltas of every track in ``corpus`` as an ``(M, 3)`` array."""
    k = period_frames(token_period)
    out = []
    for sc in _scenarios(corpus):
        for t in sc.tracks:
            d, ok, _ = track_deltas(t, k)
            out.append(d[ok])
    if not out:
        return np.zeros((0, 3))
    return np.concatenate(out)


def _greedy_cover(deltas: np.ndarray, order: np.ndarray, eps: float, w_h: float, limit: int):
    covered = np.zeros(len(deltas), dtype=bool)
    chosen = []
    cursor = 0
    n = len(order)
    while True:
        # next delta in shuffled order not yet within eps of an accepted template
        rest = covered[order[cursor:]]
        if rest.all():
            return chosen, True
        cursor += int(np.argmin(rest))
        idx = order[cursor]
        chosen.append(idx)
        if len(chosen) > limit:
            return chosen, False
        covered |= delta_distance(deltas, deltas[idx], w_h) <= eps
        cursor += 1
        if cursor >= n:
            return chosen, bool(covered.all())


def build_vocab(deltas, size: int = DEFAULT_SIZE, epsilon: float = DEFAULT_EPSILON, seed: int = 0,
                w_h: float = 1.0, token_period: float = 0.5) -> TokenVocab:
    """Disk-cover vocabulary over ``deltas`` (k-disks style).

    Deltas are visited in a seeded random order; each one farther than
    ``epsilon`` from every accepted template becomes a template. If the cover
    needs more than ``size`` templates, epsilon doubles and the scan restarts.
    Leftover slots are filled by farthest-point sampling; filling stops early
    if every delta already coincides with a template.
    """
    deltas = np.asarray(deltas, dtype=float).reshape(-1, 3)
    if len(deltas) == 0:
        raise NoiseSimError("no-deltas", "cannot build a vocabulary from zero deltas")
    if size < 1:
        raise ValueError("size must be >= 1")
    order = derive_rng(seed, "build_vocab").permutation(len(deltas))
    eps = float(epsilon)
    doublings = 0
    while True:
        chosen, complete = _greedy_cover(deltas, order, eps, w_h, size)
        if complete and len(chosen) <= size:
            break
        eps *= 2.0
        doublings += 1
    templates = [deltas[i] for i in chosen]
    nearest = np.min(np.stack([delta_distance(deltas, t, w_h) for t in templates]), axis=0)
    while len(templates) < size:
        far = int(np.argmax(nearest))
        if nearest[far] <= 0.0:
            break
        templates.append(deltas[far])
        nearest = np.minimum(nearest, delta_distance(deltas, deltas[far], w_h))
    return TokenVocab(np.array(templates), eps, w_h, token_period, seed, doublings, float(epsilon))


def nearest_token(deltas, vocab: TokenVocab, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Index of (and distance to) the nearest template; ties go to the lowest index."""
    deltas = np.asarray(deltas, dtype=float).reshape(-1, 3)
    idx = np.empty(len(deltas), dtype=np.int64)
    dist = np.empty(len(deltas))
    tpl = vocab.templates
    for s in range(0, len(deltas), chunk):
        block = delta_distance(deltas[s:s + chunk, None, :], tpl[None, :, :], vocab.w_h)
        idx[s:s + chunk] = np.argmin(block, axis=1)
        dist[s:s + chunk] = block[np.arange(len(block)), idx[s:s + chunk]]
    return idx, dist


def encode(track: AgentTrack, vocab: TokenVocab, offset: int = 0) -> np.ndarray:
    """Token per anchor pair; ``-1`` where the pair spans an invalid frame."""
    d, ok, _ = track_deltas(track, vocab.frames_per_token, offset)
    tokens = np.full(len(d), -1, dtype=np.int64)
    if ok.any():
        tokens[ok] = nearest_token(d[ok], vocab)[0]
    return tokens


def advance(xy, heading, delta, frames: int):
    """Apply agent-frame ``delta`` to poses and interpolate ``frames`` sub-steps.

    Returns ``(xy_steps, heading_steps)`` of shape ``(..., frames, 2)`` and
    ``(..., frames)``; the last entry is the pose at the end of the period.
    """
    xy = np.asarray(xy, dtype=float)
    heading = np.asarray(heading, dtype=float)
    delta = np.asarray(delta, dtype=float)
    c, s = np.cos(heading), np.sin(heading)
    world = np.stack([c * delta[..., 0] - s * delta[..., 1], s * delta[..., 0] + c * delta[..., 1]], axis=-1)
    frac = np.arange(1, frames + 1) / frames
    xy_steps = xy[..., None, :] + frac[:, None] * world[..., None, :]
    dh = wrap_angle(delta[..., 2])
    h_steps = wrap_angle(heading[..., None] + frac * dh[..., None])
    # the period end carries the exactly composed heading
    h_steps[..., -1] = wrap_angle(heading + delta[..., 2])
    return xy_steps, h_steps


def decode(start_state: AgentState, tokens, vocab: TokenVocab) -> np.ndarray:
    """States ``(1 + P * len(tokens), 5)`` at 10 Hz starting from ``start_state``."""
    if not start_state.valid:
        raise ValueError("start state must be valid")
    k = vocab.frames_per_token
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    out = np.zeros((1 + k * len(tokens), 5))
    out[0] = [start_state.x, start_state.y, start_state.z, start_state.heading, 1.0]
    xy = np.array([start_state.x, start_state.y])
    h = float(start_state.heading)
    for j, tok in enumerate(tokens):
        xy_steps, h_steps = advance(xy, h, vocab.templates[tok], k)
        rows = slice(1 + j * k, 1 + (j + 1) * k)
        out[rows, :2] = xy_steps
        out[rows, 2] = start_state.z
        out[rows, 3] = h_steps
        out[rows, 4] = 1.0
        xy, h = xy_steps[-1], float(h_steps[-1])
    return out
