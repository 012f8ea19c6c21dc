"""Next-token policy: fixed-size scene context -> logits over the motion vocabulary.

The reference network embeds the last two ego tokens (16 dims each),
concatenates them with 36 numeric features and applies two tanh layers of
width 128 before a linear read-out to ``C`` logits. Parameters live in one
flat float64 vector so the optimiser and checkpoint code stay trivial.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import DT, RoadMap, wrap_angle
from .errors import NoiseSimError
from .seeding import derive_rng

N_NEIGHBORS = 8
NEIGHBOR_FEATURES = 4  # rel x, rel y, rel speed, present
HISTORY_TOKENS = 2
N_NUMERIC = 2 + N_NEIGHBORS * NEIGHBOR_FEATURES + 2

# feature scales keep every input roughly O(1)
SPEED_SCALE = 10.0
HEADING_SCALE = 10.0
REL_X_SCALE = 20.0
REL_Y_SCALE = 5.0
REL_V_SCALE = 5.0
LATERAL_SCALE = 1.8
EDGE_SCALE = 3.6


class PolicyContext(NamedTuple):
    tokens: np.ndarray  # (B, 2) int, oldest first
    features: np.ndarray  # (B, N_NUMERIC)


@dataclass(frozen=True)
class Architecture:
    vocab_size: int
    embed_dim: int = 16
    n_numeric: int = N_NUMERIC
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "tanh"
    history_tokens: int = HISTORY_TOKENS

    @property
    def input_dim(self) -> int:
        return self.history_tokens * self.embed_dim + self.n_numeric

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out = [("embed", (self.vocab_size, self.embed_dim))]
        sizes = (self.input_dim, *self.hidden, self.vocab_size)
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            out.append((f"W{i}", (a, b)))
            out.append((f"b{i}", (b,)))
        return out

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(s) for _, s in self.shapes()))

    def to_json(self) -> dict:
        return {"vocab_size": self.vocab_size, "embed_dim": self.embed_dim, "n_numeric": self.n_numeric,
                "hidden": list(self.hidden), "activation": self.activation,
                "history_tokens": self.history_tokens}

    @classmethod
    def from_json(cls, doc: dict) -> "Architecture":
        return cls(int(doc["vocab_size"]), int(doc["embed_dim"]), int(doc["n_numeric"]),
                   tuple(int(h) for h in doc["hidden"]), doc["activation"], int(doc["history_tokens"]))


@dataclass(frozen=True, eq=False)
class PolicyParameters:
    arch: Architecture
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.size != self.arch.n_params:
            raise NoiseSimError("shape-mismatch", f"theta has {theta.size} entries, architecture needs {self.arch.n_params}")
        object.__setattr__(self, "theta", theta)

    def views(self) -> dict[str, np.ndarray]:
        return unpack(self.arch, self.theta)


def unpack(arch: Architecture, flat: np.ndarray) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for name, shape in arch.shapes():
        n = int(np.prod(shape))
        out[name] = flat[pos:pos + n].reshape(shape)
        pos += n
    return out


def init_parameters(arch: Architecture, seed: int = 0) -> PolicyParameters:
    """Random hidden layers, zero read-out: the initial policy is exactly uniform."""
    rng = derive_rng(seed, "init_parameters")
    theta = np.zeros(arch.n_params)
    v = unpack(arch, theta)
    v["embed"][...] = rng.normal(0.0, 0.5, size=v["embed"].shape)
    n_layers = len(arch.hidden) + 1
    for i in range(n_layers - 1):
        W = v[f"W{i}"]
        W[...] = rng.normal(0.0, 1.0 / np.sqrt(W.shape[0]), size=W.shape)
    return PolicyParameters(arch, theta)


def _check(params: PolicyParameters, ctx: PolicyContext):
    arch = params.arch
    tok = np.asarray(ctx.tokens)
    feat = np.asarray(ctx.features, dtype=float)
    if tok.shape[-1] != arch.history_tokens or feat.shape[-1] != arch.n_numeric:
        raise NoiseSimError("shape-mismatch", f"context {tok.shape}/{feat.shape} does not fit {arch}")
    if tok.size and (tok.min() < 0 or tok.max() >= arch.vocab_size):
        raise NoiseSimError("shape-mismatch", f"token index outside vocabulary of {arch.vocab_size}")
    return tok, feat


def forward(params: PolicyParameters, ctx: PolicyContext):
    """Batched logits plus the activations needed by :func:`backward`."""
    tok, feat = _check(params, ctx)
    tok = tok.reshape(-1, params.arch.history_tokens)
    feat = feat.reshape(-1, params.arch.n_numeric)
    v = params.views()
    emb = v["embed"][tok].reshape(len(tok), -1)
    h = np.concatenate([emb, feat], axis=1)
    acts = [h]
    n_layers = len(params.arch.hidden) + 1
    for i in range(n_layers - 1):
        h = np.tanh(h @ v[f"W{i}"] + v[f"b{i}"])
        acts.append(h)
    logits = h @ v[f"W{n_layers - 1}"] + v[f"b{n_layers - 1}"]
    return logits, (tok, acts)


def backward(params: PolicyParameters, cache, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(dlogits * logits)`` with respect to the flat parameters."""
    tok, acts = cache
    arch = params.arch
    v = params.views()
    grad = np.zeros_like(params.theta)
    g = unpack(arch, grad)
    n_layers = len(arch.hidden) + 1
    delta = np.asarray(dlogits, dtype=float).reshape(len(tok), -1)
    for i in reversed(range(n_layers)):
        a = acts[i]
        g[f"W{i}"][...] = a.T @ delta
        g[f"b{i}"][...] = delta.sum(axis=0)
        dx = delta @ v[f"W{i}"].T
        delta = dx * (1.0 - a**2) if i > 0 else dx
    d_emb = delta[:, : arch.history_tokens * arch.embed_dim].reshape(len(tok), arch.history_tokens, arch.embed_dim)
    np.add.at(g["embed"], tok.reshape(-1), d_emb.reshape(-1, arch.embed_dim))
    return grad


def policy_logits(params: PolicyParameters, ctx: PolicyContext) -> np.ndarray:
    """Logits of length ``C`` (or ``(B, C)`` for a batched context)."""
    logits, _ = forward(params, ctx)
    return logits[0] if np.ndim(ctx.tokens) == 1 else logits


def policy_grad(params: PolicyParameters, ctx: PolicyContext, weights: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(weights * logits)`` with respect to theta."""
    logits, cache = forward(params, ctx)
    return backward(params, cache, np.asarray(weights, dtype=float).reshape(logits.shape))


# ----------------------------------------------------------------- context


def scene_features(pos, prev_pos, heading, present, prev_present, rmap: RoadMap) -> np.ndarray:
    """Numeric context features for every agent of a batch of scenes.

    All inputs share leading shape ``(B, N)``: ``pos``/``prev_pos`` are
    positions at the current and previous token anchor (one token period
    apart), ``present``/``prev_present`` their validity. Returns
    ``(B, N, N_NUMERIC)``; absent neighbour slots are zero with flag 0.
    """
    pos = np.asarray(pos, dtype=float)
    B, N = pos.shape[:2]
    period = 5 * DT
    moved = np.linalg.norm(pos - prev_pos, axis=-1) / period
    speed = np.where(present & prev_present, moved, 0.0)

    out = np.zeros((B, N, N_NUMERIC))
    fb = rmap.project(pos)
    out[..., 0] = speed / SPEED_SCALE
    out[..., 1] = wrap_angle(heading - fb.lane_heading) * HEADING_SCALE
    out[..., -2] = fb.lateral_offset / LATERAL_SCALE
    out[..., -1] = np.clip(fb.edge_distance, -10.0, 10.0) / EDGE_SCALE

    if N > 1:
        rel = pos[:, None, :, :] - pos[:, :, None, :]  # (B, i, j, 2): j relative to i
        dist = np.linalg.norm(rel, axis=-1)
        usable = present[:, None, :] & present[:, :, None] & ~np.eye(N, dtype=bool)[None]
        dist = np.where(usable, dist, np.inf)
        k = min(N_NEIGHBORS, N - 1)
        nb = np.argsort(dist, axis=-1, kind="stable")[..., :k]  # (B, N, k)
        nb_dist = np.take_along_axis(dist, nb, axis=-1)
        nb_ok = np.isfinite(nb_dist)
        nb_rel = np.take_along_axis(rel, nb[..., None], axis=2)  # (B, N, k, 2)
        c, s = np.cos(heading)[..., None], np.sin(heading)[..., None]
        rx = c * nb_rel[..., 0] + s * nb_rel[..., 1]
        ry = -s * nb_rel[..., 0] + c * nb_rel[..., 1]
        nb_speed = np.take_along_axis(np.broadcast_to(speed[:, None, :], (B, N, N)), nb, axis=-1)
        nb_known = np.take_along_axis(np.broadcast_to((present & prev_present)[:, None, :], (B, N, N)), nb, axis=-1)
        rv = np.where(nb_known & (present & prev_present)[..., None], nb_speed - speed[..., None], 0.0)
        block = np.stack([rx / REL_X_SCALE, ry / REL_Y_SCALE, rv / REL_V_SCALE, np.ones_like(rx)], axis=-1)
        block = np.where(nb_ok[..., None], block, 0.0)
        out[..., 2:2 + k * NEIGHBOR_FEATURES] = block.reshape(B, N, -1)
    out[~present] = 0.0
    return out


# -------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: PolicyParameters, vocab_digest: str = "", extra: dict | None = None) -> None:
    """One JSON header line, then the parameters as little-endian float64."""
    header = {"format": "noisesim-policy/1", "architecture": params.arch.to_json(),
              "vocab_sha256": vocab_digest, "n_params": int(params.theta.size)}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    Path(path).write_bytes(blob + params.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[PolicyParameters, dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    arch = Architecture.from_json(header["architecture"])
    theta = np.frombuffer(raw[nl + 1:], dtype="<f8").astype(np.float64)
    if theta.size != header["n_params"]:
        raise NoiseSimError("shape-mismatch", "checkpoint payload does not match its header")
    return PolicyParameters(arch, theta), header
