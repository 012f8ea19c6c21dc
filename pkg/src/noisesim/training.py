"""Teacher-forced next-token training with Adam and early stopping.

Samples come from the recorded (possibly corrupted) tracks: at every token
anchor where an agent has two valid history tokens and a valid next token,
the context is built from the observed scene at that anchor. Gaps produce
skipped samples, never imputed ones.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .core import RoadMap, Scenario
from .errors import NoiseSimError
from .losses import LossSpec, loss_batch
from .policy import N_NUMERIC, Architecture, PolicyContext, PolicyParameters, backward, forward, init_parameters, scene_features
from .seeding import derive_rng
from .tokenizer import TokenVocab, encode


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    patience: int = 3
    seed: int = 0
    embed_dim: int = 16
    hidden: tuple[int, ...] = (128, 128)
    max_samples: int | None = None  # deterministic subsample of the train split

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.batch_size > 0):
            raise ValueError("learning_rate and batch_size must be positive")
        if self.epochs < 1 or self.patience < 1:
            raise ValueError("epochs and patience must be >= 1")


class SampleSet(NamedTuple):
    tokens: np.ndarray  # (M, 2)
    features: np.ndarray  # (M, F)
    targets: np.ndarray  # (M,)

    def __len__(self):
        return len(self.targets)

    def take(self, idx) -> "SampleSet":
        return SampleSet(self.tokens[idx], self.features[idx], self.targets[idx])


def scenario_samples(scenario: Scenario, rmap: RoadMap, vocab: TokenVocab) -> SampleSet:
    """All teacher-forcing pairs of one scenario, ordered by anchor then track."""
    P = vocab.frames_per_token
    tracks = scenario.tracks
    if not tracks:
        return _empty()
    tok = np.stack([encode(t, vocab) for t in tracks])  # (N, n_pairs), pair m spans anchors m*P -> (m+1)*P
    st = np.stack([t.states for t in tracks])
    n_pairs = tok.shape[1]
    ms = np.arange(2, n_pairs)
    frames = ms * P
    pos = st[:, frames, :2].transpose(1, 0, 2)  # (A, N, 2)
    prev = st[:, frames - P, :2].transpose(1, 0, 2)
    heading = st[:, frames, 3].T
    present = st[:, frames, 4].T > 0.5
    prev_present = st[:, frames - P, 4].T > 0.5
    feats = scene_features(pos, prev, heading, present, prev_present, rmap)
    hist = np.stack([tok[:, ms - 2], tok[:, ms - 1]], axis=-1).transpose(1, 0, 2)  # (A, N, 2)
    target = tok[:, ms].T  # (A, N)
    ok = (hist >= 0).all(axis=-1) & (target >= 0)
    return SampleSet(hist[ok], feats[ok], target[ok])


def _empty() -> SampleSet:
    return SampleSet(np.zeros((0, 2), dtype=np.int64), np.zeros((0, N_NUMERIC)), np.zeros(0, dtype=np.int64))


def build_samples(items: Iterable[tuple[Scenario, RoadMap]], vocab: TokenVocab) -> SampleSet:
    parts = [scenario_samples(sc, rmap, vocab) for sc, rmap in items]
    parts = [p for p in parts if len(p)]
    if not parts:
        return _empty()
    return SampleSet(*(np.concatenate(col) for col in zip(*parts)))


def mean_loss(params: PolicyParameters, data: SampleSet, spec: LossSpec, chunk: int = 8192) -> float:
    total = 0.0
    for s in range(0, len(data), chunk):
        part = data.take(slice(s, s + chunk))
        logits, _ = forward(params, PolicyContext(part.tokens, part.features))
        total += float(loss_batch(spec, logits, part.targets)[0].sum())
    return total / len(data)


class _Adam:
    def __init__(self, n: int, cfg: TrainConfig):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.cfg = cfg

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad**2
        m_hat = self.m / (1 - c.beta1**self.t)
        v_hat = self.v / (1 - c.beta2**self.t)
        theta -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)


def train_on_samples(train_set: SampleSet, val_set: SampleSet, vocab_size: int, loss_spec: LossSpec,
                     config: TrainConfig = TrainConfig()):
    """Minibatch Adam over prepared samples; returns ``(best params, log)``.

    The log's first record (epoch 0) holds the loss of the very first batch
    before any update and the validation loss at initialisation.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise NoiseSimError("no-samples", f"train={len(train_set)} val={len(val_set)} samples after tokenization")
    if config.max_samples is not None and len(train_set) > config.max_samples:
        keep = np.sort(derive_rng(config.seed, "subsample").permutation(len(train_set))[: config.max_samples])
        train_set = train_set.take(keep)

    arch = Architecture(vocab_size, config.embed_dim, train_set.features.shape[1], tuple(config.hidden))
    params = init_parameters(arch, config.seed)
    theta = params.theta
    adam = _Adam(theta.size, config)
    clock = time.perf_counter()

    def batch_grad(idx):
        part = train_set.take(idx)
        logits, cache = forward(params, PolicyContext(part.tokens, part.features))
        losses, dlogits = loss_batch(loss_spec, logits, part.targets)
        return float(losses.mean()), backward(params, cache, dlogits / len(idx))

    first_order = derive_rng(config.seed, "epoch-order", 1).permutation(len(train_set))
    first_loss, _ = batch_grad(first_order[: config.batch_size])
    log = [{"epoch": 0, "train_loss": first_loss, "val_loss": mean_loss(params, val_set, loss_spec),
            "wall_time": time.perf_counter() - clock}]
    best_val, best_theta, stale = log[0]["val_loss"], theta.copy(), 0

    for epoch in range(1, config.epochs + 1):
        order = derive_rng(config.seed, "epoch-order", epoch).permutation(len(train_set))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grad = batch_grad(idx)
            if not math.isfinite(loss):
                raise NoiseSimError("diverged", f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)
            norm = float(np.linalg.norm(grad))
            if norm > config.clip_norm:
                grad *= config.clip_norm / norm
            adam.step(theta, grad)
        val = mean_loss(params, val_set, loss_spec)
        if not math.isfinite(val):
            raise NoiseSimError("diverged", f"non-finite validation loss at epoch {epoch}")
        log.append({"epoch": epoch, "train_loss": total / len(order), "val_loss": val,
                    "wall_time": time.perf_counter() - clock})
        if val < best_val:
            best_val, best_theta, stale = val, theta.copy(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return PolicyParameters(arch, best_theta), log


def train(corpus: Iterable[tuple[Scenario, RoadMap]], vocab: TokenVocab, loss_spec: LossSpec,
          config: TrainConfig = TrainConfig()):
    """Teacher-forced training on the corpus's train split, early stopping on val."""
    train_items, val_items = [], []
    for sc, rmap in corpus:
        if sc.split == "train":
            train_items.append((sc, rmap))
        elif sc.split == "val":
            val_items.append((sc, rmap))
    return train_on_samples(build_samples(train_items, vocab), build_samples(val_items, vocab), vocab.size,
                            loss_spec, config)
