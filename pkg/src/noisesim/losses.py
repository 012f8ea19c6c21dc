"""Supervised next-token losses and their gradients with respect to the logits.

Every loss is computed from log-softmax with max subtraction. The batched
kernels take ``(B, C)`` logits and ``(B,)`` targets and return per-row losses
and gradients; the single-vector wrappers are thin views over them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoiseSimError
from .seeding import derive_rng

KINDS = ("ce", "ce_label_smoothing", "focal", "symmetric_ce")
ALIASES = {"ls": "ce_label_smoothing", "sce": "symmetric_ce", "label_smoothing": "ce_label_smoothing"}


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ce"
    epsilon_smooth: float = 0.1
    gamma: float = 2.0
    alpha: float = 1.0
    beta: float = 0.13
    eta: float = 4e-4

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not 0.0 <= self.epsilon_smooth <= 1.0:
            raise ValueError("epsilon_smooth must be in [0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _prepare(logits, target):
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    if logits.ndim != 2 or target.shape != (logits.shape[0],):
        raise ValueError("expected (B, C) logits and (B,) targets")
    C = logits.shape[1]
    if not np.issubdtype(target.dtype, np.integer) or target.size and (target.min() < 0 or target.max() >= C):
        raise NoiseSimError("bad-target", f"targets must be integers in [0, {C})")
    logp = log_softmax(logits)
    rows = np.arange(len(target))
    onehot = np.zeros_like(logits)
    onehot[rows, target] = 1.0
    return logp, np.exp(logp), logp[rows, target], onehot


def ce_batch(logits, target):
    logp, p, logp_t, onehot = _prepare(logits, target)
    return -logp_t, p - onehot


def label_smoothing_batch(logits, target, epsilon_smooth: float = 0.1):
    logp, p, logp_t, onehot = _prepare(logits, target)
    C = logp.shape[1]
    eps = float(epsilon_smooth)
    loss = -(1.0 - eps) * logp_t - (eps / C) * logp.sum(axis=1)
    q = (1.0 - eps) * onehot + eps / C
    return loss, p - q


def focal_batch(logits, target, gamma: float = 2.0):
    logp, p, logp_t, onehot = _prepare(logits, target)
    g = float(gamma)
    one_minus = -np.expm1(logp_t)
    ce = -logp_t
    loss = one_minus**g * ce
    # product-rule term through the modulating factor; vanishes exactly at gamma = 0
    if g == 0.0:
        extra = np.zeros_like(ce)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = g * one_minus ** (g - 1.0) * np.exp(logp_t) * ce
        extra = np.where(one_minus > 0, extra, 0.0)
    return loss, (p - onehot) * (one_minus**g + extra)[:, None]


def symmetric_ce_batch(logits, target, alpha: float = 1.0, beta: float = 0.13, eta: float = 4e-4):
    """alpha * CE + beta * RCE, RCE = -sum_i p_i log(y_i + eta) with one-hot y."""
    logp, p, logp_t, onehot = _prepare(logits, target)
    p_t = np.exp(logp_t)
    hi, lo = np.log1p(eta), np.log(eta)
    rce = -p_t * hi - (1.0 - p_t) * lo
    # dRCE/dz = -(hi - lo) * p_t * (onehot - p)
    rce_grad = (hi - lo) * p_t[:, None] * (p - onehot)
    return alpha * -logp_t + beta * rce, alpha * (p - onehot) + beta * rce_grad


def loss_batch(spec: LossSpec, logits, target):
    if spec.kind == "ce":
        return ce_batch(logits, target)
    if spec.kind == "ce_label_smoothing":
        return label_smoothing_batch(logits, target, spec.epsilon_smooth)
    if spec.kind == "focal":
        return focal_batch(logits, target, spec.gamma)
    return symmetric_ce_batch(logits, target, spec.alpha, spec.beta, spec.eta)


def _single(fn, logits, target, *args):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ValueError("expected a single logit vector")
    if not isinstance(target, (int, np.integer)) or isinstance(target, bool):
        raise NoiseSimError("bad-target", f"target must be an integer, got {target!r}")
    loss, grad = fn(logits[None, :], np.array([int(target)]), *args)
    return float(loss[0]), grad[0]


def loss_ce(logits, target):
    return _single(ce_batch, logits, target)


def loss_label_smoothing(logits, target, epsilon_smooth: float = 0.1):
    return _single(label_smoothing_batch, logits, target, epsilon_smooth)


def loss_focal(logits, target, gamma: float = 2.0):
    return _single(focal_batch, logits, target, gamma)


def loss_symmetric_ce(logits, target, alpha: float = 1.0, beta: float = 0.13, eta: float = 4e-4):
    return _single(symmetric_ce_batch, logits, target, alpha, beta, eta)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def grad_check(kind: str | LossSpec, trials: int = 100, seed: int = 0, size: int = 512, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Each trial draws random logits and a random target, then perturbs every
    logit by ``±step`` in one batched evaluation.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    spec = kind if isinstance(kind, LossSpec) else LossSpec(kind)
    rng = derive_rng(seed, "grad_check", spec.kind)
    worst = 0.0
    eye = np.eye(size) * step
    for _ in range(trials):
        z = rng.normal(0.0, 3.0, size=size)
        t = int(rng.integers(size))
        _, g = loss_batch(spec, z[None], np.array([t]))
        probes = np.concatenate([z + eye, z - eye])
        f, _ = loss_batch(spec, probes, np.full(2 * size, t))
        fd = (f[:size] - f[size:]) / (2 * step)
        worst = max(worst, relative_error(g[0], fd))
    return worst
