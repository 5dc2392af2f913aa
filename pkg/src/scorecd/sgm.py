"""Toy score-based generative model on the Ornstein-Uhlenbeck process.

Forward process ``dx = -x/2 dt + dw`` has the kernel
``x_t | x_0 ~ N(alpha(t) x_0, h(t) I)`` with ``alpha = exp(-t/2)`` and
``h = 1 - exp(-t)``. The time-conditioned network takes ``t`` as an extra
last input coordinate.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from ._rng import as_generator
from .dsm import DIVERGENCE_FACTOR, TrainingDiverged, TrainReport
from .scm import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OuSchedule:
    t0: float = 0.01
    T: float = 5.0

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("t0 must be > 0")
        if not self.T >= self.t0:
            raise ValueError("T must be >= t0")


def transition_stats(t):
    """(alpha(t), h(t)) of the OU kernel."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be > 0")
    alpha = np.exp(-0.5 * t)
    h = -np.expm1(-t)
    if alpha.ndim == 0:
        return float(alpha), float(h)
    return alpha, h


def perturb(x0, t, rng):
    rng = as_generator(rng)
    x0 = np.asarray(x0, dtype=float)
    alpha, h = transition_stats(t)
    return alpha * x0 + np.sqrt(h) * rng.standard_normal(x0.shape)


@dataclass
class TimeNet:
    params: nn.MlpParams

    @property
    def d(self) -> int:
        return self.params.d_out

    def __call__(self, x, t):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        tt = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (X.shape[0], 1))
        out = nn.forward(self.params, np.hstack([X, tt]))[0]
        return out[0] if np.ndim(x) == 1 else out

    def save(self, path) -> None:
        self.params.save(path)

    @classmethod
    def load(cls, path) -> "TimeNet":
        return cls(nn.MlpParams.load(path))


def init_timenet(d: int, m: int, L: int, rng) -> TimeNet:
    return TimeNet(nn.init(d + 1, m, L, rng, d_out=d))


def gaussian_score(var: float):
    """Exact score of the OU-diffused N(0, var I): ``-x / (var alpha^2 + h)``."""

    def score(x, t):
        alpha, h = transition_stats(t)
        scale = var * np.asarray(alpha) ** 2 + np.asarray(h)
        x = np.asarray(x, dtype=float)
        if scale.ndim and x.ndim == 2:
            scale = scale[:, None]
        return -x / scale

    return score


def sgm_loss_at(net: TimeNet, x0, t, z):
    """Batch mean of ``||target - s(x_t, t)||^2`` with ``x_t = alpha x0 + sqrt(h) z``."""
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (X0.shape[0],))
    alpha, h = transition_stats(t)
    alpha, h = np.reshape(alpha, (-1, 1)), np.reshape(h, (-1, 1))
    Xt = alpha * X0 + np.sqrt(h) * z
    target = -(Xt - alpha * X0) / h
    s, cache = nn.forward(net.params, np.hstack([Xt, t[:, None]]))
    resid = s - target
    n = X0.shape[0]
    loss = float(np.sum(resid**2)) / n
    grads = nn.backward(net.params, cache, 2.0 * resid / n)
    return loss, grads


def sgm_loss(net: TimeNet, x0, sched: OuSchedule, rng, k_times: int = 4):
    """Monte-Carlo time-integrated DSM loss with uniform time weighting.

    Each point gets ``k_times`` draws of ``t ~ U[t0, T]``; the loss is the
    mean over points and draws.
    """
    if k_times < 1:
        raise ValueError("k_times must be >= 1")
    rng = as_generator(rng)
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    rep = np.repeat(X0, k_times, axis=0)
    t = rng.uniform(sched.t0, sched.T, size=rep.shape[0])
    z = rng.standard_normal(rep.shape)
    return sgm_loss_at(net, rep, t, z)


@dataclass
class SgmConfig:
    eta: float = 5e-3
    epochs: int = 300
    batch_size: int = 16
    k_times: int = 4
    clip_norm: float | None = None
    seed: int = 0
    width: int = 128
    depth: int = 3

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.k_times < 1:
            raise ValueError("epochs, batch_size and k_times must be >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if self.width < 1 or self.depth < 2:
            raise ValueError("width must be >= 1 and depth >= 2")


def _clip(X: np.ndarray, c: float) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    over = norms > c
    if over.any():
        log.info("clipped %d of %d points to norm %g", int(over.sum()), X.shape[0], c)
        X = X.copy()
        X[over] *= (c / norms[over])[:, None]
    return X


def train_sgm(net: TimeNet, data: Dataset, sched: OuSchedule, cfg: SgmConfig, rng=None):
    if data.d != net.d:
        raise ValueError(f"data has {data.d} columns but the network models {net.d}")
    rng = as_generator(cfg.seed if rng is None else rng)
    net = TimeNet(net.params.copy())
    X = data.values if cfg.clip_norm is None else _clip(data.values, cfg.clip_norm)
    n = X.shape[0]
    report = TrainReport()
    reference = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = sgm_loss(net, X[idx], sched, rng, cfg.k_times)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            total += loss * idx.shape[0]
            if cfg.eta:
                for W, g in zip(net.params.weights, grads):
                    W -= cfg.eta * g
        mean_loss = total / n
        if reference is None:
            reference = mean_loss
        elif mean_loss > DIVERGENCE_FACTOR * reference:
            raise TrainingDiverged(epoch, mean_loss)
        report.losses.append(mean_loss)
    report.params = net.params
    return net, report


def reverse_sample(score, sched: OuSchedule, n_steps: int, n_samples: int, rng, d: int | None = None):
    """Euler-Maruyama on the reverse-time SDE from ``T`` down to ``t0``.

    ``score`` is a :class:`TimeNet` or any callable ``score(x, t)``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = as_generator(rng)
    if d is None:
        d = score.d
    dt = (sched.T - sched.t0) / n_steps
    x = rng.standard_normal((n_samples, d))
    for k in range(n_steps):
        t = sched.T - k * dt
        x = x + (0.5 * x + score(x, t)) * dt + np.sqrt(dt) * rng.standard_normal(x.shape)
    return x


def save_samples(samples: np.ndarray, path, sched: OuSchedule, n_steps: int) -> None:
    """Samples as a dataset CSV plus a ``<path>.json`` schedule sidecar."""
    Dataset(samples).to_csv(path)
    side = {"t0": sched.t0, "T": sched.T, "n_steps": n_steps}
    Path(str(path) + ".json").write_text(json.dumps(side, indent=1) + "\n")
