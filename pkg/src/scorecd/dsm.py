"""Denoising score matching: per-sample loss, SGD training, oracle ESM error."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from ._rng import as_generator
from .scm import Dataset, Scm, analytic_score

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss:.6g})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class DsmConfig:
    sigma: float = 0.1
    eta: float = 1e-3
    epochs: int = 200
    resample_noise: bool = True
    eval_every: int = 0
    seed: int = 0
    batch_size: int = 1
    width: int = 128
    depth: int = 3

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.width < 1 or self.depth < 2:
            raise ValueError("width must be >= 1 and depth >= 2")


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    esm: dict = field(default_factory=dict)  # epoch -> ESM error; epoch 0 is the initial net
    params: nn.MlpParams | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "dsm_loss", "esm_error"])
            if 0 in self.esm:
                w.writerow([0, "", repr(self.esm[0])])
            for e, loss in enumerate(self.losses, start=1):
                w.writerow([e, repr(loss), repr(self.esm[e]) if e in self.esm else ""])


def dsm_sample_loss(p: nn.MlpParams, x, eps, sigma: float):
    """``1/2 ||s(x + eps) + eps / sigma^2||^2`` and its weight gradients.

    With a batch of points the loss and gradients are batch means.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    E = np.atleast_2d(np.asarray(eps, dtype=float))
    s, cache = nn.forward(p, X + E)
    resid = s + E / sigma**2
    n = X.shape[0]
    loss = 0.5 * float(np.sum(resid**2)) / n
    grads = nn.backward(p, cache, resid / n)
    return loss, grads


def esm_error(score, scm: Scm, eval_points) -> float:
    """Monte-Carlo ``E[1/2 ||s(x) - grad log p(x)||^2]`` using the analytic score.

    ``score`` is either trained params or any callable mapping points to scores.
    """
    X = eval_points.values if isinstance(eval_points, Dataset) else np.atleast_2d(eval_points)
    if isinstance(score, nn.MlpParams):
        est = nn.forward(score, X)[0]
    else:
        est = np.asarray(score(X))
    truth = analytic_score(scm, X)
    return float(np.mean(0.5 * np.sum((est - truth) ** 2, axis=1)))


def sgd_train(p: nn.MlpParams, data: Dataset, cfg: DsmConfig, rng=None, scm: Scm | None = None,
              eval_points=None):
    """Minimise the empirical DSM objective with plain (minibatch) SGD.

    ESM checkpoints are recorded every ``cfg.eval_every`` epochs when an SCM
    is given; ``eval_points`` defaults to the training data.
    """
    if data.d != p.dims[0]:
        raise ValueError(f"data has {data.d} columns but the network expects {p.dims[0]}")
    rng = as_generator(cfg.seed if rng is None else rng)
    p = p.copy()
    X = data.values
    n, d = X.shape
    sigma, eta, B = cfg.sigma, cfg.eta, cfg.batch_size
    report = TrainReport()
    evaluate = scm is not None and cfg.eval_every > 0
    if evaluate:
        eval_points = data if eval_points is None else eval_points
        report.esm[0] = esm_error(p, scm, eval_points)
    fixed_eps = None if cfg.resample_noise else rng.standard_normal((n, d)) * sigma
    reference = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, B):
            idx = order[start:start + B]
            if fixed_eps is None:
                eps = rng.standard_normal((idx.shape[0], d)) * sigma
            else:
                eps = fixed_eps[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = dsm_sample_loss(p, X[idx], eps, sigma)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            total += loss * idx.shape[0]
            if eta:
                for W, g in zip(p.weights, grads):
                    W -= eta * g
        mean_loss = total / n
        if reference is None:
            reference = mean_loss
        elif not np.isfinite(mean_loss) or mean_loss > DIVERGENCE_FACTOR * reference:
            raise TrainingDiverged(epoch, mean_loss)
        report.losses.append(mean_loss)
        if evaluate and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            report.esm[epoch] = esm_error(p, scm, eval_points)
    report.params = p
    return p, report
