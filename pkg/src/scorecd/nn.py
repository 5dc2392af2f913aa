"""Bias-free deep ReLU network ``s(x) = W_L phi(W_{L-1} ... phi(W_1 x))``.

All functions accept a single point of shape ``(d_in,)`` or a batch of shape
``(n, d_in)``; batches are rows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import as_generator

CHECKPOINT_FORMAT = "scorecd-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    weights: list

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        if len(self.weights) < 2:
            raise ValueError("need at least two layers")
        m = self.weights[0].shape[0]
        d_in = self.weights[0].shape[1]
        for l, W in enumerate(self.weights[1:-1], start=2):
            if W.shape != (m, m):
                raise ValueError(f"W_{l} has shape {W.shape}, expected {(m, m)}")
        if self.weights[-1].ndim != 2 or self.weights[-1].shape[1] != m:
            raise ValueError(f"W_L must have {m} columns")
        if d_in < 1 or m < 1:
            raise ValueError("dimensions must be >= 1")
        if not all(np.all(np.isfinite(W)) for W in self.weights):
            raise ValueError("non-finite weights")

    @property
    def dims(self) -> tuple:
        """(d_in, m, L)"""
        return self.weights[0].shape[1], self.weights[0].shape[0], len(self.weights)

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights])

    def to_dict(self) -> dict:
        d_in, m, L = self.dims
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dims": [d_in, m, L, self.d_out],
            "weights": [W.tolist() for W in self.weights],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpParams":
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a recognised checkpoint (format/version mismatch)")
        d_in, m, L, d_out = doc["dims"]
        weights = [np.asarray(W, dtype=float) for W in doc["weights"]]
        expected = [(m, d_in)] + [(m, m)] * (L - 2) + [(d_out, m)]
        if [W.shape for W in weights] != expected:
            raise ValueError(f"checkpoint weight shapes {[W.shape for W in weights]} do not match dims")
        return cls(weights)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "MlpParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ForwardCache:
    inputs: list  # s_0 .. s_{L-1}, each (n, width)
    preacts: list  # W_l s_{l-1} for l = 1 .. L-1
    masks: list  # D_l, True where the preactivation is >= 0
    single: bool


def init(d_in: int, m: int, L: int, rng, d_out: int | None = None) -> MlpParams:
    """Gaussian init: hidden layers N(0, 2/m), output layer N(0, 1/d_out)."""
    d_out = d_in if d_out is None else d_out
    if L < 2 or m < 1 or d_in < 1 or d_out < 1:
        raise ValueError(f"invalid dims d_in={d_in}, m={m}, L={L}, d_out={d_out}")
    rng = as_generator(rng)
    std = np.sqrt(2.0 / m)
    weights = [rng.standard_normal((m, d_in)) * std]
    weights += [rng.standard_normal((m, m)) * std for _ in range(L - 2)]
    weights.append(rng.standard_normal((d_out, m)) * np.sqrt(1.0 / d_out))
    return MlpParams(weights)


def forward(p: MlpParams, x):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    S = np.atleast_2d(X)
    inputs, preacts, masks = [S], [], []
    for W in p.weights[:-1]:
        pre = S @ W.T
        mask = pre >= 0
        S = np.where(mask, pre, 0.0)
        preacts.append(pre)
        masks.append(mask)
        inputs.append(S)
    y = S @ p.weights[-1].T
    cache = ForwardCache(inputs, preacts, masks, single)
    return (y[0] if single else y), cache


def _reverse(p: MlpParams, cache: ForwardCache, G: np.ndarray, want_weights=True):
    """Back-propagate output cotangents ``G`` (n, d_out). Returns (weight grads, input grads)."""
    L = len(p.weights)
    grads = [None] * L
    if want_weights:
        grads[-1] = G.T @ cache.inputs[-1]
    G = G @ p.weights[-1]
    for l in range(L - 2, -1, -1):
        G = G * cache.masks[l]
        if want_weights:
            grads[l] = G.T @ cache.inputs[l]
        G = G @ p.weights[l]
    return grads, G


def backward(p: MlpParams, cache: ForwardCache, grad_y) -> list:
    """Gradients of ``<grad_y, forward(p, x)>`` w.r.t. each weight matrix (summed over the batch)."""
    G = np.atleast_2d(np.asarray(grad_y, dtype=float))
    grads, _ = _reverse(p, cache, G)
    return grads


def input_grad(p: MlpParams, cache: ForwardCache, grad_y) -> np.ndarray:
    """Gradient of ``<grad_y, forward(p, x)>`` w.r.t. the input."""
    G = np.atleast_2d(np.asarray(grad_y, dtype=float))
    _, gx = _reverse(p, cache, G, want_weights=False)
    return gx[0] if cache.single else gx


def input_jacobian(p: MlpParams, cache: ForwardCache) -> np.ndarray:
    """Exact Jacobian ``W_L D_{L-1} W_{L-1} ... D_1 W_1`` of the active linear region."""
    W1 = p.weights[0]
    M = cache.masks[0][:, :, None] * W1[None]
    for l in range(1, len(p.weights) - 1):
        M = cache.masks[l][:, :, None] * np.matmul(p.weights[l], M)
    J = np.matmul(p.weights[-1], M)
    return J[0] if cache.single else J


def jacobian_rows(p: MlpParams, cache: ForwardCache, rows) -> np.ndarray:
    """Selected Jacobian rows, one reverse pass per row; shape (n, len(rows), d_in)."""
    n = cache.inputs[0].shape[0]
    out = np.empty((n, len(rows), p.dims[0]))
    for c, k in enumerate(rows):
        G = np.broadcast_to(p.weights[-1][k], (n, p.weights[-1].shape[1]))
        for l in range(len(p.weights) - 2, -1, -1):
            G = (G * cache.masks[l]) @ p.weights[l]
        out[:, c, :] = G
    return out[0] if cache.single else out


def jacobian_diag(p: MlpParams, cache: ForwardCache) -> np.ndarray:
    """``d s_k / d x_k`` for k < min(d_in, d_out), without forming the full Jacobian."""
    k = min(p.dims[0], p.d_out)
    n = cache.inputs[0].shape[0]
    out = np.empty((n, k))
    for j in range(k):
        out[:, j] = jacobian_rows(p, _as_batch(cache), [j])[:, 0, j]
    return out[0] if cache.single else out


def _as_batch(cache: ForwardCache) -> ForwardCache:
    if not cache.single:
        return cache
    return ForwardCache(cache.inputs, cache.preacts, cache.masks, False)
