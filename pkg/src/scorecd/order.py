"""Topological ordering by iterative leaf removal, and variance-based pruning.

A node whose score-Jacobian diagonal entry is constant over the data is a
leaf; the smallest sample variance marks the next leaf. Once a node is the
current leaf, its parents are the coordinates its score entry varies with.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from ._rng import as_generator
from .dsm import DsmConfig, sgd_train
from .scm import Dag, Dataset, Scm, analytic_jacobian, analytic_jacobian_diag

ORACLE_FLOOR = 1e-8
FLOOR_FACTOR = 10.0


class InsufficientData(ValueError):
    pass


def variance_stats(jac_diags) -> np.ndarray:
    """Unbiased per-column sample variance.

    Columns are shifted by their first entry before the variance is taken, so
    a constant column gives exactly 0.
    """
    J = np.asarray(jac_diags, dtype=float)
    if J.ndim != 2 or J.shape[0] < 2:
        raise InsufficientData("need at least 2 samples to estimate a variance")
    return np.var(J - J[0], axis=0, ddof=1)


# -- score backends ---------------------------------------------------------


class _OracleFit:
    def __init__(self, scm: Scm, X: np.ndarray, nodes: list):
        self.scm, self.X, self.nodes = scm, X, nodes

    def diag(self) -> np.ndarray:
        return analytic_jacobian_diag(self.scm, self.X, self.nodes)

    def row(self, j: int) -> np.ndarray:
        return analytic_jacobian(self.scm, self.X, self.nodes, rows=[j])[:, 0, :]

    def noise_floor(self, j: int) -> float:
        return ORACLE_FLOOR


class OracleBackend:
    """Analytic score of the model restricted to the remaining nodes."""

    kind = "oracle"

    def __init__(self, scm: Scm):
        self.scm = scm

    def fit(self, data: Dataset, nodes, rng=None) -> _OracleFit:
        if data.d != self.scm.d or list(data.column_labels) != list(range(self.scm.d)):
            raise ValueError("the oracle backend needs the full dataset in node order")
        return _OracleFit(self.scm, data.values, list(nodes))


class _NetFit:
    def __init__(self, params: nn.MlpParams, Z: np.ndarray, nodes: list):
        self.params, self.nodes = params, nodes
        self._pos = {v: k for k, v in enumerate(nodes)}
        _, self._cache = nn.forward(params, Z)
        self._diag = None

    def diag(self) -> np.ndarray:
        if self._diag is None:
            self._diag = nn.jacobian_diag(self.params, self._cache)
        return self._diag

    def row(self, j: int) -> np.ndarray:
        return nn.jacobian_rows(self.params, self._cache, [self._pos[j]])[:, 0, :]

    def noise_floor(self, j: int) -> float:
        # a leaf's own diagonal is constant in truth; its estimated spread is noise
        return float(variance_stats(self.diag()[:, [self._pos[j]]])[0])


class NetBackend:
    """Fresh ReLU network per call, trained by DSM on the remaining columns.

    Columns are standardised before training; leaf constancy is invariant to
    per-coordinate affine rescaling.
    """

    kind = "trained-net"

    def __init__(self, cfg: DsmConfig | None = None, standardize: bool = True, warm_start: bool = False):
        self.cfg = cfg or DsmConfig()
        self.standardize = standardize
        self.warm_start = warm_start
        self._last = None

    def fit(self, data: Dataset, nodes, rng=None) -> _NetFit:
        rng = as_generator(rng)
        nodes = list(nodes)
        sub = data.select(nodes)
        Z = sub.values
        if self.standardize:
            sd = Z.std(axis=0)
            Z = (Z - Z.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        k = len(nodes)
        if self.warm_start and self._last is not None:
            prev, prev_nodes = self._last
            keep = [prev_nodes.index(v) for v in nodes]
            W = [w.copy() for w in prev.weights]
            W[0], W[-1] = W[0][:, keep], W[-1][keep, :]
            p0 = nn.MlpParams(W)
        else:
            p0 = nn.init(k, self.cfg.width, self.cfg.depth, rng)
        params, _ = sgd_train(p0, Dataset(Z, tuple(nodes)), self.cfg, rng)
        self._last = (params, nodes)
        return _NetFit(params, Z, nodes)


# -- ordering ---------------------------------------------------------------


@dataclass
class OrderResult:
    pi: list  # root-first
    v_trace: list  # per iteration: {node: V_j}
    backend_kind: str
    fits: list = field(default_factory=list, repr=False)  # fitted estimators, leaf-removal order

    def to_dict(self) -> dict:
        return {
            "pi": [v + 1 for v in self.pi],
            "v_trace": [{str(k + 1): float(v) for k, v in step.items()} for step in self.v_trace],
            "backend": self.backend_kind,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "OrderResult":
        doc = json.loads(Path(path).read_text())
        trace = [{int(k) - 1: v for k, v in step.items()} for step in doc["v_trace"]]
        return cls([v - 1 for v in doc["pi"]], trace, doc["backend"])


@dataclass
class CausalGraph:
    d: int
    edges: list

    def to_dag(self) -> Dag:
        return Dag(self.d, self.edges)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["src", "dst"])
            for a, b in sorted(self.edges):
                w.writerow([a + 1, b + 1])

    @classmethod
    def from_csv(cls, path, d: int) -> "CausalGraph":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls(d, [(int(a) - 1, int(b) - 1) for a, b in rows if a])


def score_order(data: Dataset, backend, rng=None) -> OrderResult:
    """Build a root-first order by repeatedly removing the minimum-variance node."""
    if data.n < 2:
        raise InsufficientData("need at least 2 samples")
    rng = as_generator(rng)
    nodes = list(data.column_labels)
    pi, trace, fits = [], [], []
    while nodes:
        fit = backend.fit(data, nodes, rng)
        V = variance_stats(fit.diag())
        leaf = min(zip(V.tolist(), nodes))[1]
        trace.append(dict(zip(nodes, V.tolist())))
        fits.append((leaf, fit))
        pi.insert(0, leaf)
        nodes = [v for v in nodes if v != leaf]
    return OrderResult(pi, trace, backend.kind, fits)


def _parents_of_leaf(fit, j: int, tau_rel: float) -> list:
    others = [v for v in fit.nodes if v != j]
    if not others:
        return []
    row = fit.row(j)
    pos = {v: k for k, v in enumerate(fit.nodes)}
    var = variance_stats(row[:, [pos[v] for v in others]])
    top = float(var.max())
    if top < FLOOR_FACTOR * fit.noise_floor(j):
        return []
    return [v for v, s in zip(others, var) if s >= tau_rel * top]


def prune(data: Dataset, pi, backend, tau_rel: float = 0.1, rng=None, fits=None) -> CausalGraph:
    """Replay leaf removal along ``pi`` and keep edges whose score dependence varies.

    ``fits`` (from :func:`score_order`) are reused when given, otherwise the
    backend is refit at each step.
    """
    if not 0 < tau_rel < 1:
        raise ValueError("tau_rel must be in (0, 1)")
    pi = [int(v) for v in pi]
    if sorted(pi) != sorted(data.column_labels):
        raise ValueError("pi must be a permutation of the dataset's nodes")
    if data.n < 2:
        raise InsufficientData("need at least 2 samples")
    rng = as_generator(rng)
    if fits is None:
        fits, nodes = [], list(pi)
        for j in reversed(pi):
            fits.append((j, backend.fit(data, nodes, rng)))
            nodes = [v for v in nodes if v != j]
    edges = []
    for j, fit in fits:
        edges += [(i, j) for i in _parents_of_leaf(fit, j, tau_rel)]
    rank = {v: k for k, v in enumerate(pi)}
    # with precomputed fits the removal sequence is pi reversed by construction
    assert all(rank[a] < rank[b] for a, b in edges)
    d = max(data.column_labels) + 1
    return CausalGraph(d, sorted(edges))


def discover(data: Dataset, backend, rng=None, tau_rel: float = 0.1):
    """Order then prune, reusing each step's fitted estimator."""
    res = score_order(data, backend, rng)
    graph = prune(data, res.pi, backend, tau_rel, rng, fits=res.fits)
    return res, graph


def order_divergence(pi, truth: Dag) -> int:
    """Number of true edges whose parent comes after the child in the root-first ``pi``."""
    pos = {int(v): k for k, v in enumerate(pi)}
    if sorted(pos) != list(range(truth.d)):
        raise ValueError("pi must be a permutation of the DAG's nodes")
    return sum(1 for a, b in truth.edges if pos[a] > pos[b])
