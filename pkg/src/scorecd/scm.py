"""Non-linear additive Gaussian noise causal models.

Nodes are 0-based integers in the Python API. Files (JSON, CSV) use
1-based node ids so that column ``x1`` is node 0.

Each non-root node follows ``x_i = f_i(PA_i) + eps_i`` with
``f_i(pa) = a_i * sum_j w_ij * sin(w_ij * x_j)`` and ``eps_i ~ N(0, sigma_i^2)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from ._rng import as_generator

SCM_FORMAT = "scorecd-scm"


class Dag:
    """Directed acyclic graph over nodes ``0..d-1``."""

    def __init__(self, d: int, edges, topo=None):
        if d < 1:
            raise ValueError(f"d must be >= 1, got {d}")
        edges = tuple(sorted((int(a), int(b)) for a, b in edges))
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        for a, b in edges:
            if not (0 <= a < d and 0 <= b < d):
                raise ValueError(f"edge ({a}, {b}) out of range for d={d}")
            if a == b:
                raise ValueError(f"self-loop on node {a}")
        self.d = int(d)
        self.edges = edges
        self._parents = [[] for _ in range(d)]
        self._children = [[] for _ in range(d)]
        for a, b in edges:
            self._parents[b].append(a)
            self._children[a].append(b)
        if topo is None:
            topo = _topological_sort(d, self._parents, self._children)
        topo = tuple(int(v) for v in topo)
        if sorted(topo) != list(range(d)):
            raise ValueError("topo is not a permutation of the nodes")
        rank = {v: k for k, v in enumerate(topo)}
        for a, b in edges:
            if rank[a] >= rank[b]:
                raise ValueError(f"edge ({a}, {b}) violates the topological order")
        self.topo = topo

    def parents(self, i: int) -> list[int]:
        return list(self._parents[i])

    def children(self, j: int) -> list[int]:
        return list(self._children[j])

    def leaves(self) -> list[int]:
        return [j for j in range(self.d) if not self._children[j]]

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.d, self.d), dtype=bool)
        for a, b in self.edges:
            A[a, b] = True
        return A

    def __eq__(self, other):
        return isinstance(other, Dag) and (self.d, self.edges, self.topo) == (other.d, other.edges, other.topo)

    def __repr__(self):
        return f"Dag(d={self.d}, edges={len(self.edges)})"


def _topological_sort(d, parents, children):
    indeg = [len(p) for p in parents]
    ready = [v for v in range(d) if indeg[v] == 0]
    out = []
    while ready:
        v = min(ready)
        ready.remove(v)
        out.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(out) != d:
        raise ValueError("graph contains a cycle")
    return out


@dataclass(frozen=True, eq=False)
class Mechanism:
    """``f(pa) = amplitude * sum_j w_j sin(w_j x_j)``; empty parents means ``f == 0``."""

    parents: tuple = ()
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != len(self.parents):
            raise ValueError("one weight per parent required")
        object.__setattr__(self, "weights", w)
        if not self.amplitude > 0:
            raise ValueError("amplitude must be > 0")

    @property
    def bound(self) -> float:
        """C_i with ``|f| <= C_i`` everywhere."""
        return float(self.amplitude * np.abs(self.weights).sum())

    def value(self, X: np.ndarray) -> np.ndarray:
        if not self.parents:
            return np.zeros(X.shape[0])
        w = self.weights
        return self.amplitude * (np.sin(X[:, self.parents] * w) * w).sum(axis=1)

    def first_partials(self, X: np.ndarray) -> np.ndarray:
        """``df/dx_j`` for each parent, shape (n, len(parents))."""
        w = self.weights
        return self.amplitude * w**2 * np.cos(X[:, self.parents] * w)

    def second_partials(self, X: np.ndarray) -> np.ndarray:
        """``d^2 f/dx_j^2`` for each parent. Mixed partials vanish (additive form)."""
        w = self.weights
        return -self.amplitude * w**3 * np.sin(X[:, self.parents] * w)


@dataclass(frozen=True, eq=False)
class Scm:
    dag: Dag
    mechanisms: tuple
    sigmas: np.ndarray
    target_margin: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=float)
        object.__setattr__(self, "sigmas", s)
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        if s.shape != (self.dag.d,) or np.any(s <= 0):
            raise ValueError("need one positive sigma per node")
        if len(self.mechanisms) != self.dag.d:
            raise ValueError("need one mechanism per node")
        for i, mech in enumerate(self.mechanisms):
            if sorted(mech.parents) != sorted(self.dag.parents(i)):
                raise ValueError(f"mechanism parents of node {i} disagree with the DAG")

    @property
    def d(self) -> int:
        return self.dag.d

    def mechanism_values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.column_stack([m.value(X) for m in self.mechanisms])

    def to_dict(self) -> dict:
        return {
            "format": SCM_FORMAT,
            "d": self.d,
            "edges": [[a + 1, b + 1] for a, b in self.dag.edges],
            "topo": [v + 1 for v in self.dag.topo],
            "sigmas": [float(s) for s in self.sigmas],
            "mechanisms": [
                {
                    "parents": [p + 1 for p in m.parents],
                    "weights": [float(w) for w in m.weights],
                    "amplitude": float(m.amplitude),
                }
                for m in self.mechanisms
            ],
            "target_margin": float(self.target_margin),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scm":
        d = int(doc["d"])
        topo = [v - 1 for v in doc["topo"]] if "topo" in doc else None
        dag = Dag(d, [(a - 1, b - 1) for a, b in doc["edges"]], topo)
        mechs = [
            Mechanism(tuple(p - 1 for p in m["parents"]), m["weights"], m["amplitude"])
            for m in doc["mechanisms"]
        ]
        return cls(dag, mechs, doc["sigmas"], doc.get("target_margin", 0.0))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Scm":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Dataset:
    """Samples as rows; ``column_labels`` are the original node ids of the columns."""

    values: np.ndarray
    column_labels: tuple = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.values = v
        if self.column_labels is None:
            self.column_labels = tuple(range(v.shape[1]))
        self.column_labels = tuple(int(c) for c in self.column_labels)
        if len(self.column_labels) != v.shape[1]:
            raise ValueError("one label per column required")
        if len(set(self.column_labels)) != len(self.column_labels):
            raise ValueError("column labels must be distinct")
        if not np.all(np.isfinite(v)):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def select(self, labels: Sequence[int]) -> "Dataset":
        idx = [self.column_labels.index(lab) for lab in labels]
        return Dataset(self.values[:, idx], tuple(labels))

    def drop(self, label: int) -> "Dataset":
        return self.select([c for c in self.column_labels if c != label])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{c + 1}" for c in self.column_labels])
            for row in self.values:
                w.writerow([f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty file")
        header = rows[0]
        try:
            labels = [int(h.strip().lstrip("x")) - 1 for h in header]
        except ValueError:
            raise ValueError(f"{path}: header must be x1,...,xd") from None
        values = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        return cls(values.reshape(-1, len(labels)), tuple(labels))


def generate_dag(d: int, edge_prob: float, rng) -> Dag:
    """Erdős–Rényi DAG over a uniformly random node ranking."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if not 0 < edge_prob <= 1:
        raise ValueError(f"edge_prob must be in (0, 1], got {edge_prob}")
    rng = as_generator(rng)
    perm = rng.permutation(d)
    iu, ju = np.triu_indices(d, k=1)
    keep = rng.random(iu.shape[0]) < edge_prob
    edges = [(int(perm[a]), int(perm[b])) for a, b in zip(iu[keep], ju[keep])]
    return Dag(d, edges, perm.tolist())


def _draw_weights(k: int, rng: np.random.Generator) -> np.ndarray:
    mag = rng.uniform(0.5, 2.0, size=k)
    sign = np.where(rng.random(k) < 0.5, -1.0, 1.0)
    return mag * sign


def build_scm(dag: Dag, cm: float, sigma_range=(0.5, 1.5), rng=None, n_pilot: int = 10_000) -> Scm:
    """Random sin-family SCM whose weakest edge has margin ``cm``.

    Amplitudes are calibrated node by node in topological order. The pilot
    sample for node ``i`` is drawn from the already-finished ancestors, so
    the curvature expectation uses the true parent marginals.
    """
    lo, hi = sigma_range
    if not 0 < lo <= hi:
        raise ValueError(f"sigma_range must satisfy 0 < lo <= hi, got {sigma_range}")
    if cm < 0:
        raise ValueError(f"cm must be >= 0, got {cm}")
    rng = as_generator(rng)
    d = dag.d
    sigmas = rng.uniform(lo, hi, size=d)
    weights = {i: _draw_weights(len(dag.parents(i)), rng) for i in range(d)}
    pilot_eps = rng.standard_normal((n_pilot, d)) * sigmas
    X = np.zeros((n_pilot, d))
    mechs: list = [None] * d
    for i in dag.topo:
        pa = tuple(dag.parents(i))
        w = weights[i]
        if pa and cm > 0:
            curv = np.mean((w**3 * np.sin(X[:, pa] * w)) ** 2, axis=0)
            amp = math.sqrt(cm * sigmas[i] ** 2 / float(curv.min()))
        else:
            amp = 1.0
        mechs[i] = Mechanism(pa, w, amp)
        X[:, i] = mechs[i].value(X) + pilot_eps[:, i]
    return Scm(dag, mechs, sigmas, float(cm))


def sample(scm: Scm, n: int, rng) -> Dataset:
    """Ancestral sampling in topological order."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = as_generator(rng)
    eps = rng.standard_normal((n, scm.d)) * scm.sigmas
    X = np.zeros((n, scm.d))
    for i in scm.dag.topo:
        X[:, i] = scm.mechanisms[i].value(X) + eps[:, i]
    return Dataset(X)


# -- analytic score ---------------------------------------------------------
#
# ``nodes`` restricts the model to a subset R of nodes: the log density is
# sum_{i in R} log N(x_i; f_i(PA_i), sigma_i^2). When R is closed under
# ancestors (the case for leaf removal) this is exactly the marginal of R.
# Removed parents of a remaining node enter f_i as observed constants.


def _prep(scm: Scm, x, nodes):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != scm.d:
        raise ValueError(f"points must have dimension {scm.d}")
    nodes = list(range(scm.d)) if nodes is None else [int(v) for v in nodes]
    return X, single, nodes


def _scaled_residuals(scm, X, nodes):
    """r_i = eps_i / sigma_i^2 for i in nodes, as a dict of columns."""
    F = {i: scm.mechanisms[i].value(X) for i in nodes}
    return {i: (X[:, i] - F[i]) / scm.sigmas[i] ** 2 for i in nodes}


def analytic_score(scm: Scm, x, nodes=None) -> np.ndarray:
    X, single, nodes = _prep(scm, x, nodes)
    inset = set(nodes)
    r = _scaled_residuals(scm, X, nodes)
    fp = {i: scm.mechanisms[i].first_partials(X) for i in nodes if scm.mechanisms[i].parents}
    out = np.empty((X.shape[0], len(nodes)))
    for col, j in enumerate(nodes):
        s = -r[j]
        for i in scm.dag.children(j):
            if i in inset:
                s = s + fp[i][:, scm.mechanisms[i].parents.index(j)] * r[i]
        out[:, col] = s
    return out[0] if single else out


def analytic_jacobian_diag(scm: Scm, x, nodes=None) -> np.ndarray:
    """``d s_j / d x_j``.

    ``-1/sigma_j^2 + sum_{i in CH_j} (f_i'' eps_i - f_i'^2) / sigma_i^2``; the
    ``f_i'^2`` term comes from ``d eps_i / d x_j = -f_i'``. Leaves give exactly
    ``-1/sigma_j^2``.
    """
    X, single, nodes = _prep(scm, x, nodes)
    inset = set(nodes)
    r = _scaled_residuals(scm, X, nodes)
    with_parents = [i for i in nodes if scm.mechanisms[i].parents]
    fp = {i: scm.mechanisms[i].first_partials(X) for i in with_parents}
    sp = {i: scm.mechanisms[i].second_partials(X) for i in with_parents}
    out = np.empty((X.shape[0], len(nodes)))
    for col, j in enumerate(nodes):
        v = np.full(X.shape[0], -1.0 / scm.sigmas[j] ** 2)
        for i in scm.dag.children(j):
            if i in inset:
                k = scm.mechanisms[i].parents.index(j)
                v = v + sp[i][:, k] * r[i] - fp[i][:, k] ** 2 / scm.sigmas[i] ** 2
        out[:, col] = v
    return out[0] if single else out


def analytic_jacobian(scm: Scm, x, nodes=None, rows=None) -> np.ndarray:
    """Score Jacobian (Hessian of the log density) restricted to ``nodes``.

    Uses ``H = -B^T diag(1/sigma^2) B + diag(sum_i r_i d^2 f_i)`` with
    ``B = I - grad f``. ``rows`` selects a subset of output rows (node ids);
    the result has shape (n, len(rows), len(nodes)).
    """
    X, single, nodes = _prep(scm, x, nodes)
    inset = set(nodes)
    pos = {v: k for k, v in enumerate(nodes)}
    rows = nodes if rows is None else [int(v) for v in rows]
    n, k = X.shape[0], len(nodes)
    r = _scaled_residuals(scm, X, nodes)

    def grad_eps(i):
        # d eps_i / d x over the restricted coordinates, shape (n, k)
        g = np.zeros((n, k))
        g[:, pos[i]] = 1.0
        mech = scm.mechanisms[i]
        if mech.parents:
            fp = mech.first_partials(X)
            for c, p in enumerate(mech.parents):
                if p in inset:
                    g[:, pos[p]] -= fp[:, c]
        return g

    H = np.zeros((n, len(rows), k))
    for ri, j in enumerate(rows):
        involved = [j] + [i for i in scm.dag.children(j) if i in inset]
        for i in involved:
            gi = grad_eps(i)
            H[:, ri, :] -= gi[:, [pos[j]]] * gi / scm.sigmas[i] ** 2
        diag = np.zeros(n)
        for i in scm.dag.children(j):
            if i in inset:
                mech = scm.mechanisms[i]
                diag += mech.second_partials(X)[:, mech.parents.index(j)] * r[i]
        H[:, ri, pos[j]] += diag
    return H[0] if single else H


def log_density(scm: Scm, x) -> np.ndarray:
    """Product-form log density, sum_i log N(x_i; f_i(PA_i), sigma_i^2)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    eps = X - scm.mechanism_values(X)
    s2 = scm.sigmas**2
    out = -0.5 * (eps**2 / s2).sum(axis=1) - 0.5 * np.log(2 * np.pi * s2).sum()
    return out[0] if np.ndim(x) == 1 else out


class MarginEstimate(NamedTuple):
    value: float
    stderr: float


def estimate_margin(scm: Scm, n_mc: int, rng) -> dict:
    """Monte-Carlo ``E[(d^2 f_i/dx_j^2)^2] / sigma_i^2`` for every edge ``(j, i)``."""
    if n_mc < 100:
        raise ValueError(f"n_mc must be >= 100, got {n_mc}")
    X = sample(scm, n_mc, rng).values
    out = {}
    for i, mech in enumerate(scm.mechanisms):
        if not mech.parents:
            continue
        sq = mech.second_partials(X) ** 2 / scm.sigmas[i] ** 2
        for c, j in enumerate(mech.parents):
            col = sq[:, c]
            out[(j, i)] = MarginEstimate(float(col.mean()), float(col.std(ddof=1) / math.sqrt(n_mc)))
    return out
