"""Structural Hamming distance and the seeded SHD sweep harness."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import substream
from .dsm import DsmConfig
from .order import NetBackend, OracleBackend, discover, order_divergence
from .scm import build_scm, generate_dag, sample

log = logging.getLogger(__name__)

AXES = ("cm", "n", "d")
SEED_STRIDE = 10007
AUTO_NET_MAX_D = 20


def shd(est, truth) -> int:
    """Insertions + deletions + reversals turning ``est`` into ``truth``; a reversal counts once.

    Both arguments need ``d`` and ``edges`` (a :class:`~scorecd.scm.Dag` or
    :class:`~scorecd.order.CausalGraph`).
    """
    if est.d != truth.d:
        raise ValueError(f"graphs have different sizes ({est.d} vs {truth.d})")
    a, b = set(map(tuple, est.edges)), set(map(tuple, truth.edges))
    pairs = {frozenset(e) for e in a ^ b}
    return len(pairs)


@dataclass
class SweepConfig:
    axis: str
    grid: list
    fixed: dict = field(default_factory=lambda: {"cm": 1.0, "n": 100, "d": 10})
    runs: int = 10
    base_seed: int = 0
    backend: str = "auto"
    edge_prob: float = 0.3
    sigma_range: tuple = (0.5, 1.5)
    tau_rel: float = 0.1
    dsm: DsmConfig = field(default_factory=DsmConfig)
    timing: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if not self.grid:
            raise ValueError("grid must be non-empty")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be strictly increasing")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.backend not in ("auto", "oracle", "trained-net"):
            raise ValueError("backend must be auto, oracle or trained-net")

    def cell(self, value) -> dict:
        params = dict(self.fixed)
        params[self.axis] = value
        params["d"], params["n"] = int(params["d"]), int(params["n"])
        params["cm"] = float(params["cm"])
        return params

    def backend_kind(self, d: int) -> str:
        if self.backend != "auto":
            return self.backend
        return "trained-net" if d <= AUTO_NET_MAX_D else "oracle"


@dataclass
class SweepRow:
    axis: str
    value: float
    seed: int
    shd: int | None
    order_div: int | None
    wall_time: float | None
    error: str | None = None


def run_seed(base_seed: int, run: int) -> int:
    return base_seed + run * SEED_STRIDE


def run_cell(cfg: SweepConfig, value, run: int) -> SweepRow:
    seed = run_seed(cfg.base_seed, run)
    p = cfg.cell(value)
    start = time.perf_counter()
    try:
        dag = generate_dag(p["d"], cfg.edge_prob, substream(seed, "dag"))
        model = build_scm(dag, p["cm"], cfg.sigma_range, substream(seed, "scm"))
        data = sample(model, p["n"], substream(seed, "data"))
        if cfg.backend_kind(p["d"]) == "oracle":
            backend = OracleBackend(model)
        else:
            backend = NetBackend(replace(cfg.dsm))
        res, graph = discover(data, backend, substream(seed, "order"), cfg.tau_rel)
        row = SweepRow(cfg.axis, value, seed, shd(graph, dag), order_divergence(res.pi, dag), None)
    except Exception as exc:  # noqa: BLE001 - a failed run must not stop the sweep
        log.warning("run failed (%s=%s, seed=%d): %s", cfg.axis, value, seed, exc)
        row = SweepRow(cfg.axis, value, seed, None, None, None, f"{type(exc).__name__}: {exc}")
    if cfg.timing:
        row.wall_time = time.perf_counter() - start
    return row


def _run_job(args):
    return run_cell(*args)


def summarize(rows: list) -> list:
    out = []
    for value in sorted({r.value for r in rows}):
        cell = [r for r in rows if r.value == value]
        ok = [r.shd for r in cell if r.error is None]
        mean = float(np.mean(ok)) if ok else math.nan
        std = float(np.std(ok, ddof=1)) if len(ok) > 1 else 0.0 if ok else math.nan
        out.append({
            "axis": cell[0].axis, "value": value, "shd_mean": mean, "shd_std": std,
            "runs_ok": len(ok), "runs_failed": len(cell) - len(ok),
        })
    return out


def run_sweep(cfg: SweepConfig):
    """Run every (grid value, run) cell; returns (rows, summary) sorted by value then seed."""
    jobs = [(cfg, v, r) for v in cfg.grid for r in range(cfg.runs)]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(cfg.n_jobs) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(j) for j in jobs]
    rows.sort(key=lambda r: (r.value, r.seed))
    return rows, summarize(rows)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", "seed", "shd", "order_div", "wall_time_s"])
        for r in rows:
            w.writerow([r.axis, _fmt(r.value), r.seed, _fmt(r.shd), _fmt(r.order_div), _fmt(r.wall_time)])


def write_summary_csv(summary, path) -> None:
    cols = ["axis", "value", "shd_mean", "shd_std", "runs_ok", "runs_failed"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in summary:
            w.writerow([_fmt(s[c]) for c in cols])
