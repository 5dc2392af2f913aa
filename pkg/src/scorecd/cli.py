"""Command-line interface.

Every command takes ``--seed``, ``--out`` (output directory), ``--config``
(JSON file of flag values) and ``--verbose``. Flags given on the command
line win over the config file, which wins over built-in defaults.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ._rng import substream
from .dsm import DsmConfig, sgd_train
from .evaluation import SweepConfig, run_sweep, write_rows_csv, write_summary_csv
from . import nn
from .order import NetBackend, OracleBackend, OrderResult, prune, score_order
from .scm import Dataset, Scm, build_scm, generate_dag, sample
from .sgm import OuSchedule, SgmConfig, TimeNet, init_timenet, reverse_sample, save_samples, train_sgm

log = logging.getLogger("scorecd")


# -- argument types ------------------------------------------------------------


def _int_at_least(lo):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {v}")
        return v
    return parse


def _float_in(lo=None, hi=None, lo_open=True, hi_open=False):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not np.isfinite(v):
            raise argparse.ArgumentTypeError(f"must be finite, got {text}")
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise argparse.ArgumentTypeError(f"must be {'>' if lo_open else '>='} {lo}, got {v}")
        if hi is not None and (v > hi or (hi_open and v == hi)):
            raise argparse.ArgumentTypeError(f"must be {'<' if hi_open else '<='} {hi}, got {v}")
        return v
    return parse


def _grid(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("grid is empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise argparse.ArgumentTypeError("grid must be strictly increasing")
    return vals


positive_int = _int_at_least(1)
count_int = _int_at_least(0)
positive = _float_in(0)
nonneg = _float_in(0, lo_open=False)


# -- parser ----------------------------------------------------------------------


def _common(p):
    p.add_argument("--seed", type=count_int, default=0, help="root seed for every random stream")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", help="JSON file of flag values (keys use underscores)")
    p.add_argument("--verbose", action="store_true", help="echo the effective config to stderr")


def _dsm_flags(p):
    d = DsmConfig()
    g = p.add_argument_group("score network training")
    g.add_argument("--sigma", type=positive, default=d.sigma, help="DSM noise std")
    g.add_argument("--eta", type=nonneg, default=d.eta, help="SGD step size")
    g.add_argument("--epochs", type=positive_int, default=d.epochs)
    g.add_argument("--batch-size", type=positive_int, default=d.batch_size)
    g.add_argument("--width", type=positive_int, default=d.width, help="hidden width m")
    g.add_argument("--depth", type=_int_at_least(2), default=d.depth, help="layer count L")
    g.add_argument("--fixed-noise", action="store_true", help="draw DSM noise once instead of per visit")


def _backend_flags(p):
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--backend", choices=("oracle", "trained-net"), default="trained-net")
    p.add_argument("--scm", help="SCM JSON (required by the oracle backend)")
    p.add_argument("--warm-start", action="store_true", help="reuse the previous network between removals")
    _dsm_flags(p)


def _schedule_flags(p):
    s = OuSchedule()
    p.add_argument("--t0", type=positive, default=s.t0, help="smallest diffusion time")
    p.add_argument("--T", type=positive, default=s.T, help="largest diffusion time")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="scorecd", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="random SCM and a dataset sampled from it", formatter_class=fmt)
    _common(p)
    p.add_argument("--d", type=positive_int, required=True, help="node count")
    p.add_argument("--edge-prob", type=_float_in(0, 1), default=0.3, help="edge probability in (0, 1]")
    p.add_argument("--cm", type=nonneg, default=1.0, help="identifiability margin target")
    p.add_argument("--sigma-lo", type=positive, default=0.5)
    p.add_argument("--sigma-hi", type=positive, default=1.5)
    p.add_argument("--n", type=positive_int, default=100, help="sample count")

    p = sub.add_parser("train-score", help="train a score network by DSM", formatter_class=fmt)
    _common(p)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--scm", help="SCM JSON; enables ESM error checkpoints")
    p.add_argument("--eval-every", type=count_int, default=0, help="ESM checkpoint period in epochs")
    _dsm_flags(p)

    p = sub.add_parser("order", help="topological order by leaf removal", formatter_class=fmt)
    _common(p)
    _backend_flags(p)

    p = sub.add_parser("prune", help="prune the full DAG of an order", formatter_class=fmt)
    _common(p)
    _backend_flags(p)
    p.add_argument("--order", required=True, help="order JSON written by the order command")
    p.add_argument("--tau-rel", type=_float_in(0, 1, hi_open=True), default=0.1, help="relative variance threshold")

    p = sub.add_parser("sweep", help="seeded SHD sweep over one parameter", formatter_class=fmt)
    _common(p)
    p.add_argument("--axis", choices=("cm", "n", "d"), required=True)
    p.add_argument("--grid", type=_grid, required=True, help="comma-separated increasing values")
    p.add_argument("--d", type=positive_int, default=10, help="node count when not swept")
    p.add_argument("--n", type=positive_int, default=100, help="sample count when not swept")
    p.add_argument("--cm", type=nonneg, default=1.0, help="margin when not swept")
    p.add_argument("--runs", type=positive_int, default=10)
    p.add_argument("--backend", choices=("auto", "oracle", "trained-net"), default="auto")
    p.add_argument("--edge-prob", type=_float_in(0, 1), default=0.3)
    p.add_argument("--tau-rel", type=_float_in(0, 1, hi_open=True), default=0.1)
    p.add_argument("--jobs", type=positive_int, default=1, help="worker processes")
    p.add_argument("--timing", action="store_true", help="record wall time (breaks byte-identical reruns)")
    _dsm_flags(p)

    c = SgmConfig()
    p = sub.add_parser("sgm-train", help="train a time-conditioned score network", formatter_class=fmt)
    _common(p)
    p.add_argument("--data", required=True, help="dataset CSV")
    _schedule_flags(p)
    p.add_argument("--eta", type=nonneg, default=c.eta)
    p.add_argument("--epochs", type=positive_int, default=c.epochs)
    p.add_argument("--batch-size", type=positive_int, default=c.batch_size)
    p.add_argument("--k-times", type=positive_int, default=c.k_times, help="time draws per point")
    p.add_argument("--width", type=positive_int, default=c.width)
    p.add_argument("--depth", type=_int_at_least(2), default=c.depth)
    p.add_argument("--clip-norm", type=positive, default=None, help="clip training points to this norm")

    p = sub.add_parser("sgm-sample", help="reverse-SDE samples from a trained network", formatter_class=fmt)
    _common(p)
    p.add_argument("--model", required=True, help="network JSON written by sgm-train")
    _schedule_flags(p)
    p.add_argument("--n-steps", type=positive_int, default=500)
    p.add_argument("--n-samples", type=positive_int, default=1000)
    return parser


def _config_items(parser, command: str, path: str) -> list:
    """Flag tokens equivalent to a JSON config file, for re-parsing."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        parser.error(f"argument --config: cannot read {path}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("argument --config: expected a JSON object")
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    bad = sorted(set(cfg) - set(actions) - {"config"})
    if bad:
        sub.error(f"argument --config: unknown keys: {', '.join(bad)}")
    items = []
    for key, value in cfg.items():
        if key == "config" or value is None:
            continue
        action = actions[key]
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                items.append(flag)
        else:
            items += [flag, ",".join(map(str, value)) if isinstance(value, list) else str(value)]
    return items


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[1:])
    if known.config and argv and argv[0] in COMMANDS:
        # config values sit between the defaults and the explicit flags and go
        # through each flag's own validation
        argv = [argv[0]] + _config_items(parser, argv[0], known.config) + argv[1:]
    args = parser.parse_args(argv)
    if getattr(args, "sigma_lo", 0) > getattr(args, "sigma_hi", 1):
        parser.error("argument --sigma-lo: must not exceed --sigma-hi")
    if getattr(args, "t0", 0) > getattr(args, "T", 1):
        parser.error("argument --t0: must not exceed --T")
    if args.command == "sweep" and args.axis in ("n", "d"):
        if any(v != int(v) or v < 1 for v in args.grid):
            parser.error(f"argument --grid: values must be positive integers for axis {args.axis}")
    return args


# -- commands --------------------------------------------------------------------


def _dsm_config(args) -> DsmConfig:
    return DsmConfig(sigma=args.sigma, eta=args.eta, epochs=args.epochs, resample_noise=not args.fixed_noise,
                     eval_every=getattr(args, "eval_every", 0), batch_size=args.batch_size,
                     width=args.width, depth=args.depth)


def _load_data(path) -> Dataset:
    try:
        return Dataset.from_csv(path)
    except OSError as exc:
        raise RuntimeError(f"cannot read dataset {path}: {exc.strerror or exc}") from exc


def _load_scm(path) -> Scm:
    try:
        return Scm.load(path)
    except OSError as exc:
        raise RuntimeError(f"cannot read SCM {path}: {exc.strerror or exc}") from exc


def _backend(args):
    if args.backend == "oracle":
        if not args.scm:
            raise RuntimeError("the oracle backend needs --scm")
        return OracleBackend(_load_scm(args.scm))
    return NetBackend(_dsm_config(args), warm_start=args.warm_start)


def cmd_generate(args, out: Path) -> list:
    dag = generate_dag(args.d, args.edge_prob, substream(args.seed, "dag"))
    model = build_scm(dag, args.cm, (args.sigma_lo, args.sigma_hi), substream(args.seed, "scm"))
    data = sample(model, args.n, substream(args.seed, "data"))
    model.save(out / "scm.json")
    data.to_csv(out / "data.csv")
    return [out / "scm.json", out / "data.csv"]


def cmd_train_score(args, out: Path) -> list:
    data = _load_data(args.data)
    scm = _load_scm(args.scm) if args.scm else None
    p0 = nn.init(data.d, args.width, args.depth, substream(args.seed, "init"))
    params, report = sgd_train(p0, data, _dsm_config(args), substream(args.seed, "noise"), scm=scm)
    params.save(out / "score.json")
    report.to_csv(out / "train.csv")
    return [out / "score.json", out / "train.csv"]


def cmd_order(args, out: Path) -> list:
    data = _load_data(args.data)
    res = score_order(data, _backend(args), substream(args.seed, "order"))
    res.save(out / "order.json")
    return [out / "order.json"]


def cmd_prune(args, out: Path) -> list:
    data = _load_data(args.data)
    try:
        pi = OrderResult.load(args.order).pi
    except OSError as exc:
        raise RuntimeError(f"cannot read order {args.order}: {exc.strerror or exc}") from exc
    graph = prune(data, pi, _backend(args), args.tau_rel, substream(args.seed, "order"))
    graph.to_csv(out / "graph.csv")
    return [out / "graph.csv"]


def cmd_sweep(args, out: Path) -> list:
    fixed = {"cm": args.cm, "n": args.n, "d": args.d}
    grid = [int(v) for v in args.grid] if args.axis in ("n", "d") else args.grid
    cfg = SweepConfig(axis=args.axis, grid=grid, fixed=fixed, runs=args.runs, base_seed=args.seed,
                      backend=args.backend, edge_prob=args.edge_prob, tau_rel=args.tau_rel,
                      dsm=_dsm_config(args), timing=args.timing, n_jobs=args.jobs)
    rows, summary = run_sweep(cfg)
    write_rows_csv(rows, out / "sweep_rows.csv")
    write_summary_csv(summary, out / "sweep_summary.csv")
    return [out / "sweep_rows.csv", out / "sweep_summary.csv"]


def cmd_sgm_train(args, out: Path) -> list:
    data = _load_data(args.data)
    sched = OuSchedule(args.t0, args.T)
    cfg = SgmConfig(eta=args.eta, epochs=args.epochs, batch_size=args.batch_size, k_times=args.k_times,
                    clip_norm=args.clip_norm, width=args.width, depth=args.depth)
    net = init_timenet(data.d, args.width, args.depth, substream(args.seed, "init"))
    net, report = train_sgm(net, data, sched, cfg, substream(args.seed, "noise"))
    net.save(out / "sgm.json")
    with open(out / "sgm_train.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, loss in enumerate(report.losses, start=1):
            w.writerow([e, repr(loss)])
    return [out / "sgm.json", out / "sgm_train.csv"]


def cmd_sgm_sample(args, out: Path) -> list:
    try:
        net = TimeNet.load(args.model)
    except OSError as exc:
        raise RuntimeError(f"cannot read model {args.model}: {exc.strerror or exc}") from exc
    sched = OuSchedule(args.t0, args.T)
    x = reverse_sample(net, sched, args.n_steps, args.n_samples, substream(args.seed, "sample"))
    if not np.all(np.isfinite(x)):
        raise RuntimeError("reverse sampling produced non-finite values")
    save_samples(x, out / "samples.csv", sched, args.n_steps)
    return [out / "samples.csv", out / "samples.csv.json"]


COMMANDS = {
    "generate": cmd_generate,
    "train-score": cmd_train_score,
    "order": cmd_order,
    "prune": cmd_prune,
    "sweep": cmd_sweep,
    "sgm-train": cmd_sgm_train,
    "sgm-sample": cmd_sgm_sample,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verbose:
        effective = {k: v for k, v in sorted(vars(args).items())}
        print(json.dumps(effective, indent=1, default=str), file=sys.stderr)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = COMMANDS[args.command](args, out)
    except Exception as exc:  # noqa: BLE001 - report and map to exit code 1
        print(f"scorecd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        log.info("wrote %s", path)
    return 0
