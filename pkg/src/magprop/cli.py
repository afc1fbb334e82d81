"""Batch command-line interface.

Every stage writes its outputs plus one ``manifest.json`` into ``--out-dir``.
Errors print a single ``magprop: error: stage=<stage>: <reason>`` line and
exit nonzero (2 for usage errors and missing inputs, 1 otherwise).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .compare import StrategyError, format_table, q_compare
from .encoding import map_encode, q_summary, write_q_tsv
from .graph import GraphError, generate_synthetic
from .io import IngestError, SplitSpec, ingest_graph, load_npz_graph, write_graph
from .magnetic import PairSet, load_stack, save_stack
from .model import ModelState
from .sync import summarize_sweep, sync_noise_sweep, write_sweep_csv
from .train import ConfigError, Encoder, TrainConfig, evaluate, train, write_metrics

THREADS_ENV = "MAGPROP_THREADS"


class CliError(Exception):
    def __init__(self, stage: str, message: str, code: int = 1):
        super().__init__(message)
        self.stage = stage
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message.replace("\n", " "), 2)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, args, config: dict | None = None):
        self.data = {
            "command": command,
            "tool_version": __version__,
            "python": platform.python_version(),
            "seed": getattr(args, "seed", None),
            "config": config or {},
            "inputs": {},
            "timings": {},
        }

    def add_input(self, path) -> None:
        if path is not None and Path(path).is_file():
            self.data["inputs"][str(path)] = _digest(path)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except CliError:
            raise
        except FileNotFoundError as exc:
            raise CliError(name, f"missing input {exc.filename or exc}", 2) from exc
        except (IngestError, GraphError, ConfigError, StrategyError, ValueError) as exc:
            raise CliError(name, str(exc), 2 if isinstance(exc, (ConfigError, StrategyError)) else 1) from exc
        finally:
            self.data["timings"][name] = round(time.perf_counter() - t0, 6)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True, default=str), encoding="utf-8")
        return path


def _graph_files(directory) -> dict:
    d = Path(directory)
    if not (d / "edges.tsv").exists():
        raise CliError("ingest", f"missing input {d / 'edges.tsv'}", 2)
    meta_path = d / "graph.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    kw = {"edge_path": d / "edges.tsv", "feature_path": d / "features.bin",
          "id_base": meta.get("id_base", 0)}
    if (d / "labels.tsv").exists():
        kw["label_path"] = d / "labels.tsv"
    if (d / "train.txt").exists():
        kw["split"] = SplitSpec(train_file=d / "train.txt",
                                val_file=d / "val.txt" if (d / "val.txt").exists() else None,
                                test_file=d / "test.txt" if (d / "test.txt").exists() else None)
    return kw


def _load_graph(directory, manifest: Manifest | None = None):
    kw = _graph_files(directory)
    if manifest is not None:
        for key in ("edge_path", "feature_path", "label_path"):
            manifest.add_input(kw.get(key))
    return ingest_graph(**kw)


def _save_graph(g, directory) -> None:
    kw = write_graph(g, directory, precision="f64")
    meta = {"n": g.n, "m": g.m, "f": g.num_features, "classes": g.num_classes,
            "id_base": kw["id_base"], "duplicates_dropped": g.report.duplicates,
            "self_loops_dropped": g.report.self_loops}
    (Path(directory) / "graph.json").write_text(json.dumps(meta, indent=2, sort_keys=True),
                                                encoding="utf-8")


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError("config", f"missing input {path}", 2)
        base = json.loads(path.read_text(encoding="utf-8"))
        base = base.get("train", base)
    for key in ("K", "epochs", "re_encode_every", "lr", "weight_decay", "mode", "task", "q",
                "patience"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    if args.seed is not None:
        base["seed"] = args.seed
    try:
        return TrainConfig.from_dict(base)
    except (ConfigError, TypeError) as exc:
        raise CliError("config", str(exc), 2) from exc


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    man = Manifest("synth", args, vars_config(args, ("n", "avg_degree", "homophily", "classes",
                                                     "feature_dim", "class_sep", "feature_noise",
                                                     "direction_noise")))
    if args.dry_run:
        return 0
    with man.stage("synth"):
        g = generate_synthetic(args.n, args.avg_degree, args.homophily, args.classes,
                               args.feature_dim, args.seed or 0, class_sep=args.class_sep,
                               feature_noise=args.feature_noise, direction_noise=args.direction_noise)
        _save_graph(g, args.out_dir)
    man.write(args.out_dir)
    print(f"wrote synthetic digraph n={g.n} m={g.m} to {args.out_dir}")
    return 0


def vars_config(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys}


def cmd_ingest(args) -> int:
    man = Manifest("ingest", args, vars_config(args, ("edges", "features", "labels", "npz",
                                                      "id_base", "train_per_class", "val", "test")))
    with man.stage("validate"):
        inputs = [args.npz] if args.npz else [args.edges, args.features, args.labels]
        for p in inputs:
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(2, "missing", p)
        if not args.npz and (args.edges is None or args.features is None):
            raise CliError("validate", "--edges and --features are required (or --npz)", 2)
    if args.dry_run:
        return 0
    with man.stage("ingest"):
        if args.npz:
            man.add_input(args.npz)
            g = load_npz_graph(args.npz)
            if args.train_per_class:
                from .graph import class_balanced_split
                tr, va, te = class_balanced_split(g.labels, args.train_per_class, args.val or 0,
                                                  args.test, args.seed or 0)
                g = g.replace(train_mask=tr, val_mask=va, test_mask=te)
        else:
            for p in (args.edges, args.features, args.labels):
                man.add_input(p)
            split = None
            if args.train_per_class:
                split = SplitSpec(train_per_class=args.train_per_class, val=args.val or 0,
                                  test=args.test, seed=args.seed or 0)
            elif args.train_mask:
                split = SplitSpec(train_file=args.train_mask, val_file=args.val_mask,
                                  test_file=args.test_mask)
            g = ingest_graph(args.edges, args.features, args.labels, split, id_base=args.id_base)
        _save_graph(g, args.out_dir)
    man.write(args.out_dir)
    print(f"ingested n={g.n} m={g.m} (dropped {g.report.duplicates} duplicates, "
          f"{g.report.self_loops} self-loops)")
    return 0


def cmd_encode_q(args) -> int:
    man = Manifest("encode-q", args, {"graph": str(args.graph), "soft_labels": args.soft_labels})
    if args.dry_run:
        _graph_files(args.graph)
        return 0
    with man.stage("ingest"):
        g = _load_graph(args.graph, man)
    with man.stage("encode"):
        z = None
        if args.soft_labels:
            man.add_input(args.soft_labels)
            z = np.load(args.soft_labels)
        pairs = PairSet.from_digraph(g)
        comps = map_encode(g, z, pairs=pairs)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_q_tsv(out / "q.tsv", pairs, comps, g.node_ids)
    man.data["q_summary"] = q_summary(comps.q_star)
    man.write(out)
    print(json.dumps(man.data["q_summary"], sort_keys=True))
    return 0


def _fixed_or_map_q(g, enc: Encoder, strategy: str):
    if strategy.lower() == "map":
        return map_encode(g, pairs=enc.pairs, cent=enc.cent).q_star
    from .compare import parse_strategy
    strat = parse_strategy(strategy, g)
    if strat.mode != "fixed":
        raise StrategyError("propagate supports MAP or fixed-q strategies only")
    return np.full(len(enc.pairs), strat.q)


def cmd_propagate(args) -> int:
    man = Manifest("propagate", args, {"graph": str(args.graph), "K": args.K, "q": args.q_strategy})
    if args.dry_run:
        _graph_files(args.graph)
        return 0
    with man.stage("ingest"):
        g = _load_graph(args.graph, man)
    with man.stage("propagate"):
        enc = Encoder(g)
        q = _fixed_or_map_q(g, enc, args.q_strategy)
        _, stack = enc.propagate(q, args.K)
        save_stack(stack, Path(args.out_dir) / "stack", q_summary(q))
        np.save(Path(args.out_dir) / "q_star.npy", q)
    man.write(args.out_dir)
    print(f"wrote K={args.K} propagation stack to {Path(args.out_dir) / 'stack'}")
    return 0


def _run_training(g, cfg: TrainConfig, out_dir, man: Manifest, stack=None) -> dict:
    with man.stage("train"):
        res = train(g, cfg, initial_stack=stack)
    with man.stage("evaluate"):
        metrics = evaluate(res, g, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.jsonl", res.log)
    res.state.save(out / "checkpoint.npz")
    np.save(out / "q_star.npy", res.q_star)
    final = {"best_epoch": res.best_epoch, **metrics}
    (out / "final.json").write_text(json.dumps(final, indent=2, sort_keys=True), encoding="utf-8")
    return final


def cmd_train(args) -> int:
    cfg = _train_config(args)
    man = Manifest("train", args, cfg.to_dict())
    if args.dry_run:
        _graph_files(args.graph)
        return 0
    with man.stage("ingest"):
        g = _load_graph(args.graph, man)
    stack = None
    if args.stack:
        with man.stage("load-stack"):
            stack, _ = load_stack(args.stack)
            man.add_input(Path(args.stack) / "manifest.json")
    final = _run_training(g, cfg, args.out_dir, man, stack)
    man.write(args.out_dir)
    print(json.dumps(final, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    run = Path(args.run)
    cfg_path = run / "manifest.json"
    if not cfg_path.exists():
        raise CliError("eval", f"missing input {cfg_path}", 2)
    cfg = TrainConfig.from_dict(json.loads(cfg_path.read_text(encoding="utf-8"))["config"])
    if cfg.task != "node_c":
        raise CliError("eval", "eval re-scores node classification runs; link runs report "
                               "their held-out metrics in final.json", 2)
    if args.dry_run:
        return 0
    man = Manifest("eval", args, cfg.to_dict())
    with man.stage("ingest"):
        g = _load_graph(args.graph, man)
    with man.stage("evaluate"):
        from .train import predict_node
        state = ModelState.load(run / "checkpoint.npz")
        q = np.load(run / "q_star.npy")
        enc = Encoder(g)
        _, stack = enc.propagate(q, cfg.K)
        mask = {"test": g.test_mask, "val": g.val_mask, "train": g.train_mask}[args.split]
        acc = predict_node(state, stack, g.labels, mask, uniform=not cfg.attention)
    result = {"split": args.split, "accuracy": acc}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(result, sort_keys=True), encoding="utf-8")
    man.write(out)
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_qcompare(args) -> int:
    cfg = _train_config(args)
    strategies = [s for s in args.strategies.split(",") if s.strip()]
    man = Manifest("qcompare", args, {**cfg.to_dict(), "strategies": strategies,
                                       "seeds": args.seeds})
    with man.stage("ingest"):
        if args.dry_run:
            _graph_files(args.graph)
            return 0
        g = _load_graph(args.graph, man)
    with man.stage("qcompare"):
        from .compare import parse_strategy
        parsed = [parse_strategy(s, g) for s in strategies]
        rows = q_compare(g, parsed, cfg, seeds=args.seeds)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = format_table(rows)
    (out / "qcompare.tsv").write_text(table, encoding="utf-8")
    (out / "qcompare.json").write_text(json.dumps(rows, indent=2, sort_keys=True), encoding="utf-8")
    man.write(out)
    sys.stdout.write(table)
    return 0


def cmd_sync(args) -> int:
    for p in args.p:
        if not 0.0 <= p <= 1.0:
            raise CliError("usage", f"p={p} outside [0, 1]", 2)
    for n in args.n:
        if n < 2:
            raise CliError("usage", f"n={n} must be >= 2", 2)
    if args.seeds < 1:
        raise CliError("usage", "--seeds must be >= 1", 2)
    if args.dry_run:
        return 0
    base = args.seed or 0
    rows = sync_noise_sweep(args.n, args.p, range(base, base + args.seeds))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            write_sweep_csv(rows, fh)
        if args.out_dir:
            man = Manifest("sync", args, {"n": args.n, "p": args.p, "seeds": args.seeds})
            man.data["summary"] = summarize_sweep(rows)
            man.write(args.out_dir)
    else:
        write_sweep_csv(rows, sys.stdout)
    return 0


def cmd_pipeline(args) -> int:
    """ingest -> encode -> propagate -> train -> evaluate from one JSON config.

    Config keys: ``edges``, ``features``, ``labels`` (file paths, relative to
    the config file), optional ``id_base``, ``split`` (``train_per_class``,
    ``val``, ``test``, ``seed``) and ``train`` (TrainConfig fields).
    """
    if not args.config:
        raise CliError("config", "pipeline needs --config", 2)
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise CliError("config", f"missing input {cfg_path}", 2)
    spec = json.loads(cfg_path.read_text(encoding="utf-8"))
    root = cfg_path.parent

    def resolve(key):
        val = spec.get(key)
        return None if val is None else (root / val if not Path(val).is_absolute() else Path(val))

    tcfg = _train_config(args)
    man = Manifest("pipeline", args, {"pipeline": spec, "train": tcfg.to_dict()})
    with man.stage("validate"):
        for key in ("edges", "features"):
            if spec.get(key) is None:
                raise CliError("validate", f"config lacks {key!r}", 2)
        for key in ("edges", "features", "labels"):
            p = resolve(key)
            if p is not None and not p.exists():
                raise FileNotFoundError(2, "missing", str(p))
    if args.dry_run:
        return 0
    out = Path(args.out_dir)
    with man.stage("ingest"):
        split_cfg = spec.get("split", {"train_per_class": 20, "val": 500, "test": None})
        split = SplitSpec(train_per_class=split_cfg.get("train_per_class", 20),
                          val=split_cfg.get("val", 500), test=split_cfg.get("test"),
                          seed=split_cfg.get("seed", tcfg.seed))
        g = ingest_graph(resolve("edges"), resolve("features"), resolve("labels"),
                         split if spec.get("labels") else None, id_base=spec.get("id_base", 0))
        for key in ("edges", "features", "labels"):
            man.add_input(resolve(key))
    with man.stage("encode"):
        enc = Encoder(g)
        write_q_tsv(_mkdir(out) / "q_topo.tsv", enc.pairs, map_encode(g, pairs=enc.pairs, cent=enc.cent),
                    g.node_ids)
    final = _run_training(g, tcfg, out, man)
    man.write(out)
    print(json.dumps(final, sort_keys=True))
    return 0


def _mkdir(p) -> Path:
    p = Path(p)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- parser

def _add_train_flags(p) -> None:
    p.add_argument("--K", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--re-encode-every", dest="re_encode_every", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--mode", choices=["MAP", "MAP++", "fixed"])
    p.add_argument("--task", choices=["node_c", "link_exist", "link_direct", "link_3class"])
    p.add_argument("--q", type=float)
    p.add_argument("--patience", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out-dir", dest="out_dir", default="out")
    common.add_argument("--dry-run", dest="dry_run", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="magprop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic digraph")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--avg-degree", dest="avg_degree", type=float, default=5.0)
    p.add_argument("--homophily", type=float, default=0.5)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=32)
    p.add_argument("--class-sep", dest="class_sep", type=float, default=1.0)
    p.add_argument("--feature-noise", dest="feature_noise", type=float, default=3.0)
    p.add_argument("--direction-noise", dest="direction_noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="validate input files into a graph dir")
    p.add_argument("--edges")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--npz", help="citation graph in adj_*/attr_*/labels npz layout")
    p.add_argument("--id-base", dest="id_base", type=int, default=0)
    p.add_argument("--train-per-class", dest="train_per_class", type=int)
    p.add_argument("--val", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--train-mask", dest="train_mask")
    p.add_argument("--val-mask", dest="val_mask")
    p.add_argument("--test-mask", dest="test_mask")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("encode-q", parents=[common], help="weight-free per-edge q (TSV)")
    p.add_argument("--graph", required=True)
    p.add_argument("--soft-labels", dest="soft_labels", help=".npy matrix n x c")
    p.set_defaults(func=cmd_encode_q)

    p = sub.add_parser("propagate", parents=[common], help="precompute a propagation stack")
    p.add_argument("--graph", required=True)
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--q-strategy", dest="q_strategy", default="MAP")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("train", parents=[common], help="train the backbone")
    p.add_argument("--graph", required=True)
    p.add_argument("--stack", help="precomputed stack dir (no re-encoding runs only)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="re-score a trained node classifier")
    p.add_argument("--graph", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("qcompare", parents=[common], help="compare q strategies")
    p.add_argument("--graph", required=True)
    p.add_argument("--strategies", default="fixed:0,fixed:0.25,MAP,MAP++")
    p.add_argument("--seeds", type=int, default=5)
    _add_train_flags(p)
    p.set_defaults(func=cmd_qcompare)

    p = sub.add_parser("sync", parents=[common], help="attribute synchronization sweep")
    p.add_argument("--n", type=int, nargs="+", default=[100])
    p.add_argument("--p", type=float, nargs="+", default=[1.0])
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--output")
    p.set_defaults(func=cmd_sync, out_dir=None)

    p = sub.add_parser("pipeline", parents=[common], help="end-to-end run from a JSON config")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _limit_threads(n):
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise CliError("usage", "a subcommand is required", 2)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        threads = args.threads or int(os.environ.get(THREADS_ENV, "0") or 0)
        limiter = _limit_threads(threads)
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except CliError as exc:
        print(f"magprop: error: stage={exc.stage}: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        msg = str(exc).replace("\n", " ")
        print(f"magprop: error: stage=internal: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
