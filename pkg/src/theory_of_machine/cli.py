"""Command-line entry point: ``tom <subcommand> [flags]``.

Exit status is 0 on success, 1 on runtime or data errors and 2 on usage
errors.  Error lines start with ``error:``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import acceptance, analysis, plotting, reports
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .datagen import DatasetError, generate_dataset, read_dataset, write_dataset
from .machines import ValidationError
from .model import CheckpointError, load_model
from .netcore import ShapeError
from .trainer import TrainingError, evaluate, train

log = logging.getLogger("theory_of_machine")

RUNTIME_ERRORS = (analysis.AnalysisError, CheckpointError, ConfigError, DatasetError,
                  ShapeError, TrainingError, ValidationError, OSError)

# flag -> dotted config key
_FLAG_KEYS = {
    "seed": "run.seed",
    "threads": "run.threads",
    "epochs": "train.epochs",
    "seq_len": "train.seq_len",
    "stride": "train.stride",
    "embed_dim": "train.embed_dim",
    "lr": "train.lr",
    "batch_size": "train.batch_size",
    "samples_per_machine": "analysis.samples_per_machine",
}


def _add(p: argparse.ArgumentParser, *names: str) -> None:
    spec = {
        "config": dict(help="config file (section.key = value lines)"),
        "out": dict(help="output path"),
        "data": dict(help="input dataset directory or records/projections file"),
        "model": dict(help="checkpoint file"),
        "seed": dict(type=lambda v: int(v, 0), help="master seed"),
        "epochs": dict(type=int),
        "seq_len": dict(type=int, help="window length n"),
        "stride": dict(type=int),
        "embed_dim": dict(type=int),
        "lr": dict(type=float, help="learning rate"),
        "batch_size": dict(type=int),
        "split": dict(choices=("train", "test", "all"), default="test"),
        "tag": dict(choices=analysis.TAGS, default="class"),
        "samples_per_machine": dict(type=int),
        "threads": dict(type=int, help="cap on worker threads; outputs do not depend on it"),
    }
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, **spec[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tom", description="Machine-identity embeddings from I/O sequences.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress lines to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("gen", help="spawn a fleet and write its dataset")
    _add(p, "config", "out", "seed", "threads")
    p = sub.add_parser("train", help="train on a dataset; write checkpoint and metrics")
    _add(p, "config", "data", "out", "seed", "epochs", "seq_len", "stride", "embed_dim", "lr", "batch_size", "threads")
    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add(p, "config", "data", "model", "out", "split", "seq_len", "stride")
    p = sub.add_parser("embed", help="sample stateful embeddings for every machine")
    _add(p, "config", "data", "model", "out", "seed", "seq_len", "samples_per_machine")
    p = sub.add_parser("pca", help="project embedding records to three components")
    _add(p, "data", "out")
    p = sub.add_parser("plot", help="scatter plot and coordinate table for one tag")
    _add(p, "data", "out", "tag")
    p = sub.add_parser("gradcheck", help="finite-difference check of the window loss")
    _add(p, "seed", "embed_dim", "seq_len")
    p = sub.add_parser("repro", help="run the whole acceptance pipeline")
    _add(p, "config", "out", "seed", "threads")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    flags = {key: getattr(args, name) for name, key in _FLAG_KEYS.items() if getattr(args, name, None) is not None}
    return apply_overrides(cfg, flags) if flags else cfg


def _out(args, cfg: RunConfig, default: str) -> Path:
    return Path(args.out) if args.out else Path(cfg.out) / default


def _need(args, name: str) -> str:
    value = getattr(args, name)
    if not value:
        raise UsageError(f"--{name} is required for {args.command}")
    return value


class UsageError(Exception):
    pass


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    out = _out(args, cfg, "dataset")
    ds = generate_dataset(cfg.fleet_seed, cfg.counts, cfg.ticks, cfg.n_test, cfg.excitation, threads=cfg.threads)
    write_dataset(ds, out)
    print(f"wrote {len(ds.trajectories)} machines x {cfg.ticks} ticks to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ds = read_dataset(_need(args, "data"))
    tc = cfg.train_config()
    model, metrics = train(tc, ds, on_epoch=lambda e, loss: log.info("epoch %d train_mse %.6g", e + 1, loss))
    for split in ("train", "test"):
        if ds.split_ids(split):
            metrics.splits[split] = evaluate(model, ds, split, tc.seq_len, tc.stride)
    out = _out(args, cfg, "model")
    reports.write_training_outputs(model, metrics, tc, out)
    last = metrics.epoch_train_mse[-1] if metrics.epoch_train_mse else float("nan")
    print(f"trained {tc.epochs} epochs, final train_mse {last:.6g}; wrote {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    ds = read_dataset(_need(args, "data"))
    model = load_model(_need(args, "model"))
    splits = ("train", "test") if args.split == "all" else (args.split,)
    results = {s: evaluate(model, ds, s, cfg.train.seq_len, cfg.train.stride) for s in splits}
    out = _out(args, cfg, "eval.json")
    reports.write_eval(results, out)
    for s, r in results.items():
        print(f"{s}: mse {r.aggregate:.6g} normalized {r.normalized:.6g} over {sum(r.window_counts.values())} windows")
    return 0


def cmd_embed(args) -> int:
    cfg = resolve_config(args)
    ds = read_dataset(_need(args, "data"))
    model = load_model(_need(args, "model"))
    records = analysis.embed_fleet(model, ds, cfg.samples_per_machine, cfg.embed_seed, cfg.train.seq_len)
    out = _out(args, cfg, "embeddings.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    analysis.write_records(records, out)
    print(f"wrote {len(records)} embedding records to {out}")
    return 0


def cmd_pca(args) -> int:
    records = analysis.read_records(_need(args, "data"))
    projections, basis, explained = analysis.pca3(records)
    out = Path(args.out) if args.out else Path("projections.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    analysis.write_projections(projections, basis, explained, records, out)
    out.with_suffix(".csv").write_text(analysis.coordinate_table(projections, records))
    print("explained variance " + " ".join(f"{v:.4f}" for v in explained) + f"; wrote {out}")
    return 0


def cmd_plot(args) -> int:
    projections, records, _, _ = analysis.read_projections(_need(args, "data"))
    out = Path(args.out) if args.out else Path(f"scatter_{args.tag}.svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    plotting.emit_scatter(projections, records, args.tag, out)
    print(f"wrote {out} and {out.with_suffix('.csv')}")
    return 0


def cmd_gradcheck(args) -> int:
    seed = 7 if args.seed is None else args.seed
    e = args.embed_dim or 4
    n = args.seq_len or 8
    err = acceptance.gradcheck(seed, e, n)
    ok = err < acceptance.GRADCHECK_TOL
    print(f"max rel err {err:.3e} ({'ok' if ok else 'above'} {acceptance.GRADCHECK_TOL:g})")
    return 0 if ok else 1


def cmd_repro(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out) if args.out else Path(cfg.out)
    results = acceptance.run_acceptance(cfg, out)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed; table at {out / 'acceptance.csv'}")
    return 1 if failed else 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
    "pca": cmd_pca,
    "plot": cmd_plot,
    "gradcheck": cmd_gradcheck,
    "repro": cmd_repro,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (*RUNTIME_ERRORS, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
