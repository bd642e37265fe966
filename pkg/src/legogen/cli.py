"""Command-line entry point: ``legogen <command> ...`` or ``python -m legogen``.

Every subcommand takes ``--seed`` and ``--config FILE``; keys of the JSON
config (dashes or underscores) override the matching flags. Exit codes:
0 success, 1 usage error, 2 invalid input data.
"""
from __future__ import annotations

import argparse
import json
import shutil
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .dataset import (ARCHETYPES, DatasetParseError, DatasetValidationError, augment_rotations,
                      dataset_stats, dumps_record, load_dataset, load_graphs, save_dataset)
from .lego import LegoError, to_ldraw

EXIT_OK, EXIT_USAGE, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=str, default=None, help="JSON file whose keys override flags")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="legogen", description="Generative modelling of brick structures.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    ds = sub.add_parser("dataset", help="synthesise, inspect or augment datasets")
    ds_sub = ds.add_subparsers(dest="action", parser_class=_Parser)
    p = ds_sub.add_parser("gen", help="procedural synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=30)
    p.add_argument("--classes", nargs="+", default=list(ARCHETYPES))
    p.add_argument("--min-bricks", type=int, default=20)
    p.add_argument("--max-bricks", type=int, default=90)
    _common(p)
    p = ds_sub.add_parser("stats", help="summary statistics as JSON")
    p.add_argument("--dataset", required=True)
    _common(p)
    p = ds_sub.add_parser("augment", help="add the three quarter-turn rotations of every record")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dedup", action="store_true")
    _common(p)

    tr = sub.add_parser("train", help="train the generator or the GIN classifier")
    tr_sub = tr.add_subparsers(dest="action", parser_class=_Parser)
    p = tr_sub.add_parser("dgmlg")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--offset-head", choices=["categorical", "thermometer"], default="categorical")
    p.add_argument("--node-dim", type=int, default=64)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--gin", default=None, help="GIN checkpoint for per-epoch evaluation")
    p.add_argument("--eval-n", type=int, default=200)
    p.add_argument("--eval-restricted", action="store_true")
    p.add_argument("--max-nodes", type=int, default=150)
    _common(p)
    p = tr_sub.add_parser("gin")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--test-fraction", type=float, default=0.2)
    _common(p)

    p = sub.add_parser("generate", help="sample structures to JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--class", dest="class_name", default=None)
    p.add_argument("--dataset", default=None, help="class frequencies for proportional sampling")
    p.add_argument("--restricted", action="store_true")
    p.add_argument("--max-nodes", type=int, default=None)
    _common(p)

    p = sub.add_parser("evaluate", help="score generated structures against a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--gin", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--samples")
    src.add_argument("--baseline", action="store_true", help="random valid assemblies")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--restricted", action="store_true")
    p.add_argument("--max-nodes", type=int, default=None)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", default=None, help="report JSON path (stdout otherwise)")
    p.add_argument("--csv", default=None, help="append the report as one CSV row")
    _common(p)

    p = sub.add_parser("permute", help="permutation-drift analysis")
    p.add_argument("--dataset", default=None, help="defaults to a fresh synthetic 12 x 30 set")
    p.add_argument("--gin", default=None, help="defaults to a GIN trained on the dataset")
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--degree-every", type=int, default=25)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", default="permutation.csv")
    p.add_argument("--plots", default=None, help="directory for SVG charts")
    _common(p)

    ex = sub.add_parser("export", help="export structures")
    ex_sub = ex.add_subparsers(dest="action", parser_class=_Parser)
    p = ex_sub.add_parser("ldraw")
    p.add_argument("--input", required=True, help="dataset or sample JSONL")
    p.add_argument("--index", type=int, default=None, help="record to export (all if omitted)")
    p.add_argument("--out", required=True, help="file (one record) or directory")
    _common(p)

    p = sub.add_parser("nn", help="nearest training structure of each sample in GIN space")
    p.add_argument("--dataset", required=True)
    p.add_argument("--gin", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", default=None)
    _common(p)
    return parser


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if attr == "class":
            attr = "class_name"
        if attr in ("command", "action", "config") or not hasattr(args, attr):
            raise UsageError(f"unknown config key {key!r} for this command")
        setattr(args, attr, value)
    return args


def _emit(obj, out: Optional[str]):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _model_meta(path) -> dict:
    from .nn.layers import read_checkpoint
    _, cfg, _ = read_checkpoint(path)
    return cfg.get("_meta", {})


# ---------------------------------------------------------------------------
# commands


def cmd_dataset(args) -> int:
    if args.action == "gen":
        from .synth import synth_dataset
        unknown = [c for c in args.classes if c not in ARCHETYPES]
        if unknown:
            raise UsageError(f"unknown classes {unknown}")
        d = synth_dataset(args.per_class, args.classes,
                          {"min_bricks": args.min_bricks, "max_bricks": args.max_bricks}, args.seed)
        save_dataset(d, args.out)
        print(f"wrote {len(d)} records to {args.out}", file=sys.stderr)
    elif args.action == "stats":
        _emit(dataset_stats(load_dataset(args.dataset)), None)
    elif args.action == "augment":
        d = augment_rotations(load_dataset(args.dataset), dedup=args.dedup)
        save_dataset(d, args.out)
        print(f"wrote {len(d)} records to {args.out}", file=sys.stderr)
    else:
        raise UsageError("dataset needs one of: gen, stats, augment")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.action == "gin":
        from .gin import GinConfig, train_gin
        d = load_dataset(args.dataset)
        cfg = GinConfig(num_layers=args.layers, hidden=args.hidden, num_classes=len(d.class_names))
        res = train_gin(d, cfg, test_fraction=args.test_fraction, epochs=args.epochs,
                        batch_size=args.batch_size, lr=args.lr, seed=args.seed)
        res.model.save(args.out, extra={"class_names": d.class_names,
                                        "train_accuracy": res.train_accuracy,
                                        "test_accuracy": res.test_accuracy})
        _emit({"train_accuracy": res.train_accuracy, "test_accuracy": res.test_accuracy}, None)
        return EXIT_OK
    if args.action == "dgmlg":
        return _train_dgmlg(args)
    raise UsageError("train needs one of: dgmlg, gin")


def _train_dgmlg(args) -> int:
    from .gin import GIN
    from .harness import run_generation_eval, select_best_epoch, write_rows
    from .metrics import MetricReport
    from .model import DGMLG, ModelConfig, train

    d = load_dataset(args.dataset)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = ModelConfig(node_dim=args.node_dim, rounds=args.rounds, num_classes=len(d.class_names),
                      offset_head=args.offset_head, max_nodes=args.max_nodes)
    model = DGMLG(cfg, seed=args.seed)
    gin = GIN.load(args.gin) if args.gin else None
    meta = {"class_names": d.class_names}

    def hook(epoch, m):
        if gin is None or args.eval_n <= 0:
            return None
        rep, _ = run_generation_eval(m, gin, d, n=args.eval_n, restricted=args.eval_restricted,
                                     seed=args.seed + 1000 + epoch)
        return rep.to_dict()

    def log(stats):
        print(f"epoch {stats.epoch}: nll/structure {stats.mean_nll:.4f} "
              f"nll/decision {stats.mean_decision_nll:.4f}", file=sys.stderr)
        model.save(out / f"epoch_{stats.epoch:04d}.json", extra={**meta, "epoch": stats.epoch})

    history = train(model, d.records, args.epochs, batch_size=args.batch_size,
                    rng=np.random.default_rng(args.seed), lr=args.lr, eval_hook=hook, log=log)
    rows = []
    for s in history:
        row = {"epoch": s.epoch, "mean_nll": s.mean_nll, "mean_decision_nll": s.mean_decision_nll}
        if s.report:
            row.update({k: v for k, v in s.report.items() if k != "extra"})
        rows.append(row)
    columns = ["epoch", "mean_nll", "mean_decision_nll"]
    if history[0].report:
        columns += MetricReport().csv_fields()
    write_rows(out / "history.csv", columns, rows)
    if history[0].report:
        best = select_best_epoch([s.report for s in history])
    else:
        best = len(history) - 1
    shutil.copyfile(out / f"epoch_{best:04d}.json", out / "best.json")
    _emit({"best_epoch": best, "epochs": len(history)}, None)
    return EXIT_OK


def _class_names_for(model_path, dataset_path):
    if dataset_path:
        return load_dataset(dataset_path).class_names
    names = _model_meta(model_path).get("class_names")
    return names or list(ARCHETYPES)


def cmd_generate(args) -> int:
    from .harness import class_counts, model_sampler
    from .model import DGMLG
    model = DGMLG.load(args.model)
    names = _class_names_for(args.model, args.dataset)
    if len(names) != model.config.num_classes:
        raise UsageError(f"model has {model.config.num_classes} classes but {len(names)} names")
    if args.class_name is not None:
        if args.class_name not in names:
            raise UsageError(f"unknown class {args.class_name!r}; choose from {names}")
        counts = {names.index(args.class_name): args.n}
    elif args.dataset:
        counts = class_counts(load_dataset(args.dataset).labels(), args.n)
    else:
        counts = class_counts(np.arange(len(names)), args.n)
    draw = model_sampler(model, args.restricted, args.max_nodes)
    rng = np.random.default_rng(args.seed)
    epoch = _model_meta(args.model).get("epoch")
    i = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for c, k in counts.items():
            for _ in range(k):
                meta = {"seed": args.seed, "epoch": epoch, "restricted": bool(args.restricted),
                        "index": i}
                fh.write(dumps_record(names[c], draw(c, rng), meta) + "\n")
                i += 1
    return EXIT_OK


def _load_samples(path, class_names):
    out = []
    for name, g, _ in load_graphs(path):
        if name not in class_names:
            raise DatasetValidationError(f"sample class {name!r} is not in the dataset")
        out.append(g.with_class(class_names.index(name)))
    return out


def cmd_evaluate(args) -> int:
    from .gin import GIN
    from .harness import baseline_sampler, evaluate_samples, run_generation_eval
    d = load_dataset(args.dataset)
    gin = GIN.load(args.gin)
    if args.samples:
        rep = evaluate_samples(_load_samples(args.samples, d.class_names), d, gin, args.k)
    elif args.baseline:
        rep, _ = run_generation_eval(None, gin, d, args.n, seed=args.seed, k=args.k,
                                     sampler=baseline_sampler(d))
        rep.extra["sampler"] = "random_valid_assembly"
    else:
        from .model import DGMLG
        rep, _ = run_generation_eval(DGMLG.load(args.model), gin, d, args.n, args.restricted,
                                     args.seed, args.k, max_nodes=args.max_nodes)
    if args.csv:
        rep.append_csv(args.csv)
    _emit(rep.to_dict(), args.out)
    return EXIT_OK


def cmd_permute(args) -> int:
    from .gin import GIN, train_gin
    from .harness import PermutationConfig, run_permutation_analysis
    cfg = PermutationConfig(iterations=args.iterations, degree_every=args.degree_every,
                            seed=args.seed, k=args.k, dataset=args.dataset,
                            gin_checkpoint=args.gin, out_csv=args.out, plot_dir=args.plots)
    data = gin = None
    if args.dataset is None:
        from .synth import synth_dataset
        data = synth_dataset(30, seed=args.seed)
    if args.gin is None:
        data = data if data is not None else load_dataset(args.dataset)
        gin = train_gin(data, seed=args.seed).model
    run_permutation_analysis(cfg, data, gin)
    return EXIT_OK


def cmd_export(args) -> int:
    if args.action != "ldraw":
        raise UsageError("export needs: ldraw")
    graphs = [g for _, g, _ in load_graphs(args.input)]
    if args.index is not None:
        if not 0 <= args.index < len(graphs):
            raise UsageError(f"index {args.index} out of range for {len(graphs)} records")
        Path(args.out).write_text(to_ldraw(graphs[args.index], seed=args.seed), encoding="utf-8")
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, g in enumerate(graphs):
        (out / f"{i:05d}.ldr").write_text(to_ldraw(g, seed=args.seed + i), encoding="utf-8")
    return EXIT_OK


def cmd_nn(args) -> int:
    from .gin import GIN
    from .metrics import nearest_neighbour
    d = load_dataset(args.dataset)
    gin = GIN.load(args.gin)
    samples = _load_samples(args.samples, d.class_names)
    ref = gin.embed(d.graphs())
    emb = gin.embed(samples)
    rows = [{"sample": i, "nearest": nearest_neighbour(e, ref),
             "nearest_class": d.records[nearest_neighbour(e, ref)].class_name}
            for i, e in enumerate(emb)]
    _emit(rows, args.out)
    return EXIT_OK


COMMANDS = {"dataset": cmd_dataset, "train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "permute": cmd_permute, "export": cmd_export, "nn": cmd_nn}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        args = _apply_config(parser.parse_args(argv))
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        if getattr(args, "action", "") is None:
            raise UsageError(f"{args.command} needs a sub-command")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DatasetParseError, DatasetValidationError, LegoError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
