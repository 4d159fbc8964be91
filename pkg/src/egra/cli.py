"""Command-line entry point: ``egra <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence.
"""

import argparse
import logging
import os
import shutil
import sys

from egra import knn_graph
from egra.errors import ConfigError, DataError, TrainingDivergence
from egra.experiment import ExperimentConfig, parse_grid_text, run_experiment, run_grid
from egra.formats import ensure_dir, read_matrix, write_graph
from egra.trainer import ABLATIONS

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _add_common(p):
    p.add_argument("--config", required=True, help="flat key = value experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--ablation", choices=ABLATIONS, help="switch off model components")
    p.add_argument("--pretrained-embeddings", help="item embedding file; skips pretraining")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="extra config override (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="egra", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="load, split and validate inputs")
    _add_common(p)
    p = sub.add_parser("pretrain", help="train the backbone and export item embeddings")
    _add_common(p)
    p = sub.add_parser("build-graph", help="Top-H item graph from an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--topk", type=int, default=5, help="neighbors per item (H)")
    p.add_argument("--out", required=True, help="graph file to write")
    p = sub.add_parser("train", help="run the pipeline up to a trained checkpoint")
    _add_common(p)
    p = sub.add_parser("evaluate", help="run the full pipeline and print the report")
    _add_common(p)
    p = sub.add_parser("grid", help="grid search with a sensitivity table")
    _add_common(p)
    p.add_argument("--grid", required=True, help="file of 'key = v1, v2, ...' lines")
    p = sub.add_parser("longtail", help="per-popularity-group evaluation")
    _add_common(p)
    return parser


def load_config(args):
    cfg = ExperimentConfig.from_file(args.config)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.ablation:
        overrides["ablation"] = args.ablation
    if args.pretrained_embeddings:
        overrides["data.pretrained_embeddings"] = args.pretrained_embeddings
    if args.out:
        overrides["output"] = args.out
    return cfg.with_overrides(overrides) if overrides else cfg


def _run(args):
    if args.command == "build-graph":
        if not os.path.isfile(args.embeddings):
            raise ConfigError(f"embedding file not found: {args.embeddings}")
        emb = read_matrix(args.embeddings)
        try:
            graph = knn_graph.topk_binary_graph(emb, args.topk)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        write_graph(args.out, graph)
        print(f"wrote {args.out}: {emb.shape[0]} items, {graph.nnz} edges")
        return

    cfg = load_config(args)
    if args.command == "prepare-data":
        res = run_experiment(cfg, until="data")
        out = ensure_dir(cfg.output)
        shutil.copy(res.directories["data"] / "split.tsv", os.path.join(out, "split.tsv"))
        print(f"prepared data in {res.directories['data']}")
    elif args.command == "pretrain":
        res = run_experiment(cfg, until="pretrain")
        if "pretrain" not in res.directories:
            print("EBG ablation: nothing to pretrain")
            return
        out = ensure_dir(cfg.output)
        target = os.path.join(out, "pretrained.egraf")
        shutil.copy(res.directories["pretrain"] / "embeddings.egraf", target)
        print(f"wrote {target}")
    elif args.command == "train":
        res = run_experiment(cfg, until="train")
        print(f"trained: best epoch {res.best_epoch}, valid recall@20 {res.best_valid:.4f}, "
              f"checkpoint {res.directories['train'] / 'checkpoint'}")
    elif args.command == "evaluate":
        res = run_experiment(cfg)
        print(res.report.to_text(), end="")
    elif args.command == "longtail":
        res = run_experiment(cfg)
        with open(os.path.join(cfg.output, "longtail.tsv"), encoding="utf-8") as fh:
            print(fh.read(), end="")
    elif args.command == "grid":
        if not os.path.isfile(args.grid):
            raise ConfigError(f"grid file not found: {args.grid}")
        with open(args.grid, encoding="utf-8") as fh:
            grid = parse_grid_text(fh.read())
        res = run_grid(cfg, grid)
        with open(res.sensitivity_path, encoding="utf-8") as fh:
            print(fh.read(), end="")
        print(f"best cell {res.best['cell']}: {res.best['params']} "
              f"(valid recall@20 {res.best['valid_recall@20']:.4f})")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
