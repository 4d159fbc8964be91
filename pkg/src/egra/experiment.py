"""Configuration-driven experiment pipeline with content-hash stage caching.

Config files are flat ``key = value`` text with dotted keys, ``#`` comments
and paths relative to the file's directory::

    data.interactions = inter.txt
    data.features.visual = image.egraf
    data.features.textual = text.egraf
    train.batch_size = 2048
    align.lambda_min = 0.005
    graph.neighbors = 5
    ablation = none
    seed = 0
    output = runs/baby

Every stage writes into ``<cache>/<stage>-<hash>/`` and drops a ``DONE``
marker when it finishes; a rerun with the same inputs and parameters reuses
the directory. A failed stage keeps its partial files next to a ``FAILED``
marker holding the error.
"""

import dataclasses
import hashlib
import itertools
import json
import logging
import os
import shutil
import traceback
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path

import numpy as np

from egra import knn_graph
from egra.alignment import AlignmentSchedule
from egra.dataset import (
    SPLITS,
    InteractionDataset,
    assign_longtail_groups,
    check_features,
    load_interactions,
    read_split_manifest,
    split_8_1_1,
    write_split_manifest,
)
from egra.errors import ConfigError, DataError
from egra.evaluator import EvalReport, full_report, write_table
from egra.formats import ensure_dir, file_digest, read_graph, read_matrix, write_graph, write_matrix
from egra.model import Graphs, feature_tensors
from egra.trainer import ABLATIONS, TrainConfig, fit, pretrain_backbone, save_checkpoint

log = logging.getLogger(__name__)

ENHANCEMENTS = ("pretrained", "intersect")
STAGES = ("data", "pretrain", "graph", "train", "evaluate")

_TRAIN_KEYS = ("lr", "batch_size", "dim", "layers", "semantic_layers", "reg_weight",
               "patience", "max_epochs")
_ALIGN_KEYS = tuple(f.name for f in dataclasses.fields(AlignmentSchedule))
_SYNTH_KEYS = ("users", "items", "blocks", "seed", "latent_dim", "spread", "sharpness",
               "zipf", "min_items", "max_items", "feature_noise")
_PATH_KEYS = ("data.interactions", "data.split", "data.pretrained_embeddings")


def parse_config_text(text):
    """Flat ``key = value`` lines to a dict of strings."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        raw[key] = value
    return raw


def _convert(key, value, like):
    try:
        if isinstance(like, bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(like).__name__}") from None
    return value


def _is_path_key(key):
    return key in _PATH_KEYS or key.startswith("data.features.") or key in ("output", "cache")


@dataclass
class ExperimentConfig:
    """Resolved experiment settings. ``raw`` keeps the source mapping so that
    overrides can be layered on with :meth:`with_overrides`."""

    train: TrainConfig
    interactions: str = None
    split: str = None
    features: dict = field(default_factory=dict)
    pretrained_embeddings: str = None
    synthetic: dict = None
    enhancement: str = "pretrained"
    output: str = "egra-run"
    cache: str = None
    raw: dict = field(default_factory=dict, repr=False)
    base_dir: str = "."

    @property
    def seed(self):
        return self.train.seed

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_mapping(parse_config_text(path.read_text(encoding="utf-8")), path.parent)

    @classmethod
    def from_mapping(cls, raw, base_dir="."):
        raw = {k: str(v) for k, v in raw.items()}
        base = Path(base_dir)

        def resolve(value):
            return str(Path(value) if os.path.isabs(value) else base / value)

        defaults = TrainConfig()
        train_kw, align_kw, synth = {}, {}, {}
        features, kw = {}, {}
        for key, value in raw.items():
            section, _, name = key.partition(".")
            if section == "train" and name in _TRAIN_KEYS:
                train_kw[name] = _convert(key, value, getattr(defaults, name))
            elif section == "align" and name in _ALIGN_KEYS:
                align_kw[name] = _convert(key, value, getattr(defaults.schedule, name))
            elif key == "graph.neighbors":
                train_kw["neighbors"] = _convert(key, value, 0)
            elif key == "graph.knn_k":
                train_kw["knn_k"] = _convert(key, value, 0)
            elif key == "graph.enhancement":
                kw["enhancement"] = value
            elif key.startswith("data.features."):
                features[key[len("data.features."):]] = resolve(value)
            elif key.startswith("data.synthetic."):
                name = key[len("data.synthetic."):]
                if name not in _SYNTH_KEYS:
                    raise ConfigError(f"unknown synthetic data key {key!r}")
                synth[name] = _convert(key, value, 0.0 if name in ("spread", "sharpness", "zipf",
                                                                  "feature_noise") else 0)
            elif key in ("data.interactions", "data.split", "data.pretrained_embeddings"):
                kw[name] = resolve(value) if value else None
            elif key == "seed":
                train_kw["seed"] = _convert(key, value, 0)
            elif key == "ablation":
                if value.lower() not in ABLATIONS:
                    raise ConfigError(f"ablation must be one of {ABLATIONS}, got {value!r}")
                train_kw["ablation"] = value.lower()
            elif key in ("output", "cache"):
                kw[key] = resolve(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            schedule = AlignmentSchedule(**{**dataclasses.asdict(defaults.schedule), **align_kw})
            train = TrainConfig(**train_kw, schedule=schedule)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg = cls(train=train, features=features, synthetic=synth or None, raw=raw,
                  base_dir=str(base), **kw)
        cfg._check_consistency()
        return cfg

    def with_overrides(self, overrides):
        """New config with dotted ``key -> value`` overrides applied."""
        raw = dict(self.raw)
        for key, value in overrides.items():
            if value is None:
                raw.pop(key, None)
                continue
            value = str(value)
            if _is_path_key(key) and value and not os.path.isabs(value):
                # paths given on the command line are relative to the cwd
                value = os.path.abspath(value)
            raw[key] = value
        return ExperimentConfig.from_mapping(raw, self.base_dir)

    def _check_consistency(self):
        if self.enhancement not in ENHANCEMENTS:
            raise ConfigError(f"graph.enhancement must be one of {ENHANCEMENTS}, got {self.enhancement!r}")
        if self.synthetic is None and not (self.interactions or self.split):
            raise ConfigError("set data.interactions, data.split or data.synthetic.* keys")
        if self.synthetic is not None and (self.interactions or self.split or self.features):
            raise ConfigError("synthetic data cannot be combined with data files")
        if self.synthetic is None and not self.features:
            raise ConfigError("at least one data.features.<modality> path is required")
        if self.enhancement == "intersect" and self.train.ablation.ebg:
            raise ConfigError("the intersect enhancement needs the behavior-graph enhancement enabled")

    def check_files(self):
        """Raise :class:`ConfigError` naming every referenced file that is missing."""
        paths = [p for p in (self.interactions, self.split, self.pretrained_embeddings) if p]
        paths += list(self.features.values())
        missing = [p for p in paths if not os.path.isfile(p)]
        if missing:
            raise ConfigError("missing input files: " + ", ".join(missing))

    def cache_dir(self):
        return self.cache or os.path.join(self.output, "stages")

    def describe(self):
        """Canonical parameter record (paths replaced by content digests)."""
        out = {"train": _train_params(self.train), "enhancement": self.enhancement}
        out["inputs"] = _input_digests(self)
        return out

    def config_hash(self):
        return _digest(self.describe())


def _train_params(train):
    d = dataclasses.asdict(train)
    d.pop("seed")
    if train.ablation.ebg:
        # no enhanced graph, so H plays no part
        d.pop("neighbors")
    return d


def _input_digests(cfg):
    if cfg.synthetic is not None:
        return {"synthetic": cfg.synthetic, "seed": cfg.seed}
    out = {"seed": cfg.seed}
    for name in ("interactions", "split"):
        path = getattr(cfg, name)
        if path:
            out[name] = file_digest(path)
    out["features"] = {m: file_digest(p) for m, p in sorted(cfg.features.items())}
    return out


def _digest(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


class StageCache:
    """Content-keyed stage directories under one root."""

    def __init__(self, root):
        self.root = Path(root)
        self.hits = []

    def run(self, name, key_obj, build):
        key = _digest({"stage": name, **key_obj})
        directory = self.root / f"{name}-{key[:16]}"
        if (directory / "DONE").exists():
            log.info("reusing cached %s stage %s", name, directory.name)
            self.hits.append(name)
            return directory, key
        if directory.exists():
            shutil.rmtree(directory)
        ensure_dir(directory)
        log.info("running %s stage -> %s", name, directory)
        try:
            build(directory)
        except BaseException as exc:
            (directory / "FAILED").write_text(
                f"{type(exc).__name__}: {exc}\n\n{traceback.format_exc()}", encoding="utf-8")
            raise
        (directory / "DONE").write_text(key + "\n", encoding="utf-8")
        return directory, key


def _prepare_data(cfg, directory):
    if cfg.synthetic is not None:
        from egra.synthetic import make_synthetic

        opts = dict(cfg.synthetic)
        mapping = {"users": "num_users", "items": "num_items"}
        opts = {mapping.get(k, k): v for k, v in opts.items()}
        opts.setdefault("seed", cfg.seed)
        ds, features = make_synthetic(**opts)
        if opts["seed"] != cfg.seed:
            ds = split_8_1_1(InteractionDataset(ds.num_users, ds.num_items, ds.all_pairs()), cfg.seed)
    else:
        if cfg.split:
            ds = read_split_manifest(cfg.split)
        else:
            ds = split_8_1_1(load_interactions(cfg.interactions), cfg.seed)
        features = {m: read_matrix(p) for m, p in cfg.features.items()}
    features = check_features(features, ds.num_items)
    write_split_manifest(ds, directory / "split.tsv")
    for name in SPLITS:
        write_matrix(directory / f"{name}.egraf", getattr(ds, name).astype(np.float32).reshape(-1, 2))
    (directory / "users.txt").write_text("\n".join(ds.user_tokens) + "\n", encoding="utf-8")
    (directory / "items.txt").write_text("\n".join(ds.item_tokens) + "\n", encoding="utf-8")
    ensure_dir(directory / "features")
    for m, mat in features.items():
        write_matrix(directory / "features" / f"{m}.egraf", mat)


def load_prepared(directory):
    """Dataset and features from a finished data stage directory."""
    directory = Path(directory)
    users = (directory / "users.txt").read_text(encoding="utf-8").split("\n")[:-1]
    items = (directory / "items.txt").read_text(encoding="utf-8").split("\n")[:-1]
    splits = {s: read_matrix(directory / f"{s}.egraf").astype(np.int64) for s in SPLITS}
    ds = InteractionDataset(len(users), len(items), **splits, user_tokens=users, item_tokens=items)
    features = {p.stem: read_matrix(p) for p in sorted((directory / "features").glob("*.egraf"))}
    return ds, features


@dataclass
class ExperimentResult:
    report: EvalReport
    directories: dict
    cache_hits: list
    best_epoch: int
    best_valid: float
    config_hash: str


def run_experiment(config, until="evaluate", cache_dir=None):
    """Run data -> pretrain -> graph -> train -> evaluate, reusing cached stages.

    With the EBG ablation the pretrain and graph stages are skipped and the
    plain bipartite graph is used. ``graph.enhancement = intersect`` replaces
    the pretrained-embedding graph with the intersection of the per-modality
    Top-K graphs. Outputs land in ``config.output``: ``report.txt``,
    ``longtail.tsv`` and ``results.tsv`` next to the stage cache.
    """
    if until not in STAGES:
        raise ValueError(f"until must be one of {STAGES}")
    config.check_files()
    cache = StageCache(cache_dir or config.cache_dir())
    train_cfg = config.train
    dirs, keys = {}, {}

    inputs = _input_digests(config)
    dirs["data"], keys["data"] = cache.run("data", {"inputs": inputs}, lambda d: _prepare_data(config, d))
    if until == "data":
        return ExperimentResult(None, dirs, cache.hits, -1, float("nan"), config.config_hash())
    ds, features = load_prepared(dirs["data"])

    item_graph_key = "plain"
    if not train_cfg.ablation.ebg:
        if config.enhancement == "pretrained":
            dirs["pretrain"], keys["pretrain"] = _pretrain_stage(cache, config, ds, features, keys["data"])
            if until == "pretrain":
                return ExperimentResult(None, dirs, cache.hits, -1, float("nan"), config.config_hash())
            graph_key = {"upstream": keys["pretrain"], "mode": "pretrained", "h": train_cfg.neighbors}

            def build_graph(d):
                emb = read_matrix(dirs["pretrain"] / "embeddings.egraf")
                write_graph(d / "item_graph.egrag", knn_graph.topk_binary_graph(emb, train_cfg.neighbors))
        else:
            graph_key = {"upstream": keys["data"], "mode": "intersect", "k": train_cfg.knn_k}

            def build_graph(d):
                graphs = [knn_graph.topk_weighted_graph(f, train_cfg.knn_k) for f in features.values()]
                write_graph(d / "item_graph.egrag", reduce(knn_graph.build_gume_comparator_graph, graphs))
        dirs["graph"], keys["graph"] = cache.run("graph", graph_key, build_graph)
        item_graph_key = keys["graph"]
    elif until in ("pretrain", "graph"):
        log.info("EBG ablation: no pretraining or graph enhancement to run")
    if until in ("pretrain", "graph"):
        return ExperimentResult(None, dirs, cache.hits, -1, float("nan"), config.config_hash())

    train_key = {"data": keys["data"], "graph": item_graph_key, "params": _train_params(train_cfg),
                 "seed": train_cfg.seed}

    def build_train(d):
        item_graph = read_graph(dirs["graph"] / "item_graph.egrag") if "graph" in dirs else None
        graphs = Graphs.build(ds.R, features, item_graph, knn_k=train_cfg.knn_k)
        result = fit(ds, features, graphs, train_cfg, history_path=d / "history.jsonl")
        save_checkpoint(result.model, d / "checkpoint")
        table = result.final_table(graphs, feature_tensors(features)).numpy()
        write_matrix(d / "final_embeddings.egraf", table)
        (d / "best.txt").write_text(f"best_epoch = {result.best_epoch}\nbest_valid_recall@20 = "
                                    f"{result.best_valid}\n", encoding="utf-8")

    dirs["train"], keys["train"] = cache.run("train", train_key, build_train)
    best = dict(line.split(" = ") for line in (dirs["train"] / "best.txt").read_text().splitlines())
    best_epoch, best_valid = int(best["best_epoch"]), float(best["best_valid_recall@20"])
    if until == "train":
        return ExperimentResult(None, dirs, cache.hits, best_epoch, best_valid, config.config_hash())

    table = read_matrix(dirs["train"] / "final_embeddings.egraf")
    groups = assign_longtail_groups(ds)
    metadata = {"config_hash": config.config_hash()[:16], "seed": train_cfg.seed,
                "epoch": best_epoch, "ablation": _ablation_name(train_cfg),
                "valid_recall@20": f"{best_valid:.6f}"}
    report = full_report(table, ds, groups, metadata=metadata)
    out = ensure_dir(config.output)
    report.write(os.path.join(out, "report.txt"))
    write_table(os.path.join(out, "results.tsv"), [(_variant_label(config), report)])
    write_longtail_table(os.path.join(out, "longtail.tsv"), report)
    return ExperimentResult(report, dirs, cache.hits, best_epoch, best_valid, config.config_hash())


def _pretrain_stage(cache, config, ds, features, data_key):
    train_cfg = config.train
    if config.pretrained_embeddings:
        key = {"external": file_digest(config.pretrained_embeddings)}

        def build(d):
            emb = read_matrix(config.pretrained_embeddings)
            if emb.shape[0] != ds.num_items:
                raise DataError(f"pretrained embeddings have {emb.shape[0]} rows, dataset has "
                                f"{ds.num_items} items")
            write_matrix(d / "embeddings.egraf", emb)
    else:
        params = _train_params(train_cfg)
        params.pop("ablation")
        params.pop("neighbors", None)
        key = {"data": data_key, "params": params, "seed": train_cfg.seed}

        def build(d):
            pretrain_backbone(ds, features, train_cfg, out_path=d / "embeddings.egraf")

    return cache.run("pretrain", key, build)


def _ablation_name(train_cfg):
    abl = train_cfg.ablation
    if abl.en and abl.ep and not abl.ebg:
        return "bda"
    for name in ("ebg", "en", "ep"):
        if getattr(abl, name):
            return name
    return "none"


def _variant_label(config):
    name = _ablation_name(config.train)
    label = "EGRA" if name == "none" else f"EGRA/{name.upper()}"
    if config.enhancement == "intersect":
        label += "+intersect"
    return label


def write_longtail_table(path, report, metrics=("recall@20", "ndcg@20")):
    """Per-group metrics: one row per popularity group (1 = head)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("group\tusers\t" + "\t".join(metrics) + "\n")
        for g, rep in sorted(report.groups.items()):
            if rep is None:
                fh.write(f"{g}\t0\t" + "\t".join("nan" for _ in metrics) + "\n")
            else:
                fh.write(f"{g}\t{rep.num_users}\t" + "\t".join(f"{rep[m]:.4f}" for m in metrics) + "\n")


SENSITIVITY_KEYS = ("align.lambda_min", "align.warmup", "graph.neighbors")


def parse_grid_text(text):
    """``key = v1, v2, ...`` lines to an ordered ``{key: [values]}`` dict."""
    grid = {}
    for key, value in parse_config_text(text).items():
        values = [v.strip() for v in value.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"grid key {key!r} has no values")
        grid[key] = values
    if not grid:
        raise ConfigError("grid is empty")
    return grid


@dataclass
class GridResult:
    cells: list
    best: dict
    summary_path: str
    sensitivity_path: str


def run_grid(config, grid):
    """Run every combination of ``grid`` (dotted key -> values) and pick the
    cell with the highest validation Recall@20.

    Cells share one stage cache, so cells that differ only in training
    parameters reuse the data, pretraining and graph stages. Writes
    ``grid.tsv`` (all cells) and ``sensitivity.tsv`` (for each value of
    lambda_min, P and H, the best cell holding that value).
    """
    if not grid:
        raise ConfigError("grid is empty")
    keys = list(grid)
    out = ensure_dir(config.output)
    cache_dir = config.cache_dir()
    cells = []
    for n, values in enumerate(itertools.product(*(grid[k] for k in keys))):
        overrides = dict(zip(keys, values))
        cell_cfg = config.with_overrides({**overrides, "output": os.path.join(out, f"cell{n:03d}")})
        res = run_experiment(cell_cfg, cache_dir=cache_dir)
        cells.append({"cell": n, "params": overrides, "valid_recall@20": res.best_valid,
                      "report": res.report})
    best = max(cells, key=lambda c: (c["valid_recall@20"], -c["cell"]))
    summary = os.path.join(out, "grid.tsv")
    metrics = ("recall@20", "ndcg@20")
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("cell\t" + "\t".join(keys) + "\tvalid_recall@20\t" + "\t".join(metrics) + "\n")
        for c in cells:
            fh.write(f"{c['cell']}\t" + "\t".join(c["params"][k] for k in keys)
                     + f"\t{c['valid_recall@20']:.4f}\t"
                     + "\t".join(f"{c['report'][m]:.4f}" for m in metrics) + "\n")
    sensitivity = os.path.join(out, "sensitivity.tsv")
    with open(sensitivity, "w", encoding="utf-8") as fh:
        fh.write("parameter\tvalue\tvalid_recall@20\t" + "\t".join(metrics) + "\n")
        for key in SENSITIVITY_KEYS:
            if key not in grid:
                continue
            for value in grid[key]:
                pick = max((c for c in cells if c["params"][key] == value),
                           key=lambda c: c["valid_recall@20"])
                fh.write(f"{key}\t{value}\t{pick['valid_recall@20']:.4f}\t"
                         + "\t".join(f"{pick['report'][m]:.4f}" for m in metrics) + "\n")
    log.info("best cell %d: %s (valid R@20 %.4f)", best["cell"], best["params"], best["valid_recall@20"])
    return GridResult(cells, best, summary, sensitivity)
