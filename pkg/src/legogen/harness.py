"""Experiment drivers: permutation drift, generation evaluation and model selection."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import Dataset, load_dataset
from .gin import GIN, gin_accuracy
from .lego import (Direction, Edge, LegoGraph, Orientation, close_implied, is_valid,
                   valid_options)
from .metrics import (DEFAULT_K, MetricReport, dc_harmonic_mean, degree_mmd, embedding_metrics,
                      pct_novel, pct_valid)
from .lego import canonical_key

PERMUTATION_COLUMNS = ["iteration", "fd", "kd", "precision", "recall", "density", "coverage",
                       "gin_acc", "degree_mmd", "mean_nodes"]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# graph edits


def add_random_brick(g: LegoGraph, rng: np.random.Generator) -> LegoGraph:
    """Attach a brick of random orientation to a random brick, then add all implied edges.

    The partner is drawn uniformly among existing bricks, then a direction and an
    offset uniformly among those that keep the structure valid; partners without
    any valid placement are redrawn.
    """
    if g.num_nodes == 0:
        return LegoGraph([Orientation.from_index(int(rng.integers(2)))], [], g.class_label)
    orientation = Orientation.from_index(int(rng.integers(2)))
    grown = LegoGraph(g.nodes + (orientation,), g.edges, g.class_label)
    v = g.num_nodes
    opts = {d: valid_options(grown, v, d)[1] for d in Direction}
    partners = sorted(set(opts[Direction.INCOMING]) | set(opts[Direction.OUTGOING]))
    if not partners:
        raise RuntimeError("no brick can be attached; the input graph is not valid")
    u = partners[int(rng.integers(len(partners)))]
    dirs = [d for d in Direction if u in opts[d]]
    direction = dirs[int(rng.integers(len(dirs)))]
    labels = sorted(opts[direction][u])
    dx, dy = labels[int(rng.integers(len(labels)))]
    edge = Edge(u, v, dx, dy) if direction is Direction.INCOMING else Edge(v, u, dx, dy)
    return close_implied(grown.add_edges([edge]))


def deletable_nodes(g: LegoGraph) -> List[int]:
    """Nodes whose removal leaves a non-empty valid (hence connected) graph."""
    if g.num_nodes < 2:
        return []
    return [v for v in range(g.num_nodes) if is_valid(g.remove_node(v))]


def permute_once(g: LegoGraph, rng=None) -> LegoGraph:
    """Delete a random brick or add one, with equal probability.

    Deletions that would disconnect the structure are rejected and redrawn; when
    no deletion is possible the addition branch is taken.
    """
    rng = _rng(rng)
    if rng.random() < 0.5 and g.num_nodes >= 2:
        tried = set()
        while len(tried) < g.num_nodes:
            v = int(rng.integers(g.num_nodes))
            if v in tried:
                continue
            tried.add(v)
            h = g.remove_node(v)
            if is_valid(h):
                return h
    return add_random_brick(g, rng)


def random_valid_assembly(n_nodes: int, rng=None, class_label: Optional[int] = None) -> LegoGraph:
    """Baseline generator: grow a structure by random valid brick additions."""
    rng = _rng(rng)
    g = LegoGraph([], [], class_label)
    while g.num_nodes < n_nodes:
        g = add_random_brick(g, rng)
    return g


# ---------------------------------------------------------------------------
# logging helpers


def file_digest(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def content_hash(payload) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path: Union[str, Path], columns: Sequence[str], rows: Sequence[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def read_rows(path: Union[str, Path]) -> List[Dict[str, Optional[float]]]:
    with open(path, newline="") as fh:
        return [{k: (float(v) if v != "" else None) for k, v in row.items()}
                for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# permutation analysis


@dataclass
class PermutationConfig:
    iterations: int = 500
    degree_every: int = 25
    seed: int = 0
    k: int = DEFAULT_K
    dataset: Optional[str] = None
    gin_checkpoint: Optional[str] = None
    out_csv: Optional[str] = None
    plot_dir: Optional[str] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.degree_every < 1:
            raise ValueError("degree_every must be >= 1")


@dataclass
class ExperimentLog:
    config: dict
    input_hash: str
    rows: List[dict] = field(default_factory=list)

    def append(self, row: dict):
        if self.rows and row["iteration"] <= self.rows[-1]["iteration"]:
            raise ValueError("log rows must be appended in increasing iteration order")
        self.rows.append(row)

    def column(self, name: str) -> List[Optional[float]]:
        return [r.get(name) for r in self.rows]

    def sidecar(self) -> dict:
        return {"config": self.config, "input_hash": self.input_hash, "rows": len(self.rows)}


def permutation_row(iteration: int, ref_emb: np.ndarray, gin: GIN, reference: Sequence[LegoGraph],
                    copies: Sequence[LegoGraph], k: int, with_degree: bool) -> dict:
    emb = gin.embed(list(copies))
    rep = embedding_metrics(ref_emb, emb, k)
    return {
        "iteration": iteration, "fd": rep.fd, "kd": rep.kd, "precision": rep.precision,
        "recall": rep.recall, "density": rep.density, "coverage": rep.coverage,
        "gin_acc": gin_accuracy(gin, copies),
        "degree_mmd": degree_mmd(reference, copies) if with_degree else None,
        "mean_nodes": float(np.mean([g.num_nodes for g in copies])),
    }


def run_permutation_analysis(cfg: PermutationConfig, data: Optional[Dataset] = None,
                             gin: Optional[GIN] = None,
                             progress: Optional[Callable[[dict], None]] = None) -> ExperimentLog:
    """Drift a copy of the dataset one edit per graph per iteration and track every metric.

    Row 0 compares the untouched copy with the reference. Degree MMD is computed
    on row 0 and every ``degree_every`` iterations, left blank otherwise.
    """
    hashes = {}
    if data is None:
        if cfg.dataset is None:
            raise ValueError("no dataset given")
        data = load_dataset(cfg.dataset)
        hashes["dataset"] = file_digest(cfg.dataset)
    else:
        hashes["dataset"] = content_hash([canonical_key(g) for g in data.graphs()])
    if gin is None:
        if cfg.gin_checkpoint is None:
            raise ValueError("no GIN checkpoint given")
        gin = GIN.load(cfg.gin_checkpoint)
        hashes["gin"] = file_digest(cfg.gin_checkpoint)
    else:
        hashes["gin"] = content_hash({k: v.data.reshape(-1).tolist()[:64] for k, v in gin.params.items()})
    # where the outputs go does not change what was computed
    run_cfg = {k: v for k, v in asdict(cfg).items() if k not in ("out_csv", "plot_dir")}
    log = ExperimentLog(asdict(cfg), content_hash({"config": run_cfg, "inputs": hashes}))

    rng = np.random.default_rng(cfg.seed)
    reference = data.graphs()
    ref_emb = gin.embed(reference)
    copies = list(reference)
    for it in range(cfg.iterations + 1):
        if it > 0:
            copies = [permute_once(g, rng) for g in copies]
        row = permutation_row(it, ref_emb, gin, reference, copies, cfg.k,
                              it % cfg.degree_every == 0)
        log.append(row)
        if progress is not None:
            progress(row)

    if cfg.out_csv:
        write_rows(cfg.out_csv, PERMUTATION_COLUMNS, log.rows)
        Path(cfg.out_csv).with_suffix(".log.json").write_text(
            json.dumps(log.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if cfg.plot_dir:
        from .plots import write_metric_plots
        write_metric_plots(log.rows, cfg.plot_dir, x="iteration",
                           metrics=PERMUTATION_COLUMNS[1:])
    return log


# ---------------------------------------------------------------------------
# generation evaluation


def class_counts(labels: Sequence[int], n: int) -> Dict[int, int]:
    """Split ``n`` across classes in proportion to their frequency (largest remainder)."""
    classes, freq = np.unique(np.asarray(labels), return_counts=True)
    exact = n * freq / freq.sum()
    counts = np.floor(exact).astype(int)
    rest = n - counts.sum()
    order = sorted(range(len(classes)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return {int(c): int(k) for c, k in zip(classes, counts)}


Sampler = Callable[[int, np.random.Generator], LegoGraph]


def model_sampler(model, restricted: bool, max_nodes: Optional[int] = None) -> Sampler:
    from .model import sample

    def draw(class_id, rng):
        g, _ = sample(model, class_id, restricted=restricted, max_nodes=max_nodes, rng=rng)
        return g.with_class(class_id)
    return draw


def baseline_sampler(data: Dataset) -> Sampler:
    """Random valid assemblies whose sizes follow the class's empirical node counts."""
    sizes: Dict[int, List[int]] = {}
    for r in data.records:
        sizes.setdefault(r.class_id, []).append(r.graph.num_nodes)

    def draw(class_id, rng):
        pool = sizes[class_id]
        return random_valid_assembly(pool[int(rng.integers(len(pool)))], rng, class_id)
    return draw


def generate_samples(sampler: Sampler, labels: Sequence[int], n: int, seed=0
                     ) -> List[LegoGraph]:
    rng = _rng(seed)
    out = []
    for c, count in class_counts(labels, n).items():
        for _ in range(count):
            out.append(sampler(c, rng))
    return out


def evaluate_samples(generated: Sequence[LegoGraph], data: Dataset, gin: GIN,
                     k: int = DEFAULT_K, ref_emb: Optional[np.ndarray] = None,
                     train_keys: Optional[set] = None) -> MetricReport:
    """Every metric of a generated set against the whole dataset as reference."""
    generated = list(generated)
    nonempty = [g for g in generated if g.num_nodes]
    if ref_emb is None:
        ref_emb = gin.embed(data.graphs())
    rep = embedding_metrics(ref_emb, gin.embed(nonempty), k)
    rep.gin_accuracy = gin_accuracy(gin, generated)
    rep.pct_valid = pct_valid(generated)
    rep.pct_novel = pct_novel(generated, train_keys if train_keys is not None else data)
    rep.degree_mmd = degree_mmd(data.graphs(), nonempty)
    per_class: Dict[str, dict] = {}
    for g in generated:
        name = data.class_names[g.class_label] if g.class_label is not None else "none"
        entry = per_class.setdefault(name, {"count": 0, "nodes": 0})
        entry["count"] += 1
        entry["nodes"] += g.num_nodes
    rep.extra = {
        "mean_nodes": float(np.mean([g.num_nodes for g in generated])),
        "per_class": {c: {"count": e["count"], "mean_nodes": e["nodes"] / e["count"]}
                      for c, e in sorted(per_class.items())},
    }
    return rep


def run_generation_eval(model, gin: GIN, data: Dataset, n: int = 200, restricted: bool = False,
                        seed: int = 0, k: int = DEFAULT_K, sampler: Optional[Sampler] = None,
                        max_nodes: Optional[int] = None) -> Tuple[MetricReport, List[LegoGraph]]:
    """Sample ``n`` class-proportional graphs (from ``model`` unless ``sampler`` is given) and score them."""
    if sampler is None:
        if model is None:
            raise ValueError("need a model or a sampler")
        sampler = model_sampler(model, restricted, max_nodes)
    generated = generate_samples(sampler, data.labels(), n, seed)
    rep = evaluate_samples(generated, data, gin, k)
    rep.extra["restricted"] = restricted
    return rep, generated


def select_best_epoch(reports: Sequence[Union[MetricReport, dict]]) -> int:
    """Index of the report with the highest density/coverage harmonic mean; earliest on ties."""
    if not reports:
        raise ValueError("no reports to select from")
    best, best_score = 0, -math.inf
    for i, r in enumerate(reports):
        d = r if isinstance(r, dict) else r.to_dict()
        score = d.get("dc_harmonic_mean")
        if score is None:
            score = dc_harmonic_mean(d["density"], d["coverage"])
        if score > best_score:
            best, best_score = i, score
    return best
