"""Build-sequence datasets: JSON Lines I/O, rotation augmentation and decision traces."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .lego import (Direction, Edge, LegoGraph, Orientation, canonical_key, check_validity,
                   implied_edges, rotate)

ARCHETYPES = ("bar", "bench", "car", "cuboid", "cup", "hollow",
              "line", "plate", "pyramid", "sofa", "table", "wall")


class DatasetParseError(ValueError):
    pass


class DatasetValidationError(ValueError):
    pass


@dataclass
class BuildRecord:
    class_name: str
    class_id: int
    graph: LegoGraph


@dataclass
class Dataset:
    records: List[BuildRecord] = field(default_factory=list)
    class_names: List[str] = field(default_factory=lambda: list(ARCHETYPES))

    def __len__(self):
        return len(self.records)

    def graphs(self) -> List[LegoGraph]:
        return [r.graph for r in self.records]

    def labels(self) -> np.ndarray:
        return np.array([r.class_id for r in self.records], dtype=np.int64)


def order_class_names(names) -> List[str]:
    """Archetype order first, unknown names after, sorted."""
    names = set(names)
    known = [c for c in ARCHETYPES if c in names]
    return known + sorted(names - set(ARCHETYPES))


def make_dataset(records: Sequence[BuildRecord], class_names=None) -> Dataset:
    """Assign dense class ids from class names."""
    if class_names is None:
        class_names = order_class_names(r.class_name for r in records)
    index = {c: i for i, c in enumerate(class_names)}
    out = [BuildRecord(r.class_name, index[r.class_name], r.graph.with_class(index[r.class_name]))
           for r in records]
    return Dataset(out, list(class_names))


# ---------------------------------------------------------------------------
# serialization


def graph_to_obj(g: LegoGraph, class_name: Optional[str] = None) -> dict:
    obj = {}
    if class_name is not None:
        obj["class"] = class_name
    obj["nodes"] = [{"o": o.value} for o in g.nodes]
    obj["edges"] = [{"s": e.src, "d": e.dst, "dx": e.dx, "dy": e.dy} for e in g.edges]
    return obj


def graph_from_obj(obj: dict, class_label: Optional[int] = None) -> LegoGraph:
    nodes = [Orientation(n["o"]) for n in obj["nodes"]]
    edges = [Edge(int(e["s"]), int(e["d"]), int(e["dx"]), int(e["dy"])) for e in obj["edges"]]
    return LegoGraph(nodes, edges, class_label)


def dumps_record(class_name: str, g: LegoGraph, meta: Optional[dict] = None) -> str:
    obj = graph_to_obj(g, class_name)
    if meta is not None:
        obj["meta"] = meta
    return json.dumps(obj, separators=(",", ":"), sort_keys=False)


def dumps_dataset(d: Dataset) -> str:
    return "".join(dumps_record(r.class_name, r.graph) + "\n" for r in d.records)


def save_dataset(d: Dataset, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_dataset(d), encoding="utf-8")


def _parse_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            name = obj["class"]
            g = graph_from_obj(obj)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(f"line {lineno}: {exc}") from exc
        yield lineno, name, g, obj.get("meta")


def check_assembly_order(g: LegoGraph) -> Optional[int]:
    """First node with no edge to an earlier node, or None."""
    linked = [False] * g.num_nodes
    for e in g.edges:
        later = max(e.src, e.dst)
        linked[later] = True
    for v in range(1, g.num_nodes):
        if not linked[v]:
            return v
    return None


def loads_dataset(text: str, class_names: Optional[List[str]] = None) -> Dataset:
    records = []
    for lineno, name, g, _ in _parse_lines(text):
        report = check_validity(g)
        if not report.valid:
            raise DatasetValidationError(f"record {len(records)} (line {lineno}, class {name!r}) "
                                         f"is not physically valid: {report}")
        bad = check_assembly_order(g)
        if bad is not None:
            raise DatasetValidationError(
                f"record {len(records)} (line {lineno}, class {name!r}): node {bad} has no edge "
                f"to an earlier node, so the node order is not a feasible assembly order")
        records.append(BuildRecord(name, -1, g))
    return make_dataset(records, class_names)


def load_dataset(path: Union[str, Path], class_names: Optional[List[str]] = None) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"), class_names)


def load_graphs(path: Union[str, Path]):
    """Read a sample file without validation: list of (class name, graph, meta)."""
    text = Path(path).read_text(encoding="utf-8")
    return [(name, g, meta) for _, name, g, meta in _parse_lines(text)]


# ---------------------------------------------------------------------------
# augmentation and statistics


def augment_rotations(d: Dataset, dedup: bool = False) -> Dataset:
    """Every record under 0, 90, 180 and 270 degree turns (optionally deduplicated)."""
    out = []
    seen = set()
    for r in d.records:
        for k in range(4):
            g = rotate(r.graph, k)
            if dedup:
                key = (r.class_name, canonical_key(g), g.nodes, g.edges)
                if key in seen:
                    continue
                seen.add(key)
            out.append(BuildRecord(r.class_name, r.class_id, g))
    return Dataset(out, list(d.class_names))


def dataset_stats(d: Dataset) -> dict:
    n = len(d.records)
    per_class: Dict[str, int] = {c: 0 for c in d.class_names}
    for r in d.records:
        per_class[r.class_name] = per_class.get(r.class_name, 0) + 1
    nodes = [r.graph.num_nodes for r in d.records]
    edges = [r.graph.num_edges for r in d.records]
    valid = [check_validity(r.graph).valid for r in d.records]
    return {
        "records": n,
        "classes": sum(1 for c in per_class.values() if c > 0),
        "per_class": per_class,
        "mean_nodes": float(np.mean(nodes)) if n else 0.0,
        "mean_edges": float(np.mean(edges)) if n else 0.0,
        "validity_rate": float(np.mean(valid)) if n else 0.0,
    }


# ---------------------------------------------------------------------------
# decision traces


@dataclass(frozen=True)
class AddNode:
    orientation: Orientation


@dataclass(frozen=True)
class StopNodes:
    pass


@dataclass(frozen=True)
class AddEdge:
    direction: Direction


@dataclass(frozen=True)
class StopEdges:
    pass


@dataclass(frozen=True)
class ChooseDest:
    node: int


@dataclass(frozen=True)
class ChooseOffset:
    dx: int
    dy: int


Decision = Union[AddNode, StopNodes, AddEdge, StopEdges, ChooseDest, ChooseOffset]


def derive_decision_trace(record: Union[BuildRecord, LegoGraph]) -> List[Decision]:
    """Teacher-forcing decisions that rebuild the record in its assembly order.

    Each brick's edges to earlier bricks are emitted in stored order, followed
    by its implied connections to earlier bricks sorted by the earlier brick's id.
    """
    g = record.graph if isinstance(record, BuildRecord) else record
    extra = implied_edges(g)  # raises on invalid graphs
    per_node: List[List[Edge]] = [[] for _ in g.nodes]
    for e in g.edges:
        per_node[max(e.src, e.dst)].append(e)
    implied_per_node: List[List[Edge]] = [[] for _ in g.nodes]
    for e in extra:
        implied_per_node[max(e.src, e.dst)].append(e)
    trace: List[Decision] = []
    for v, o in enumerate(g.nodes):
        trace.append(AddNode(o))
        imp = sorted(implied_per_node[v], key=lambda e: min(e.src, e.dst))
        for e in per_node[v] + imp:
            if e.dst == v:
                trace += [AddEdge(Direction.INCOMING), ChooseDest(e.src)]
            else:
                trace += [AddEdge(Direction.OUTGOING), ChooseDest(e.dst)]
            trace.append(ChooseOffset(e.dx, e.dy))
        trace.append(StopEdges())
    trace.append(StopNodes())
    return trace


def replay_trace(trace: Sequence[Decision], class_label: Optional[int] = None) -> LegoGraph:
    nodes: List[Orientation] = []
    edges: List[Edge] = []
    direction = None
    dest = None
    for step in trace:
        if isinstance(step, AddNode):
            nodes.append(step.orientation)
        elif isinstance(step, AddEdge):
            direction = step.direction
        elif isinstance(step, ChooseDest):
            dest = step.node
        elif isinstance(step, ChooseOffset):
            v = len(nodes) - 1
            if direction is Direction.INCOMING:
                edges.append(Edge(dest, v, step.dx, step.dy))
            else:
                edges.append(Edge(v, dest, step.dx, step.dy))
        elif isinstance(step, StopNodes):
            break
    return LegoGraph(nodes, edges, class_label)
