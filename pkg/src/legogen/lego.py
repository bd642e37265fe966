"""Graph representation of 2x4 brick structures and its geometric semantics.

A structure is a directed labelled graph. Nodes are bricks carrying an
orientation, edges ``u -> v`` mean that ``u`` provides studs to ``v`` (``v``
sits one level above ``u``) and carry the anchor-to-anchor offset ``(dx, dy)``
in stud units. The anchor of a brick is the minimum-coordinate stud of its
footprint.
"""
from __future__ import annotations

import enum
import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

OFFSET_RANGE = 3
OFFSETS = tuple(range(-OFFSET_RANGE, OFFSET_RANGE + 1))
NUM_OFFSETS = len(OFFSETS)

Cell = Tuple[int, int, int]


class Orientation(enum.Enum):
    ALONG_X = "x"
    ALONG_Y = "y"

    @property
    def index(self) -> int:
        return 0 if self is Orientation.ALONG_X else 1

    @property
    def extent(self) -> Tuple[int, int]:
        """Footprint size (x studs, y studs)."""
        return (4, 2) if self is Orientation.ALONG_X else (2, 4)

    def toggled(self) -> "Orientation":
        return Orientation.ALONG_Y if self is Orientation.ALONG_X else Orientation.ALONG_X

    @classmethod
    def from_index(cls, i: int) -> "Orientation":
        return (cls.ALONG_X, cls.ALONG_Y)[i]


class Direction(enum.Enum):
    """Direction of a new edge relative to the most recently added brick."""

    INCOMING = "in"   # existing brick supports the new one
    OUTGOING = "out"  # new brick supports the existing one


class Edge(NamedTuple):
    src: int
    dst: int
    dx: int
    dy: int

    @property
    def label(self) -> Tuple[int, int]:
        return (self.dx, self.dy)


class Placement(NamedTuple):
    x: int
    y: int
    z: int
    orientation: Orientation

    def columns(self) -> List[Tuple[int, int]]:
        x, y = self.x, self.y
        return [(x + i, y + j) for i, j in _FOOTPRINT[self.orientation]]

    def cells(self) -> List[Cell]:
        x, y, z = self.x, self.y, self.z
        return [(x + i, y + j, z) for i, j in _FOOTPRINT[self.orientation]]


_FOOTPRINT = {o: tuple((i, j) for i in range(o.extent[0]) for j in range(o.extent[1]))
              for o in Orientation}


class LegoError(ValueError):
    pass


class OverconstraintError(LegoError):
    """Edge labels place some brick in two different positions."""


class DisconnectedError(LegoError):
    """Some brick cannot be reached from brick 0 through edges."""


class InvalidGraphError(LegoError):
    """Operation requires a physically valid graph."""


@dataclass(frozen=True)
class LegoGraph:
    nodes: Tuple[Orientation, ...] = ()
    edges: Tuple[Edge, ...] = ()
    class_label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(Edge(*e) for e in self.edges))
        n = len(self.nodes)
        seen = set()
        for e in self.edges:
            if e.src == e.dst:
                raise ValueError(f"self-loop on node {e.src}")
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise ValueError(f"edge {e} references a node outside [0, {n})")
            if (e.src, e.dst) in seen:
                raise ValueError(f"duplicate edge {e.src}->{e.dst}")
            if abs(e.dx) > OFFSET_RANGE or abs(e.dy) > OFFSET_RANGE:
                raise ValueError(f"edge {e} has an offset outside [-3, 3]")
            seen.add((e.src, e.dst))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def with_class(self, class_label: Optional[int]) -> "LegoGraph":
        return LegoGraph(self.nodes, self.edges, class_label)

    def add_edges(self, edges: Iterable[Edge]) -> "LegoGraph":
        return LegoGraph(self.nodes, self.edges + tuple(edges), self.class_label)

    def neighbours(self) -> List[Set[int]]:
        adj: List[Set[int]] = [set() for _ in self.nodes]
        for e in self.edges:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        return adj

    def degrees(self) -> Tuple[np.ndarray, np.ndarray]:
        """(in-degree, out-degree) per node."""
        deg_in = np.zeros(self.num_nodes, dtype=np.int64)
        deg_out = np.zeros(self.num_nodes, dtype=np.int64)
        for e in self.edges:
            deg_out[e.src] += 1
            deg_in[e.dst] += 1
        return deg_in, deg_out

    def remove_node(self, v: int) -> "LegoGraph":
        """Drop node ``v`` and its edges; later node ids shift down by one."""
        nodes = self.nodes[:v] + self.nodes[v + 1:]

        def remap(i):
            return i - 1 if i > v else i

        edges = [Edge(remap(e.src), remap(e.dst), e.dx, e.dy)
                 for e in self.edges if v not in (e.src, e.dst)]
        return LegoGraph(nodes, edges, self.class_label)


@dataclass
class ResolvedStructure:
    placements: Dict[int, Placement]
    occupied: Set[Cell] = field(default_factory=set)


@dataclass(frozen=True)
class ValidityReport:
    connected: bool
    resolvable: bool
    collision_free: bool
    offsets_connectable: bool

    @property
    def valid(self) -> bool:
        return (self.connected and self.resolvable and self.collision_free
                and self.offsets_connectable)


# ---------------------------------------------------------------------------
# geometry primitives


def footprints_overlap(a: Placement, b: Placement) -> bool:
    aw, ad = a.orientation.extent
    bw, bd = b.orientation.extent
    return (a.x < b.x + bw and b.x < a.x + aw
            and a.y < b.y + bd and b.y < a.y + ad)


def _label_overlaps(o_src: Orientation, o_dst: Orientation, dx: int, dy: int) -> bool:
    return footprints_overlap(Placement(0, 0, 0, o_src), Placement(dx, dy, 1, o_dst))


_OVERLAP_CACHE: Dict[Tuple[Orientation, Orientation], Tuple[Tuple[int, int], ...]] = {}


def overlapping_offsets(o_src: Orientation, o_dst: Orientation) -> Tuple[Tuple[int, int], ...]:
    """All labels (dx, dy) in the offset vocabulary whose footprints share a column."""
    key = (o_src, o_dst)
    if key not in _OVERLAP_CACHE:
        _OVERLAP_CACHE[key] = tuple((dx, dy) for dx in OFFSETS for dy in OFFSETS
                                    if _label_overlaps(o_src, o_dst, dx, dy))
    return _OVERLAP_CACHE[key]


def _bfs(n: int, nodes: Sequence[Orientation], edges: Sequence[Edge], root: int,
         skip: Optional[int] = None) -> Tuple[Dict[int, Placement], bool]:
    """Place every node reachable from ``root``; returns (placements, consistent)."""
    adj: List[List[Tuple[int, int, int, int]]] = [[] for _ in range(n)]
    for e in edges:
        if skip is not None and skip in (e.src, e.dst):
            continue
        adj[e.src].append((e.dst, e.dx, e.dy, 1))
        adj[e.dst].append((e.src, -e.dx, -e.dy, -1))
    for lst in adj:
        lst.sort()
    pos: Dict[int, Placement] = {root: Placement(0, 0, 0, nodes[root])}
    consistent = True
    queue = deque([root])
    while queue:
        u = queue.popleft()
        pu = pos[u]
        for v, dx, dy, dz in adj[u]:
            want = (pu.x + dx, pu.y + dy, pu.z + dz)
            pv = pos.get(v)
            if pv is None:
                pos[v] = Placement(want[0], want[1], want[2], nodes[v])
                queue.append(v)
            elif (pv.x, pv.y, pv.z) != want:
                consistent = False
    return pos, consistent


def resolve_placements(g: LegoGraph, root: int = 0) -> ResolvedStructure:
    """World placement of every brick, with ``root`` anchored at the origin.

    Raises OverconstraintError when two edge paths disagree on a brick's
    position and DisconnectedError when some brick is unreachable.
    """
    if g.num_nodes == 0:
        raise ValueError("cannot resolve an empty graph")
    pos, consistent = _bfs(g.num_nodes, g.nodes, g.edges, root)
    if not consistent:
        raise OverconstraintError("edge labels place a brick in two locations")
    if len(pos) != g.num_nodes:
        missing = sorted(set(range(g.num_nodes)) - set(pos))
        raise DisconnectedError(f"nodes {missing[:10]} unreachable from node {root}")
    occupied: Set[Cell] = set()
    for p in pos.values():
        occupied.update(p.cells())
    return ResolvedStructure(dict(sorted(pos.items())), occupied)


def _resolve_components(g: LegoGraph) -> Tuple[Dict[int, Placement], List[List[int]], bool]:
    """Resolve each connected component independently (anchored at its lowest id)."""
    placements: Dict[int, Placement] = {}
    components: List[List[int]] = []
    consistent = True
    for root in range(g.num_nodes):
        if root in placements:
            continue
        pos, ok = _bfs(g.num_nodes, g.nodes, g.edges, root)
        consistent &= ok
        placements.update(pos)
        components.append(sorted(pos))
    return placements, components, consistent


def check_validity(g: LegoGraph) -> ValidityReport:
    """Report every physical-validity flag of ``g``; never raises."""
    if g.num_nodes == 0:
        return ValidityReport(True, True, True, True)
    placements, components, consistent = _resolve_components(g)
    collision_free = True
    for comp in components:
        seen: Set[Cell] = set()
        for v in comp:
            for c in placements[v].cells():
                if c in seen:
                    collision_free = False
                    break
                seen.add(c)
            if not collision_free:
                break
        if not collision_free:
            break
    connectable = all(_label_overlaps(g.nodes[e.src], g.nodes[e.dst], e.dx, e.dy)
                      for e in g.edges)
    return ValidityReport(
        connected=len(components) == 1,
        resolvable=consistent,
        collision_free=collision_free,
        offsets_connectable=connectable,
    )


def is_valid(g: LegoGraph) -> bool:
    return check_validity(g).valid


def _require_valid(g: LegoGraph) -> ResolvedStructure:
    if g.num_nodes == 0:
        return ResolvedStructure({}, set())
    report = check_validity(g)
    if not report.valid:
        raise InvalidGraphError(f"graph is not physically valid: {report}")
    return resolve_placements(g)


def _cell_owner(placements: Dict[int, Placement]) -> Dict[Cell, int]:
    owner: Dict[Cell, int] = {}
    for v, p in placements.items():
        for c in p.cells():
            owner[c] = v
    return owner


def physical_adjacency(placements: Dict[int, Placement]) -> List[Tuple[int, int]]:
    """Every (lower, upper) brick pair that shares a stud column one level apart."""
    owner = _cell_owner(placements)
    pairs = set()
    for v, p in placements.items():
        for cx, cy in p.columns():
            u = owner.get((cx, cy, p.z - 1))
            if u is not None:
                pairs.add((u, v))
    return sorted(pairs)


def implied_edges(g: LegoGraph) -> List[Edge]:
    """Physical connections of a valid graph that carry no explicit edge."""
    res = _require_valid(g)
    explicit = {(e.src, e.dst) for e in g.edges}
    out = []
    for u, v in physical_adjacency(res.placements):
        if (u, v) not in explicit:
            pu, pv = res.placements[u], res.placements[v]
            out.append(Edge(u, v, pv.x - pu.x, pv.y - pu.y))
    return out


def close_implied(g: LegoGraph) -> LegoGraph:
    return g.add_edges(implied_edges(g))


def _offsets_against(placements: Dict[int, Placement], occupied: Set[Cell], u: int,
                     o_new: Orientation, direction: Direction) -> Set[Tuple[int, int]]:
    """Labels for an edge between fixed brick ``u`` and an unplaced brick."""
    pu = placements[u]
    foot = _FOOTPRINT[o_new]
    out = set()
    if direction is Direction.INCOMING:
        z, sign, labels = pu.z + 1, 1, overlapping_offsets(pu.orientation, o_new)
    else:
        z, sign, labels = pu.z - 1, -1, overlapping_offsets(o_new, pu.orientation)
    for dx, dy in labels:
        x, y = pu.x + sign * dx, pu.y + sign * dy
        if occupied.isdisjoint([(x + i, y + j, z) for i, j in foot]):
            out.add((dx, dy))
    return out


def valid_options(g: LegoGraph, new_node: int,
                  direction: Direction) -> Tuple[Set[int], Dict[int, Set[Tuple[int, int]]]]:
    """Destinations and labels for a new edge at ``new_node`` that keep ``g`` valid.

    For ``Direction.INCOMING`` the edge is ``dest -> new_node`` and for
    ``Direction.OUTGOING`` it is ``new_node -> dest``; labels are always the
    stored ``(dx, dy)`` of that edge.
    """
    n = g.num_nodes
    v = new_node
    others = [u for u in range(n) if u != v]
    if not others:
        return set(), {}
    adjacent = g.neighbours()[v]
    o_new = g.nodes[v]
    options: Dict[int, Set[Tuple[int, int]]] = {}

    if not adjacent:
        root = others[0]
        pos, consistent = _bfs(n, g.nodes, g.edges, root, skip=v)
        if not consistent or len(pos) != n - 1:
            return set(), {}
        occupied: Set[Cell] = set()
        for p in pos.values():
            for c in p.cells():
                if c in occupied:
                    return set(), {}
                occupied.add(c)
        if not all(_label_overlaps(g.nodes[e.src], g.nodes[e.dst], e.dx, e.dy) for e in g.edges):
            return set(), {}
        for u in others:
            offs = _offsets_against(pos, occupied, u, o_new, direction)
            if offs:
                options[u] = offs
    else:
        if not is_valid(g):
            return set(), {}
        pos = resolve_placements(g).placements
        pv = pos[v]
        want_z = pv.z - 1 if direction is Direction.INCOMING else pv.z + 1
        for u in others:
            if u in adjacent:
                continue
            pu = pos[u]
            if pu.z != want_z or not footprints_overlap(pu, pv):
                continue
            if direction is Direction.INCOMING:
                options[u] = {(pv.x - pu.x, pv.y - pu.y)}
            else:
                options[u] = {(pu.x - pv.x, pu.y - pv.y)}
    return set(options), options


# ---------------------------------------------------------------------------
# rotation and canonical keys


def _rotate_placement(p: Placement, k: int) -> Placement:
    cells = [(cx, cy) for cx, cy in p.columns()]
    for _ in range(k):
        # quarter turn of the unit square at (x, y) about the origin
        cells = [(-cy - 1, cx) for cx, cy in cells]
    x = min(c[0] for c in cells)
    y = min(c[1] for c in cells)
    o = p.orientation.toggled() if k % 2 else p.orientation
    return Placement(x, y, p.z, o)


def rotate(g: LegoGraph, quarter_turns: int) -> LegoGraph:
    """Rotate the physical structure counter-clockwise by ``quarter_turns`` x 90 degrees."""
    k = quarter_turns % 4
    res = _require_valid(g)
    if k == 0:
        return g
    rot = {v: _rotate_placement(p, k) for v, p in res.placements.items()}
    nodes = tuple(rot[v].orientation for v in range(g.num_nodes))
    edges = tuple(Edge(e.src, e.dst, rot[e.dst].x - rot[e.src].x, rot[e.dst].y - rot[e.src].y)
                  for e in g.edges)
    return LegoGraph(nodes, edges, g.class_label)


def _placement_text(placements: Iterable[Placement]) -> str:
    ps = list(placements)
    if not ps:
        return ""
    mx = min(p.x for p in ps)
    my = min(p.y for p in ps)
    mz = min(p.z for p in ps)
    rows = sorted((p.x - mx, p.y - my, p.z - mz, p.orientation.value) for p in ps)
    return ";".join(f"{x},{y},{z},{o}" for x, y, z, o in rows)


def canonical_text(g: LegoGraph) -> str:
    res = _require_valid(g)
    texts = []
    for k in range(4):
        texts.append(_placement_text(_rotate_placement(p, k) for p in res.placements.values()))
    return min(texts)


def canonical_key(g: LegoGraph) -> str:
    """Translation- and rotation-invariant fingerprint of the physical structure."""
    return hashlib.sha256(canonical_text(g).encode("ascii")).hexdigest()


# ---------------------------------------------------------------------------
# LDraw export

STUD_LDU = 20
BRICK_LDU = 24
_MATRIX = {
    Orientation.ALONG_X: "1 0 0 0 1 0 0 0 1",
    Orientation.ALONG_Y: "0 0 1 0 1 0 -1 0 0",
}
# 3001.dat rotates about its centre, so AlongY bricks shift by the difference
# between the two footprint centres to keep the rendered studs on the grid.
_CENTRE_SHIFT = {Orientation.ALONG_X: (0, 0), Orientation.ALONG_Y: (-1, 1)}


def ldraw_translation(p: Placement) -> Tuple[int, int, int]:
    sx, sy = _CENTRE_SHIFT[p.orientation]
    return ((p.x + sx) * STUD_LDU, -p.z * BRICK_LDU, (p.y + sy) * STUD_LDU)


def to_ldraw(g: LegoGraph, colors="random", seed: int = 0) -> str:
    """LDraw text with one ``3001.dat`` line per brick, in node order."""
    res = _require_valid(g)
    if isinstance(colors, str):
        if colors != "random":
            raise ValueError("colors must be a per-node sequence or 'random'")
        palette = (1, 2, 4, 5, 14, 15, 25, 27)
        rng = np.random.default_rng(seed)
        colors = [int(palette[i]) for i in rng.integers(0, len(palette), g.num_nodes)]
    colors = list(colors)
    if len(colors) != g.num_nodes:
        raise ValueError(f"need {g.num_nodes} colours, got {len(colors)}")
    lines = []
    for v in range(g.num_nodes):
        p = res.placements[v]
        tx, ty, tz = ldraw_translation(p)
        lines.append(f"1 {colors[v]} {tx} {ty} {tz} {_MATRIX[p.orientation]} 3001.dat")
    return "\n".join(lines) + ("\n" if lines else "")
