"""Procedural stand-ins for the twelve human-built structure classes.

Each archetype lays out brick placements on the stud grid; ``assemble`` then
orders them the way a person would build (lowest reachable brick first) and
records every physical connection as an explicit edge.
"""
from __future__ import annotations

import heapq
from typing import Callable, Dict, List, Optional

import numpy as np

from .dataset import ARCHETYPES, BuildRecord, Dataset, make_dataset
from .lego import Edge, LegoGraph, Orientation, Placement, check_validity, physical_adjacency

X = Orientation.ALONG_X
Y = Orientation.ALONG_Y


def _grid(x0, y0, z, nx, ny, o) -> List[Placement]:
    w, d = o.extent
    return [Placement(x0 + w * i, y0 + d * j, z, o) for j in range(ny) for i in range(nx)]


def _slab(x0, y0, z, nx, ny, shift=2) -> List[Placement]:
    """Two interlocking AlongX layers covering a 4nx x 2ny rectangle."""
    out = _grid(x0, y0, z, nx, ny, X)
    tx, sx = (nx - 1, shift) if nx > 1 else (1, 0)
    ty, sy = (ny - 1, 1) if ny > 1 else (1, 0)
    if nx == 1 and ny == 1:
        return out + [Placement(x0, y0, z + 1, X)]
    return out + _grid(x0 + sx, y0 + sy, z + 1, tx, ty, X)


def _ring_layer(x0, y0, z, w, d, odd) -> List[Placement]:
    """One course of a hollow rectangular wall; w and d are multiples of 4."""
    out = []
    if not odd:
        out += _grid(x0, y0, z, w // 4, 1, X) + _grid(x0, y0 + d - 2, z, w // 4, 1, X)
        for y in range(y0 + 2, y0 + d - 2, 4):
            out += [Placement(x0, y, z, Y), Placement(x0 + w - 2, y, z, Y)]
    else:
        for y in range(y0, y0 + d, 4):
            out += [Placement(x0, y, z, Y), Placement(x0 + w - 2, y, z, Y)]
        out += _grid(x0 + 2, y0, z, (w - 4) // 4, 1, X)
        out += _grid(x0 + 2, y0 + d - 2, z, (w - 4) // 4, 1, X)
    return out


def _target(rng, params) -> int:
    if "n_bricks" in params:
        return int(params["n_bricks"])
    lo = int(params.get("min_bricks", 20))
    hi = int(params.get("max_bricks", 90))
    return int(rng.integers(lo, hi + 1))


def _line(rng, p):
    n = max(2, _target(rng, p))
    shift = int(p.get("shift", rng.integers(1, 4)))
    bottom = (n + 1) // 2
    out = [Placement(4 * i, 0, 0, X) for i in range(bottom)]
    out += [Placement(4 * i + shift, 0, 1, X) for i in range(n - bottom)]
    return out


def _wall(rng, p):
    n = _target(rng, p)
    width = int(p.get("width", rng.integers(3, 8)))
    height = int(p.get("height", max(2, round(n / (width - 0.5)))))
    shift = int(rng.integers(1, 4))
    out = []
    for z in range(height):
        if z % 2 == 0:
            out += _grid(0, 0, z, width, 1, X)
        else:
            out += _grid(shift, 0, z, width - 1, 1, X)
    return out


def _cuboid_course(a, b, z, kind) -> List[Placement]:
    """Courses of a solid 4a x 4b block; cycling kinds 0..3 interlocks every brick."""
    w, d = 4 * a, 4 * b
    if kind % 2 == 0:
        return _grid(0, 0, z, a, 2 * b, X)
    if kind == 1:
        # running bond along x, two AlongY columns closing the ends
        out = _grid(2, 0, z, a - 1, 2 * b, X)
        for y in range(0, d, 4):
            out += [Placement(0, y, z, Y), Placement(w - 2, y, z, Y)]
        return out
    # running bond along y, AlongX rows closing the ends
    out = _grid(0, 2, z, 2 * a, b - 1, Y)
    return out + _grid(0, 0, z, a, 1, X) + _grid(0, d - 2, z, a, 1, X)


def _cuboid(rng, p):
    n = _target(rng, p)
    a, b = [(1, 2), (2, 1), (2, 2)][int(rng.integers(0, 3))]
    per = 2 * a * b
    layers = int(p.get("layers", max(4, round(n / per))))
    out = []
    for z in range(layers):
        out += _cuboid_course(a, b, z, z % 4)
    return out


def _bar(rng, p):
    n = _target(rng, p)
    layers = int(p.get("layers", max(2, round(n / 2))))
    out = []
    for z in range(layers):
        if z % 2 == 0:
            out += [Placement(0, 0, z, X), Placement(0, 2, z, X)]
        else:
            out += [Placement(0, 0, z, Y), Placement(2, 0, z, Y)]
    return out


def _pyramid(rng, p):
    n = _target(rng, p)
    if "layers" in p:
        a = b = int(p["layers"])
    else:
        best = None
        for a_ in range(2, 10):
            for b_ in range(2, 10):
                count = sum((a_ - l) * (b_ - l) for l in range(min(a_, b_)))
                score = abs(count - n) + rng.random()
                if best is None or score < best[0]:
                    best = (score, a_, b_)
        _, a, b = best
    out = []
    for layer in range(min(a, b)):
        out += _grid(2 * layer, layer, layer, a - layer, b - layer, X)
    return out


def _plate(rng, p):
    n = _target(rng, p)
    nx = int(rng.integers(2, 7))
    ny = max(2, round((n + nx - 1) / (2 * nx - 1)))
    return _slab(0, 0, 0, nx, ny, shift=int(rng.integers(1, 4)))


def _legs(x0, y0, nx, ny, height):
    xs = [x0, x0 + 4 * (nx - 1)]
    ys = [y0, y0 + 2 * (ny - 1)]
    return [Placement(x, y, z, X) for x in xs for y in ys for z in range(height)]


def _table(rng, p):
    n = _target(rng, p)
    height = int(p.get("leg_height", rng.integers(3, 7)))
    rest = max(6, n - 4 * height)
    nx = int(rng.integers(2, 5))
    ny = max(2, round((rest + nx - 1) / (2 * nx - 1)))
    return _legs(0, 0, nx, ny, height) + _slab(0, 0, height, nx, ny)


def _bench(rng, p):
    n = _target(rng, p)
    height = int(rng.integers(1, 3))
    nx = max(3, round((n - 4 * height + 1) / 3))
    return _legs(0, 0, nx, 2, height) + _slab(0, 0, height, nx, 2)


def _sofa(rng, p):
    n = _target(rng, p)
    nx = int(rng.integers(2, 5))
    ny = int(rng.integers(4, 6))
    seat = _slab(0, 0, 0, nx, ny)
    back_y = 2 * ny - 3
    rest = max(4, n - len(seat))
    arm_h = int(rng.integers(1, 3))
    back_h = max(2, round((rest - 2 * arm_h) / (nx - 0.5 if nx > 1 else 1)))
    out = list(seat)
    for k in range(back_h):
        z = 2 + k
        if k % 2 == 0:
            out += _grid(2, back_y, z, nx - 1, 1, X)
        else:
            out += _grid(4, back_y, z, max(nx - 2, 1), 1, X) if nx > 2 else [Placement(2, back_y, z, X)]
    for k in range(arm_h):
        out += [Placement(2, 1, 2 + k, Y), Placement(4 * nx - 4, 1, 2 + k, Y)]
    return out


def _ring_size(rng, n, floor):
    d = 8
    best = None
    for w in (8, 12, 16):
        per = (w // 4) * 2 + 2  # bricks per course, averaged over parities
        for h in range(2, 12):
            count = per * h + (w // 2 * 2 if floor else 0)
            score = abs(count - n) + rng.random()
            if best is None or score < best[0]:
                best = (score, w, h)
    return best[1], d, best[2]


def _hollow(rng, p):
    w, d, h = _ring_size(rng, _target(rng, p), floor=False)
    out = []
    for z in range(h):
        out += _ring_layer(0, 0, z, w, d, z % 2 == 1)
    return out


def _cup(rng, p):
    w, d, h = _ring_size(rng, _target(rng, p), floor=True)
    out = _grid(0, 0, 0, w // 2, d // 4, Y)
    for z in range(h):
        out += _ring_layer(0, 0, z + 1, w, d, z % 2 == 1)
    return out


def _car(rng, p):
    n = _target(rng, p)
    nx = int(rng.integers(3, 6))
    out = [Placement(0, 0, 0, Y), Placement(4 * nx - 2, 0, 0, Y)]
    out += _slab(0, 0, 1, nx, 2)
    cabin = max(2, round((n - len(out)) / 2))
    xc = 2 * nx - 2
    for k in range(cabin):
        z = 3 + k
        if k % 2 == 0:
            out += [Placement(xc, 0, z, X), Placement(xc, 2, z, X)]
        else:
            out += [Placement(xc, 0, z, Y), Placement(xc + 2, 0, z, Y)]
    return out


_BUILDERS: Dict[str, Callable] = {
    "bar": _bar, "bench": _bench, "car": _car, "cuboid": _cuboid, "cup": _cup,
    "hollow": _hollow, "line": _line, "plate": _plate, "pyramid": _pyramid,
    "sofa": _sofa, "table": _table, "wall": _wall,
}
assert set(_BUILDERS) == set(ARCHETYPES)


def assemble(placements: List[Placement], class_label: Optional[int] = None) -> LegoGraph:
    """Order bricks lowest-first among those touching the built part; edges are all contacts."""
    pos = dict(enumerate(placements))
    pairs = physical_adjacency(pos)
    adj: Dict[int, List[int]] = {i: [] for i in pos}
    for u, v in pairs:
        adj[u].append(v)
        adj[v].append(u)

    def key(i):
        p = pos[i]
        return (p.z, p.y, p.x, i)

    start = min(pos, key=key)
    heap = [(key(start), start)]
    order, queued = [], {start}
    while heap:
        _, u = heapq.heappop(heap)
        order.append(u)
        for w in adj[u]:
            if w not in queued:
                queued.add(w)
                heapq.heappush(heap, (key(w), w))
    if len(order) != len(pos):
        raise RuntimeError("archetype layout is not connected")
    new_id = {old: new for new, old in enumerate(order)}
    nodes = [pos[old].orientation for old in order]
    by_node: Dict[int, List[Edge]] = {i: [] for i in range(len(order))}
    for u, v in pairs:
        pu, pv = pos[u], pos[v]
        e = Edge(new_id[u], new_id[v], pv.x - pu.x, pv.y - pu.y)
        by_node[max(e.src, e.dst)].append(e)
    edges = []
    for i in range(len(order)):
        edges += sorted(by_node[i], key=lambda e: min(e.src, e.dst))
    return LegoGraph(nodes, edges, class_label)


def synth_generate(class_name: str, size_params: Optional[dict] = None, seed=0) -> BuildRecord:
    """One synthetic build of ``class_name``; stochastic in size and stagger."""
    if class_name not in _BUILDERS:
        raise ValueError(f"unknown class {class_name!r}; expected one of {ARCHETYPES}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    placements = _BUILDERS[class_name](rng, dict(size_params or {}))
    class_id = ARCHETYPES.index(class_name)
    g = assemble(placements, class_id)
    report = check_validity(g)
    if not report.valid:
        raise RuntimeError(f"synthetic {class_name} is invalid: {report}")
    return BuildRecord(class_name, class_id, g)


def synth_dataset(per_class: int = 30, classes=ARCHETYPES, size_params: Optional[dict] = None,
                  seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    records = []
    for name in classes:
        for _ in range(per_class):
            records.append(synth_generate(name, size_params, rng))
    return make_dataset(records, [c for c in ARCHETYPES if c in set(classes)])
