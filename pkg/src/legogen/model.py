"""Sequential generative model of brick graphs.

Nodes carry recurrent embeddings refreshed by ``rounds`` of message passing
(separate message/GRU parameters per round) whenever the structure changes.
Four heads drive generation: add a brick (or stop), add an edge to the newest
brick (none / incoming / outgoing), pick the other endpoint, and pick the
(dx, dy) offset as two independent per-axis choices. A one-hot class vector is
appended to every head input and to the node initialisation.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from . import nn
from .dataset import (AddEdge, AddNode, BuildRecord, ChooseDest, ChooseOffset, Decision, StopEdges,
                      StopNodes, derive_decision_trace)
from .lego import (NUM_OFFSETS, OFFSET_RANGE, Direction, Edge, LegoGraph, Orientation,
                   valid_options)
from .nn import tensor as T
from .nn.layers import (init_gru, init_linear, init_mlp, linear, gru_cell, mlp_forward,
                        read_checkpoint, save_checkpoint)
from .nn.tensor import Tensor

STOP = 2
NO_EDGE, INCOMING, OUTGOING = 0, 1, 2
_DIR_INDEX = {Direction.INCOMING: INCOMING, Direction.OUTGOING: OUTGOING}


class TraceError(ValueError):
    pass


@dataclass
class ModelConfig:
    node_dim: int = 64
    edge_dim: int = 16
    graph_dim: int = 128
    rounds: int = 2
    num_classes: int = 12
    offset_head: str = "categorical"  # or "thermometer"
    max_nodes: int = 150
    head_hidden: Tuple[int, ...] = (128,)
    activation: str = "relu"

    def __post_init__(self):
        self.head_hidden = tuple(self.head_hidden)
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.offset_head not in ("categorical", "thermometer"):
            raise ValueError(f"unknown offset head {self.offset_head!r}")

    @property
    def offset_outputs(self) -> int:
        return NUM_OFFSETS if self.offset_head == "categorical" else NUM_OFFSETS - 1

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["head_hidden"] = list(self.head_hidden)
        return d


class StepLogProb(NamedTuple):
    kind: str
    index: int
    logp: float


def thermometer_bits(index: int, width: int = NUM_OFFSETS - 1) -> np.ndarray:
    """Ordinal target: position i (1-based) is one iff i <= index."""
    return (np.arange(1, width + 1) <= index).astype(np.float64)


def thermometer_decode(bits: Sequence[float]) -> int:
    """Count leading ones up to the first zero."""
    k = 0
    for b in bits:
        if b < 0.5:
            break
        k += 1
    return k


def thermometer_index_probs(q: np.ndarray) -> np.ndarray:
    """Distribution of the decoded index when each bit is drawn with probability q_i."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    prefix = np.concatenate([[1.0], np.cumprod(q)])
    stop = np.concatenate([1.0 - q, [1.0]])
    return prefix * stop


def _softmax_np(x: np.ndarray) -> np.ndarray:
    x = x.reshape(-1)
    e = np.exp(x - x.max())
    return e / e.sum()


class DGMLG:
    """Parameters and forward pieces of the generative model."""

    def __init__(self, config: Optional[ModelConfig] = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.params = nn.ParamStore(seed)
        self._build()

    def _build(self):
        c = self.config
        H, S, G, C = c.node_dim, c.edge_dim, c.graph_dim, c.num_classes
        hid = list(c.head_hidden)
        p = self.params
        init_linear(p, "init_node", 2 + C, H)
        init_linear(p, "init_edge", 2 * NUM_OFFSETS + 1, S)
        for t in range(c.rounds):
            init_linear(p, f"prop{t}.msg", 2 * H + S + 1, 2 * H)
            init_gru(p, f"prop{t}.gru", 2 * H, H)
        init_linear(p, "graph.fm", H, G)
        init_linear(p, "graph.gm", H, 1)
        self.sizes = {
            "add_node": [G + C] + hid + [3],
            "add_edge": [G + H + C] + hid + [3],
            "dest": [2 * H + C] + hid + [1],
            "offset_x": [2 * H + C] + hid + [c.offset_outputs],
            "offset_y": [2 * H + C] + hid + [c.offset_outputs],
        }
        for name, sizes in self.sizes.items():
            init_mlp(p, name, sizes)

    # -- persistence -------------------------------------------------------
    def save(self, path: Union[str, Path], extra: Optional[dict] = None):
        cfg = self.config.to_dict()
        if extra:
            cfg = {**cfg, "_meta": extra}
        save_checkpoint(path, self.params, cfg, kind="dgmlg")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DGMLG":
        kind, cfg, values = read_checkpoint(path)
        if kind != "dgmlg":
            raise ValueError(f"{path} holds a {kind!r} checkpoint, not dgmlg")
        cfg = {k: v for k, v in cfg.items() if not k.startswith("_")}
        model = cls(ModelConfig(**cfg))
        model.params.load_values(values)
        return model

    # -- pieces ------------------------------------------------------------
    def cond(self, class_id: int) -> np.ndarray:
        c = np.zeros((1, self.config.num_classes))
        c[0, class_id] = 1.0
        return c

    def init_node(self, orientation: Orientation, cond: np.ndarray) -> Tensor:
        x = np.zeros((1, 2))
        x[0, orientation.index] = 1.0
        return linear(self.params, "init_node", Tensor(np.concatenate([x, cond], axis=1)))

    def init_edges(self, edges: Sequence[Edge]) -> Tensor:
        x = np.zeros((len(edges), 2 * NUM_OFFSETS + 1))
        for i, e in enumerate(edges):
            x[i, e.dx + OFFSET_RANGE] = 1.0
            x[i, NUM_OFFSETS + e.dy + OFFSET_RANGE] = 1.0
            x[i, -1] = 1.0 if e.dst > e.src else 0.0
        return linear(self.params, "init_edge", Tensor(x))

    def propagate(self, h: Tensor, s: Optional[Tensor], edges: Sequence[Edge],
                  rounds: Optional[int] = None) -> Tensor:
        """Message passing over both edge directions; a flag marks reversed messages."""
        rounds = self.config.rounds if rounds is None else rounds
        n, H = h.shape
        m = len(edges)
        if m:
            src = np.fromiter((e.src for e in edges), dtype=np.int64, count=m)
            dst = np.fromiter((e.dst for e in edges), dtype=np.int64, count=m)
            sender = np.concatenate([src, dst])
            receiver = np.concatenate([dst, src])
            flag = Tensor(np.concatenate([np.zeros(m), np.ones(m)])[:, None])
            s2 = T.gather(s, np.concatenate([np.arange(m), np.arange(m)]))
        for t in range(rounds):
            if m:
                inp = T.concat([T.gather(h, sender), T.gather(h, receiver), s2, flag], axis=1)
                msg = linear(self.params, f"prop{t}.msg", inp)
                a = T.segment_sum(msg, receiver, n)
            else:
                a = Tensor(np.zeros((n, 2 * H)))
            h = gru_cell(self.params, f"prop{t}.gru", a, h)
        return h

    def graph_embedding(self, h: Optional[Tensor]) -> Tensor:
        if h is None or h.shape[0] == 0:
            return Tensor(np.zeros((1, self.config.graph_dim)))
        gate = T.sigmoid(linear(self.params, "graph.gm", h))
        return T.sum(T.mul(gate, linear(self.params, "graph.fm", h)), axis=0)

    def head(self, name: str, x: Tensor) -> Tensor:
        return mlp_forward(self.params, name, x, self.sizes[name], self.config.activation)


class GenerationState:
    """A partial graph with node/edge embeddings for one class-conditioned build."""

    def __init__(self, model: DGMLG, class_id: int):
        if not 0 <= class_id < model.config.num_classes:
            raise ValueError(f"class id {class_id} out of range")
        self.model = model
        self.class_id = class_id
        self.cond_np = model.cond(class_id)
        self.cond = Tensor(self.cond_np)
        self.nodes: List[Orientation] = []
        self.edges: List[Edge] = []
        self.adjacent: List[set] = []
        self.h: Optional[Tensor] = None
        self.s: Optional[Tensor] = None
        self._stale = False
        self._hG: Optional[Tensor] = None

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def graph(self) -> LegoGraph:
        return LegoGraph(tuple(self.nodes), tuple(self.edges), self.class_id)

    def add_node(self, orientation: Orientation) -> int:
        emb = self.model.init_node(orientation, self.cond_np)
        self.h = emb if self.h is None else T.concat([self.h, emb], axis=0)
        self.nodes.append(orientation)
        self.adjacent.append(set())
        self._stale = True
        return len(self.nodes) - 1

    def add_edge(self, src: int, dst: int, dx: int, dy: int):
        e = Edge(src, dst, dx, dy)
        emb = self.model.init_edges([e])
        self.s = emb if self.s is None else T.concat([self.s, emb], axis=0)
        self.edges.append(e)
        self.adjacent[src].add(dst)
        self.adjacent[dst].add(src)
        self._stale = True

    def candidates(self, v: int) -> List[int]:
        return [u for u in range(len(self.nodes)) if u != v and u not in self.adjacent[v]]

    def ensure_propagated(self):
        if self._stale:
            self.h = self.model.propagate(self.h, self.s, self.edges)
            self._stale = False
            self._hG = None

    def graph_embedding(self) -> Tensor:
        self.ensure_propagated()
        if self._hG is None:
            self._hG = self.model.graph_embedding(self.h)
        return self._hG

    # -- heads (logits) ----------------------------------------------------
    def add_node_logits(self) -> Tensor:
        return self.model.head("add_node", T.concat([self.graph_embedding(), self.cond]))

    def add_edge_logits(self, v: int) -> Tensor:
        hG = self.graph_embedding()
        return self.model.head("add_edge", T.concat([hG, T.gather(self.h, [v]), self.cond]))

    def dest_logits(self, v: int, direction: Direction, candidates: Sequence[int]) -> Tensor:
        if not candidates:
            raise ValueError("no candidate destinations")
        self.ensure_propagated()
        k = len(candidates)
        cand = np.asarray(candidates, dtype=np.int64)
        mine = np.full(k, v, dtype=np.int64)
        src, dst = (cand, mine) if direction is Direction.INCOMING else (mine, cand)
        cond = Tensor(np.repeat(self.cond_np, k, axis=0))
        x = T.concat([T.gather(self.h, src), T.gather(self.h, dst), cond])
        return T.reshape(self.model.head("dest", x), (1, k))

    def offset_logits(self, src: int, dst: int) -> Tuple[Tensor, Tensor]:
        self.ensure_propagated()
        x = T.concat([T.gather(self.h, [src]), T.gather(self.h, [dst]), self.cond])
        return self.model.head("offset_x", x), self.model.head("offset_y", x)


# ---------------------------------------------------------------------------
# head distributions (inference helpers)


def add_node_distribution(state: GenerationState) -> np.ndarray:
    return _softmax_np(state.add_node_logits().data)


def add_edge_distribution(state: GenerationState, v: int) -> np.ndarray:
    return _softmax_np(state.add_edge_logits(v).data)


def destination_distribution(state: GenerationState, v: int, direction: Direction,
                             candidates: Sequence[int]) -> np.ndarray:
    return _softmax_np(state.dest_logits(v, direction, candidates).data)


def offset_distribution(state: GenerationState, src: int, dst: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-axis distributions over the seven offsets -3..3."""
    lx, ly = state.offset_logits(src, dst)
    if state.model.config.offset_head == "categorical":
        return _softmax_np(lx.data), _softmax_np(ly.data)
    return (thermometer_index_probs(T._sigmoid(lx.data)),
            thermometer_index_probs(T._sigmoid(ly.data)))


# ---------------------------------------------------------------------------
# teacher forcing


def _offset_nll(model: DGMLG, logits: Tensor, offset: int) -> Tensor:
    k = offset + OFFSET_RANGE
    if model.config.offset_head == "categorical":
        return T.cross_entropy(logits, k)
    return T.bernoulli_ce(logits, thermometer_bits(k))


def sequence_nll(model: DGMLG, trace: Sequence[Decision], class_id: int
                 ) -> Tuple[Tensor, List[StepLogProb]]:
    """Total negative log-likelihood of a decision trace under teacher forcing."""
    st = GenerationState(model, class_id)
    terms: List[Tensor] = []
    steps: List[StepLogProb] = []
    v = None
    direction = None
    dest = None
    expect = "node"

    def push(kind, index, term):
        terms.append(term)
        steps.append(StepLogProb(kind, index, -float(term.data.reshape(()))))

    for i, step in enumerate(trace):
        if isinstance(step, (AddNode, StopNodes)):
            if expect != "node":
                raise TraceError(f"step {i}: unexpected {step} while expecting {expect}")
            idx = step.orientation.index if isinstance(step, AddNode) else STOP
            push("add_node", idx, T.cross_entropy(st.add_node_logits(), idx))
            if isinstance(step, StopNodes):
                expect = "end"
                continue
            v = st.add_node(step.orientation)
            expect = "edge"
        elif isinstance(step, (AddEdge, StopEdges)):
            if expect != "edge":
                raise TraceError(f"step {i}: unexpected {step} while expecting {expect}")
            idx = NO_EDGE if isinstance(step, StopEdges) else _DIR_INDEX[step.direction]
            push("add_edge", idx, T.cross_entropy(st.add_edge_logits(v), idx))
            if isinstance(step, StopEdges):
                expect = "node"
            else:
                direction = step.direction
                expect = "dest"
        elif isinstance(step, ChooseDest):
            if expect != "dest":
                raise TraceError(f"step {i}: unexpected {step} while expecting {expect}")
            cands = st.candidates(v)
            if step.node not in cands:
                raise TraceError(f"step {i}: node {step.node} is not a legal destination for {v}")
            idx = cands.index(step.node)
            push("dest", idx, T.cross_entropy(st.dest_logits(v, direction, cands), idx))
            dest = step.node
            expect = "offset"
        elif isinstance(step, ChooseOffset):
            if expect != "offset":
                raise TraceError(f"step {i}: unexpected {step} while expecting {expect}")
            src, dst = (dest, v) if direction is Direction.INCOMING else (v, dest)
            lx, ly = st.offset_logits(src, dst)
            term = T.add(_offset_nll(model, lx, step.dx), _offset_nll(model, ly, step.dy))
            push("offset", (step.dx + OFFSET_RANGE) * NUM_OFFSETS + step.dy + OFFSET_RANGE, term)
            st.add_edge(src, dst, step.dx, step.dy)
            expect = "edge"
        else:
            raise TraceError(f"step {i}: unknown decision {step!r}")
    if expect != "end":
        raise TraceError("trace does not finish with StopNodes")
    total = T.sum(T.concat(terms, axis=0)) if len(terms) > 1 else terms[0]
    return total, steps


# ---------------------------------------------------------------------------
# sampling


def _choose(p: np.ndarray, mask: np.ndarray, rng: np.random.Generator, greedy: bool
            ) -> Tuple[int, float]:
    q = np.where(mask, p, 0.0)
    total = q.sum()
    if total <= 0:
        # every allowed action underflowed; fall back to uniform over the allowed ones
        q = mask.astype(np.float64)
        total = q.sum()
    q = q / total
    if greedy:
        idx = int(np.argmax(q))
    else:
        u = rng.random()
        idx = int(np.searchsorted(np.cumsum(q), u, side="right"))
        idx = min(idx, len(q) - 1)
        while q[idx] == 0:
            idx -= 1
    return idx, float(np.log(q[idx]))


def sample(model: DGMLG, class_id: int, restricted: bool = False,
           max_nodes: Optional[int] = None, rng=None, greedy: bool = False,
           min_nodes: int = 1) -> Tuple[LegoGraph, List[StepLogProb]]:
    """Ancestral (or greedy) generation of one graph.

    In restricted mode every head is masked to choices that keep the graph
    physically valid: an edge direction is offered only if some destination
    admits a collision-free, consistent offset, destinations only if they admit
    one, offsets only if valid; a brick without edges may not stop adding edges
    while a connection is possible. When no edge is possible the edge loop ends
    without consulting the head. Both modes exclude destinations already joined
    to the new brick. Forced decisions are not recorded in the log-probabilities.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    max_nodes = model.config.max_nodes if max_nodes is None else max_nodes
    st = GenerationState(model, class_id)
    logps: List[StepLogProb] = []
    while st.num_nodes < max_nodes:
        mask = np.ones(3, dtype=bool)
        if st.num_nodes < min_nodes:
            mask[STOP] = False
        a, lp = _choose(add_node_distribution(st), mask, rng, greedy)
        logps.append(StepLogProb("add_node", a, lp))
        if a == STOP:
            break
        v = st.add_node(Orientation.from_index(a))
        while True:
            if restricted:
                g = st.graph()
                opts = {d: valid_options(g, v, d)[1] for d in Direction}
            else:
                cands = st.candidates(v)
                opts = {d: {u: None for u in cands} for d in Direction}
            mask = np.array([True, bool(opts[Direction.INCOMING]), bool(opts[Direction.OUTGOING])])
            if not (mask[INCOMING] or mask[OUTGOING]):
                break
            if restricted and not st.adjacent[v]:
                mask[NO_EDGE] = False
            a, lp = _choose(add_edge_distribution(st, v), mask, rng, greedy)
            logps.append(StepLogProb("add_edge", a, lp))
            if a == NO_EDGE:
                break
            direction = Direction.INCOMING if a == INCOMING else Direction.OUTGOING
            dests = sorted(opts[direction])
            pd = destination_distribution(st, v, direction, dests)
            di, lp = _choose(pd, np.ones(len(dests), dtype=bool), rng, greedy)
            logps.append(StepLogProb("dest", di, lp))
            u = dests[di]
            src, dst = (u, v) if direction is Direction.INCOMING else (v, u)
            px, py = offset_distribution(st, src, dst)
            joint = np.outer(px, py).reshape(-1)
            omask = np.ones(NUM_OFFSETS * NUM_OFFSETS, dtype=bool)
            if restricted:
                omask[:] = False
                for dx, dy in opts[direction][u]:
                    omask[(dx + OFFSET_RANGE) * NUM_OFFSETS + dy + OFFSET_RANGE] = True
            oi, lp = _choose(joint, omask, rng, greedy)
            logps.append(StepLogProb("offset", oi, lp))
            dx, dy = oi // NUM_OFFSETS - OFFSET_RANGE, oi % NUM_OFFSETS - OFFSET_RANGE
            st.add_edge(src, dst, dx, dy)
    return st.graph(), logps


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochStats:
    epoch: int
    mean_nll: float           # per structure
    mean_decision_nll: float  # per decision
    report: Optional[dict] = None


def make_traces(records: Sequence[BuildRecord]) -> List[Tuple[List[Decision], int]]:
    return [(derive_decision_trace(r), r.class_id) for r in records]


def train(model: DGMLG, records: Sequence[BuildRecord], epochs: int, batch_size: int = 1,
          rng=None, lr: float = 1e-4,
          eval_hook: Optional[Callable[[int, DGMLG], Optional[dict]]] = None,
          checkpoint_dir: Optional[Union[str, Path]] = None,
          log: Optional[Callable[[EpochStats], None]] = None) -> List[EpochStats]:
    """Teacher-forced maximum likelihood with Adam over shuffled minibatches.

    The minibatch loss is the mean per-structure NLL. ``eval_hook(epoch, model)``
    may return a metric dict stored on that epoch's stats.
    """
    if not records:
        raise ValueError("cannot train on an empty dataset")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    traces = make_traces(records)
    opt = nn.Adam(model.params, lr=lr)
    history: List[EpochStats] = []
    for epoch in range(epochs):
        order = rng.permutation(len(traces))
        total = 0.0
        decisions = 0
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            model.params.zero_grad()
            for i in batch:
                trace, class_id = traces[i]
                with nn.Tape():
                    nll, steps = sequence_nll(model, trace, class_id)
                    loss = T.scale(nll, 1.0 / len(batch))
                    nn.backward(loss)
                total += float(nll.data.reshape(()))
                decisions += len(steps)
            opt.step()
        stats = EpochStats(epoch, total / len(traces), total / max(decisions, 1))
        if eval_hook is not None:
            stats.report = eval_hook(epoch, model)
        if checkpoint_dir is not None:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            model.save(Path(checkpoint_dir) / f"epoch_{epoch:04d}.json", extra={"epoch": epoch})
        history.append(stats)
        if log is not None:
            log(stats)
    return history
