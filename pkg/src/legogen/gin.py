"""Graph Isomorphism Network classifier used as the feature extractor for every metric.

Node inputs are the orientation one-hot plus in- and out-degree scaled by 1/8.
Each layer applies a two-layer MLP to ``(1 + eps) h + sum of neighbours`` over the
undirected skeleton; the embedding concatenates the sum-pooled output of every
layer, and a linear map of it gives the class logits.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from . import nn
from .dataset import BuildRecord, Dataset
from .lego import LegoGraph
from .nn import tensor as T
from .nn.layers import init_linear, init_mlp, linear, mlp_forward, read_checkpoint, save_checkpoint
from .nn.tensor import Tensor

NUM_FEATURES = 4
DEGREE_SCALE = 8.0


class EmptyGraphError(ValueError):
    pass


@dataclass
class GinConfig:
    num_layers: int = 3
    hidden: int = 64
    epsilon: float = 0.0
    readout: str = "sum_per_layer_concat"
    num_classes: int = 12

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.readout != "sum_per_layer_concat":
            raise ValueError(f"unknown readout {self.readout!r}")

    @property
    def embedding_dim(self) -> int:
        return self.num_layers * self.hidden


def node_features(g: LegoGraph) -> np.ndarray:
    x = np.zeros((g.num_nodes, NUM_FEATURES))
    if g.num_nodes:
        x[np.arange(g.num_nodes), [o.index for o in g.nodes]] = 1.0
        deg_in, deg_out = g.degrees()
        x[:, 2] = deg_in / DEGREE_SCALE
        x[:, 3] = deg_out / DEGREE_SCALE
    return x


@dataclass
class GraphBatch:
    """Block-diagonal batch: features, (A + (1+eps) I) operator and sum-pooling matrix."""
    features: np.ndarray
    operator: sp.csr_matrix
    pool: sp.csr_matrix

    @classmethod
    def build(cls, graphs: Sequence[LegoGraph], epsilon: float = 0.0) -> "GraphBatch":
        sizes = [g.num_nodes for g in graphs]
        if any(s == 0 for s in sizes):
            raise EmptyGraphError("GIN needs non-empty graphs")
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        n = int(offsets[-1])
        rows, cols = [], []
        for g, off in zip(graphs, offsets):
            pairs = {(min(e.src, e.dst), max(e.src, e.dst)) for e in g.edges}
            for u, v in sorted(pairs):
                rows += [off + u, off + v]
                cols += [off + v, off + u]
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        operator = (adj + (1.0 + epsilon) * sp.identity(n, format="csr")).tocsr()
        owner = np.repeat(np.arange(len(graphs)), sizes)
        pool = sp.csr_matrix((np.ones(n), (owner, np.arange(n))), shape=(len(graphs), n))
        feats = np.concatenate([node_features(g) for g in graphs], axis=0)
        return cls(feats, operator, pool)


class GIN:
    def __init__(self, config: Optional[GinConfig] = None, seed: int = 0):
        self.config = config or GinConfig()
        self.params = nn.ParamStore(seed)
        c = self.config
        self.sizes = []
        width = NUM_FEATURES
        for i in range(c.num_layers):
            self.sizes.append([width, c.hidden, c.hidden])
            init_mlp(self.params, f"layer{i}", self.sizes[-1])
            width = c.hidden
        init_linear(self.params, "classify", c.embedding_dim, c.num_classes)

    def forward_batch(self, batch: GraphBatch) -> Tuple[Tensor, Tensor]:
        h = Tensor(batch.features)
        pooled = []
        for i, sizes in enumerate(self.sizes):
            h = T.relu(mlp_forward(self.params, f"layer{i}", T.spmm(batch.operator, h), sizes))
            pooled.append(T.spmm(batch.pool, h))
        emb = T.concat(pooled, axis=1)
        return emb, linear(self.params, "classify", emb)

    def forward(self, g: LegoGraph) -> Tuple[np.ndarray, np.ndarray]:
        """(embedding, logits) of one graph."""
        emb, logits = self.forward_batch(GraphBatch.build([g], self.config.epsilon))
        return emb.data[0], logits.data[0]

    def embed(self, graphs: Sequence[LegoGraph], chunk: int = 256) -> np.ndarray:
        """Row i is the embedding of graph i."""
        if not len(graphs):
            return np.zeros((0, self.config.embedding_dim))
        return self._run(graphs, chunk)[0]

    def logits(self, graphs: Sequence[LegoGraph], chunk: int = 256) -> np.ndarray:
        if not len(graphs):
            return np.zeros((0, self.config.num_classes))
        return self._run(graphs, chunk)[1]

    def predict(self, graphs: Sequence[LegoGraph]) -> np.ndarray:
        return np.argmax(self.logits(graphs), axis=1)

    def _run(self, graphs, chunk):
        embs, logits = [], []
        for start in range(0, len(graphs), chunk):
            e, l = self.forward_batch(GraphBatch.build(graphs[start:start + chunk], self.config.epsilon))
            embs.append(e.data)
            logits.append(l.data)
        return np.concatenate(embs), np.concatenate(logits)

    def save(self, path: Union[str, Path], extra: Optional[dict] = None):
        cfg = asdict(self.config)
        if extra:
            cfg["_meta"] = extra
        save_checkpoint(path, self.params, cfg, kind="gin")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GIN":
        kind, cfg, values = read_checkpoint(path)
        if kind != "gin":
            raise ValueError(f"{path} holds a {kind!r} checkpoint, not gin")
        model = cls(GinConfig(**{k: v for k, v in cfg.items() if not k.startswith("_")}))
        model.params.load_values(values)
        return model


@dataclass
class GinTrainResult:
    model: GIN
    train_accuracy: float
    test_accuracy: float
    train_index: np.ndarray
    test_index: np.ndarray
    losses: List[float]


def stratified_split(labels: Sequence[int], test_fraction: float, rng: np.random.Generator
                     ) -> Tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    train_idx, test_idx = [], []
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_test = int(round(test_fraction * len(members)))
        if len(members) > 1:
            n_test = min(max(n_test, 1), len(members) - 1)
        test_idx += list(members[:n_test])
        train_idx += list(members[n_test:])
    return np.sort(np.array(train_idx, dtype=np.int64)), np.sort(np.array(test_idx, dtype=np.int64))


def train_gin(data: Union[Dataset, Sequence[BuildRecord]], config: Optional[GinConfig] = None,
              test_fraction: float = 0.2, epochs: int = 150, batch_size: int = 32,
              lr: float = 1e-3, seed: int = 0) -> GinTrainResult:
    """Cross-entropy training with a class-stratified held-out split."""
    records = list(data.records if isinstance(data, Dataset) else data)
    labels = np.array([r.class_id for r in records])
    if len(np.unique(labels)) < 2:
        raise ValueError("GIN training needs at least two classes")
    if config is None:
        config = GinConfig(num_classes=int(labels.max()) + 1)
    if labels.max() >= config.num_classes:
        raise ValueError(f"label {labels.max()} exceeds num_classes={config.num_classes}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = stratified_split(labels, test_fraction, rng)
    graphs = [r.graph for r in records]
    model = GIN(config, seed=seed)
    opt = nn.Adam(model.params, lr=lr)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            batch = GraphBatch.build([graphs[i] for i in idx], config.epsilon)
            with nn.Tape():
                _, logits = model.forward_batch(batch)
                loss = _batch_cross_entropy(logits, labels[idx])
                nn.backward(loss)
            opt.step()
            total += float(loss.data.reshape(())) * len(idx)
        losses.append(total / len(order))

    def acc(idx):
        if not len(idx):
            return float("nan")
        return float(np.mean(model.predict([graphs[i] for i in idx]) == labels[idx]))

    return GinTrainResult(model, acc(train_idx), acc(test_idx), train_idx, test_idx, losses)


def _batch_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row-wise softmax."""
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = -1.0 / len(labels)
    return T.sum(T.mul(T.log_softmax(logits), Tensor(onehot)))


def embed_set(model: GIN, graphs: Sequence[LegoGraph]) -> np.ndarray:
    if not len(graphs):
        raise ValueError("embed_set needs at least one graph")
    return model.embed(list(graphs))


def gin_accuracy(model: GIN, graphs: Sequence[LegoGraph], labels: Optional[Sequence[int]] = None
                 ) -> float:
    """Fraction of graphs classified as their conditioning label (``class_label`` by default)."""
    graphs = list(graphs)
    if not graphs:
        return float("nan")
    if labels is None:
        labels = [g.class_label for g in graphs]
    if any(l is None for l in labels):
        raise ValueError("every sample needs a conditioning label")
    nonempty = [i for i, g in enumerate(graphs) if g.num_nodes]
    hits = np.zeros(len(graphs), dtype=bool)
    if nonempty:
        pred = model.predict([graphs[i] for i in nonempty])
        hits[nonempty] = pred == np.asarray(labels)[nonempty]
    return float(hits.mean())


def write_embeddings_csv(path: Union[str, Path], embeddings: np.ndarray,
                         ids: Optional[Sequence] = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"e{j}" for j in range(embeddings.shape[1])])
        for i, row in enumerate(embeddings):
            w.writerow([ids[i] if ids is not None else i] + [repr(float(v)) for v in row])
