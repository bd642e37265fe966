"""Parameter storage and the layers used by the graph networks."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_FORMAT = "legogen-params"
CHECKPOINT_VERSION = 1

ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid}


class ParamStore:
    """Named parameter tensors, initialised reproducibly from a seed.

    Weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
    """

    def __init__(self, seed: int = 0):
        self._params: Dict[str, Tensor] = {}
        self._meta: Dict[str, dict] = {}
        self.rng = np.random.default_rng(seed)

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def num_values(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def add(self, name: str, shape: Tuple[int, ...], init: str = "uniform",
            fan_in: Optional[int] = None) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        if init == "uniform":
            fan_in = fan_in or shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            data = self.rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        self._meta[name] = {"init": init, "fan_in": fan_in}
        return t

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def copy_values(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_values(self, values: Dict[str, np.ndarray]):
        for k, v in values.items():
            if k not in self._params:
                raise KeyError(f"unknown parameter {k!r}")
            if self._params[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k}: {self._params[k].shape} vs {np.shape(v)}")
            self._params[k].data = np.array(v, dtype=np.float64)


def save_checkpoint(path: Union[str, Path], params: ParamStore, config: dict, kind: str) -> None:
    """JSON container: format tag, version, model kind, config header, row-major tensors."""
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "tensors": {k: {"shape": list(v.shape), "data": v.data.reshape(-1).tolist()}
                    for k, v in params.items()},
    }
    Path(path).write_text(json.dumps(obj, separators=(",", ":")), encoding="utf-8")


def read_checkpoint(path: Union[str, Path]) -> Tuple[str, dict, Dict[str, np.ndarray]]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {obj.get('version')}")
    values = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in obj["tensors"].items()}
    return obj["kind"], obj["config"], values


# ---------------------------------------------------------------------------
# layers


def init_linear(store: ParamStore, name: str, n_in: int, n_out: int):
    store.add(f"{name}.weight", (n_in, n_out), fan_in=n_in)
    store.add(f"{name}.bias", (1, n_out), init="zeros")


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return T.add(T.matmul(x, store[f"{name}.weight"]), store[f"{name}.bias"])


def init_mlp(store: ParamStore, name: str, layer_sizes: Sequence[int]):
    for i in range(len(layer_sizes) - 1):
        init_linear(store, f"{name}.{i}", layer_sizes[i], layer_sizes[i + 1])


def mlp_forward(store: ParamStore, name: str, x: Tensor, layer_sizes: Sequence[int],
                activation: str = "relu") -> Tensor:
    """Affine + activation on every hidden layer, affine output."""
    if x.shape[-1] != layer_sizes[0]:
        raise T.ShapeError(f"mlp {name}: input width {x.shape[-1]} != {layer_sizes[0]}")
    act = ACTIVATIONS[activation]
    n_layers = len(layer_sizes) - 1
    for i in range(n_layers):
        x = linear(store, f"{name}.{i}", x)
        if i < n_layers - 1:
            x = act(x)
    return x


def init_gru(store: ParamStore, name: str, n_in: int, hidden: int):
    store.add(f"{name}.w_input", (n_in, 3 * hidden), fan_in=n_in)
    store.add(f"{name}.w_hidden", (hidden, 3 * hidden), fan_in=hidden)
    store.add(f"{name}.b_input", (1, 3 * hidden), init="zeros")
    store.add(f"{name}.b_hidden", (1, 3 * hidden), init="zeros")


def gru_cell(store: ParamStore, name: str, x: Tensor, h: Tensor) -> Tensor:
    """Gated recurrent unit; gate blocks are ordered (reset, update, candidate).

    r = sig(x Wr + h Ur), z = sig(x Wz + h Uz), n = tanh(x Wn + r * (h Un)),
    h' = (1 - z) * n + z * h.
    """
    hidden = h.shape[1]
    if store[f"{name}.w_hidden"].shape[0] != hidden or \
            store[f"{name}.w_input"].shape[0] != x.shape[1]:
        raise T.ShapeError(f"gru {name}: input {x.shape} / hidden {h.shape} do not match parameters")
    gi = T.add(T.matmul(x, store[f"{name}.w_input"]), store[f"{name}.b_input"])
    gh = T.add(T.matmul(h, store[f"{name}.w_hidden"]), store[f"{name}.b_hidden"])
    H = hidden
    r = T.sigmoid(T.add(T.slice_cols(gi, 0, H), T.slice_cols(gh, 0, H)))
    z = T.sigmoid(T.add(T.slice_cols(gi, H, 2 * H), T.slice_cols(gh, H, 2 * H)))
    n = T.tanh(T.add(T.slice_cols(gi, 2 * H, 3 * H), T.mul(r, T.slice_cols(gh, 2 * H, 3 * H))))
    # (1 - z) * n + z * h == n + z * (h - n)
    return T.add(n, T.mul(z, T.sub(h, n)))
