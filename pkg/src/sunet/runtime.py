"""Graph execution: parameters, state and the forward pass."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .graph import GraphError, NetworkGraph
from .tensor import Tensor


def param_shapes(graph: NetworkGraph) -> dict[str, tuple[int, int, int, int]]:
    """Learnable parameter shapes keyed by '<node>.<name>'."""
    shapes: dict[str, tuple[int, int, int, int]] = {}
    for node in graph.nodes:
        a = node.attrs
        if node.kind == "conv":
            shapes[f"{node.name}.w"] = (a["cout"], a["cin"], a["k"][0], a["k"][1])
            if a.get("bias"):
                shapes[f"{node.name}.b"] = (1, a["cout"], 1, 1)
        elif node.kind == "tconv":
            shapes[f"{node.name}.w"] = (a["cin"], a["cout"], a["k"][0], a["k"][1])
            if a.get("bias"):
                shapes[f"{node.name}.b"] = (1, a["cout"], 1, 1)
        elif node.kind == "linear":
            shapes[f"{node.name}.w"] = (a["cout"], a["cin"], 1, 1)
            if a.get("bias"):
                shapes[f"{node.name}.b"] = (1, a["cout"], 1, 1)
        elif node.kind == "bn":
            shapes[f"{node.name}.gamma"] = (1, a["c"], 1, 1)
            shapes[f"{node.name}.beta"] = (1, a["c"], 1, 1)
    return shapes


class Network:
    """A graph bound to parameters and batch-norm running statistics."""

    def __init__(self, graph: NetworkGraph, dtype=np.float32, seed: int = 0):
        self.graph = graph
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, np.ndarray] = {}
        self._init_state(seed)

    def _init_state(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for node in self.graph.nodes:
            a = node.attrs
            if node.kind in ("conv", "tconv"):
                cin = a["cin"]
                kh, kw = a["k"]
                std = float(np.sqrt(2.0 / (cin * kh * kw)))
                shape = ((a["cout"], cin, kh, kw) if node.kind == "conv"
                         else (cin, a["cout"], kh, kw))
                w = rng.normal(0.0, std, size=shape).astype(self.dtype)
                self.params[f"{node.name}.w"] = Tensor(w, requires_grad=True)
                if a.get("bias"):
                    b = np.zeros((1, a["cout"], 1, 1), dtype=self.dtype)
                    self.params[f"{node.name}.b"] = Tensor(b, requires_grad=True)
            elif node.kind == "linear":
                std = float(np.sqrt(2.0 / a["cin"]))
                w = rng.normal(0.0, std, size=(a["cout"], a["cin"], 1, 1)).astype(self.dtype)
                self.params[f"{node.name}.w"] = Tensor(w, requires_grad=True)
                if a.get("bias"):
                    b = np.zeros((1, a["cout"], 1, 1), dtype=self.dtype)
                    self.params[f"{node.name}.b"] = Tensor(b, requires_grad=True)
            elif node.kind == "bn":
                c = a["c"]
                self.params[f"{node.name}.gamma"] = Tensor(
                    np.ones((1, c, 1, 1), dtype=self.dtype), requires_grad=True)
                self.params[f"{node.name}.beta"] = Tensor(
                    np.zeros((1, c, 1, 1), dtype=self.dtype), requires_grad=True)
                self.stats[f"{node.name}.running_mean"] = np.zeros((1, c, 1, 1), dtype=np.float64)
                self.stats[f"{node.name}.running_var"] = np.ones((1, c, 1, 1), dtype=np.float64)

    # ------------------------------------------------------------- state

    def decay_param_names(self) -> set[str]:
        """Parameters subject to weight decay: conv/tconv/linear weights only."""
        names = set()
        for node in self.graph.nodes:
            if node.kind in ("conv", "tconv", "linear"):
                names.add(f"{node.name}.w")
        return names

    def state_entries(self) -> dict[str, np.ndarray]:
        entries = {f"param/{k}": t.data for k, t in self.params.items()}
        entries.update({f"stat/{k}": v for k, v in self.stats.items()})
        return entries

    def load_entries(self, entries: dict[str, np.ndarray]) -> None:
        for key, tensor in self.params.items():
            full = f"param/{key}"
            if full not in entries:
                raise GraphError(f"checkpoint is missing parameter {key!r}")
            arr = entries[full]
            if tuple(arr.shape) != tensor.data.shape:
                raise GraphError(
                    f"parameter {key!r}: checkpoint shape {tuple(arr.shape)} != {tensor.data.shape}")
            tensor.data = arr.astype(self.dtype, copy=True)
            tensor.grad = None
        for key in self.stats:
            full = f"stat/{key}"
            if full not in entries:
                raise GraphError(f"checkpoint is missing statistic {key!r}")
            self.stats[key] = entries[full].astype(np.float64, copy=True)

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    # ----------------------------------------------------------- forward

    def forward(self, x, training: bool = False, upto: str | None = None,
                collect: list[str] | None = None):
        """Run the graph; returns the output tensor.

        With collect, returns (output, {name: Tensor}) for the named nodes.
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.shape[1] != self.graph.in_channels:
            raise GraphError(
                f"input has {x.data.shape[1]} channels, graph declares {self.graph.in_channels}")
        in_hw = x.data.shape[2:]
        values: dict[str, Tensor] = {}
        wanted = set(collect or ())
        grabbed: dict[str, Tensor] = {}
        out = None
        for node in self.graph.nodes:
            if node.kind == "input":
                val = x
            else:
                val = self._apply(node, [values[s] for s in node.inputs], training, in_hw)
            values[node.name] = val
            if node.name in wanted:
                grabbed[node.name] = val
            out = val
            if upto is not None and node.name == upto:
                break
        if upto is not None and upto not in values:
            raise GraphError(f"node {upto!r} not in graph")
        if collect is not None:
            return out, grabbed
        return out

    def _apply(self, node, src, training: bool, in_hw) -> Tensor:
        a = node.attrs
        kind = node.kind
        if kind == "conv":
            return T.conv2d(src[0], self.params[f"{node.name}.w"],
                            self.params.get(f"{node.name}.b"),
                            stride=a["s"], dilation=a["d"], padding=a["p"])
        if kind == "tconv":
            return T.conv2d_transpose(src[0], self.params[f"{node.name}.w"],
                                      self.params.get(f"{node.name}.b"),
                                      stride=a["s"], dilation=a["d"], padding=a["p"],
                                      output_padding=a["op"])
        if kind == "bn":
            return T.batchnorm(src[0], self.params[f"{node.name}.gamma"],
                               self.params[f"{node.name}.beta"],
                               self.stats[f"{node.name}.running_mean"],
                               self.stats[f"{node.name}.running_var"],
                               training=training, decay=a["decay"], eps=a["eps"])
        if kind == "relu":
            return T.relu(src[0])
        if kind == "avg_pool":
            return T.avg_pool2d(src[0], window=a["window"], stride=a["s"],
                                dilation=a["d"], padding=a["pad"])
        if kind == "gap":
            return T.global_avg_pool(src[0])
        if kind == "linear":
            return T.linear(src[0], self.params[f"{node.name}.w"],
                            self.params.get(f"{node.name}.b"))
        if kind == "add":
            return T.add(src[0], src[1])
        if kind == "concat":
            return T.concat_channels(src)
        if kind == "upsample":
            to = a["to"]
            return T.bilinear_upsample(src[0], in_hw if to == "input" else to)
        if kind == "grid_mask":
            return T.phase_mask(src[0], a["period"], a["keep"])
        raise GraphError(f"node {node.name!r}: no executor for kind {kind!r}")
