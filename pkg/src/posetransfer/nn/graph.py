"""Layer specs and network graph descriptions.

Graphs are immutable descriptions; parameters live in a separate ordered
``dict[str, np.ndarray]`` keyed by layer path such as ``conv1.W`` or
``branch.LA.fc.W``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


@dataclass(frozen=True)
class TemporalConv:
    filters: int = 64
    kernel: tuple[int, int] = (5, 1)
    activation: str = "relu"

    def __post_init__(self):
        if tuple(self.kernel) != (5, 1):
            raise ValueError("temporal convolutions use a [5, 1] kernel")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "kernel", tuple(self.kernel))


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unsupported activation {self.activation!r}")


@dataclass(frozen=True)
class Dropout:
    p: float = 0.5

    def __post_init__(self):
        if not 0 <= self.p < 1:
            raise ValueError(f"dropout probability must be in [0, 1), got {self.p}")


@dataclass(frozen=True)
class SoftmaxOutput:
    classes: int


LayerSpec = Union[TemporalConv, Flatten, Dense, Dropout, SoftmaxOutput]

_KINDS = {
    "conv": TemporalConv,
    "flatten": Flatten,
    "dense": Dense,
    "dropout": Dropout,
    "softmax": SoftmaxOutput,
}
_NAMES = {v: k for k, v in _KINDS.items()}


@dataclass(frozen=True)
class Sequential:
    layers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def named(self):
        """Yield ``(name, spec)`` with conv layers numbered conv1.., dense fc1.., head ``out``."""
        n_conv = n_fc = n_drop = 0
        for spec in self.layers:
            if isinstance(spec, TemporalConv):
                n_conv += 1
                yield f"conv{n_conv}", spec
            elif isinstance(spec, Dense):
                n_fc += 1
                yield f"fc{n_fc}", spec
            elif isinstance(spec, Dropout):
                n_drop += 1
                yield f"drop{n_drop}", spec
            elif isinstance(spec, SoftmaxOutput):
                yield "out", spec
            else:
                yield "flatten", spec


@dataclass(frozen=True)
class Branch:
    channels: tuple
    stack: Sequential

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))


@dataclass(frozen=True)
class NetworkGraph:
    """Either a single stack (``branches`` empty) or per-limb branches + fusion.

    ``input_shape`` is ``(W, D)``.
    """

    input_shape: tuple
    stack: Sequential | None = None
    branches: dict = field(default_factory=dict)
    fusion: Sequential | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))

    @property
    def kind(self) -> str:
        return "sequential" if self.stack is not None else "branch_fusion"

    @property
    def num_classes(self) -> int:
        last = (self.stack if self.stack is not None else self.fusion).layers[-1]
        return last.classes


def _layer_to_dict(spec):
    d = {"kind": _NAMES[type(spec)]}
    for k, v in vars(spec).items():
        d[k] = list(v) if isinstance(v, tuple) else v
    return d


def _layer_from_dict(d):
    d = dict(d)
    cls = _KINDS[d.pop("kind")]
    return cls(**d)


def _seq_to_list(seq):
    return [_layer_to_dict(s) for s in seq.layers]


def _seq_from_list(items):
    return Sequential(tuple(_layer_from_dict(d) for d in items))


def graph_to_dict(graph: NetworkGraph) -> dict:
    out = {"input_shape": list(graph.input_shape), "kind": graph.kind}
    if graph.stack is not None:
        out["stack"] = _seq_to_list(graph.stack)
    else:
        # a list, not a mapping: branch order fixes the fusion input layout
        out["branches"] = [
            {"limb": limb, "channels": list(b.channels), "stack": _seq_to_list(b.stack)}
            for limb, b in graph.branches.items()
        ]
        out["fusion"] = _seq_to_list(graph.fusion)
    return out


def graph_from_dict(d: dict) -> NetworkGraph:
    if d["kind"] == "sequential":
        return NetworkGraph(tuple(d["input_shape"]), stack=_seq_from_list(d["stack"]))
    branches = {b["limb"]: Branch(tuple(b["channels"]), _seq_from_list(b["stack"])) for b in d["branches"]}
    return NetworkGraph(tuple(d["input_shape"]), branches=branches, fusion=_seq_from_list(d["fusion"]))
