"""Builders for the single-stack tCNN and the per-limb tCNN-IMU."""
from __future__ import annotations

import math

from .nn.engine import layer_shapes, param_shapes
from .nn.graph import Branch, Dense, Dropout, Flatten, NetworkGraph, Sequential, SoftmaxOutput, TemporalConv

LIMBS = ("LA", "RA", "LL", "RL", "N")
N_CONV = 4
MIN_WINDOW = 4 * N_CONV + 1


def _conv_stack(filters):
    return [TemporalConv(filters) for _ in range(N_CONV)]


def _check_window(W):
    if W < MIN_WINDOW:
        raise ValueError(f"window length {W} too short: four [5,1] convolutions need W >= {MIN_WINDOW}")


def build_tcnn(W: int, D: int, num_classes: int, fc_units: int = 256, dropout_p: float = 0.5,
               filters: int = 64) -> NetworkGraph:
    """conv x4 -> flatten -> fc -> dropout -> fc -> dropout -> softmax."""
    _check_window(W)
    layers = _conv_stack(filters) + [
        Flatten(),
        Dense(fc_units), Dropout(dropout_p),
        Dense(fc_units), Dropout(dropout_p),
        SoftmaxOutput(num_classes),
    ]
    return NetworkGraph((W, D), stack=Sequential(layers))


def build_tcnn_imu(limb_map: dict, W: int, num_classes: int, branch_units: int = 256,
                   fusion_units: int = 256, dropout_p: float = 0.5, filters: int = 64,
                   D: int | None = None) -> NetworkGraph:
    """One conv stack + fc per limb with channels, concatenated into a fusion head.

    `limb_map` maps limb names to lists of input column indices; limbs with no
    channels are dropped. Branch order follows :data:`LIMBS`, then any extra
    names in insertion order.
    """
    _check_window(W)
    present = [l for l in LIMBS if limb_map.get(l)] + [l for l in limb_map if l not in LIMBS and limb_map[l]]
    if not present:
        raise ValueError("no branches: every limb has an empty channel list")
    used = [c for l in present for c in limb_map[l]]
    if len(set(used)) != len(used):
        raise ValueError("limb channel lists must be disjoint")
    if D is None:
        D = max(used) + 1
    elif max(used) >= D:
        raise ValueError(f"limb channel index {max(used)} out of range for D={D}")
    branches = {
        l: Branch(tuple(limb_map[l]), Sequential(_conv_stack(filters) + [Flatten(), Dense(branch_units)]))
        for l in present
    }
    fusion = Sequential([Dense(fusion_units), Dropout(dropout_p), SoftmaxOutput(num_classes)])
    return NetworkGraph((W, D), branches=branches, fusion=fusion)


def conv_keys(graph: NetworkGraph, branch: str | None = None) -> list[str]:
    """Layer paths of the conv stack (``conv1``..), optionally within a branch."""
    prefix = "" if graph.stack is not None else f"branch.{branch}."
    return [prefix + f"conv{i}" for i in range(1, N_CONV + 1)]


def count_params(graph: NetworkGraph) -> int:
    return sum(math.prod(s) for s in param_shapes(graph).values())


def describe(graph: NetworkGraph) -> str:
    shapes = param_shapes(graph)
    rows = []
    for key, spec, _, out in layer_shapes(graph):
        n = sum(math.prod(shapes[k]) for k in (key + ".W", key + ".b") if k in shapes)
        rows.append((key, type(spec).__name__, "x".join(map(str, out)), n))
    w = max(len(r[0]) for r in rows)
    lines = [f"{'layer':<{w}}  {'type':<13}  {'output':<14}  params"]
    lines += [f"{k:<{w}}  {t:<13}  {o:<14}  {n}" for k, t, o, n in rows]
    lines.append(f"input {graph.input_shape[0]}x{graph.input_shape[1]}, total params {count_params(graph)}")
    return "\n".join(lines)
