"""Forward and reverse passes over a fixed :class:`NetworkGraph`."""
from __future__ import annotations

import numpy as np

from .graph import Dense, Dropout, Flatten, NetworkGraph, Sequential, SoftmaxOutput, TemporalConv
from .layers import (
    ShapeError,
    conv_backward,
    conv_forward,
    dense_backward,
    dense_forward,
    dropout_apply,
    orthonormal_init,
)


def _stacks(graph: NetworkGraph):
    """Yield ``(prefix, Sequential)`` in parameter order."""
    if graph.stack is not None:
        yield "", graph.stack
    else:
        for limb, br in graph.branches.items():
            yield f"branch.{limb}.", br.stack
        yield "fusion.", graph.fusion


def layer_shapes(graph: NetworkGraph):
    """List of ``(key, spec, in_shape, out_shape)`` per layer; shapes exclude batch."""
    W, D = graph.input_shape
    rows = []

    def walk(prefix, seq, shape):
        for name, spec in seq.named():
            key = prefix + name
            if isinstance(spec, TemporalConv):
                t, d, _ = shape
                if t < spec.kernel[0]:
                    raise ShapeError(f"{key}: time dimension {t} shorter than kernel length {spec.kernel[0]}")
                out = (t - spec.kernel[0] + 1, d, spec.filters)
            elif isinstance(spec, Flatten):
                out = (int(np.prod(shape)),)
            elif isinstance(spec, Dense):
                out = (spec.units,)
            elif isinstance(spec, SoftmaxOutput):
                out = (spec.classes,)
            else:
                out = shape
            rows.append((key, spec, shape, out))
            shape = out
        return shape

    if graph.stack is not None:
        walk("", graph.stack, (W, D, 1))
    else:
        width = 0
        for limb, br in graph.branches.items():
            out = walk(f"branch.{limb}.", br.stack, (W, len(br.channels), 1))
            width += out[0]
        walk("fusion.", graph.fusion, (width,))
    return rows


def param_shapes(graph: NetworkGraph) -> dict:
    shapes = {}
    for key, spec, in_shape, _ in layer_shapes(graph):
        if isinstance(spec, TemporalConv):
            shapes[key + ".W"] = (spec.filters, in_shape[2], spec.kernel[0])
            shapes[key + ".b"] = (spec.filters,)
        elif isinstance(spec, Dense):
            shapes[key + ".W"] = (in_shape[0], spec.units)
            shapes[key + ".b"] = (spec.units,)
        elif isinstance(spec, SoftmaxOutput):
            shapes[key + ".W"] = (in_shape[0], spec.classes)
            shapes[key + ".b"] = (spec.classes,)
    return shapes


def init_params(graph: NetworkGraph, rng: np.random.Generator) -> dict:
    """Orthonormal weights and zero biases, consumed from `rng` in parameter order."""
    params = {}
    for key, shape in param_shapes(graph).items():
        if key.endswith(".b"):
            params[key] = np.zeros(shape, dtype=np.float32)
        elif len(shape) == 3:
            params[key] = orthonormal_init(shape, rng)
        else:
            # dense weights are [fan_in, units]
            params[key] = np.ascontiguousarray(orthonormal_init(shape[::-1], rng).T)
    return params


def _run_stack(seq: Sequential, prefix, params, h, training, rng, dropout_p, cache):
    for name, spec in seq.named():
        key = prefix + name
        if isinstance(spec, TemporalConv):
            h, c = conv_forward(h, params[key + ".W"], params[key + ".b"], spec.activation, key)
            cache.append(("conv", key, spec.activation, c, c[1]))
        elif isinstance(spec, Flatten):
            cache.append(("flatten", key, h.shape))
            h = h.reshape(h.shape[0], -1)
        elif isinstance(spec, Dense):
            x = h
            h, z = dense_forward(x, params[key + ".W"], params[key + ".b"], spec.activation, key)
            cache.append(("dense", key, spec.activation, x, z))
        elif isinstance(spec, SoftmaxOutput):
            x = h
            h, z = dense_forward(x, params[key + ".W"], params[key + ".b"], "none", key)
            cache.append(("dense", key, "none", x, z))
        elif isinstance(spec, Dropout):
            p = spec.p if dropout_p is None else dropout_p
            h, mask = dropout_apply(h, p, rng, training and rng is not None)
            cache.append(("drop", key, mask))
    return h


def _backprop_stack(cache, params, dh, grads):
    for rec in reversed(cache):
        kind = rec[0]
        if kind == "conv":
            _, key, act, c, _ = rec
            dh, dW, db = conv_backward(dh, c, params[key + ".W"], act)
            grads[key + ".W"], grads[key + ".b"] = dW, db
        elif kind == "dense":
            _, key, act, x, z = rec
            dh, dW, db = dense_backward(dh, x, z, params[key + ".W"], act)
            grads[key + ".W"], grads[key + ".b"] = dW, db
        elif kind == "flatten":
            dh = dh.reshape(rec[2])
        else:
            dh = dh * rec[2]
    return dh


def forward(graph: NetworkGraph, params, x, training=False, rng=None, dropout_p=None):
    """Logits for a batch of windows ``[B, W, D]``; returns ``(logits, cache)``.

    Dropout is active only when `training` is true and an `rng` is given.
    """
    x = np.asarray(x, dtype=np.float64)
    W, D = graph.input_shape
    if x.ndim != 3 or x.shape[1:] != (W, D):
        raise ShapeError(f"expected windows of shape [B, {W}, {D}], got {x.shape}")
    if graph.stack is not None:
        cache = []
        logits = _run_stack(graph.stack, "", params, x[..., None], training, rng, dropout_p, cache)
        return logits, {"stack": cache}
    feats, caches = [], {}
    for limb, br in graph.branches.items():
        c = []
        xb = x[:, :, list(br.channels), None]
        feats.append(_run_stack(br.stack, f"branch.{limb}.", params, xb, training, rng, dropout_p, c))
        caches[limb] = c
    widths = [f.shape[1] for f in feats]
    fused = []
    logits = _run_stack(graph.fusion, "fusion.", params, np.concatenate(feats, axis=1), training, rng, dropout_p, fused)
    return logits, {"branches": caches, "widths": widths, "fusion": fused}


def backward(graph: NetworkGraph, params, cache, dlogits) -> dict:
    """Reverse-mode gradients for every parameter, keyed like `params`."""
    if not cache:
        raise RuntimeError("backward() needs the cache from a forward pass")
    grads = {}
    if graph.stack is not None:
        _backprop_stack(cache["stack"], params, dlogits, grads)
    else:
        dcat = _backprop_stack(cache["fusion"], params, dlogits, grads)
        offsets = np.cumsum([0] + cache["widths"])
        for i, limb in enumerate(graph.branches):
            _backprop_stack(cache["branches"][limb], params, dcat[:, offsets[i]:offsets[i + 1]], grads)
    return {k: grads[k] for k in params}


def relu_pattern(cache) -> np.ndarray:
    """Concatenated ReLU on/off pattern of a forward pass (for kink detection)."""
    recs = cache["stack"] if "stack" in cache else [r for c in cache["branches"].values() for r in c] + cache["fusion"]
    parts = [(r[4] > 0).ravel() for r in recs if r[0] in ("conv", "dense") and r[2] == "relu"]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)
