"""Layer kernels: temporal convolution, dense, dropout, noise, softmax loss, init.

Activations and gradients are float64; parameters are stored as float32 and
promoted on use.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def orthonormal_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal weights via QR of a standard-normal matrix.

    The tensor is viewed as ``shape[0] x prod(shape[1:])``; rows are
    orthonormal when there are fewer rows than columns, columns otherwise.
    Signs follow ``diag(R)`` so a given generator state always yields the
    same tensor.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2 or any(s == 0 for s in shape):
        raise ShapeError(f"orthonormal_init needs a non-degenerate shape with >= 2 dims, got {shape}")
    rows = shape[0]
    cols = math.prod(shape[1:])
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q.reshape(shape), dtype=np.float32)


def conv_forward(x, W, b, activation="relu", name="conv"):
    """Valid [5, 1] correlation along time.

    x: ``[B, T, D, C_in]``, W: ``[C_out, C_in, 5]``, b: ``[C_out]``.
    Returns ``(out [B, T-4, D, C_out], (cols, pre_activation))``; the cache
    holds the unfolded input so the backward pass is two GEMMs.
    """
    if x.ndim != 4:
        raise ShapeError(f"{name}: expected [B, T, D, C_in] input, got shape {x.shape}")
    c_out, c_in, k = W.shape
    B, T, D, _ = x.shape
    if T < k:
        raise ShapeError(f"{name}: time dimension {T} shorter than kernel length {k}")
    if x.shape[3] != c_in:
        raise ShapeError(f"{name}: input has {x.shape[3]} channels, weights expect {c_in}")
    Tout = T - k + 1
    # [B, Tout, D, C_in, k] -> rows of C_in*k taps
    cols = sliding_window_view(x, k, axis=1).reshape(-1, c_in * k)
    z = cols @ W.reshape(c_out, c_in * k).astype(np.float64).T
    z += b.astype(np.float64)
    z = z.reshape(B, Tout, D, c_out)
    out = np.maximum(z, 0.0) if activation == "relu" else z
    return out, (cols, z)


def conv_backward(dout, cache, W, activation="relu"):
    """Gradients of :func:`conv_forward`; returns ``(dx, dW, db)``."""
    cols, z = cache
    dz = dout * (z > 0) if activation == "relu" else dout
    c_out, c_in, k = W.shape
    B, Tout, D, _ = z.shape
    dz2 = dz.reshape(-1, c_out)
    dW = (dz2.T @ cols).reshape(c_out, c_in, k)
    db = dz2.sum(axis=0)
    dcols = (dz2 @ W.reshape(c_out, c_in * k).astype(np.float64)).reshape(B, Tout, D, c_in, k)
    dx = np.zeros((B, Tout + k - 1, D, c_in))
    for j in range(k):
        dx[:, j:j + Tout] += dcols[..., j]
    return dx, dW, db


def dense_forward(x, W, b, activation="relu", name="dense"):
    """``x @ W + b`` then the activation. x: ``[B, n]``, W: ``[n, units]``."""
    if x.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"{name}: input shape {x.shape} does not match fan-in {W.shape[0]}")
    z = x @ W.astype(np.float64) + b.astype(np.float64)
    out = np.maximum(z, 0.0) if activation == "relu" else z
    return out, z


def dense_backward(dout, x, z, W, activation="relu"):
    dz = dout * (z > 0) if activation == "relu" else dout
    dW = x.T @ dz
    db = dz.sum(axis=0)
    dx = dz @ W.astype(np.float64).T
    return dx, dW, db


def dropout_apply(x, p, rng, training):
    """Inverted dropout; returns ``(out, mask)`` where mask holds 0 or ``1/(1-p)``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x, np.ones_like(x)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def gaussian_noise_augment(batch, sigma, rng):
    if sigma == 0:
        return batch
    return batch + rng.normal(0.0, sigma, size=batch.shape)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {B}")
    if B and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"label out of range for {K} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(B), labels] - logsum
    loss = float(-logp.sum() / B)
    d = np.exp(z - logsum[:, None])
    d[np.arange(B), labels] -= 1.0
    return loss, d / B
