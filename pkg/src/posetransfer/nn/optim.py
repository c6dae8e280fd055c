"""RMSProp with momentum and coupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    rms_decay: float = 0.95
    rms_epsilon: float = 1e-8
    batch_size: int = 200
    epochs: int = 10
    noise_sigma: float = 0.01
    dropout_p: float | None = None
    seed: int = 42

    def __post_init__(self):
        if not self.learning_rate >= 0 or not self.rms_epsilon > 0:
            raise ValueError("learning_rate and rms_epsilon must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class OptimizerState:
    square_avg: dict = field(default_factory=dict)
    momentum: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params):
        return cls(
            {k: np.zeros(v.shape, dtype=np.float64) for k, v in params.items()},
            {k: np.zeros(v.shape, dtype=np.float64) for k, v in params.items()},
        )


def rmsprop_step(params, grads, state: OptimizerState, cfg: TrainConfig, frozen=()):
    """One in-place update of `params` and `state`.

    Per element::

        g  = grad + weight_decay * w
        sq = rho * sq + (1 - rho) * g**2
        m  = momentum * m + g / sqrt(sq + eps)
        w  = w - lr * m

    Keys in `frozen` are skipped entirely (no decay, no buffer updates).
    """
    rho = cfg.rms_decay
    for key, w in params.items():
        if key in frozen:
            continue
        w64 = w.astype(np.float64)
        g = grads[key] + cfg.weight_decay * w64
        sq = state.square_avg[key]
        sq *= rho
        sq += (1.0 - rho) * g * g
        m = state.momentum[key]
        m *= cfg.momentum
        m += g / np.sqrt(sq + cfg.rms_epsilon)
        params[key] = (w64 - cfg.learning_rate * m).astype(w.dtype)
    return params, state
