"""Training loop, learning-rate selection, prediction and gradient checking."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace

import numpy as np

from ..metrics import confusion, weighted_f1
from .engine import backward, forward, init_params, relu_pattern
from .graph import NetworkGraph
from .layers import gaussian_noise_augment, softmax, softmax_xent
from .optim import OptimizerState, TrainConfig, rmsprop_step

log = logging.getLogger(__name__)

LEARNING_RATES = (1e-3, 1e-4, 1e-5)


class TrainingError(RuntimeError):
    pass


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def predict(graph: NetworkGraph, params, X, batch_size: int = 512):
    """Argmax class and softmax probabilities per window, inference mode."""
    X = np.asarray(X)
    K = graph.num_classes
    probs = np.empty((len(X), K))
    for i in range(0, len(X), batch_size):
        logits, _ = forward(graph, params, X[i:i + batch_size])
        probs[i:i + batch_size] = softmax(logits)
    # argmax returns the first maximum, i.e. the smallest tied class
    return probs.argmax(axis=1), probs


def score_wf1(graph, params, X, y) -> float:
    pred, _ = predict(graph, params, X)
    return weighted_f1(confusion(y, pred, graph.num_classes))


@dataclass
class History:
    train_loss: list
    val_wf1: list
    best_epoch: int = -1

    def records(self):
        return [
            {"epoch": i + 1, "train_loss": l, "val_wF1": v}
            for i, (l, v) in enumerate(zip(self.train_loss, self.val_wf1))
        ]


def train(graph: NetworkGraph, train_data, val_data, cfg: TrainConfig, params=None, frozen=()):
    """Mini-batch RMSProp training with validation-based snapshot selection.

    `train_data` and `val_data` are ``(X, y)`` pairs with ``X`` shaped
    ``[N, W, D]``. When `params` is None they are initialized from
    ``default_rng(cfg.seed)``. Tensors named in `frozen` are never updated.

    Returns ``(best_params, history)``; the best snapshot is the epoch with the
    highest validation wF1, earliest on ties.
    """
    X, y = (np.asarray(a) for a in train_data)
    Xv, yv = (np.asarray(a) for a in val_data)
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if params is None:
        params = init_params(graph, np.random.default_rng(cfg.seed))
    params = copy_params(params)
    frozen = frozenset(frozen)
    unknown = frozen - set(params)
    if unknown:
        raise KeyError(f"frozen keys not in parameter set: {sorted(unknown)}")

    history = History([], [])
    best = copy_params(params)
    best_score = -np.inf
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    n = len(X)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb = gaussian_noise_augment(X[idx].astype(np.float64), cfg.noise_sigma, rng)
            logits, cache = forward(graph, params, xb, training=True, rng=rng, dropout_p=cfg.dropout_p)
            loss, dlogits = softmax_xent(logits, y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {bi + 1}")
            grads = backward(graph, params, cache, dlogits)
            rmsprop_step(params, grads, state, cfg, frozen)
            if not all(np.isfinite(v).all() for v in params.values()):
                raise TrainingError(f"non-finite parameters after epoch {epoch + 1}, batch {bi + 1}")
            total += loss * len(idx)
        score = score_wf1(graph, params, Xv, yv)
        history.train_loss.append(total / n)
        history.val_wf1.append(score)
        log.info("epoch %d loss %.5f val wF1 %.4f", epoch + 1, total / n, score)
        if score > best_score:
            best_score = score
            best = copy_params(params)
            history.best_epoch = epoch + 1
    return best, history


@dataclass
class LRSelection:
    learning_rate: float
    scores: dict
    params: dict
    history: History | None


def select_learning_rate(graph, train_data, val_data, cfg: TrainConfig, grid=LEARNING_RATES,
                         params=None, frozen=(), train_fn=None):
    """Train one model per learning rate (same seed) and keep the best validation wF1.

    Ties go to the larger learning rate. Runs that diverge are skipped.
    `train_fn` defaults to :func:`train` and receives the same arguments.
    """
    train_fn = train_fn or train
    results = {}
    for lr in grid:
        try:
            p, hist = train_fn(graph, train_data, val_data, replace(cfg, learning_rate=lr),
                               params=params, frozen=frozen)
        except TrainingError as exc:
            log.warning("learning rate %g diverged: %s", lr, exc)
            continue
        results[lr] = (score_wf1(graph, p, *val_data), p, hist)
    if not results:
        raise TrainingError("every learning rate in the grid diverged")
    best_lr = max(results, key=lambda lr: (results[lr][0], lr))
    return LRSelection(
        learning_rate=best_lr,
        scores={lr: r[0] for lr, r in results.items()},
        params=results[best_lr][1],
        history=results[best_lr][2],
    )


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_key: str | None
    per_key: dict
    checked: int
    skipped_kinks: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def to_dict(self):
        return {
            "max_rel_error": float(self.max_rel_error),
            "worst_key": self.worst_key,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "checked": self.checked,
            "skipped_kinks": self.skipped_kinks,
            "per_key": {k: float(v) for k, v in self.per_key.items()},
        }


def rel_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(graph, params, X, y, tolerance=1e-3, h=1e-3, max_per_tensor=64, seed=0,
                   grad_hook=None) -> GradCheckReport:
    """Compare :func:`backward` to central differences, dropout and noise off.

    Parameters are promoted to float64. Up to `max_per_tensor` elements of each
    tensor are probed; probes whose +/-h evaluations flip any ReLU are
    discarded (the loss is not differentiable there). `grad_hook`, if given,
    may modify the analytic gradient dict before comparison.
    """
    p64 = {k: np.array(v, dtype=np.float64, order="C") for k, v in params.items()}
    X = np.asarray(X, dtype=np.float64)

    logits, cache = forward(graph, p64, X)
    _, dlogits = softmax_xent(logits, y)
    grads = backward(graph, p64, cache, dlogits)
    if grad_hook is not None:
        grads = grad_hook(grads)
    base_pattern = relu_pattern(cache)

    def loss_and_pattern():
        lg, c = forward(graph, p64, X)
        return softmax_xent(lg, y)[0], relu_pattern(c)

    rng = np.random.default_rng(seed)
    worst, worst_key, checked, kinks = 0.0, None, 0, 0
    per_key = {}
    for key, w in p64.items():
        flat = w.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_per_tensor:
            idx = np.sort(rng.choice(flat.size, max_per_tensor, replace=False))
        g = grads[key].reshape(-1)
        key_worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp, pp = loss_and_pattern()
            flat[i] = orig - h
            lm, pm = loss_and_pattern()
            flat[i] = orig
            if not (np.array_equal(pp, base_pattern) and np.array_equal(pm, base_pattern)):
                kinks += 1
                continue
            err = rel_error(g[i], (lp - lm) / (2 * h))
            checked += 1
            key_worst = max(key_worst, err)
        per_key[key] = key_worst
        if key_worst > worst or worst_key is None:
            worst, worst_key = key_worst, key
    return GradCheckReport(float(worst), worst_key if per_key else None, per_key, checked, kinks, tolerance)
