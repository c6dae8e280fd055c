"""Confusion-matrix scores, majority voting, paired permutation test, run aggregation."""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np


def confusion(y_true, y_pred, K: int) -> np.ndarray:
    """K x K counts; rows are true classes, columns predictions."""
    y_true = np.asarray(y_true, dtype=np.intp).ravel()
    y_pred = np.asarray(y_pred, dtype=np.intp).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} true vs {y_pred.size} predicted")
    for arr, what in ((y_true, "true"), (y_pred, "predicted")):
        if arr.size and (arr.min() < 0 or arr.max() >= K):
            raise ValueError(f"{what} label out of range for {K} classes")
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _per_class(cm):
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    support = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return precision, recall, f1, support


def weighted_f1(cm) -> float:
    """Support-weighted mean of per-class F1; zero denominators count as 0."""
    cm = np.asarray(cm)
    total = cm.sum()
    if total <= 0:
        raise ValueError("weighted_f1 of an empty confusion matrix")
    _, _, f1, support = _per_class(cm)
    return float((support / total * f1).sum())


@dataclass
class MetricsReport:
    wf1: float
    accuracy: float
    precision: list
    recall: list
    f1: list
    support: list
    n: int

    @classmethod
    def from_confusion(cls, cm):
        cm = np.asarray(cm)
        precision, recall, f1, support = _per_class(cm)
        n = int(cm.sum())
        return cls(
            wf1=weighted_f1(cm),
            accuracy=float(np.trace(cm) / n),
            precision=precision.tolist(),
            recall=recall.tolist(),
            f1=f1.tolist(),
            support=[int(s) for s in support],
            n=n,
        )

    def to_dict(self):
        return asdict(self)


def evaluate(y_true, y_pred, K) -> MetricsReport:
    return MetricsReport.from_confusion(confusion(y_true, y_pred, K))


def majority_vote(preds, clip_ids) -> dict:
    """Modal prediction per clip, ties to the smallest class index.

    Returns a dict ``clip_id -> class`` ordered by first appearance.
    """
    groups: dict = {}
    for p, c in zip(preds, clip_ids, strict=True):
        groups.setdefault(c, []).append(int(p))
    out = {}
    for c, votes in groups.items():
        if not votes:
            raise ValueError(f"clip {c!r} has no window predictions")
        counts = Counter(votes)
        best = max(counts.values())
        out[c] = min(k for k, v in counts.items() if v == best)
    return out


def clip_level(y_true, y_pred, clip_ids):
    """Collapse window labels/predictions to one pair per clip via majority vote."""
    pred = majority_vote(y_pred, clip_ids)
    true = majority_vote(y_true, clip_ids)
    ids = list(pred)
    return np.array([true[c] for c in ids]), np.array([pred[c] for c in ids]), ids


@dataclass
class PermTestResult:
    observed_diff: float
    p_value: float
    n_permutations: int
    seed: int

    def to_dict(self):
        return asdict(self)


def permutation_test(correct_a, correct_b, n_perm: int = 9999, seed: int = 42, chunk: int = 2000) -> PermTestResult:
    """Paired sign-flip permutation test on per-window correctness.

    Each permutation swaps every pair ``(a_i, b_i)`` independently with
    probability 1/2. Pairs with ``a_i == b_i`` are unchanged by a swap, so only
    the discordant pairs are drawn. Two-sided p-value with the +1 correction.
    """
    a = np.asarray(correct_a, dtype=bool).ravel()
    b = np.asarray(correct_b, dtype=bool).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("permutation_test needs at least one pair")
    n = a.size
    d = a.astype(np.int64) - b.astype(np.int64)
    observed_sum = int(d.sum())
    dd = d[d != 0]
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_perm:
        m = min(chunk, n_perm - done)
        flips = rng.integers(0, 2, size=(m, dd.size), dtype=np.int8)
        sums = (dd * (1 - 2 * flips.astype(np.int64))).sum(axis=1)
        hits += int(np.count_nonzero(np.abs(sums) >= abs(observed_sum)))
        done += m
    return PermTestResult(
        observed_diff=observed_sum / n,
        p_value=(1 + hits) / (n_perm + 1),
        n_permutations=n_perm,
        seed=seed,
    )


def aggregate_runs(values):
    """Mean and population standard deviation."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("aggregate_runs needs at least one value")
    return float(v.mean()), float(v.std())
