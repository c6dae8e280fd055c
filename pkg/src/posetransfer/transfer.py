"""Checkpoints, conv-layer transplantation and the fine-tuning experiment grid.

Checkpoint layout (all integers little-endian)::

    bytes 0..7    magic b"PTCKPT\\x00\\x00"
    bytes 8..15   u64 header length H
    next H bytes  UTF-8 JSON header:
                    {"version": 1, "graph": {...}, "meta": {...},
                     "tensors": [{"name", "shape", "offset"}, ...],
                     "blob_bytes": N}
    next N bytes  float32 blob; each tensor C-order at its byte offset
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .arch import conv_keys
from .dataio import SplitArrays, subsample_indices
from .metrics import aggregate_runs, evaluate, permutation_test
from .nn.engine import init_params, param_shapes
from .nn.graph import NetworkGraph, graph_from_dict, graph_to_dict
from .nn.optim import TrainConfig
from .nn.training import History, predict, select_learning_rate, train

MAGIC = b"PTCKPT\x00\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptHeaderError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class TruncatedBlobError(CheckpointError):
    pass


class TransplantError(ValueError):
    pass


@dataclass
class Checkpoint:
    graph: NetworkGraph
    params: dict
    meta: dict = field(default_factory=dict)
    version: int = VERSION


def checkpoint_bytes(graph: NetworkGraph, params: dict, meta: dict | None = None) -> bytes:
    expected = param_shapes(graph)
    if list(expected) != list(params):
        raise ShapeMismatchError(f"parameter keys {list(params)} do not match graph {list(expected)}")
    tensors, chunks, offset = [], [], 0
    for name, arr in params.items():
        if tuple(arr.shape) != expected[name]:
            raise ShapeMismatchError(f"{name}: shape {arr.shape} != graph shape {expected[name]}")
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "version": VERSION,
        "graph": graph_to_dict(graph),
        "meta": meta or {},
        "tensors": tensors,
        "blob_bytes": offset,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(chunks)


def save_checkpoint(graph: NetworkGraph, params: dict, meta: dict | None, path):
    Path(path).write_bytes(checkpoint_bytes(graph, params, meta))


def parse_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CorruptHeaderError("corrupt header: bad magic")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise CorruptHeaderError("corrupt header: header extends past end of file")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
        version = header["version"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptHeaderError(f"corrupt header: {exc}") from None
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version!r}")
    try:
        graph = graph_from_dict(header["graph"])
        tensors = header["tensors"]
        blob_bytes = int(header["blob_bytes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeaderError(f"corrupt header: {exc}") from None

    expected = param_shapes(graph)
    names = [t["name"] for t in tensors]
    if names != list(expected):
        raise ShapeMismatchError(f"tensor directory {names} does not match graph parameters {list(expected)}")
    for t in tensors:
        if tuple(t["shape"]) != expected[t["name"]]:
            raise ShapeMismatchError(
                f"shape mismatch for tensor {t['name']}: header {tuple(t['shape'])}, graph {expected[t['name']]}")

    body = blob[16 + hlen:]
    if len(body) < blob_bytes:
        raise TruncatedBlobError(f"truncated blob: {len(body)} of {blob_bytes} bytes")
    if len(body) > blob_bytes:
        raise CorruptHeaderError(f"corrupt header: {len(body) - blob_bytes} trailing bytes")
    params = {}
    for t in tensors:
        n = 4 * math.prod(t["shape"])
        start = t["offset"]
        if start < 0 or start + n > blob_bytes:
            raise TruncatedBlobError(f"truncated blob: tensor {t['name']} runs past the end")
        params[t["name"]] = np.frombuffer(body[start:start + n], dtype="<f4").reshape(t["shape"]).astype(np.float32)
    return Checkpoint(graph, params, header.get("meta", {}), version)


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


@dataclass(frozen=True)
class TransferPlan:
    n_conv: int = 1
    freeze: bool = False
    target_fraction: float = 100
    seed: int = 42
    source_branch: str = "N"

    def __post_init__(self):
        if not 0 <= self.n_conv <= 4:
            raise ValueError(f"n_conv must be in 0..4, got {self.n_conv}")
        if not 0 < self.target_fraction <= 100:
            raise ValueError(f"target_fraction must be in (0, 100], got {self.target_fraction}")


@dataclass
class Transplant:
    params: dict
    copied: list
    frozen: list


def source_conv_keys(graph: NetworkGraph, branch: str = "N") -> list[str]:
    if graph.stack is None and branch not in graph.branches:
        raise TransplantError(f"source has no branch {branch!r}; branches are {list(graph.branches)}")
    return conv_keys(graph, branch)


def transplant(source: Checkpoint, target_graph: NetworkGraph, plan: TransferPlan,
               rng: np.random.Generator) -> Transplant:
    """Fresh init of `target_graph` with its first ``plan.n_conv`` convs copied from `source`.

    All target tensors are drawn from `rng` first, so with ``n_conv=0`` the
    result equals ``init_params(target_graph, rng)``.
    """
    if target_graph.stack is None:
        raise TransplantError("transplant targets must be single-stack tCNNs")
    params = init_params(target_graph, rng)
    src_keys = source_conv_keys(source.graph, plan.source_branch)
    copied = []
    for src, dst in zip(src_keys[:plan.n_conv], conv_keys(target_graph)):
        for suffix in (".W", ".b"):
            s, d = source.params[src + suffix], params[dst + suffix]
            if s.shape != d.shape:
                raise TransplantError(f"{dst}{suffix}: source shape {s.shape} vs target shape {d.shape}")
            params[dst + suffix] = s.astype(np.float32, copy=True)
            copied.append(dst + suffix)
    return Transplant(params, copied, list(copied) if plan.freeze else [])


@dataclass
class FineTuneResult:
    params: dict
    history: History | None
    learning_rate: float
    lr_scores: dict
    val_wf1: float
    test: dict | None
    test_correct: np.ndarray | None


def fine_tune(transplanted: Transplant, target_graph: NetworkGraph, train_data, val_data,
              plan: TransferPlan, cfg: TrainConfig, test_data=None, lr_grid=None) -> FineTuneResult:
    """Train a transplanted network; copied layers stay fixed when the plan freezes them.

    `train_data` should already be reduced to ``plan.target_fraction``. With
    `lr_grid` the learning rate is picked on validation wF1.
    """
    grid = tuple(lr_grid) if lr_grid else (cfg.learning_rate,)
    sel = select_learning_rate(target_graph, train_data, val_data, cfg, grid,
                               params=transplanted.params, frozen=transplanted.frozen)
    K = target_graph.num_classes
    val_pred, _ = predict(target_graph, sel.params, val_data[0])
    val_wf1 = evaluate(val_data[1], val_pred, K).wf1
    test, correct = None, None
    if test_data is not None:
        pred, _ = predict(target_graph, sel.params, test_data[0])
        test = evaluate(test_data[1], pred, K).to_dict()
        correct = pred == np.asarray(test_data[1])
    return FineTuneResult(sel.params, sel.history, sel.learning_rate, sel.scores, val_wf1, test, correct)


def _xy(split):
    return (split.X, split.y) if isinstance(split, SplitArrays) else split


def run_cell(source: Checkpoint | None, target_graph, splits: dict, cfg: TrainConfig, n_conv: int, pct,
             runs: int = 5, seed: int = 42, freeze: bool = False, lr_grid=None, source_branch: str = "N",
             cell_id: str | None = None):
    """Repeat transplant + fine-tune for seeds ``seed, seed+1, ...``.

    ``n_conv=0`` (or no source) is training from scratch. Returns a list of
    per-run dicts including the test correctness vector.
    """
    train_s = splits["train"]
    out = []
    for r in range(runs):
        run_seed = seed + r
        plan = TransferPlan(n_conv, freeze, pct, run_seed, source_branch)
        idx = subsample_indices(train_s.y, pct, run_seed)
        sub = (train_s.X[idx], train_s.y[idx])
        rng = np.random.default_rng(run_seed)
        if source is None or n_conv == 0:
            tp = Transplant(init_params(target_graph, rng), [], [])
        else:
            tp = transplant(source, target_graph, plan, rng)
        res = fine_tune(tp, target_graph, sub, _xy(splits["val"]), plan, replace(cfg, seed=run_seed),
                        _xy(splits["test"]), lr_grid)
        out.append({
            "cell_id": cell_id or f"nconv{n_conv}_pct{pct}",
            "n_conv": n_conv,
            "pct": pct,
            "run": r,
            "seed": run_seed,
            "wF1": res.test["wf1"],
            "accuracy": res.test["accuracy"],
            "val_wF1": res.val_wf1,
            "lr": res.learning_rate,
            "n_train": int(len(idx)),
            "correct": res.test_correct,
        })
    return out


@dataclass
class TransferMatrix:
    rows: list
    summary: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell_id", "n_conv", "pct", "run", "wF1", "accuracy"])
        for r in self.rows:
            w.writerow([r["cell_id"], r["n_conv"], r["pct"], r["run"], repr(float(r["wF1"])), repr(float(r["accuracy"]))])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"


def summarize(rows, baseline_by_pct: dict | None = None, n_perm: int = 9999, seed: int = 42) -> dict:
    cells = {}
    for r in rows:
        cells.setdefault(r["cell_id"], []).append(r)
    summary = {}
    for cid, rs in cells.items():
        mu, sigma = aggregate_runs([r["wF1"] for r in rs])
        acc_mu, acc_sigma = aggregate_runs([r["accuracy"] for r in rs])
        entry = {
            "n_conv": rs[0]["n_conv"],
            "pct": rs[0]["pct"],
            "runs": len(rs),
            "wF1_mean": mu,
            "wF1_std": sigma,
            "accuracy_mean": acc_mu,
            "accuracy_std": acc_sigma,
            "wF1_runs": [r["wF1"] for r in rs],
            "lr_runs": [r["lr"] for r in rs],
        }
        base = (baseline_by_pct or {}).get(rs[0]["pct"]) or (baseline_by_pct or {}).get(100)
        if base and base != cid and all(r.get("correct") is not None for r in rs):
            a = np.concatenate([r["correct"] for r in rs])
            b = np.concatenate([r["correct"] for r in cells[base]])
            if a.shape == b.shape:
                pt = permutation_test(a, b, n_perm, seed)
                entry["vs_baseline"] = {"baseline": base, **asdict(pt)}
        summary[cid] = entry
    return summary


def run_transfer_matrix(source: Checkpoint, target_graph: NetworkGraph, splits: dict, cfg: TrainConfig,
                        n_conv_set=(1, 2, 3, 4), fractions=(10, 30, 50, 75), runs: int = 5, seed: int = 42,
                        freeze: bool = False, lr_grid=None, baseline_fractions=(100,), source_branch: str = "N",
                        n_perm: int = 9999) -> TransferMatrix:
    """Sweep N_conv at 100% of the target data, then fractions for the best N_conv.

    The best N_conv has the highest mean validation wF1 (fewest layers on
    ties). Scratch baselines are added for `baseline_fractions`.
    """
    kw = dict(runs=runs, seed=seed, freeze=freeze, lr_grid=lr_grid, source_branch=source_branch)
    rows, sweep = [], {}
    for n in n_conv_set:
        rs = run_cell(source, target_graph, splits, cfg, n, 100, **kw)
        sweep[n] = np.mean([r["val_wF1"] for r in rs])
        rows += rs
    best = max(sweep, key=lambda n: (sweep[n], -n))
    for pct in fractions:
        rows += run_cell(source, target_graph, splits, cfg, best, pct, **kw)
    baselines = {}
    for pct in baseline_fractions:
        cid = f"scratch_pct{pct}"
        rows += run_cell(None, target_graph, splits, cfg, 0, pct, cell_id=cid, **kw)
        baselines[pct] = cid
    summary = {"best_n_conv": best, "cells": summarize(rows, baselines, n_perm, seed)}
    return TransferMatrix(rows, summary)
