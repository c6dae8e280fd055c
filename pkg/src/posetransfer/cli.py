"""Command-line front end.

    posetransfer synth     --config exp.json --out out/
    posetransfer train     --config exp.json --out out/
    posetransfer transfer  --config exp.json --source out/checkpoint.ckpt --out tr/
    posetransfer eval      --config exp.json --checkpoint out/checkpoint.ckpt --majority-vote
    posetransfer permtest  --preds-a a.csv --preds-b b.csv --n-perm 9999
    posetransfer gradcheck --arch both

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .arch import build_tcnn, build_tcnn_imu, describe
from .dataio import (
    ClipFormatError,
    ManifestError,
    WindowSpec,
    build_windows_pipeline,
    load_dataset,
    load_manifest,
    save_dataset,
)
from .metrics import MetricsReport, clip_level, confusion, evaluate, permutation_test
from .nn.engine import init_params
from .nn.optim import TrainConfig
from .nn.training import TrainingError, gradient_check, predict, select_learning_rate
from .signal import AnchorSpec, SignalError
from .transfer import CheckpointError, TransplantError, load_checkpoint, run_transfer_matrix, save_checkpoint

log = logging.getLogger("posetransfer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "manifest": None,
    "data_dir": None,
    "mode": "pose",
    "target_rate_hz": None,
    "window": {"duration_sec": 1.0, "window_len": None, "stride": 12},
    "anchor": None,
    "split": [0.70, 0.15, 0.15],
    "arch": "tcnn",
    "fc_units": 256,
    "branch_units": 256,
    "fusion_units": 256,
    "dropout_p": 0.5,
    "train": {},
    "lr_grid": None,
    "transfer": {
        "n_conv_set": [1, 2, 3, 4],
        "fractions": [10, 30, 50, 75],
        "baseline_fractions": [100],
        "freeze": False,
        "source_branch": "N",
    },
    "runs": 5,
    "seed": 42,
    "n_perm": 9999,
    "out": "out",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} not found")
        try:
            cfg = _merge(cfg, json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        base = path.parent
        for key in ("manifest", "data_dir"):
            if cfg.get(key) and not Path(cfg[key]).is_absolute():
                cfg[key] = str(base / cfg[key])
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set {key}: {p!r} is not a section")
        node[parts[-1]] = _parse_value(value)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if cfg["mode"] not in ("pose", "synthetic"):
        raise UsageError(f"mode must be 'pose' or 'synthetic', got {cfg['mode']!r}")
    if cfg["arch"] not in ("tcnn", "tcnn-imu"):
        raise UsageError(f"arch must be 'tcnn' or 'tcnn-imu', got {cfg['arch']!r}")
    return cfg


def train_config(cfg) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(cfg["train"]) - known
    if unknown:
        raise UsageError(f"unknown train option(s) {sorted(unknown)}")
    return TrainConfig(**{**cfg["train"], "seed": cfg["seed"]})


def _dataset(cfg):
    if cfg.get("data_dir"):
        return load_dataset(cfg["data_dir"])
    if not cfg.get("manifest"):
        raise UsageError("config needs 'manifest' or 'data_dir'")
    manifest = load_manifest(cfg["manifest"])
    rate = cfg["target_rate_hz"] or manifest.rate_hz
    w = cfg["window"]
    spec = WindowSpec(w.get("window_len"), w.get("stride", 1), w.get("duration_sec", 1.0))
    anchor = AnchorSpec(cfg["anchor"]) if cfg.get("anchor") else None
    return build_windows_pipeline(manifest, rate, cfg["mode"], spec, anchor, cfg["seed"], tuple(cfg["split"]))


def _graph(cfg, dataset):
    W, D = dataset.window_shape
    K = len(dataset.class_names)
    if cfg["arch"] == "tcnn":
        return build_tcnn(W, D, K, cfg["fc_units"], cfg["dropout_p"])
    if not dataset.limb_map:
        raise UsageError("arch 'tcnn-imu' needs a limb_map in the manifest")
    return build_tcnn_imu(dataset.limb_map, W, K, cfg["branch_units"], cfg["fusion_units"], cfg["dropout_p"], D=D)


def _out(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _xy(split):
    return split.X, split.y


def cmd_synth(args, cfg):
    ds = _dataset(cfg)
    out = _out(cfg)
    save_dataset(ds, out)
    print(f"wrote {', '.join(f'{k}={len(v)}' for k, v in ds.splits.items())} windows "
          f"of shape {tuple(ds.window_shape)} to {out}")
    return EXIT_OK


def cmd_train(args, cfg):
    ds = _dataset(cfg)
    graph = _graph(cfg, ds)
    tc = train_config(cfg)
    out = _out(cfg)
    log.info("\n%s", describe(graph))
    params = init_params(graph, np.random.default_rng(tc.seed))
    grid = cfg["lr_grid"] or [tc.learning_rate]
    sel = select_learning_rate(graph, _xy(ds.splits["train"]), _xy(ds.splits["val"]), tc, grid, params=params)
    meta = {
        "source": str(cfg.get("manifest") or cfg.get("data_dir")),
        "mode": cfg["mode"],
        "seed": tc.seed,
        "epochs": tc.epochs,
        "learning_rate": sel.learning_rate,
        "classes": ds.class_names,
        "channels": ds.channel_names,
        "stats_ref": "stats.json",
    }
    save_checkpoint(graph, sel.params, meta, out / "checkpoint.ckpt")
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for rec in sel.history.records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    K = len(ds.class_names)
    metrics = {"learning_rate": sel.learning_rate, "lr_scores": {repr(k): v for k, v in sel.scores.items()}}
    for name in ("train", "val", "test"):
        split = ds.splits[name]
        if len(split):
            pred, _ = predict(graph, sel.params, split.X)
            metrics[name] = evaluate(split.y, pred, K).to_dict()
    _dump(out / "metrics.json", metrics)
    if not (out / "stats.json").exists():
        _dump(out / "stats.json", ds.stats)
    print(f"lr={sel.learning_rate:g} val wF1={sel.scores[sel.learning_rate]:.4f} -> {out / 'checkpoint.ckpt'}")
    return EXIT_OK


def cmd_transfer(args, cfg):
    if not args.source:
        raise UsageError("transfer needs --source <checkpoint>")
    source = load_checkpoint(args.source)
    ds = _dataset(cfg)
    W, D = ds.window_shape
    graph = build_tcnn(W, D, len(ds.class_names), cfg["fc_units"], cfg["dropout_p"])
    tc = train_config(cfg)
    t = cfg["transfer"]
    matrix = run_transfer_matrix(
        source, graph, ds.splits, tc,
        n_conv_set=tuple(t["n_conv_set"]),
        fractions=tuple(t["fractions"]),
        runs=cfg["runs"],
        seed=cfg["seed"],
        freeze=bool(t["freeze"]),
        lr_grid=cfg["lr_grid"],
        baseline_fractions=tuple(t["baseline_fractions"]),
        source_branch=t["source_branch"],
        n_perm=cfg["n_perm"],
    )
    out = _out(cfg)
    (out / "results.csv").write_text(matrix.to_csv(), encoding="utf-8")
    (out / "summary.json").write_text(matrix.to_json(), encoding="utf-8")
    print(format_table(matrix.summary["cells"]))
    return EXIT_OK


def format_table(cells: dict) -> str:
    lines = [f"{'cell':<18} {'N_conv':>6} {'%D_t':>5}  wF1[%] (mu+-sigma)"]
    for cid, c in cells.items():
        lines.append(f"{cid:<18} {c['n_conv']:>6} {c['pct']:>5}  {100 * c['wF1_mean']:6.2f} +- {100 * c['wF1_std']:5.2f}")
    return "\n".join(lines)


def cmd_eval(args, cfg):
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint <path>")
    ck = load_checkpoint(args.checkpoint)
    ds = _dataset(cfg)
    split = ds.splits[args.split]
    K = ck.graph.num_classes
    pred, _ = predict(ck.graph, ck.params, split.X)
    y = split.y
    ids = list(split.clip_ids)
    if args.majority_vote:
        y, pred, ids = clip_level(y, pred, ids)
    report = MetricsReport.from_confusion(confusion(y, pred, K))
    out = _out(cfg)
    result = {"granularity": "clip" if args.majority_vote else "window", "split": args.split, **report.to_dict()}
    _dump(out / "eval.json", result)
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "clip_id", "label", "pred"])
        for i, (c, t, p) in enumerate(zip(ids, y, pred)):
            w.writerow([i, c, int(t), int(p)])
    print(f"{result['granularity']}-level wF1={report.wf1:.4f} accuracy={report.accuracy:.4f} (n={report.n})")
    return EXIT_OK


def read_predictions(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "pred" not in rows[0]:
        raise ClipFormatError(f"{path}: expected a CSV with a 'pred' column")
    pred = np.array([int(r["pred"]) for r in rows])
    label = np.array([int(r["label"]) for r in rows]) if "label" in rows[0] else None
    return pred, label


def cmd_permtest(args, cfg):
    if not (args.preds_a and args.preds_b):
        raise UsageError("permtest needs --preds-a and --preds-b")
    pa, la = read_predictions(args.preds_a)
    pb, _ = read_predictions(args.preds_b)
    if args.labels:
        la = _read_labels(args.labels)
    if la is None:
        raise UsageError("no labels: pass --labels or include a 'label' column in --preds-a")
    if not (len(pa) == len(pb) == len(la)):
        raise ClipFormatError(f"length mismatch: {len(pa)} / {len(pb)} predictions, {len(la)} labels")
    n_perm = args.n_perm if args.n_perm is not None else cfg["n_perm"]
    res = permutation_test(pa == la, pb == la, n_perm, cfg["seed"])
    _dump(_out(cfg) / "permtest.json", res.to_dict())
    print(f"observed diff={res.observed_diff:+.4f} p={res.p_value:.4g} (n_perm={res.n_permutations})")
    return EXIT_OK


def _read_labels(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "label" not in rows[0]:
        raise ClipFormatError(f"{path}: expected a CSV with a 'label' column")
    return np.array([int(r["label"]) for r in rows])


def gradcheck_graphs(which):
    graphs = {}
    if which in ("tcnn", "both"):
        graphs["tcnn"] = build_tcnn(25, 4, 3, fc_units=64)
    if which in ("tcnn-imu", "both"):
        graphs["tcnn-imu"] = build_tcnn_imu({"LA": [0, 1], "RA": [2, 3], "N": [4, 5]}, 25, 3, 64, 64)
    return graphs


def cmd_gradcheck(args, cfg):
    rng = np.random.default_rng(cfg["seed"])
    hook = None
    if args.inject_fault:
        key = args.inject_fault

        def hook(grads):
            if key not in grads:
                raise UsageError(f"--inject-fault: no parameter {key!r}")
            grads = dict(grads)
            grads[key] = -grads[key]
            return grads

    reports, ok = {}, True
    for name, graph in gradcheck_graphs(args.arch).items():
        params = init_params(graph, rng)
        X = rng.standard_normal((args.batch, *graph.input_shape))
        y = rng.integers(0, graph.num_classes, args.batch)
        rep = gradient_check(graph, params, X, y, tolerance=args.tolerance, grad_hook=hook)
        reports[name] = rep.to_dict()
        ok &= rep.passed
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {name}: max rel error {rep.max_rel_error:.3e} at {rep.worst_key} "
              f"({rep.checked} probes, {rep.skipped_kinks} skipped at ReLU kinks)")
    _dump(_out(cfg) / "gradcheck.json", reports)
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="base seed (default 42)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, dotted keys for nested sections")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="posetransfer", description=__doc__.split("\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="window a manifest into shards + stats")
    sub.add_parser("train", parents=[common], help="train a tCNN / tCNN-IMU")
    p = sub.add_parser("transfer", parents=[common], help="transplant conv layers and fine-tune")
    p.add_argument("--source", help="source checkpoint")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--majority-vote", action="store_true", help="score one vote per clip")
    p = sub.add_parser("permtest", parents=[common], help="paired permutation test of two prediction files")
    p.add_argument("--preds-a")
    p.add_argument("--preds-b")
    p.add_argument("--labels")
    p.add_argument("--n-perm", type=int)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--arch", default="both", choices=("tcnn", "tcnn-imu", "both"))
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--inject-fault", metavar="PARAM", help="negate one parameter's gradient (self-test)")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "eval": cmd_eval,
    "permtest": cmd_permtest,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ClipFormatError, ManifestError, CheckpointError, TransplantError, SignalError,
            FileNotFoundError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
