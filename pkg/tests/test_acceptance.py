"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the per-criterion lines
are repeated in the terminal summary.
"""
import json
import time

import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from acceptance_log import record
from oracles import brute_weighted_f1, exact_sign_flip_p
from posetransfer import toydata
from posetransfer.arch import build_tcnn, build_tcnn_imu
from posetransfer.cli import main
from posetransfer.dataio import PoseClip, WindowSpec, build_windows_pipeline, load_clip, segment_windows, write_clip
from posetransfer.metrics import confusion, permutation_test, weighted_f1
from posetransfer.nn import TrainConfig, init_params, train
from posetransfer.signal import ChannelSeries, SplineQuery, eval_piecewise_quintic
from posetransfer.transfer import (
    Checkpoint,
    TransferPlan,
    checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint,
    run_cell,
    save_checkpoint,
    transplant,
)


def test_1_gradient_fidelity(tmp_path):
    t0 = time.perf_counter()
    code = main(["gradcheck", "--arch", "both", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    worst = max(r["max_rel_error"] for r in rep.values())
    ok = code == 0 and set(rep) == {"tcnn", "tcnn-imu"} and worst < 1e-3 and elapsed < 60
    record(1, "gradient fidelity", ok, f"max rel error {worst:.2e} (< 1e-3), {elapsed:.1f} s (< 60 s)")
    assert ok


def test_2_spline_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_val = worst_acc = 0.0
    for trial in range(60):
        deg = trial % 6
        coef = rng.uniform(-3, 3, deg + 1)
        rate = float(rng.choice([10.0, 25.0, 30.0, 100.0]))
        n = int(rng.integers(6, 120))
        t = np.arange(n) / rate
        series = ChannelSeries(P.polyval(t, coef), rate)
        q = np.sort(rng.uniform(0, series.duration, 200))
        val = eval_piecewise_quintic(series, q).values
        acc = eval_piecewise_quintic(series, q, SplineQuery(derivative_order=2)).values
        ref = P.polyval(q, coef)
        ref2 = P.polyval(q, P.polyder(coef, 2))
        worst_val = max(worst_val, np.abs(val - ref).max() / max(np.abs(ref).max(), 1e-300))
        if deg >= 2:
            worst_acc = max(worst_acc, np.abs(acc - ref2).max() / np.abs(ref2).max())
        else:
            worst_acc = max(worst_acc, np.abs(acc).max())
    t = np.arange(401) / 100.0
    s = ChannelSeries(np.sin(2 * np.pi * t), 100.0)
    inner = t[3:-3]
    acc = eval_piecewise_quintic(s, inner, SplineQuery(derivative_order=2)).values
    sine_err = np.abs(acc + (2 * np.pi) ** 2 * np.sin(2 * np.pi * inner)).max() / (2 * np.pi) ** 2
    elapsed = time.perf_counter() - t0
    ok = worst_val < 1e-8 and worst_acc < 1e-8 and sine_err < 0.01 and elapsed < 5
    record(2, "spline correctness", ok,
           f"poly value {worst_val:.1e}, 2nd deriv {worst_acc:.1e} (< 1e-8); sine {sine_err:.1e} (< 1%); "
           f"{elapsed:.2f} s (< 5 s)")
    assert ok


def test_3_windowing_oracle():
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(1000):
        L, W, s = int(rng.integers(1, 300)), int(rng.integers(1, 80)), int(rng.integers(1, 40))
        data = rng.normal(size=(L, 2))
        wins = segment_windows(PoseClip("c", 0, 10.0, ["a.x", "a.y"], data), WindowSpec(W, s))
        expected = (L - W) // s + 1 if L >= W else 0
        if len(wins) != expected:
            bad += 1
            continue
        for k, w in enumerate(wins):
            if w.start != k * s or not np.array_equal(w.data, data[k * s:k * s + W]):
                bad += 1
                break
    record(3, "windowing oracle", bad == 0, f"{1000 - bad}/1000 (L, W, s) triples match")
    assert bad == 0


def test_4_wf1_oracle():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(500):
        K = int(rng.integers(1, 7))
        n = int(rng.integers(1, 200))
        yt = rng.integers(0, K, n)
        yp = np.where(rng.random(n) < 0.5, yt, rng.integers(0, K, n))
        worst = max(worst, abs(weighted_f1(confusion(yt, yp, K)) - brute_weighted_f1(yt.tolist(), yp.tolist(), K)))
    hand = weighted_f1(np.array([[1, 1], [1, 2]]))
    ok = worst <= 1e-12 and hand == 0.6
    record(4, "wF1 oracle", ok, f"max |diff| {worst:.1e} over 500 cases (<= 1e-12); hand case {hand!r}")
    assert ok


def test_5_permutation_validity():
    rng = np.random.default_rng(5)
    n_perm = 9999
    worst_z = 0.0
    for case in range(20):
        n = int(rng.integers(2, 11))
        a = rng.random(n) < 0.75
        b = rng.random(n) < 0.45
        exact = exact_sign_flip_p(a, b)
        p = permutation_test(a, b, n_perm, seed=case).p_value
        se = max(np.sqrt(exact * (1 - exact) / n_perm), 1 / (n_perm + 1))
        worst_z = max(worst_z, abs(p - exact) / se)
    rng = np.random.default_rng(42)
    rejections = 0
    for trial in range(500):
        a = rng.random(200) < 0.7
        b = rng.random(200) < 0.7
        rejections += permutation_test(a, b, n_perm, seed=trial).p_value < 0.05
    rate = rejections / 500
    ok = worst_z < 4 and 0.03 <= rate <= 0.08
    record(5, "permutation test validity", ok,
           f"exact enumeration max |z| {worst_z:.2f} (< 4 MC s.e.); null rejection rate {rate:.3f} in [0.03, 0.08]")
    assert ok


def test_6_transplant_contract():
    rng = np.random.default_rng(6)
    g = build_tcnn(25, 4, 3, fc_units=16)
    src = Checkpoint(g, {k: v + np.float32(0.5) for k, v in init_params(g, np.random.default_rng(99)).items()})
    problems = []
    for n_conv in range(5):
        tp = transplant(src, g, TransferPlan(n_conv), np.random.default_rng(n_conv))
        fresh = init_params(g, np.random.default_rng(n_conv))
        for k, v in tp.params.items():
            copied = k.startswith("conv") and int(k[4]) <= n_conv
            ref = src.params[k] if copied else fresh[k]
            if v.tobytes() != ref.tobytes():
                problems.append(f"N_conv={n_conv} {k}")
    X = rng.normal(size=(50, 25, 4)).astype(np.float32)
    y = rng.integers(0, 3, 50)
    data = (X, y)
    tp = transplant(src, g, TransferPlan(2, freeze=True), np.random.default_rng(0))
    cfg = TrainConfig(epochs=20, batch_size=10)  # 5 batches x 20 epochs = 100 steps
    # train() returns the best validation snapshot, so drive the optimizer directly
    # to inspect the parameters after exactly 100 updates
    trained = _train_steps(g, data, cfg, tp.params, tp.frozen)
    for k in tp.frozen:
        if trained[k].tobytes() != src.params[k].tobytes():
            problems.append(f"frozen {k} changed")
    if trained["conv3.W"].tobytes() == tp.params["conv3.W"].tobytes():
        problems.append("unfrozen conv3.W did not train")
    cfg0 = TrainConfig(epochs=3, batch_size=10, seed=11)
    a, _ = train(g, data, data, cfg0, params=transplant(src, g, TransferPlan(0), np.random.default_rng(11)).params)
    b, _ = train(g, data, data, cfg0)
    if any(a[k].tobytes() != b[k].tobytes() for k in a):
        problems.append("N_conv=0 differs from scratch")
    ok = not problems
    record(6, "transplant contract", ok, "copies bit-equal, 100 frozen steps invariant, N_conv=0 == scratch"
           if ok else "; ".join(problems))
    assert ok


def _train_steps(graph, data, cfg, params, frozen):
    from posetransfer.nn import OptimizerState, backward, forward, rmsprop_step, softmax_xent

    params = {k: v.copy() for k, v in params.items()}
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    X, y = data
    steps = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(X))
        for i in range(0, len(X), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            logits, cache = forward(graph, params, X[idx], training=True, rng=rng)
            _, dlogits = softmax_xent(logits, y[idx])
            rmsprop_step(params, backward(graph, params, cache, dlogits), state, cfg, frozen)
            steps += 1
    assert steps == 100
    return params


@pytest.mark.slow
def test_7_desk_scale_transfer_effect():
    t0 = time.perf_counter()
    src_clips, tgt_clips = toydata.desk_domains()
    rate = toydata.NETWORK_RATE_HZ
    spec = WindowSpec(duration_sec=1.0, stride=12)
    src = build_windows_pipeline(toydata.make_manifest(src_clips, 25.0, "position"), rate, "synthetic", spec,
                                 clips=src_clips)
    W, D = src.window_shape
    graph = build_tcnn(W, D, len(toydata.CLASSES), fc_units=64)
    params, hist = train(graph, (src.splits["train"].X, src.splits["train"].y),
                         (src.splits["val"].X, src.splits["val"].y),
                         TrainConfig(learning_rate=1e-3, epochs=10, batch_size=100))
    source = Checkpoint(graph, params)

    tgt = build_windows_pipeline(toydata.make_manifest(tgt_clips, 25.0, "acceleration"), rate, "pose", spec,
                                 clips=tgt_clips)
    cfg = TrainConfig(learning_rate=1e-4, epochs=20, batch_size=50)
    transfer = run_cell(source, graph, tgt.splits, cfg, n_conv=1, pct=10, runs=5)
    scratch = run_cell(None, graph, tgt.splits, cfg, n_conv=0, pct=10, runs=5)
    elapsed = time.perf_counter() - t0

    wf1_t = np.mean([r["wF1"] for r in transfer])
    wf1_s = np.mean([r["wF1"] for r in scratch])
    acc_diff = np.mean([r["accuracy"] for r in transfer]) - np.mean([r["accuracy"] for r in scratch])
    pt = permutation_test(np.concatenate([r["correct"] for r in transfer]),
                          np.concatenate([r["correct"] for r in scratch]), 9999, 42)
    sign_ok = np.sign(pt.observed_diff) == np.sign(round(acc_diff, 12))
    ok = wf1_t >= wf1_s and sign_ok and elapsed < 900
    record(7, "desk-scale transfer effect", ok,
           f"wF1 transfer {wf1_t:.4f} vs scratch {wf1_s:.4f} (source val wF1 {max(hist.val_wf1):.3f}); "
           f"perm diff {pt.observed_diff:+.4f} p={pt.p_value:.4g}; {elapsed:.0f} s (< 900 s)")
    assert ok


def _cli_config(root):
    clips = toydata.make_clips(10, 25.0, 2.0, seed=8)
    toydata.write_dataset(root / "data", clips, 25.0, "position")
    cfg = {
        "manifest": "data/manifest.json",
        "window": {"duration_sec": 1.0, "stride": 5},
        "fc_units": 16,
        "train": {"epochs": 2, "batch_size": 16},
        "lr_grid": [1e-3, 1e-4],
        "runs": 2,
        "n_perm": 999,
        "transfer": {"n_conv_set": [1, 2], "fractions": [50], "baseline_fractions": [100, 50]},
    }
    (root / "exp.json").write_text(json.dumps(cfg))
    return root / "exp.json"


def test_8_determinism(tmp_path):
    cfg = str(_cli_config(tmp_path))
    for run in ("a", "b"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / f"train_{run}")]) == 0
        assert main(["transfer", "--config", cfg, "--source", str(tmp_path / "train_a" / "checkpoint.ckpt"),
                     "--out", str(tmp_path / f"transfer_{run}")]) == 0
    files = [("train", "checkpoint.ckpt"), ("train", "history.jsonl"), ("train", "metrics.json"),
             ("transfer", "results.csv"), ("transfer", "summary.json")]
    same = [(tmp_path / f"{d}_a" / f).read_bytes() == (tmp_path / f"{d}_b" / f).read_bytes() for d, f in files]
    ok = all(same)
    record(8, "determinism", ok, f"{sum(same)}/{len(same)} artifacts byte-identical across reruns")
    assert ok


def _random_graph(rng):
    W = int(rng.integers(17, 30))
    K = int(rng.integers(2, 7))
    filters = int(rng.integers(1, 5))
    if rng.random() < 0.5:
        return build_tcnn(W, int(rng.integers(1, 5)), K, int(rng.integers(1, 9)), filters=filters)
    limbs = [l for l in ("LA", "RA", "LL", "RL", "N") if rng.random() < 0.6] or ["N"]
    limb_map = {l: [i] for i, l in enumerate(limbs)}
    return build_tcnn_imu(limb_map, W, K, int(rng.integers(1, 6)), int(rng.integers(1, 6)), filters=filters)


def _random_floats(rng, shape, dtype):
    # mixed magnitudes, signed zeros and subnormals
    x = rng.normal(size=shape) * 10.0 ** rng.integers(-30, 30, size=shape)
    flat = x.reshape(-1)
    if flat.size:
        flat[rng.integers(0, flat.size)] = -0.0
        flat[rng.integers(0, flat.size)] = np.finfo(dtype).smallest_subnormal
    return x.astype(dtype)


def test_9_round_trips(tmp_path):
    rng = np.random.default_rng(9)
    ck_ok = csv_ok = 0
    for i in range(100):
        g = _random_graph(rng)
        params = {k: _random_floats(rng, v.shape, np.float32) for k, v in init_params(g, rng).items()}
        meta = {"fixture": i, "note": "µ±σ"}
        path = tmp_path / f"{i}.ckpt"
        save_checkpoint(g, params, meta, path)
        back = load_checkpoint(path)
        if (back.graph == g and back.meta == meta and list(back.params) == list(params)
                and all(back.params[k].tobytes() == params[k].tobytes() for k in params)
                and checkpoint_bytes(back.graph, back.params, back.meta) == path.read_bytes()
                and parse_checkpoint(path.read_bytes()).graph == g):
            ck_ok += 1

        T, C = int(rng.integers(1, 40)), int(rng.integers(1, 6))
        rate = float(rng.choice([12.5, 25.0, 30.0, 50.0, 100.0, 120.0]))
        clip = PoseClip(f"clip{i}", 0, rate, [f"j{c}.x" for c in range(C)], _random_floats(rng, (T, C), np.float64))
        write_clip(tmp_path / f"clip{i}.csv", clip)
        back = load_clip(tmp_path / f"clip{i}.csv")
        if back.channel_names == clip.channel_names and back.data.tobytes() == clip.data.tobytes():
            csv_ok += 1
    ok = ck_ok == 100 and csv_ok == 100
    record(9, "round-trips", ok, f"checkpoints {ck_ok}/100, clip CSVs {csv_ok}/100 bit-lossless")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
