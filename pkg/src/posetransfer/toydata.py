"""Parametric limb trajectories for desk-scale experiments and fixtures.

Each class is a small set of sinusoidal components per channel (frequency
multiples, relative phases between joints). Positions and their exact second
derivatives are both available, so one generator can play the pose source
and the inertial target.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataio import ClipEntry, DatasetManifest, LimbMap, PoseClip, save_manifest, write_clip

CHANNELS = ("lhand.x", "lhand.y", "rhand.x", "rhand.y")
LIMB_GROUPS = {"LA": ["lhand.x", "lhand.y"], "RA": ["rhand.x", "rhand.y"]}
CLASSES = ("swing", "shake", "jerk", "lurch", "beat")

# class -> per channel list of (harmonic, amplitude, phase); classes differ in
# waveform (frequency and harmonic content) rather than cross-joint phase
_PATTERNS = {
    0: [[(1, 1.0, 0.0)], [(1, 0.5, 0.5)], [(1, 0.8, 1.0)], [(1, 0.4, 1.5)]],
    1: [[(2, 1.0, 0.0)], [(2, 0.5, 0.5)], [(2, 0.8, 1.0)], [(2, 0.4, 1.5)]],
    2: [[(1, 1.0, 0.0), (3, 0.33, 0.0)], [(1, 0.5, 0.5), (3, 0.17, 1.5)],
        [(1, 0.8, 1.0), (3, 0.27, 3.0)], [(1, 0.4, 1.5), (3, 0.13, 4.5)]],
    3: [[(1, 1.0, 0.0), (2, 0.5, 0.0)], [(1, 0.5, 0.5), (2, 0.25, 1.0)],
        [(1, 0.8, 1.0), (2, 0.4, 2.0)], [(1, 0.4, 1.5), (2, 0.2, 3.0)]],
    4: [[(1, 0.7, 0.0), (1.5, 0.7, 0.0)], [(1, 0.35, 0.5), (1.5, 0.35, 0.0)],
        [(1, 0.56, 1.0), (1.5, 0.56, 0.0)], [(1, 0.28, 1.5), (1.5, 0.28, 0.0)]],
}


def _components(label, rng, amp_scale, base_freq):
    comps = []
    jitter_f = base_freq * rng.uniform(0.85, 1.15)
    phase0 = rng.uniform(0, 2 * np.pi)
    for chan in _PATTERNS[label]:
        amp = amp_scale * rng.uniform(0.7, 1.3)
        comps.append([(h * jitter_f, a * amp, p + h * phase0) for h, a, p in chan])
    return comps


def _evaluate(comps, t, order):
    out = np.zeros((len(t), len(comps)))
    for j, chan in enumerate(comps):
        for f, a, p in chan:
            w = 2 * np.pi * f
            if order == 0:
                out[:, j] += a * np.sin(w * t + p)
            else:
                out[:, j] -= a * w * w * np.sin(w * t + p)
    return out


def make_clips(n_clips, rate_hz, duration_sec=4.0, seed=0, kind="position", amp_scale=20.0,
               base_freq=1.0, noise=0.0, offset=(100.0, 200.0, 140.0, 200.0), prefix="clip"):
    """Balanced clips cycling through the five classes.

    ``kind="position"`` gives pixel-like coordinates (with a constant body
    offset); ``kind="acceleration"`` gives the exact second derivative, as an
    ideal accelerometer at the joint would measure. `noise` is the std of
    additive Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_sec * rate_hz)) + 1
    t = np.arange(n) / rate_hz
    clips = []
    for i in range(n_clips):
        label = i % len(CLASSES)
        comps = _components(label, rng, amp_scale, base_freq)
        if kind == "position":
            data = _evaluate(comps, t, 0) + np.asarray(offset)
        else:
            data = _evaluate(comps, t, 2)
        if noise:
            data = data + rng.normal(0, noise, size=data.shape)
        clips.append(PoseClip(f"{prefix}{i:04d}", label, rate_hz, CHANNELS, data, kind))
    return clips


def make_manifest(clips, rate_hz, unit) -> DatasetManifest:
    return DatasetManifest(
        classes=list(CLASSES),
        rate_hz=rate_hz,
        unit=unit,
        clips=[ClipEntry(f"{c.clip_id}.csv", c.label) for c in clips],
        limb_map=LimbMap({k: list(v) for k, v in LIMB_GROUPS.items()}),
        channels=list(CHANNELS),
    )


def write_dataset(out_dir, clips, rate_hz, unit) -> Path:
    """Write clip CSVs plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for c in clips:
        write_clip(out_dir / f"{c.clip_id}.csv", c)
    manifest = make_manifest(clips, rate_hz, unit)
    save_manifest(manifest, out_dir / "manifest.json")
    return out_dir / "manifest.json"


# Desk-scale transfer domains. The source is 2-D pose at 25 Hz with keypoint
# jitter (synthesized into accelerations at 50 Hz); the target is an inertial
# recording at 25 Hz with sensor noise, resampled to the same 50 Hz. Both have
# the same five motion classes with shifted amplitude and base frequency.
SOURCE_DOMAIN = dict(n_clips=200, rate_hz=25.0, duration_sec=4.0, seed=1, kind="position",
                     amp_scale=20.0, base_freq=1.0, noise=0.2, prefix="s")
TARGET_DOMAIN = dict(n_clips=100, rate_hz=25.0, duration_sec=4.0, seed=7, kind="acceleration",
                     amp_scale=12.0, base_freq=1.2, noise=300.0, prefix="t")
NETWORK_RATE_HZ = 50.0


def desk_domains(source=None, target=None):
    """``(source_clips, target_clips)`` with optional overrides of the defaults."""
    src = make_clips(**{**SOURCE_DOMAIN, **(source or {})})
    tgt = make_clips(**{**TARGET_DOMAIN, **(target or {})})
    return src, tgt
