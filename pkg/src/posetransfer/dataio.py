"""Clip files, manifests, sliding windows, splits and the windowing pipeline.

Clip CSV::

    t_sec,<joint.axis>,<joint.axis>,...
    0.0,12.5,80.25,...

Rows are uniformly spaced at ``1/rate_hz`` seconds. The manifest is JSON::

    {"classes": [...], "rate_hz": 25, "unit": "position",
     "channels": [...],            # optional: required header order
     "limb_map": {"LA": [...], ...},   # optional
     "clips": [{"path": "c0.csv", "label": 0, "subject": "s1"}, ...]}

Clip paths are relative to the manifest file. A clip entry may override
``rate_hz`` and may carry a ``subject`` used as the split unit.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .signal import AnchorSpec, ChannelSeries, anchor_normalize, apply_zscore, resample, synthesize_obd

LIMB_NAMES = ("LA", "LL", "RA", "RL", "N")
SPLITS = ("train", "val", "test")


class ClipFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class PoseClip:
    clip_id: str
    label: int
    rate_hz: float
    channel_names: tuple
    data: np.ndarray  # time x channels
    unit: str = "position"
    subject: str | None = None
    sample_labels: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ClipFormatError(f"clip {self.clip_id!r}: data must be a non-empty time x channels matrix")
        if data.shape[1] != len(self.channel_names):
            raise ClipFormatError(f"clip {self.clip_id!r}: {data.shape[1]} columns for {len(self.channel_names)} names")
        if not self.rate_hz > 0:
            raise ClipFormatError(f"clip {self.clip_id!r}: rate_hz must be positive")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if self.sample_labels is not None:
            sl = np.asarray(self.sample_labels, dtype=np.int64)
            if sl.shape != (data.shape[0],):
                raise ClipFormatError(f"clip {self.clip_id!r}: sample_labels length mismatch")
            object.__setattr__(self, "sample_labels", sl)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]


@dataclass
class LimbMap:
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = set(self.groups) - set(LIMB_NAMES)
        if bad:
            raise ManifestError(f"unknown limb group(s) {sorted(bad)}; expected {LIMB_NAMES}")
        seen = set()
        for limb, names in self.groups.items():
            dup = seen.intersection(names)
            if dup:
                raise ManifestError(f"limb channel lists overlap on {sorted(dup)}")
            seen.update(names)

    def validate(self, channel_names):
        missing = [n for names in self.groups.values() for n in names if n not in channel_names]
        if missing:
            raise ManifestError(f"limb map names unknown channel(s) {missing}")

    def indices(self, channel_names) -> dict:
        pos = {n: i for i, n in enumerate(channel_names)}
        self.validate(pos)
        return {limb: [pos[n] for n in names] for limb, names in self.groups.items() if names}


@dataclass(frozen=True)
class WindowSpec:
    window_len: int | None = None
    stride: int = 1
    duration_sec: float = 1.0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.window_len is not None and self.window_len < 1:
            raise ValueError("window_len must be >= 1")

    def resolve(self, rate_hz: float) -> "WindowSpec":
        if self.window_len is not None:
            return self
        return WindowSpec(int(round(self.duration_sec * rate_hz)), self.stride, self.duration_sec)


@dataclass(frozen=True)
class Window:
    data: np.ndarray
    label: int
    clip_id: str
    start: int = 0


@dataclass
class ClipEntry:
    path: str
    label: int
    rate_hz: float | None = None
    subject: str | None = None


@dataclass
class DatasetManifest:
    classes: list
    rate_hz: float
    unit: str
    clips: list
    limb_map: LimbMap | None = None
    channels: list | None = None
    base_dir: Path = Path(".")

    def __post_init__(self):
        if not self.classes:
            raise ManifestError("manifest class list is empty")
        if self.unit not in ("position", "acceleration"):
            raise ManifestError(f"unknown unit {self.unit!r}")
        for e in self.clips:
            if not 0 <= e.label < len(self.classes):
                raise ManifestError(f"clip {e.path!r}: label {e.label} outside 0..{len(self.classes) - 1}")

    def rate_for(self, entry: ClipEntry) -> float:
        return entry.rate_hz or self.rate_hz

    def to_dict(self):
        d = {"classes": list(self.classes), "rate_hz": self.rate_hz, "unit": self.unit}
        if self.channels is not None:
            d["channels"] = list(self.channels)
        if self.limb_map is not None:
            d["limb_map"] = {k: list(v) for k, v in self.limb_map.groups.items()}
        clips = []
        for e in self.clips:
            c = {"path": e.path, "label": e.label}
            if e.rate_hz is not None:
                c["rate_hz"] = e.rate_hz
            if e.subject is not None:
                c["subject"] = e.subject
            clips.append(c)
        d["clips"] = clips
        return d


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("classes", "rate_hz", "unit", "clips"):
        if key not in raw:
            raise ManifestError(f"{path}: missing field {key!r}")
    limb = raw.get("limb_map")
    clips = [ClipEntry(c["path"], int(c["label"]), c.get("rate_hz"), c.get("subject")) for c in raw["clips"]]
    return DatasetManifest(
        classes=list(raw["classes"]),
        rate_hz=float(raw["rate_hz"]),
        unit=raw["unit"],
        clips=clips,
        limb_map=LimbMap(limb) if limb is not None else None,
        channels=raw.get("channels"),
        base_dir=path.parent,
    )


def save_manifest(manifest: DatasetManifest, path):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")


def write_clip(path, clip: PoseClip):
    """Write a clip CSV; values use ``repr`` so reading back is exact."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(("t_sec",) + clip.channel_names) + "\n")
        for i, row in enumerate(clip.data.tolist()):
            fh.write(repr(i / clip.rate_hz) + "," + ",".join(map(repr, row)) + "\n")


def load_clip(path, manifest: DatasetManifest | None = None, entry: ClipEntry | None = None) -> PoseClip:
    """Parse and validate a clip CSV.

    Without a manifest, ``rate_hz`` is inferred from the time column and the
    label is 0.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
        except StopIteration:
            raise ClipFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "t_sec":
            raise ClipFormatError(f"{path}:1: header must start with 't_sec'")
        names = header[1:]
        if not names or any(not n for n in names):
            raise ClipFormatError(f"{path}:1: malformed header (empty channel name)")
        if len(set(names)) != len(names):
            raise ClipFormatError(f"{path}:1: duplicate channel names")
        values = []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ClipFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values.append([float(v) for v in row])
            except ValueError as exc:
                raise ClipFormatError(f"{path}:{lineno}: {exc}") from None
    if not values:
        raise ClipFormatError(f"{path}: no samples")
    arr = np.array(values, dtype=np.float64)
    t = arr[:, 0]

    if manifest is not None:
        if manifest.channels is not None:
            unknown = [n for n in names if n not in manifest.channels]
            if unknown:
                raise ClipFormatError(f"{path}:1: unknown channel(s) {unknown}")
            if list(names) != list(manifest.channels):
                raise ClipFormatError(f"{path}:1: channel order/set differs from manifest")
        if manifest.limb_map is not None:
            missing = [n for v in manifest.limb_map.groups.values() for n in v if n not in names]
            if missing:
                raise ClipFormatError(f"{path}:1: limb map channel(s) {missing} absent")
        rate = manifest.rate_for(entry) if entry is not None else manifest.rate_hz
    elif len(t) > 1:
        rate = (len(t) - 1) / (t[-1] - t[0])
    else:
        rate = 1.0

    if len(t) > 1:
        dt = np.diff(t)
        bad = np.flatnonzero(~(dt > 0))
        if bad.size:
            raise ClipFormatError(f"{path}:{bad[0] + 3}: t_sec not strictly increasing")
        bad = np.flatnonzero(np.abs(dt * rate - 1.0) > 1e-6)
        if bad.size:
            raise ClipFormatError(f"{path}:{bad[0] + 3}: sample spacing differs from 1/{rate} s")

    return PoseClip(
        clip_id=path.stem,
        label=entry.label if entry is not None else 0,
        rate_hz=rate,
        channel_names=tuple(names),
        data=arr[:, 1:],
        unit=manifest.unit if manifest is not None else "position",
        subject=entry.subject if entry is not None else None,
    )


def _window_label(clip: PoseClip, a: int, b: int) -> int:
    if clip.sample_labels is None:
        return clip.label
    seg = clip.sample_labels[a:b]
    vals, counts = np.unique(seg, return_counts=True)
    tied = vals[counts == counts.max()]
    last = seg[-1]
    return int(last) if last in tied else int(tied.min())


def window_count(L: int, W: int, s: int) -> int:
    return max(0, (L - W) // s + 1) if L >= W else 0


def segment_windows(clip: PoseClip, spec: WindowSpec) -> list[Window]:
    """Sliding windows at offsets 0, s, 2s, ...; clips shorter than W give none.

    With per-sample labels the window takes the majority label, ties going to
    the window's last sample label when it is among the tied labels.
    """
    spec = spec.resolve(clip.rate_hz)
    W, s = spec.window_len, spec.stride
    L = clip.n_samples
    return [
        Window(clip.data[a:a + W], _window_label(clip, a, a + W), clip.clip_id, a)
        for a in range(0, L - W + 1, s)
    ]


def _allocate(n: int, fractions) -> list[int]:
    # largest remainder, ties to the earlier split
    exact = [Fraction(str(f)) * n for f in fractions]
    sizes = [math.floor(e) for e in exact]
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    for i in range(1, len(sizes)):
        if sizes[i] == 0 and sizes[0] > 1:
            sizes[i] += 1
            sizes[0] -= 1
    return sizes


def split_clips(clips, fractions=(0.70, 0.15, 0.15), seed: int = 42, groups=None):
    """Seeded shuffle then contiguous train/val/test partition of whole clips.

    When `groups` (one key per clip, e.g. subject) is given, groups are the
    shuffle and partition unit instead of single clips.
    """
    clips = list(clips)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")
    if len(clips) < 3:
        raise ValueError(f"need at least 3 clips to split, got {len(clips)}")
    if groups is None:
        units = [[c] for c in clips]
    else:
        groups = list(groups)
        keyed: dict = {}
        for c, g in zip(clips, groups, strict=True):
            keyed.setdefault(g, []).append(c)
        units = list(keyed.values())
        if len(units) < 3:
            raise ValueError(f"need at least 3 groups to split, got {len(units)}")
    perm = np.random.default_rng(seed).permutation(len(units))
    sizes = _allocate(len(units), fractions)
    out, pos = [], 0
    for size in sizes:
        out.append([c for u in perm[pos:pos + size] for c in units[u]])
        pos += size
    return tuple(out)


def _ceil_fraction(pct, n):
    return math.ceil(Fraction(str(pct)) * n / 100)


def subsample_indices(labels, pct, seed: int = 42) -> np.ndarray:
    """Class-stratified subset: ``ceil(pct/100 * n_c)`` per class, sorted indices."""
    if not 0 < pct <= 100:
        raise ValueError(f"pct must be in (0, 100], got {pct}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        k = _ceil_fraction(pct, len(idx))
        keep.append(idx[rng.permutation(len(idx))[:k]])
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.intp)


def subsample_fraction(windows, pct, seed: int = 42) -> list:
    windows = list(windows)
    idx = subsample_indices([w.label for w in windows], pct, seed)
    return [windows[i] for i in idx]


@dataclass
class SplitArrays:
    X: np.ndarray  # float32 [N, W, D]
    y: np.ndarray  # int64 [N]
    clip_ids: list

    def __len__(self):
        return len(self.y)

    def subset(self, idx):
        return SplitArrays(self.X[idx], self.y[idx], [self.clip_ids[i] for i in idx])


@dataclass
class WindowedDataset:
    channel_names: list
    class_names: list
    rate_hz: float
    splits: dict
    stats: dict  # channel -> {"mean", "std"}
    limb_map: dict | None = None  # limb -> column indices

    @property
    def window_shape(self):
        return self.splits["train"].X.shape[1:]


def _process_clip(clip: PoseClip, target_rate_hz, mode, anchor):
    data = clip.data
    if anchor is not None:
        data = anchor_normalize(clip.channel_names, data, anchor)
    cols = []
    for j in range(data.shape[1]):
        series = ChannelSeries(data[:, j], clip.rate_hz, clip.unit)
        if mode == "synthetic":
            out = synthesize_obd(series, target_rate_hz)
        else:
            out = resample(series, target_rate_hz / clip.rate_hz)
        cols.append(out.values)
    unit = "acceleration" if mode == "synthetic" else clip.unit
    return PoseClip(clip.clip_id, clip.label, target_rate_hz, clip.channel_names,
                    np.stack(cols, axis=1), unit, clip.subject)


def windows_to_arrays(windows) -> SplitArrays:
    if not windows:
        return SplitArrays(np.zeros((0, 0, 0)), np.zeros(0, dtype=np.int64), [])
    return SplitArrays(np.stack([w.data for w in windows]), np.array([w.label for w in windows], dtype=np.int64),
                       [w.clip_id for w in windows])


def build_windows_pipeline(manifest: DatasetManifest, target_rate_hz: float, mode: str = "pose",
                           spec: WindowSpec = WindowSpec(), anchor: AnchorSpec | None = None,
                           seed: int = 42, fractions=(0.70, 0.15, 0.15), clips=None,
                           epsilon: float = 1e-8) -> WindowedDataset:
    """Clips -> split -> (anchor, resample or synthesize) -> windows -> z-score.

    Normalization statistics come from the training windows only and are
    applied to every split. `clips` may be passed pre-loaded (in manifest
    order) to skip reading files.
    """
    if mode not in ("pose", "synthetic"):
        raise ValueError(f"mode must be 'pose' or 'synthetic', got {mode!r}")
    if clips is None:
        clips = [load_clip(manifest.base_dir / e.path, manifest, e) for e in manifest.clips]
    names = clips[0].channel_names
    for c in clips:
        if c.channel_names != names:
            raise ClipFormatError(f"clip {c.clip_id!r}: channels differ from {clips[0].clip_id!r}")
    groups = None
    if clips and all(c.subject is not None for c in clips):
        groups = [c.subject for c in clips]
    parts = split_clips(clips, fractions, seed, groups)

    spec = spec.resolve(target_rate_hz)
    raw = {}
    for name, part in zip(SPLITS, parts):
        wins = []
        for clip in part:
            wins.extend(segment_windows(_process_clip(clip, target_rate_hz, mode, anchor), spec))
        raw[name] = windows_to_arrays(wins)
    if len(raw["train"]) == 0:
        raise ValueError("training split produced no windows (clips shorter than the window?)")

    rows = raw["train"].X.reshape(-1, len(names))
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    splits = {}
    for name, arr in raw.items():
        if len(arr):
            flat = apply_zscore(arr.X.reshape(-1, len(names)).T, mean, std, epsilon).T
            X = flat.reshape(arr.X.shape).astype(np.float32)
        else:
            X = np.zeros((0, spec.window_len, len(names)), dtype=np.float32)
        splits[name] = SplitArrays(X, arr.y, arr.clip_ids)
    stats = {n: {"mean": float(m), "std": float(s)} for n, m, s in zip(names, mean, std)}
    limb = manifest.limb_map.indices(names) if manifest.limb_map is not None else None
    return WindowedDataset(list(names), list(manifest.classes), target_rate_hz, splits, stats, limb)


def save_stats(stats: dict, path):
    Path(path).write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")


def load_stats(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


SHARD_MAGIC = b"PTWSHRD1"


def write_shard(path, split: SplitArrays, dataset: WindowedDataset, stats_ref: str = "stats.json"):
    """Window shard: magic, u64 LE header length, JSON header, LE float32 payload."""
    X = np.ascontiguousarray(split.X, dtype="<f4")
    header = {
        "shape": list(X.shape),
        "classes": dataset.class_names,
        "channels": dataset.channel_names,
        "rate_hz": dataset.rate_hz,
        "limb_map": dataset.limb_map,
        "stats_ref": stats_ref,
        "labels": [int(v) for v in split.y],
        "clip_ids": list(split.clip_ids),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        fh.write(X.tobytes())


def read_shard(path):
    """Return ``(SplitArrays, header)``."""
    blob = Path(path).read_bytes()
    if blob[:8] != SHARD_MAGIC:
        raise ClipFormatError(f"{path}: not a window shard")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    shape = tuple(header["shape"])
    payload = blob[16 + hlen:]
    if len(payload) != 4 * math.prod(shape):
        raise ClipFormatError(f"{path}: payload size {len(payload)} does not match shape {shape}")
    X = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return SplitArrays(X, np.array(header["labels"], dtype=np.int64), header["clip_ids"]), header


def save_dataset(dataset: WindowedDataset, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_stats(dataset.stats, out_dir / "stats.json")
    for name in SPLITS:
        write_shard(out_dir / f"windows_{name}.bin", dataset.splits[name], dataset)


def load_dataset(data_dir) -> WindowedDataset:
    data_dir = Path(data_dir)
    splits, header = {}, None
    for name in SPLITS:
        splits[name], header = read_shard(data_dir / f"windows_{name}.bin")
    stats = load_stats(data_dir / header["stats_ref"])
    limb = header["limb_map"]
    return WindowedDataset(header["channels"], header["classes"], header["rate_hz"], splits, stats, limb)
