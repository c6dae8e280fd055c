"""Spline resampling, synthetic on-body accelerations and channel normalization.

Every sample ``i`` of a series at ``rate_hz`` sits at ``t = i / rate_hz``
seconds. Local degree-5 polynomials are fitted on the samples nearest to each
query time and evaluated (or twice differentiated) there; second derivatives
are returned per second squared.

Queries near either end of a clip use a one-sided support and are noticeably
less accurate than interior queries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import kernels

Unit = Literal["position", "acceleration"]


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelSeries:
    values: np.ndarray
    rate_hz: float
    unit: Unit = "position"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise SignalError("ChannelSeries values must be one-dimensional")
        if not self.rate_hz > 0:
            raise SignalError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.unit not in ("position", "acceleration"):
            raise SignalError(f"unknown unit {self.unit!r}")
        object.__setattr__(self, "values", values)

    @property
    def duration(self) -> float:
        return (len(self.values) - 1) / self.rate_hz

    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) / self.rate_hz


@dataclass(frozen=True)
class SplineQuery:
    degree: int = 5
    support: int = 6
    derivative_order: int = 0

    def __post_init__(self):
        if self.degree != 5:
            raise SignalError("only degree-5 splines are supported")
        if self.support < self.degree + 1:
            raise SignalError(f"support must be >= {self.degree + 1}")
        if self.derivative_order not in (0, 2):
            raise SignalError("derivative_order must be 0 or 2")


@dataclass(frozen=True)
class AnchorSpec:
    anchor_joint: str


def _lstsq_eval(values, u, support, order):
    # Wider supports: local least-squares quintic on the `support` nearest samples.
    n = len(values)
    out = np.empty(len(u))
    half = (support - 1) / 2.0
    offsets = np.arange(support, dtype=np.float64)
    for i, ui in enumerate(u):
        start = int(min(max(math.floor(ui - half + 0.5), 0), n - support))
        x = offsets - (ui - start)
        coef = np.polynomial.polynomial.polyfit(x, values[start:start + support], 5)
        out[i] = coef[0] if order == 0 else 2.0 * coef[2]
    return out


def eval_piecewise_quintic(series: ChannelSeries, query_times, q: SplineQuery = SplineQuery()) -> ChannelSeries:
    """Evaluate the local quintic through `series` (or its 2nd derivative) at `query_times`.

    Parameters
    ----------
    series : ChannelSeries
        Uniformly sampled input channel.
    query_times : array_like
        Non-decreasing times in seconds within ``[0, series.duration]``.
    q : SplineQuery
        ``support`` samples per local fit; with the default of 6 the fit is the
        unique interpolating quintic, wider supports use least squares.

    Returns
    -------
    ChannelSeries
        Values at the queries. For ``derivative_order=2`` the unit becomes
        acceleration and values are per second squared. The rate is taken from
        the query spacing (or the input rate for a single query).
    """
    values = series.values
    n = len(values)
    if n < q.support:
        raise SignalError(f"insufficient samples: need {q.support}, got {n}")
    t = np.asarray(query_times, dtype=np.float64).ravel()
    if t.size and np.any(np.diff(t) < 0):
        raise SignalError("query_times must be monotone non-decreasing")
    u = t * series.rate_hz
    tol = 1e-9 * max(n, 1)
    if t.size and (u[0] < -tol or u[-1] > n - 1 + tol):
        raise SignalError(f"query_times outside [0, {series.duration}] s")
    u = np.clip(u, 0.0, n - 1.0)

    order = q.derivative_order
    if q.support == 6:
        out = kernels.quintic_eval(np.ascontiguousarray(values), np.ascontiguousarray(u), order)
    else:
        out = _lstsq_eval(values, u, q.support, order)
    if order:
        out = out * series.rate_hz ** order

    rate = series.rate_hz
    if t.size > 1 and t[-1] > t[0]:
        rate = (t.size - 1) / (t[-1] - t[0])
    unit = "acceleration" if order == 2 else series.unit
    return ChannelSeries(out, rate, unit)


def uniform_grid(duration: float, rate_hz: float) -> np.ndarray:
    count = int(math.floor(duration * rate_hz + 1e-9)) + 1
    return np.arange(count) / rate_hz


def resample(series: ChannelSeries, factor: float, q: SplineQuery = SplineQuery()) -> ChannelSeries:
    """Resample to ``factor * rate_hz`` over the original time range."""
    if not factor > 0:
        raise SignalError(f"factor must be positive, got {factor}")
    if factor == 1:
        return ChannelSeries(series.values.copy(), series.rate_hz, series.unit)
    new_rate = series.rate_hz * factor
    grid = uniform_grid(series.duration, new_rate)
    if len(grid) < 2:
        raise SignalError(f"resampled series would have {len(grid)} sample(s)")
    out = eval_piecewise_quintic(series, grid, SplineQuery(support=q.support, derivative_order=0))
    return ChannelSeries(out.values, new_rate, series.unit)


def synthesize_obd(series: ChannelSeries, target_rate_hz: float, q: SplineQuery = SplineQuery()) -> ChannelSeries:
    """Synthetic accelerometer channel: second derivative of the local quintic at `target_rate_hz`."""
    if series.unit != "position":
        raise SignalError("synthetic on-body data needs a position series")
    if not target_rate_hz > 0:
        raise SignalError(f"target_rate_hz must be positive, got {target_rate_hz}")
    grid = uniform_grid(series.duration, target_rate_hz)
    out = eval_piecewise_quintic(series, grid, SplineQuery(support=q.support, derivative_order=2))
    return ChannelSeries(out.values, target_rate_hz, "acceleration")


def zscore_channels(matrix, epsilon: float = 1e-8):
    """Standardize each row of a channels x time matrix.

    Returns ``(normalized, mean, std)`` with population statistics; ``std`` is
    returned before the epsilon guard so it can be stored and re-applied with
    :func:`apply_zscore`.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise SignalError("zscore_channels expects a non-empty channels x time matrix")
    mean = m.mean(axis=1)
    std = m.std(axis=1)
    return apply_zscore(m, mean, std, epsilon), mean, std


def apply_zscore(matrix, mean, std, epsilon: float = 1e-8):
    m = np.asarray(matrix, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.maximum(np.asarray(std, dtype=np.float64), epsilon)
    return (m - mean[:, None]) / std[:, None]


def split_channel_name(name: str) -> tuple[str, str]:
    joint, sep, axis = name.rpartition(".")
    if not sep:
        return name, ""
    return joint, axis


def anchor_normalize(channel_names, data, anchor: AnchorSpec | str) -> np.ndarray:
    """Subtract the anchor joint's coordinates from every joint, axis by axis.

    `data` is time x channels with columns named ``joint.axis``.
    """
    anchor_joint = anchor.anchor_joint if isinstance(anchor, AnchorSpec) else anchor
    data = np.asarray(data, dtype=np.float64)
    names = list(channel_names)
    if data.ndim != 2 or data.shape[1] != len(names):
        raise SignalError("data must be time x channels matching channel_names")

    joints: dict[str, dict[str, int]] = {}
    for col, name in enumerate(names):
        joint, axis = split_channel_name(name)
        joints.setdefault(joint, {})[axis] = col
    if anchor_joint not in joints:
        raise SignalError(f"anchor joint {anchor_joint!r} not present in clip")
    anchor_axes = joints[anchor_joint]
    for joint, axes in joints.items():
        if set(axes) != set(anchor_axes):
            raise SignalError(f"joint {joint!r} axes {sorted(axes)} differ from anchor axes {sorted(anchor_axes)}")

    ref = data[:, [anchor_axes[_split_axis(n)] for n in names]]
    return data - ref


def _split_axis(name):
    return split_channel_name(name)[1]
