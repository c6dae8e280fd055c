import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import polynomial as P

from posetransfer import kernels
from posetransfer import _kernels_py
from posetransfer.signal import (
    AnchorSpec,
    ChannelSeries,
    SignalError,
    SplineQuery,
    anchor_normalize,
    apply_zscore,
    eval_piecewise_quintic,
    resample,
    synthesize_obd,
    uniform_grid,
    zscore_channels,
)


def _poly_series(coef, n, rate):
    t = np.arange(n) / rate
    return ChannelSeries(P.polyval(t, coef), rate), t


def test_quadratic_second_derivative_is_constant():
    s, t = _poly_series([0.0, 0.0, 1.0], 20, 10.0)
    q = np.linspace(0, s.duration, 57)
    out = eval_piecewise_quintic(s, q, SplineQuery(derivative_order=2))
    np.testing.assert_allclose(out.values, 2.0, rtol=1e-9)
    assert out.unit == "acceleration"


@pytest.mark.parametrize("deg", range(6))
def test_polynomials_up_to_degree_five_are_reproduced(deg):
    rng = np.random.default_rng(deg)
    coef = rng.uniform(-2, 2, deg + 1)
    s, _ = _poly_series(coef, 40, 20.0)
    q = np.sort(rng.uniform(0, s.duration, 300))
    vals = eval_piecewise_quintic(s, q).values
    acc = eval_piecewise_quintic(s, q, SplineQuery(derivative_order=2)).values
    ref = P.polyval(q, coef)
    ref2 = P.polyval(q, P.polyder(coef, 2))
    scale = max(1.0, np.abs(ref).max())
    assert np.abs(vals - ref).max() / scale < 1e-8
    scale2 = max(1.0, np.abs(ref2).max())
    assert np.abs(acc - ref2).max() / scale2 < 1e-8


def test_sampled_points_returned_exactly():
    rng = np.random.default_rng(3)
    s = ChannelSeries(rng.normal(size=30), 25.0)
    out = eval_piecewise_quintic(s, s.times())
    np.testing.assert_allclose(out.values, s.values, rtol=0, atol=1e-12)


def test_sine_second_derivative_interior_within_one_percent():
    rate = 100.0
    t = np.arange(201) / rate
    s = ChannelSeries(np.sin(2 * np.pi * t), rate)
    q = t[3:-3]
    acc = eval_piecewise_quintic(s, q, SplineQuery(derivative_order=2)).values
    ref = -(2 * np.pi) ** 2 * np.sin(2 * np.pi * q)
    err = np.abs(acc - ref) / (2 * np.pi) ** 2
    assert err.max() < 1e-2
    # frozen oracle: sixth-order local error on a smooth input
    assert err.max() < 1e-5


def test_cosine_values_between_samples():
    rate = 50.0
    t = np.arange(101) / rate
    s = ChannelSeries(np.cos(2 * np.pi * t), rate)
    q = (np.arange(5, 95) + 0.5) / rate
    out = eval_piecewise_quintic(s, q).values
    assert np.abs(out - np.cos(2 * np.pi * q)).max() < 1e-6


def test_query_validation():
    s = ChannelSeries(np.arange(10.0), 10.0)
    with pytest.raises(SignalError, match="insufficient samples"):
        eval_piecewise_quintic(ChannelSeries(np.arange(5.0), 10.0), [0.1])
    with pytest.raises(SignalError, match="monotone"):
        eval_piecewise_quintic(s, [0.3, 0.1])
    with pytest.raises(SignalError, match="outside"):
        eval_piecewise_quintic(s, [0.0, 1.5])
    with pytest.raises(SignalError):
        SplineQuery(derivative_order=1)
    with pytest.raises(SignalError):
        SplineQuery(degree=3)


def test_wider_support_uses_least_squares_and_keeps_quintics():
    coef = [1.0, -0.5, 0.25, 0.1, -0.05, 0.01]
    s, _ = _poly_series(coef, 30, 10.0)
    q = np.linspace(0, s.duration, 40)
    out = eval_piecewise_quintic(s, q, SplineQuery(support=8, derivative_order=2)).values
    np.testing.assert_allclose(out, P.polyval(q, P.polyder(coef, 2)), rtol=1e-7, atol=1e-7)


def test_resample_factor_one_is_identity_copy():
    s = ChannelSeries(np.arange(12.0) ** 2, 25.0)
    out = resample(s, 1)
    assert np.array_equal(out.values, s.values)
    assert out.values is not s.values


def test_resample_cubic_upsampling():
    s, _ = _poly_series([0, 0, 0, 1.0], 26, 25.0)
    out = resample(s, 4)
    assert out.rate_hz == 100.0
    assert len(out.values) == 101
    t = np.arange(101) / 100.0
    np.testing.assert_allclose(out.values, t ** 3, atol=1e-12)


def test_uniform_grid_count():
    assert len(uniform_grid(4.0, 50.0)) == 201
    assert len(uniform_grid(0.99, 10.0)) == 10


def test_synthesize_obd_requires_position_and_rate():
    s = ChannelSeries(np.arange(20.0), 10.0, "acceleration")
    with pytest.raises(SignalError):
        synthesize_obd(s, 20.0)
    s, _ = _poly_series([0, 0, 3.0], 21, 10.0)
    out = synthesize_obd(s, 20.0)
    assert out.rate_hz == 20.0 and len(out.values) == 41
    np.testing.assert_allclose(out.values, 6.0, rtol=1e-9)


def test_zscore_statistics_and_reapply():
    rng = np.random.default_rng(0)
    m = rng.normal(3, 2, size=(4, 200))
    z, mean, std = zscore_channels(m)
    np.testing.assert_allclose(z.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=1), 1, atol=1e-9)
    np.testing.assert_allclose(std, m.std(axis=1))
    np.testing.assert_allclose(apply_zscore(m, mean, std), z)


def test_zscore_constant_channel_is_guarded():
    z, _, std = zscore_channels(np.full((1, 10), 5.0))
    assert std[0] == 0.0
    assert np.all(z == 0.0)


def test_anchor_normalize():
    names = ["neck.x", "neck.y", "hand.x", "hand.y"]
    data = np.array([[1.0, 2.0, 5.0, 7.0], [2.0, 4.0, 6.0, 9.0]])
    out = anchor_normalize(names, data, AnchorSpec("neck"))
    np.testing.assert_array_equal(out, [[0, 0, 4, 5], [0, 0, 4, 5]])
    with pytest.raises(SignalError, match="anchor joint"):
        anchor_normalize(names, data, "hip")
    with pytest.raises(SignalError, match="axes"):
        anchor_normalize(["neck.x", "neck.y", "hand.x"], data[:, :3], "neck")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
       st.floats(-5, 5), st.floats(-5, 5))
def test_anchor_normalize_is_translation_invariant(shift, a, b):
    rng = np.random.default_rng(1)
    names = ["n.x", "n.y", "n.z", "h.x", "h.y", "h.z"]
    data = rng.normal(size=(7, 6))
    moved = data + np.tile(shift, 2)
    np.testing.assert_allclose(anchor_normalize(names, moved, "n"), anchor_normalize(names, data, "n"),
                               atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**32 - 1))
def test_evaluation_is_linear_in_values(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 25))
    q = np.sort(rng.uniform(0, 24 / 8.0, 30))
    spl = SplineQuery(derivative_order=2)
    fx = eval_piecewise_quintic(ChannelSeries(x, 8.0), q, spl).values
    fy = eval_piecewise_quintic(ChannelSeries(y, 8.0), q, spl).values
    fxy = eval_piecewise_quintic(ChannelSeries(a * x + b * y, 8.0), q, spl).values
    np.testing.assert_allclose(fxy, a * fx + b * fy, atol=1e-8 * (1 + abs(a) + abs(b)) * 64)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_backends_agree_bitwise(order):
    if kernels.BACKEND != "cython":
        pytest.skip("compiled kernel not built")
    from posetransfer import _ckernels

    rng = np.random.default_rng(order)
    v = rng.normal(size=64)
    u = np.sort(rng.uniform(0, 63, 500))
    assert np.array_equal(_ckernels.quintic_eval(v, u, order), _kernels_py.quintic_eval(v, u, order))


def test_pure_fallback_matches_polynomial():
    coef = [0.5, 1.0, -1.0, 0.3, 0.2, -0.1]
    x = np.arange(12.0)
    v = P.polyval(x, coef)
    u = np.linspace(0, 11, 23)
    np.testing.assert_allclose(_kernels_py.quintic_eval(v, u, 0), P.polyval(u, coef), rtol=1e-10)
    np.testing.assert_allclose(_kernels_py.quintic_eval(v, u, 2), P.polyval(u, P.polyder(coef, 2)), rtol=1e-8,
                               atol=1e-8)


def test_fallback_selected_by_environment():
    import os
    import subprocess
    import sys

    code = "from posetransfer import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "POSETRANSFER_PURE": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@settings(max_examples=40, deadline=None)
@given(st.floats(-1e4, 1e4), st.integers(6, 60), st.sampled_from([10.0, 25.0, 30.0]))
def test_constant_series_has_zero_acceleration(c, n, rate):
    s = ChannelSeries(np.full(n, c), rate)
    acc = synthesize_obd(s, 100.0).values
    assert np.abs(acc).max() <= 1e-9 * max(1.0, abs(c)) * rate ** 2
