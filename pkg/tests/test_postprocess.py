import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import savgol_filter

from msksim.postprocess import (
    AcceptanceThresholds,
    SmoothingConfig,
    accept_sequence,
    savgol_coefficients,
    savgol_column,
    savgol_smooth,
    total_variation,
)
from msksim.staticopt import ActivationTrajectory


def _acts(cols, fps=30.0):
    A = np.column_stack(cols)
    return ActivationTrajectory(np.arange(len(A)) / fps, A, [f"m{k}" for k in range(A.shape[1])])


def test_defaults():
    assert AcceptanceThresholds() == AcceptanceThresholds(0.15, 1e-11)
    assert SmoothingConfig() == SmoothingConfig(11, 2)
    for kw in (dict(window=10), dict(window=3, poly_order=2), dict(poly_order=-1)):
        with pytest.raises(ValueError):
            SmoothingConfig(**kw)
    with pytest.raises(ValueError):
        AcceptanceThresholds(0.0, 1e-11)


def test_acceptance_examples():
    d = accept_sequence(0.16, 1e-13)
    assert not d.accepted and d.reason == "marker-error" and d.value == 0.16 and d.threshold == 0.15
    d = accept_sequence(0.01, 1e-10)
    assert not d.accepted and d.reason == "constraint-violation" and d.value == 1e-10
    assert accept_sequence(0.05, 1e-13).accepted
    # boundary values are accepted
    assert accept_sequence(0.15, 1e-11).accepted


def test_acceptance_thresholds_are_configurable():
    t = AcceptanceThresholds(0.2, 1e-9)
    assert accept_sequence(0.16, 1e-10, t).accepted
    assert accept_sequence(0.21, 1e-10, t).reason == "marker-error"


def test_acceptance_other_reasons():
    assert accept_sequence(None, 0.0).accepted
    assert accept_sequence(float("nan"), 0.0).reason == "marker-error"
    assert accept_sequence(0.01, 0.0, ik_failed_frames=[3]).reason == "ik-failure"
    assert accept_sequence(0.01, 0.0, so_failed_frames=[1, 2]).reason == "so-failure"
    assert accept_sequence(0.01, float("nan")).reason == "constraint-violation"


def test_coefficients_match_scipy():
    for w, o in ((11, 2), (7, 3), (5, 0)):
        np.testing.assert_allclose(savgol_coefficients(w, o), savgol_filter(np.eye(w)[::-1], w, o, axis=0)[w // 2][::-1],
                                   atol=1e-14)


def test_constant_and_quadratic_reproduced():
    t = np.arange(30.0)
    out = savgol_smooth(_acts([np.full(30, 0.3), 0.001 * t ** 2]), clip=False)
    np.testing.assert_allclose(out.activations[:, 0], 0.3, atol=1e-12)
    np.testing.assert_allclose(out.activations[:, 1], 0.001 * t ** 2, atol=1e-12)
    np.testing.assert_array_equal(out.times, np.arange(30) / 30.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.integers(11, 60))
def test_polynomial_reproduction_including_boundaries(c, T):
    t = np.linspace(-1, 1, T)
    x = c[0] + c[1] * t + c[2] * t ** 2
    np.testing.assert_allclose(savgol_column(x), x, atol=1e-12)


def test_noisy_input_matches_window_regression():
    rng = np.random.default_rng(0)
    T = 80
    x = 0.5 + 0.3 * np.sin(np.arange(T) / 6.0) + rng.normal(scale=0.05, size=T)
    y = savgol_column(x)
    k = np.arange(11) - 5.0
    for i in range(T):
        lo = min(max(i - 5, 0), T - 11)
        coef = np.polyfit(k, x[lo:lo + 11], 2)
        assert abs(y[i] - np.polyval(coef, i - lo - 5)) <= 1e-10
    np.testing.assert_allclose(y, savgol_filter(x, 11, 2, mode="interp"), atol=1e-10)


def test_clip_after_filter():
    # quadratics pass the filter unchanged, so the peak of 1.02 survives until the clip
    x = 1.02 - 0.001 * (np.arange(21.0) - 10) ** 2
    raw = savgol_smooth(_acts([x]), clip=False).activations[:, 0]
    out = savgol_smooth(_acts([x])).activations[:, 0]
    assert raw.max() == pytest.approx(1.02, abs=1e-12)
    np.testing.assert_array_equal(out, np.clip(raw, 0, 1))
    assert out.max() == 1.0


def test_linearity():
    rng = np.random.default_rng(1)
    x, y = rng.random(40), rng.random(40)
    s = lambda v: savgol_column(v)
    np.testing.assert_allclose(s(2.0 * x - 0.5 * y), 2.0 * s(x) - 0.5 * s(y), atol=1e-12)


def test_short_sequence_passes_through():
    x = np.array([0.1, 0.5, 1.2, 0.3])
    out = savgol_smooth(_acts([x]))
    np.testing.assert_array_equal(out.activations[:, 0], np.clip(x, 0, 1))
    assert "too-short-to-smooth" in out.flags


def test_total_variation_not_increased_on_monotone_corpus():
    t = np.linspace(0, 1, 60)
    corpus = [0.2 + 0.5 * t, 0.9 - 0.6 * t ** 2, np.sqrt(t + 0.01), 1 / (1 + np.exp(-(t - 0.5) * 6)),
              0.1 * np.exp(2 * t), np.log1p(5 * t) / 2]
    for x in corpus:
        assert np.all(np.diff(x) >= 0) or np.all(np.diff(x) <= 0)
        out = savgol_smooth(_acts([x])).activations[:, 0]
        assert total_variation(out) <= total_variation(x) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_output_range(seed):
    x = np.random.default_rng(seed).uniform(-0.5, 1.5, (25, 3))
    out = savgol_smooth(ActivationTrajectory(np.arange(25) / 30, x, ["a", "b", "c"]))
    assert np.all((out.activations >= 0) & (out.activations <= 1))
