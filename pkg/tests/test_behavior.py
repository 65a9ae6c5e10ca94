from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import random_scene_frames
from spectral_traffic import synth
from spectral_traffic.behavior import (
    Behavior,
    BehaviorThresholds,
    calibrate_thresholds,
    class_recalls,
    classify,
    theta_rate,
    theta_rates_from_spectra,
    theta_series,
    weighted_accuracy,
)
from spectral_traffic.dgg import LaplacianState, eigendecompose, update_laplacian
from spectral_traffic.forecast import ForecastConfig, agent_theta_rates, build_spectrum_sequences

O, N, U = Behavior.OVERSPEEDING, Behavior.NEUTRAL, Behavior.UNDERSPEEDING


def exact_slope(values):
    """Least-squares slope in rational arithmetic."""
    ys = [Fraction(v) for v in values]
    ts = range(len(ys))
    tm = Fraction(sum(ts), len(ys))
    ym = sum(ys) / len(ys)
    return sum((t - tm) * (y - ym) for t, y in zip(ts, ys)) / sum((t - tm) ** 2 for t in ts)


def test_thresholds():
    t = BehaviorThresholds()
    assert (t.lambda1, t.lambda2) == (0.00015, -0.00015)
    assert BehaviorThresholds.symmetric(-2.0) == BehaviorThresholds(2.0, -2.0)
    with pytest.raises(ValueError):
        BehaviorThresholds(-1.0, 1.0)


def test_theta_series_constant_and_step():
    lap = np.array([[1.0, -1.0], [-1.0, 1.0]])
    s = theta_series([lap] * 4, 0)
    np.testing.assert_array_equal(s.values, [1, 1, 1, 1])
    # one weight-w admission at frame 5 steps the diagonal up by w
    w = 0.049787068367863944
    state = LaplacianState(capacity=2)
    mats = []
    for f in range(8):
        pos = [(1, 0.0, 0.0), (2, 30.0 if f < 5 else 3.0, 0.0)]
        state = update_laplacian(state, f, pos, {1: 5.0, 2: 1.0})
        mats.append(state.matrix.copy())
    s = theta_series(mats, 0, frames=range(8))
    np.testing.assert_allclose(np.diff(s.values), [0, 0, 0, 0, w, 0, 0], atol=1e-15)
    with pytest.raises(IndexError):
        theta_series(mats, 2)


def test_theta_series_from_full_spectra_matches_diagonal():
    rng = np.random.default_rng(4)
    frames, speeds, _ = random_scene_frames(rng, n_agents=6, n_frames=8, extent=8.0)
    state = LaplacianState(capacity=6)
    mats, spectra = [], []
    for f, (pos, spd) in enumerate(zip(frames, speeds)):
        state = update_laplacian(state, f, [(a, *p) for a, p in pos.items()], spd)
        mats.append(state.matrix.copy())
        spectra.append(eigendecompose(state.matrix, 6))
    for i in range(6):
        direct = theta_series(mats, i).values
        np.testing.assert_allclose(theta_series(spectra, i).values, direct, atol=1e-8)
        assert np.all(np.diff(direct) >= 0)
    rates = theta_rates_from_spectra(spectra)
    np.testing.assert_allclose(rates, [theta_rate(theta_series(mats, i)) for i in range(6)], atol=1e-8)


def test_theta_rate_examples():
    assert theta_rate([0, 0, 0, 0]) == 0.0
    assert theta_rate([0, 1, 2, 3]) == pytest.approx(1.0)
    series = [0, 0.05, 0.05, 0.20]
    assert exact_slope(["0", "0.05", "0.05", "0.20"]) == Fraction(3, 50)
    assert theta_rate(series) == pytest.approx(0.06, abs=1e-15)
    assert theta_rate(series) == pytest.approx(np.polyfit(range(4), series, 1)[0], abs=1e-14)
    with pytest.raises(ValueError):
        theta_rate([1.0])


def test_classify_examples():
    t = BehaviorThresholds()
    assert classify(0.0, t).label is N
    assert classify(t.lambda1, t).label is N
    assert classify(t.lambda2, t).label is N
    assert classify(2 * t.lambda1, t).label is O
    assert classify(2 * t.lambda2, t).label is U


@given(st.floats(-1, 1), st.floats(0, 1), st.floats(-1, 0), st.floats(1e-3, 1e3))
def test_classify_scale_consistent(rate, l1, l2, scale):
    t = BehaviorThresholds(l1, l2)
    ts = BehaviorThresholds(l1 * scale, l2 * scale)
    a = classify(rate, t).label
    b = classify(rate * scale, ts).label
    # products can round across a boundary only when rate sits on it
    if rate not in (l1, l2):
        assert a is b


def test_weighted_accuracy_examples():
    assert weighted_accuracy([O, N, U], [O, N, U]) == 1.0
    assert weighted_accuracy([N, U, O], [O, N, U]) == 0.0
    assert weighted_accuracy([O, N, N, U], [O, O, N, U]) == 0.75
    assert class_recalls([O, N, N, U], [O, O, N, U]) == {O: 0.5, N: 1.0, U: 1.0}
    assert weighted_accuracy(["o", "neutral"], ["overspeeding", "N"]) == 1.0
    with pytest.raises(ValueError):
        weighted_accuracy([O], [O, N])


def test_calibration_recovers_separable_labels():
    rates = [-3.0, -2.0, 0.0, 0.5, 4.0, 5.0]
    truth = [U, U, N, N, O, O]
    t = calibrate_thresholds(rates, truth)
    assert [classify(r, t).label for r in rates] == truth
    ts = calibrate_thresholds(rates, truth, symmetric=True)
    assert ts.lambda1 == -ts.lambda2


def test_behavior_scenario_ordering():
    res = synth.generate(synth.behavior_scenario())
    rates = agent_theta_rates(build_spectrum_sequences(res.scene, ForecastConfig()))
    over = [rates[a] for a, b in res.labels.items() if b is O]
    under = [rates[a] for a, b in res.labels.items() if b is U]
    assert min(over) > max(under)
