import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solarload.regressor import RegressorModel
from solarload.scene import (ConfigError, Schedule, SensorNoise, SunConfig, ThermalFrame, make_face,
                             render_sequence)
from solarload.spatial import (RankDeficient, RegionObservation, binned_observations, correct_frame,
                               solve_two_point)


def obs(temps, cos):
    return [RegionObservation(t, c) for t, c in zip(temps, cos)]


def test_two_point_hand_solution():
    r = solve_two_point(obs([38.0, 36.0], [1.0, 0.5]))
    assert r.t_bar == pytest.approx(34.0, abs=1e-12)
    assert r.beta_f == pytest.approx(4.0, abs=1e-12)
    assert r.condition >= 1.0 and not r.clamped


def test_equal_temps_mean_no_loading():
    r = solve_two_point(obs([35.2, 35.2, 35.2], [0.9, 0.4, 0.1]))
    assert r.beta_f == pytest.approx(0.0, abs=1e-12)
    assert r.t_bar == pytest.approx(35.2, abs=1e-12)


def test_rank_deficient_and_clamp():
    with pytest.raises(RankDeficient):
        solve_two_point(obs([35.0, 36.0], [0.5, 0.5]))
    with pytest.raises(RankDeficient):
        solve_two_point(obs([35.0, 36.0], [-0.2, -0.7]))     # both clamp to zero incidence
    with pytest.raises(RankDeficient):
        solve_two_point(obs([35.0], [0.5]))
    r = solve_two_point(obs([34.0, 36.0], [1.0, 0.5]))          # cooler where more lit: B < 0
    assert r.clamped and r.beta_f == 0.0 and r.t_bar == pytest.approx(35.0)
    with pytest.raises(ValueError):
        RegionObservation(30.0, 1.5)


def test_array_input_and_weights():
    arr = np.array([[38.0, 1.0], [36.0, 0.5], [35.0, 0.25]])
    r = solve_two_point(arr, weights=[1.0, 1.0, 0.0])
    assert (r.t_bar, r.beta_f) == pytest.approx((34.0, 4.0), abs=1e-12)


@given(c=st.floats(-5, 5), s=st.floats(0.2, 1.0), seed=st.integers(0, 1000))
def test_affine_equivariance(c, s, seed):
    r = np.random.default_rng(seed)
    cos = np.sort(r.uniform(0.05, 1.0, 6))
    temps = 34.0 + 3.0 * cos + r.normal(0, 0.05, 6)
    base = solve_two_point(np.column_stack((temps, cos)))
    shifted = solve_two_point(np.column_stack((temps + c, cos)))
    scaled = solve_two_point(np.column_stack((temps, s * cos)))
    if base.clamped:
        return
    assert shifted.t_bar == pytest.approx(base.t_bar + c, abs=1e-9)
    assert shifted.beta_f == pytest.approx(base.beta_f, abs=1e-9)
    assert scaled.beta_f == pytest.approx(base.beta_f / s, rel=1e-9)
    assert scaled.t_bar == pytest.approx(base.t_bar, abs=1e-9)


@pytest.fixture(scope="module")
def homogeneous():
    face = make_face(heterogeneity_c=0.0, seed=2)
    seq, truth = render_sequence(face, SunConfig(1000.0), SensorNoise.off(), Schedule(300.0, 300.0, fps=0.1))
    return face, seq, truth


@settings(max_examples=40)
@given(k=st.integers(1, 59), picks=st.lists(st.integers(0, 10_000), min_size=2, max_size=6, unique=True))
def test_any_regions_recover_steady_state(homogeneous, k, picks):
    face, seq, truth = homogeneous
    rows, cols = np.nonzero(face.foreground)
    idx = np.array(picks) % len(rows)
    cos = face.cos_map[rows[idx], cols[idx]]
    if np.ptp(cos) < 1e-3:
        return
    r = solve_two_point(np.column_stack((seq.temps[k][rows[idx], cols[idx]], cos)))
    assert r.t_bar == pytest.approx(float(face.baseline_temp_map[rows[0], cols[0]]), abs=1e-6)


def test_noiseless_linear_correction_exact(homogeneous):
    face, seq, truth = homogeneous
    fg = face.foreground
    for k in (10, 30, 45):
        res = correct_frame(seq[k], face)
        assert np.max(np.abs(res.corrected[fg] - truth.baseline[fg])) < 1e-6
        assert res.mean_after == pytest.approx(truth.baseline[fg].mean(), abs=1e-6)


def test_zero_estimate_leaves_frame_identical(homogeneous):
    face, seq, _ = homogeneous
    zero = RegressorModel.zeros()
    res = correct_frame(seq[20], face, zero, "learned")
    assert res.beta_f == 0.0
    assert np.array_equal(res.corrected, seq[20].temps)


def test_steady_frames_barely_changed():
    face = make_face(seed=5)
    seq, truth = render_sequence(face, SunConfig(1000.0), SensorNoise(seed=5), Schedule(0.0, 0.0, steady_s=30.0))
    fg = face.foreground
    diffs = [np.mean(np.abs(correct_frame(f, face).corrected[fg] - f.temps[fg])) for f in seq]
    assert max(diffs) <= 0.52


def test_background_reference_removes_common_offset(homogeneous):
    face, seq, truth = homogeneous
    frame = seq[30]
    shifted = ThermalFrame(frame.temps + 0.7, frame.timestamp, background_mask=face.background_mask)
    res = correct_frame(shifted, face, reference_c=face.ambient_c)
    assert res.offset == pytest.approx(0.7, abs=1e-6)
    fg = face.foreground
    assert np.max(np.abs(res.corrected[fg] - truth.baseline[fg])) < 1e-5


@settings(max_examples=15)
@given(k=st.integers(0, 59), method=st.sampled_from(["linear", "learned"]), ref=st.booleans())
def test_background_never_altered(homogeneous, k, method, ref):
    face, seq, _ = homogeneous
    model = RegressorModel.initialise(1)
    res = correct_frame(seq[k], face, model, method, reference_c=face.ambient_c if ref else None)
    bg = face.background_mask
    assert np.array_equal(res.corrected[bg], seq[k].temps[bg])


@given(c=st.floats(-3, 3))
def test_fever_offset_invariance_linear(homogeneous, c):
    face, seq, _ = homogeneous
    fg = face.foreground
    temps, cos = seq[30].temps[fg], face.cos_map[fg]
    a = solve_two_point(*binned_observations(temps, cos))
    b = solve_two_point(*binned_observations(temps + c, cos))
    assert b.t_bar == pytest.approx(a.t_bar + c, abs=1e-9)
    assert b.beta_f == pytest.approx(a.beta_f, abs=1e-9)


def test_method_input_errors(homogeneous):
    face, seq, _ = homogeneous
    with pytest.raises(ConfigError):
        correct_frame(seq[0], None, method="linear")
    with pytest.raises(ConfigError):
        correct_frame(seq[0], face, None, method="learned")
    with pytest.raises(ConfigError):
        correct_frame(seq[0], face, method="quadratic")
