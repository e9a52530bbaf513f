"""Retargeting tests: interpolation exactness, the thumb quadrilateral vs a
unit-square bilinear oracle, depth independence, occlusion hold, smoothing."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexhand.errors import CalibrationIncompleteError, DegenerateCalibrationError
from dexhand.hand_model import load_hand_model
from dexhand.retarget import (
    CAL_LABELS,
    FINGER_INDEX,
    TIP_KEYPOINTS,
    Calibration,
    LandmarkFrame,
    TargetSmoother,
    bilinear,
    calibrate,
    default_calibration,
    invert_bilinear,
    load_calibration,
    make_retarget_state,
    read_landmark_stream,
    retarget,
    save_calibration,
    smooth,
    write_landmark_stream,
)


@pytest.fixture(scope="module")
def model():
    return load_hand_model()


@pytest.fixture(scope="module")
def cal(model):
    return default_calibration(model)


def frame_with(tips_y=None, pinky_xy=None, z=0.0, conf=1.0, ts=0.0):
    kp = np.full((21, 3), 0.5)
    kp[:, 2] = z
    if tips_y:
        for name, y in tips_y.items():
            kp[TIP_KEYPOINTS[name], 1] = y
    if pinky_xy is not None:
        kp[TIP_KEYPOINTS["pinky"], 0] = pinky_xy[0]
        kp[TIP_KEYPOINTS["pinky"], 1] = pinky_xy[1]
    return LandmarkFrame(timestamp=ts, keypoints=kp, confidence=conf)


def test_calibration_missing_labels(model):
    frames = [(frame_with(), "index_extended")]
    with pytest.raises(CalibrationIncompleteError) as err:
        calibrate(frames, model)
    assert "thumb_corner_0" in err.value.missing
    assert "middle_extended" in err.value.missing


def test_calibration_degenerate_extrema(model):
    frames = []
    for label in CAL_LABELS:
        frames.append((frame_with(), label))  # every pose identical
    with pytest.raises(DegenerateCalibrationError):
        calibrate(frames, model)


def test_interpolation_endpoints_exact(model, cal):
    state = make_retarget_state(model, cal)
    fm = cal.fingers["index"]
    out_min = retarget(frame_with(tips_y={"index": fm.human_min}), cal, state, model)
    np.testing.assert_array_equal(out_min.positions[0], fm.robot_min)
    out_max = retarget(frame_with(tips_y={"index": fm.human_max}), cal, state, model)
    np.testing.assert_array_equal(out_max.positions[0], fm.robot_max)


def test_interpolation_midpoint_exact(model, cal):
    state = make_retarget_state(model, cal)
    fm = cal.fingers["middle"]
    mid_y = 0.5 * (fm.human_min + fm.human_max)
    out = retarget(frame_with(tips_y={"middle": mid_y}), cal, state, model)
    np.testing.assert_allclose(
        out.positions[1], 0.5 * (fm.robot_min + fm.robot_max), rtol=0, atol=1e-15
    )


def test_interpolation_clamps_beyond_extrema(model, cal):
    state = make_retarget_state(model, cal)
    fm = cal.fingers["ring"]
    out = retarget(frame_with(tips_y={"ring": fm.human_max + 0.5}), cal, state, model)
    np.testing.assert_array_equal(out.positions[2], fm.robot_max)


def test_thumb_quad_corners_exact(model, cal):
    state = make_retarget_state(model, cal)
    for i in range(4):
        out = retarget(frame_with(pinky_xy=cal.thumb_quad[i]), cal, state, model)
        np.testing.assert_allclose(out.positions[3][:2], cal.thumb_robot[i], rtol=0, atol=1e-9)
        assert out.positions[3][2] == cal.z_plane


def test_thumb_square_centroid_is_corner_mean(model, cal):
    # the calibration quad is a square, so its centroid maps to (0.5, 0.5)
    state = make_retarget_state(model, cal)
    centroid = cal.thumb_quad.mean(axis=0)
    out = retarget(frame_with(pinky_xy=centroid), cal, state, model)
    np.testing.assert_allclose(out.positions[3][:2], cal.thumb_robot.mean(axis=0), rtol=0, atol=1e-9)


def test_inverse_bilinear_matches_oracle_on_unit_square():
    # oracle: on the unit square the bilinear map is the identity
    quad = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = rng.uniform(0.0, 1.0, 2)
        s, t = invert_bilinear(quad, p)
        assert abs(s - p[0]) < 1e-9 and abs(t - p[1]) < 1e-9


def test_inverse_bilinear_roundtrip_general_quad():
    quad = np.array([[0.2, 0.25], [0.8, 0.3], [0.75, 0.8], [0.25, 0.7]])
    rng = np.random.default_rng(4)
    for _ in range(200):
        s0, t0 = rng.uniform(0.0, 1.0, 2)
        p = bilinear(quad, s0, t0)
        s, t = invert_bilinear(quad, p)
        np.testing.assert_allclose(bilinear(quad, s, t), p, atol=1e-9)


def test_thumb_outside_quad_clamps_to_boundary(model, cal):
    state = make_retarget_state(model, cal)
    out = retarget(frame_with(pinky_xy=(-5.0, 0.5)), cal, state, model)
    # clamps to the left edge of the square quad
    assert out.positions[3][0] == pytest.approx(cal.thumb_robot[0][0], abs=1e-9)


def test_depth_independent(model, cal):
    state_a = make_retarget_state(model, cal)
    state_b = make_retarget_state(model, cal)
    rng = np.random.default_rng(5)
    for _ in range(50):
        ys = {n: rng.uniform(0.0, 1.0) for n in ("index", "middle", "ring")}
        pxy = rng.uniform(0.0, 1.0, 2)
        za, zb = rng.uniform(-2.0, 2.0, 2)
        fa = frame_with(tips_y=ys, pinky_xy=pxy, z=za)
        fb = frame_with(tips_y=ys, pinky_xy=pxy, z=zb)
        out_a = retarget(fa, cal, state_a, model)
        out_b = retarget(fb, cal, state_b, model)
        np.testing.assert_array_equal(out_a.positions, out_b.positions)


def test_occlusion_holds_last_output(model, cal):
    state = make_retarget_state(model, cal)
    out1 = retarget(frame_with(tips_y={"index": 0.6}), cal, state, model)
    out2 = retarget(frame_with(tips_y={"index": 0.2}, conf=0.3), cal, state, model)
    np.testing.assert_array_equal(out2.positions, out1.positions)


def test_nan_frame_rejected_holds_output(model, cal):
    state = make_retarget_state(model, cal)
    out1 = retarget(frame_with(tips_y={"index": 0.6}), cal, state, model)
    kp = np.full((21, 3), 0.5)
    kp[8, 0] = np.nan
    bad = LandmarkFrame(timestamp=1.0, keypoints=kp)
    out2 = retarget(bad, cal, state, model)
    np.testing.assert_array_equal(out2.positions, out1.positions)


def test_monotone_in_mapped_coordinate(model, cal):
    state = make_retarget_state(model, cal)
    fm = cal.fingers["index"]
    prev_frac = -1.0
    direction = fm.robot_max - fm.robot_min
    norm2 = float(direction @ direction)
    for u in np.linspace(-0.2, 1.2, 40):
        y = fm.human_min + u * (fm.human_max - fm.human_min)
        out = retarget(frame_with(tips_y={"index": y}), cal, state, model)
        frac = float((out.positions[0] - fm.robot_min) @ direction) / norm2
        assert frac >= prev_frac - 1e-12
        prev_frac = frac


def test_outputs_always_in_workspace_property(model, cal):
    # 10^4 random frames, arbitrary coordinates: outputs stay inside boxes
    rng = np.random.default_rng(6)
    state = make_retarget_state(model, cal)
    packed = model.packed()
    for _ in range(10_000):
        kp = rng.uniform(-1.0, 2.0, (21, 3))
        frame = LandmarkFrame(timestamp=0.0, keypoints=kp, confidence=1.0)
        out = retarget(frame, cal, state, model)
        assert np.all(out.positions >= packed.box_lo - 1e-12)
        assert np.all(out.positions <= packed.box_hi + 1e-12)


@settings(max_examples=300, deadline=None)
@given(
    ys=st.tuples(*(st.floats(0.0, 1.0, width=32) for _ in range(3))),
    pxy=st.tuples(st.floats(0.0, 1.0, width=32), st.floats(0.0, 1.0, width=32)),
    za=st.floats(-3.0, 3.0, width=32),
    zb=st.floats(-3.0, 3.0, width=32),
    conf=st.floats(0.0, 1.0, width=32),
)
def test_depth_and_occlusion_properties(model_cal_cache, ys, pxy, za, zb, conf):
    model, cal = model_cal_cache
    tips_y = dict(zip(("index", "middle", "ring"), ys))
    state_a = make_retarget_state(model, cal)
    state_b = make_retarget_state(model, cal)
    fa = frame_with(tips_y=tips_y, pinky_xy=pxy, z=za)
    fb = frame_with(tips_y=tips_y, pinky_xy=pxy, z=zb)
    out_a = retarget(fa, cal, state_a, model)
    out_b = retarget(fb, cal, state_b, model)
    np.testing.assert_array_equal(out_a.positions, out_b.positions)
    low = frame_with(tips_y={"index": 0.9}, conf=min(conf, cal.confidence_min - 1e-6))
    held = retarget(low, cal, state_a, model)
    np.testing.assert_array_equal(held.positions, out_a.positions)


@pytest.fixture(scope="module")
def model_cal_cache(model, cal):
    return model, cal


def test_smoother_identity_at_alpha_one():
    sm = TargetSmoother(alpha=1.0)
    rng = np.random.default_rng(7)
    for _ in range(10):
        x = rng.normal(0, 1, (4, 3))
        np.testing.assert_array_equal(sm.apply(x), x)


def test_smoother_constant_fixed_point():
    sm = TargetSmoother(alpha=0.5)
    x = np.ones((4, 3)) * 0.3
    for _ in range(5):
        out = sm.apply(x)
    np.testing.assert_allclose(out, x, atol=1e-12)


def test_smoother_step_geometric_convergence():
    # after n frames of a unit step, the gap decays as (1 - alpha)^n
    alpha = 0.5
    stream = [np.zeros((4, 3))] + [np.ones((4, 3))] * 10
    outs = list(smooth(stream, alpha=alpha))
    for n in range(1, 11):
        expected = 1.0 - (1.0 - alpha) ** n
        np.testing.assert_allclose(outs[n], expected, atol=1e-12)


def test_calibration_roundtrip(tmp_path, model, cal):
    path = tmp_path / "cal.yaml"
    save_calibration(cal, path)
    loaded = load_calibration(path)
    assert loaded.z_plane == cal.z_plane
    for name in ("index", "middle", "ring"):
        assert loaded.fingers[name].human_min == cal.fingers[name].human_min
        np.testing.assert_array_equal(loaded.fingers[name].robot_min, cal.fingers[name].robot_min)
    np.testing.assert_array_equal(loaded.thumb_quad, cal.thumb_quad)
    # and it produces identical outputs
    state_a = make_retarget_state(model, cal)
    state_b = make_retarget_state(model, loaded)
    f = frame_with(tips_y={"index": 0.4, "middle": 0.6}, pinky_xy=(0.45, 0.55))
    np.testing.assert_array_equal(
        retarget(f, cal, state_a, model).positions,
        retarget(f, loaded, state_b, model).positions,
    )


def test_landmark_stream_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    frames = [
        LandmarkFrame(timestamp=0.1 * (i + 1), keypoints=rng.uniform(0, 1, (21, 3)), confidence=0.9)
        for i in range(5)
    ]
    path = tmp_path / "stream.jsonl"
    write_landmark_stream(frames, path)
    loaded = read_landmark_stream(path)
    assert len(loaded) == 5
    for a, b in zip(frames, loaded):
        assert a.timestamp == b.timestamp
        np.testing.assert_array_equal(a.keypoints, b.keypoints)
