"""Kinematics tests: FK vs a symbolic homogeneous-transform oracle, Jacobian
vs finite differences, IK round trips, gravity torque vs hand computations."""

import math

import numpy as np
import pytest
import sympy as sp

from dexhand.errors import InvalidInputError, ModelError
from dexhand.hand_model import (
    FingertipTargets,
    HandModel,
    JointState,
    compute_workspace_boxes,
    finger_chain_points,
    forward_kinematics,
    gravity_torque,
    jacobian,
    load_hand_model,
    solve_ik,
)


@pytest.fixture(scope="module")
def model():
    return load_hand_model()


def _sympy_fk_oracle(model):
    """Independent FK: per-joint 4x4 homogeneous transforms built symbolically.

    Composes Trans(base) @ Rot(axis_i, q_i) @ Trans(L_i x) with sympy and
    lambdifies the tip position, without reusing any package kinematics code.
    """
    packed = model.packed()
    qs = sp.symbols("q0:16")
    tip_fns = []
    for f in range(4):
        T = sp.eye(4)
        T[:3, :3] = sp.Matrix(packed.base_rot[f])
        T[:3, 3] = sp.Matrix(packed.base_pos[f])
        for i in range(4):
            ax, ay, az = packed.axes[f, i]
            th = qs[f * 4 + i]
            K = sp.Matrix([[0, -az, ay], [az, 0, -ax], [-ay, ax, 0]])
            R = sp.eye(3) + sp.sin(th) * K + (1 - sp.cos(th)) * (K * K)
            J = sp.eye(4)
            J[:3, :3] = R
            J[3, 3] = 1
            L = sp.eye(4)
            L[0, 3] = packed.lengths[f, i]
            T = T * J * L
        tip_fns.append(sp.lambdify(qs, T[:3, 3], modules="numpy"))

    def oracle(q):
        return np.array([fn(*q).ravel() for fn in tip_fns])

    return oracle


def test_fk_zero_pose_sums_link_offsets(model):
    packed = model.packed()
    tips = forward_kinematics(model, np.zeros(16))
    for f in range(4):
        expected = packed.base_pos[f] + packed.base_rot[f] @ np.array(
            [packed.lengths[f].sum(), 0.0, 0.0]
        )
        np.testing.assert_allclose(tips[f], expected, atol=1e-12)


def test_fk_pi_rotation_reflects_chain(model):
    # rotating joint 0 of finger 0 by pi about its +z axis mirrors the chain
    # through the joint origin in the xy plane; other fingers are untouched.
    lim = model.joint_limits.copy()
    q = np.zeros(16)
    tips0 = forward_kinematics(model, q)
    packed = model.packed()
    base = packed.base_pos[0]
    q[0] = math.pi  # outside declared limits, but FK itself does not clamp
    tips = forward_kinematics(model, q)
    rel0 = tips0[0] - base
    rel = tips[0] - base
    np.testing.assert_allclose(rel, [-rel0[0], -rel0[1], rel0[2]], atol=1e-12)
    np.testing.assert_array_equal(tips[1:], tips0[1:])
    assert np.all(lim[:, 0] < lim[:, 1])


def test_fk_matches_homogeneous_transform_oracle(model):
    oracle = _sympy_fk_oracle(model)
    rng = np.random.default_rng(42)
    lim = model.joint_limits
    worst = 0.0
    for _ in range(1000):
        q = rng.uniform(lim[:, 0], lim[:, 1])
        got = forward_kinematics(model, q)
        want = oracle(q)
        worst = max(worst, float(np.abs(got - want).max()))
    assert worst < 1e-9, f"FK deviates from oracle by {worst}"


def test_fk_deterministic(model):
    rng = np.random.default_rng(3)
    q = rng.uniform(-0.2, 1.0, 16)
    a = forward_kinematics(model, q)
    b = forward_kinematics(model, q)
    np.testing.assert_array_equal(a, b)


def test_fk_rejects_bad_dimension(model):
    with pytest.raises(InvalidInputError):
        forward_kinematics(model, np.zeros(15))


def test_jacobian_matches_finite_differences(model):
    rng = np.random.default_rng(7)
    lim = model.joint_limits
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        q = rng.uniform(lim[:, 0], lim[:, 1])
        for f in range(4):
            J = jacobian(model, q, f)
            fd = np.empty((3, 4))
            for i in range(4):
                qp = q.copy()
                qm = q.copy()
                qp[f * 4 + i] += h
                qm[f * 4 + i] -= h
                fd[:, i] = (forward_kinematics(model, qp)[f] - forward_kinematics(model, qm)[f]) / (2 * h)
            worst = max(worst, float(np.abs(J - fd).max()))
    assert worst < 1e-5


def test_jacobian_zero_distal_link_gives_zero_column():
    # a distal joint with a zero-length link has no lever arm on the tip
    model = load_hand_model()
    f0 = model.fingers[0]
    tiny = type(f0)(
        name=f0.name,
        base_pos=f0.base_pos,
        base_rot=f0.base_rot,
        joint_axes=f0.joint_axes,
        link_lengths=np.array([0.05, 0.04, 0.03, 1e-300]),
        joint_limits=f0.joint_limits,
        link_masses=f0.link_masses,
        workspace_box=f0.workspace_box,
    )
    model2 = HandModel(
        fingers=(tiny,) + model.fingers[1:],
        palm_pos=model.palm_pos,
        palm_rot=model.palm_rot,
        gravity=model.gravity,
    )
    J = jacobian(model2, np.full(16, 0.3), 0)
    np.testing.assert_allclose(J[:, 3], 0.0, atol=1e-12)


def test_jacobian_independent_of_other_fingers(model):
    rng = np.random.default_rng(11)
    q = rng.uniform(0.0, 0.5, 16)
    J0 = jacobian(model, q, 0)
    for _ in range(10):
        q2 = q.copy()
        q2[4:] = rng.uniform(0.0, 0.5, 12)
        np.testing.assert_array_equal(jacobian(model, q2, 0), J0)


def test_jacobian_rejects_bad_finger(model):
    with pytest.raises(InvalidInputError):
        jacobian(model, np.zeros(16), 4)


def test_ik_fixed_point(model):
    rng = np.random.default_rng(5)
    lim = model.joint_limits
    q = rng.uniform(lim[:, 0], lim[:, 1])
    targets = forward_kinematics(model, q)
    res = solve_ik(model, targets, q)
    np.testing.assert_array_equal(res.angles, q)
    assert res.residual == 0.0 or res.residual < 1e-12
    assert np.all(res.iterations <= 1)


def test_ik_round_trip_success_rate(model):
    rng = np.random.default_rng(2024)
    lim = model.joint_limits
    mid = model.mid_pose()
    n = 1000
    ok = 0
    for _ in range(n):
        q = rng.uniform(lim[:, 0], lim[:, 1])
        targets = forward_kinematics(model, q)
        res = solve_ik(model, targets, mid)
        if res.residual <= 1e-3:
            ok += 1
    assert ok >= 0.99 * n, f"IK round trip succeeded on {ok}/{n}"


def test_ik_unreachable_reports_residual(model):
    targets = np.tile([1.0, 0.0, 0.0], (4, 1))  # a meter away: unreachable
    res = solve_ik(model, targets, model.mid_pose())
    assert res.residual > 0.0
    assert not res.converged
    lim = model.joint_limits
    assert np.all(res.angles >= lim[:, 0]) and np.all(res.angles <= lim[:, 1])


def test_ik_respects_limits_exactly(model):
    rng = np.random.default_rng(9)
    lim = model.joint_limits
    for _ in range(50):
        q = rng.uniform(lim[:, 0], lim[:, 1])
        res = solve_ik(model, forward_kinematics(model, q), model.mid_pose())
        assert np.all(res.angles >= lim[:, 0])
        assert np.all(res.angles <= lim[:, 1])


def test_ik_rejects_nonfinite_targets(model):
    targets = np.zeros((4, 3))
    targets[1, 2] = np.nan
    with pytest.raises(InvalidInputError):
        solve_ik(model, targets, model.mid_pose())


def test_gravity_torque_zero_mass():
    model = load_hand_model()
    fingers = tuple(
        type(f)(
            name=f.name,
            base_pos=f.base_pos,
            base_rot=f.base_rot,
            joint_axes=f.joint_axes,
            link_lengths=f.link_lengths,
            joint_limits=f.joint_limits,
            link_masses=np.zeros(4),
            workspace_box=f.workspace_box,
        )
        for f in model.fingers
    )
    m0 = HandModel(fingers=fingers, palm_pos=model.palm_pos, palm_rot=model.palm_rot, gravity=model.gravity)
    np.testing.assert_array_equal(gravity_torque(m0, np.full(16, 0.4)), np.zeros(16))


def test_gravity_torque_zero_gravity(model):
    m0 = HandModel(
        fingers=model.fingers,
        palm_pos=model.palm_pos,
        palm_rot=model.palm_rot,
        gravity=np.zeros(3),
    )
    np.testing.assert_array_equal(gravity_torque(m0, np.full(16, 0.4)), np.zeros(16))


def test_gravity_torque_single_pendulum(model):
    # one massive link held horizontal: holding torque is m * g * (l / 2)
    f0 = model.fingers[0]
    masses = np.zeros(4)
    masses[0] = 0.05
    pend = type(f0)(
        name="pend",
        base_pos=np.zeros(3),
        base_rot=np.eye(3),
        joint_axes=np.array([[0.0, -1.0, 0.0]] * 4),
        link_lengths=np.array([0.1, 0.01, 0.01, 0.01]),
        joint_limits=f0.joint_limits,
        link_masses=masses,
        workspace_box=f0.workspace_box,
    )
    m = HandModel(
        fingers=(pend,) + model.fingers[1:],
        palm_pos=np.zeros(3),
        palm_rot=np.eye(3),
        gravity=np.array([0.0, 0.0, -9.81]),
    )
    tau = gravity_torque(m, np.zeros(16))
    assert tau[0] == pytest.approx(0.05 * 9.81 * 0.05, rel=1e-12)


def test_clamp_targets(model):
    packed = model.packed()
    wild = np.array([[10.0, 10.0, 10.0]] * 4)
    clamped = model.clamp_targets(wild)
    np.testing.assert_array_equal(clamped, packed.box_hi)
    t = FingertipTargets.clamped(model, wild)
    np.testing.assert_array_equal(t.positions, packed.box_hi)


def test_workspace_boxes_contain_samples(model):
    sampled = compute_workspace_boxes(model, n_samples=500, seed=1)
    declared = model.workspace_boxes()
    assert np.all(declared[:, 0] <= sampled[:, 0] + 1e-9)
    assert np.all(declared[:, 1] >= sampled[:, 1] - 1e-9)


def test_finger_chain_points_end_matches_fk(model):
    rng = np.random.default_rng(13)
    q = rng.uniform(0.0, 0.8, 16)
    tips = forward_kinematics(model, q)
    for f in range(4):
        pts = finger_chain_points(model, q, f)
        np.testing.assert_allclose(pts[4], tips[f], atol=1e-12)


def test_model_validation_catches_bad_axis(model):
    f0 = model.fingers[0]
    bad = type(f0)(
        name="bad",
        base_pos=f0.base_pos,
        base_rot=f0.base_rot,
        joint_axes=np.array([[0.0, 0.0, 2.0]] + [[0.0, -1.0, 0.0]] * 3),
        link_lengths=f0.link_lengths,
        joint_limits=f0.joint_limits,
        link_masses=f0.link_masses,
        workspace_box=f0.workspace_box,
    )
    with pytest.raises(ModelError):
        bad.validate()


def test_joint_state_shapes():
    js = JointState(np.zeros(16))
    assert js.velocities.shape == (16,)
    with pytest.raises(Exception):
        JointState(np.zeros(4))
