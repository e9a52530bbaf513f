"""Kinematic model of a four-finger, 16-joint hand.

Each finger is a serial chain of 4 revolute joints; link i extends along the
local +x axis of the frame produced by joint i. The wrist frame is the global
frame for everything in this package: fingertip positions, targets, object
poses. Models are immutable after load and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import kernels
from .errors import InvalidInputError, ModelError
from .geometry import rotation_about_axis, rpy_to_matrix

FINGER_NAMES = ("index", "middle", "ring", "thumb")
N_FINGERS = 4
N_JOINTS = 16

DEFAULT_IK_TOL = 1e-3
DEFAULT_IK_DAMPING = 1e-2
DEFAULT_IK_MAX_ITERS = 200
DEFAULT_IK_STEP_CLAMP = 0.2


@dataclass(frozen=True)
class FingerChain:
    """One 4-joint serial chain, rooted at a fixed transform off the palm."""

    name: str
    base_pos: np.ndarray  # (3,) palm frame
    base_rot: np.ndarray  # (3, 3) palm frame
    joint_axes: np.ndarray  # (4, 3) unit axes in the parent link frame
    link_lengths: np.ndarray  # (4,) m
    joint_limits: np.ndarray  # (4, 2) rad, lower < upper
    link_masses: np.ndarray  # (4,) kg
    workspace_box: np.ndarray  # (2, 3) [min; max], wrist frame

    def validate(self) -> None:
        if self.joint_axes.shape != (4, 3):
            raise ModelError(f"finger {self.name}: need 4 joint axes")
        norms = np.linalg.norm(self.joint_axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ModelError(f"finger {self.name}: joint axes must be unit-norm within 1e-9")
        if np.any(self.link_lengths <= 0.0):
            raise ModelError(f"finger {self.name}: link lengths must be strictly positive")
        if np.any(self.link_masses < 0.0):
            raise ModelError(f"finger {self.name}: link masses must be nonnegative")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ModelError(f"finger {self.name}: every joint needs lower_limit < upper_limit")
        if np.any(self.workspace_box[0] >= self.workspace_box[1]):
            raise ModelError(f"finger {self.name}: workspace box min must be below max")


@dataclass(frozen=True)
class PackedHand:
    """Flat array view of a HandModel consumed by the kernels."""

    base_pos: np.ndarray  # (4, 3) wrist frame (palm transform folded in)
    base_rot: np.ndarray  # (4, 3, 3)
    axes: np.ndarray  # (4, 4, 3)
    lengths: np.ndarray  # (4, 4)
    lo: np.ndarray  # (16,)
    hi: np.ndarray  # (16,)
    masses: np.ndarray  # (4, 4)
    gravity: np.ndarray  # (3,)
    box_lo: np.ndarray  # (4, 3)
    box_hi: np.ndarray  # (4, 3)
    has_gravity_load: bool


@dataclass(frozen=True)
class HandModel:
    """Four FingerChains plus the palm transform and gravity vector."""

    fingers: tuple
    palm_pos: np.ndarray  # (3,) wrist frame
    palm_rot: np.ndarray  # (3, 3)
    gravity: np.ndarray  # (3,) m/s^2
    _packed: list = field(default_factory=list, repr=False, compare=False)

    def validate(self) -> None:
        if len(self.fingers) != N_FINGERS:
            raise ModelError("hand model needs exactly 4 fingers")
        for finger in self.fingers:
            finger.validate()

    def packed(self) -> PackedHand:
        if not self._packed:
            self._packed.append(_pack(self))
        return self._packed[0]

    @property
    def joint_limits(self) -> np.ndarray:
        """(16, 2) limits in finger-major order."""
        return np.vstack([f.joint_limits for f in self.fingers])

    def mid_pose(self) -> np.ndarray:
        lim = self.joint_limits
        return 0.5 * (lim[:, 0] + lim[:, 1])

    def workspace_boxes(self) -> np.ndarray:
        """(4, 2, 3) per-finger [min; max] fingertip boxes, wrist frame."""
        return np.stack([f.workspace_box for f in self.fingers])

    def clamp_targets(self, positions) -> np.ndarray:
        """Clamp 4 fingertip positions into their per-finger workspace boxes."""
        pos = np.array(positions, dtype=float).reshape(4, 3)
        packed = self.packed()
        return np.clip(pos, packed.box_lo, packed.box_hi)


@dataclass
class JointState:
    """Joint angles and velocities, finger-major order."""

    angles: np.ndarray
    velocities: np.ndarray

    def __init__(self, angles, velocities=None):
        self.angles = np.array(angles, dtype=float).reshape(N_JOINTS)
        if velocities is None:
            velocities = np.zeros(N_JOINTS)
        self.velocities = np.array(velocities, dtype=float).reshape(N_JOINTS)

    def copy(self) -> "JointState":
        return JointState(self.angles.copy(), self.velocities.copy())


@dataclass(frozen=True)
class FingertipTargets:
    """Desired fingertip positions (4 x 3, wrist frame)."""

    positions: np.ndarray

    @staticmethod
    def clamped(model: HandModel, positions) -> "FingertipTargets":
        return FingertipTargets(model.clamp_targets(positions))

    def flat(self) -> np.ndarray:
        return self.positions.reshape(12)


def as_target_array(targets) -> np.ndarray:
    """Coerce FingertipTargets / (4,3) / (12,) input to a (4, 3) float array."""
    if isinstance(targets, FingertipTargets):
        pos = targets.positions
    else:
        pos = targets
    pos = np.asarray(pos, dtype=float)
    if pos.size != 12:
        raise InvalidInputError(f"expected 12 target values, got shape {pos.shape}")
    return pos.reshape(4, 3)


def _pack(model: HandModel) -> PackedHand:
    base_pos = np.empty((4, 3))
    base_rot = np.empty((4, 3, 3))
    axes = np.empty((4, 4, 3))
    lengths = np.empty((4, 4))
    lo = np.empty(16)
    hi = np.empty(16)
    masses = np.empty((4, 4))
    box_lo = np.empty((4, 3))
    box_hi = np.empty((4, 3))
    for f, finger in enumerate(model.fingers):
        base_rot[f] = model.palm_rot @ finger.base_rot
        base_pos[f] = model.palm_pos + model.palm_rot @ finger.base_pos
        axes[f] = finger.joint_axes
        lengths[f] = finger.link_lengths
        lo[f * 4 : f * 4 + 4] = finger.joint_limits[:, 0]
        hi[f * 4 : f * 4 + 4] = finger.joint_limits[:, 1]
        masses[f] = finger.link_masses
        box_lo[f] = finger.workspace_box[0]
        box_hi[f] = finger.workspace_box[1]
    gravity = np.array(model.gravity, dtype=float)
    has_load = bool(np.any(masses > 0.0) and np.any(gravity != 0.0))
    return PackedHand(
        base_pos=base_pos,
        base_rot=base_rot,
        axes=axes,
        lengths=lengths,
        lo=lo,
        hi=hi,
        masses=masses,
        gravity=gravity,
        box_lo=box_lo,
        box_hi=box_hi,
        has_gravity_load=has_load,
    )


# ---------------------------------------------------------------------------
# Operations


def _check_q(q) -> np.ndarray:
    arr = q.angles if isinstance(q, JointState) else np.asarray(q, dtype=float)
    if arr.shape != (N_JOINTS,):
        raise InvalidInputError(f"expected 16 joint angles, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("joint angles must be finite")
    return np.ascontiguousarray(arr)


def forward_kinematics(model: HandModel, q) -> np.ndarray:
    """Fingertip positions (4, 3) in the wrist frame."""
    packed = model.packed()
    arr = _check_q(q)
    out = np.empty((4, 3))
    kernels.fk_tips(packed.base_pos, packed.base_rot, packed.axes, packed.lengths, arr, out)
    return out


def finger_chain_points(model: HandModel, q, finger: int) -> np.ndarray:
    """Joint origins plus fingertip of one finger, (5, 3); for rendering/tests."""
    if not 0 <= finger < N_FINGERS:
        raise InvalidInputError(f"finger index {finger} out of range")
    packed = model.packed()
    arr = _check_q(q)
    pts = np.empty((5, 3))
    p = packed.base_pos[finger].copy()
    rot = packed.base_rot[finger].copy()
    for i in range(4):
        pts[i] = p
        angle = arr[finger * 4 + i]
        axis = packed.axes[finger, i]
        rot = rot @ rotation_about_axis(axis, angle)
        p = p + packed.lengths[finger, i] * rot[:, 0]
    pts[4] = p
    return pts


def jacobian(model: HandModel, q, finger: int) -> np.ndarray:
    """3x4 fingertip position Jacobian of one finger (m/rad)."""
    if not 0 <= finger < N_FINGERS:
        raise InvalidInputError(f"finger index {finger} out of range")
    packed = model.packed()
    arr = _check_q(q)
    out = np.empty((3, 4))
    kernels.jacobian(packed.base_pos, packed.base_rot, packed.axes, packed.lengths, arr, finger, out)
    return out


def gravity_torque(model: HandModel, q) -> np.ndarray:
    """16-vector of holding torques against gravity (N.m)."""
    packed = model.packed()
    arr = _check_q(q)
    out = np.empty(16)
    kernels.gravity_torque(
        packed.base_pos,
        packed.base_rot,
        packed.axes,
        packed.lengths,
        packed.masses,
        packed.gravity,
        arr,
        out,
    )
    return out


@dataclass(frozen=True)
class IkResult:
    """Solution plus residual report from solve_ik."""

    angles: np.ndarray  # (16,)
    residuals: np.ndarray  # (4,) per-finger infinity-norm position error, m
    iterations: np.ndarray  # (4,)
    tolerance: float

    @property
    def converged(self) -> bool:
        return bool(np.all(self.residuals <= self.tolerance))

    @property
    def residual(self) -> float:
        return float(np.max(self.residuals))


def _ik_pass(packed, pos, seed, tol, damping, max_iters, step_clamp):
    q_out = np.empty(16)
    resid = np.empty(4)
    iters = np.zeros(4, dtype=np.int64)
    kernels.ik_solve(
        packed.base_pos,
        packed.base_rot,
        packed.axes,
        packed.lengths,
        packed.lo,
        packed.hi,
        pos,
        seed,
        float(tol),
        float(damping),
        int(max_iters),
        float(step_clamp),
        q_out,
        resid,
        iters,
    )
    return q_out, resid, iters


def solve_ik(
    model: HandModel,
    targets,
    q_seed,
    tol: float = DEFAULT_IK_TOL,
    damping: float = DEFAULT_IK_DAMPING,
    max_iters: int = DEFAULT_IK_MAX_ITERS,
    step_clamp: float = DEFAULT_IK_STEP_CLAMP,
    restart: bool = True,
) -> IkResult:
    """Damped-least-squares IK toward 4 fingertip targets.

    Targets are clamped to the per-finger workspace boxes first. Fingers that
    miss tolerance from the caller's seed are retried from the fixed
    mid-limits pose (greedy descent can dead-end in the wrong solution branch
    when the seed is strongly curled); the better pose wins per finger.
    Unreachable targets never raise; the best iterate found is returned with
    its residual. Deterministic given (model, targets, q_seed).
    """
    pos = as_target_array(targets)
    if not np.all(np.isfinite(pos)):
        raise InvalidInputError("IK targets must be finite")
    packed = model.packed()
    pos = np.ascontiguousarray(np.clip(pos, packed.box_lo, packed.box_hi))
    seed = _check_q(q_seed)
    q_out, resid, iters = _ik_pass(packed, pos, seed, tol, damping, max_iters, step_clamp)
    # only residuals far above tolerance suggest the wrong branch; small
    # misses are genuine workspace boundaries and a restart cannot help
    if restart and np.any(resid > max(0.02, tol)):
        mid = np.ascontiguousarray(0.5 * (packed.lo + packed.hi))
        q2, r2, i2 = _ik_pass(packed, pos, mid, tol, damping, max_iters, step_clamp)
        for f in range(N_FINGERS):
            if r2[f] < resid[f]:
                q_out[f * 4 : f * 4 + 4] = q2[f * 4 : f * 4 + 4]
                resid[f] = r2[f]
                iters[f] = i2[f]
    return IkResult(angles=q_out, residuals=resid, iterations=iters, tolerance=float(tol))


def compute_workspace_boxes(model: HandModel, n_samples: int = 4000, seed: int = 0, margin: float = 0.0) -> np.ndarray:
    """Axis-aligned bounds of sampled reachable fingertip positions, (4, 2, 3).

    Used to generate the declared boxes in the model file and to sanity-check
    a loaded model against its declaration.
    """
    rng = np.random.default_rng(seed)
    lim = model.joint_limits
    boxes = np.empty((4, 2, 3))
    qs = rng.uniform(lim[:, 0], lim[:, 1], size=(n_samples, 16))
    tips = np.empty((n_samples, 4, 3))
    for i in range(n_samples):
        tips[i] = forward_kinematics(model, qs[i])
    boxes[:, 0] = tips.min(axis=0) + margin
    boxes[:, 1] = tips.max(axis=0) - margin
    return boxes


# ---------------------------------------------------------------------------
# Model file loading


def _parse_transform(node, where: str):
    try:
        pos = np.array(node.get("translation", [0.0, 0.0, 0.0]), dtype=float).reshape(3)
        rpy = [float(v) for v in node.get("rotation_rpy", [0.0, 0.0, 0.0])]
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{where}: bad transform: {exc}") from exc
    return pos, rpy_to_matrix(*rpy)


def _parse_finger(node, name: str) -> FingerChain:
    joints = node.get("joints")
    if not isinstance(joints, list) or len(joints) != 4:
        raise ModelError(f"finger {name}: need exactly 4 joints")
    axes = np.array([j["axis"] for j in joints], dtype=float)
    limits = np.array([j["limits"] for j in joints], dtype=float)
    lengths = np.array([j["length"] for j in joints], dtype=float)
    masses = np.array([j.get("mass", 0.0) for j in joints], dtype=float)
    box_node = node.get("workspace_box")
    if box_node is None:
        raise ModelError(f"finger {name}: workspace_box is required")
    box = np.array([box_node["min"], box_node["max"]], dtype=float)
    base_pos, base_rot = _parse_transform(node.get("base", {}), f"finger {name} base")
    chain = FingerChain(
        name=name,
        base_pos=base_pos,
        base_rot=base_rot,
        joint_axes=axes,
        link_lengths=lengths,
        joint_limits=limits,
        link_masses=masses,
        workspace_box=box,
    )
    chain.validate()
    return chain


def load_hand_model(path=None) -> HandModel:
    """Load and validate a hand model file; None loads the packaged default."""
    if path is None:
        text = resources.files("dexhand.assets").joinpath("default_hand.yaml").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelError(f"hand model file is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "hand-model/1":
        raise ModelError("hand model file must declare format: hand-model/1")
    palm_pos, palm_rot = _parse_transform(doc.get("palm_frame", {}), "palm_frame")
    gravity = np.array(doc.get("gravity", [0.0, 0.0, -9.81]), dtype=float).reshape(3)
    fingers_node = doc.get("fingers")
    if not isinstance(fingers_node, dict):
        raise ModelError("hand model file needs a fingers mapping")
    missing = [n for n in FINGER_NAMES if n not in fingers_node]
    if missing:
        raise ModelError(f"hand model file missing fingers: {', '.join(missing)}")
    fingers = tuple(_parse_finger(fingers_node[name], name) for name in FINGER_NAMES)
    model = HandModel(fingers=fingers, palm_pos=palm_pos, palm_rot=palm_rot, gravity=gravity)
    model.validate()
    return model


def model_to_dict(model: HandModel) -> dict:
    """JSON-compatible dump of the model (served to UI clients)."""
    return {
        "format": "hand-model/1",
        "palm_frame": {
            "translation": model.palm_pos.tolist(),
            "rotation": model.palm_rot.tolist(),
        },
        "gravity": model.gravity.tolist(),
        "fingers": [
            {
                "name": f.name,
                "base_translation": model.packed().base_pos[i].tolist(),
                "base_rotation": model.packed().base_rot[i].tolist(),
                "joint_axes": f.joint_axes.tolist(),
                "link_lengths": f.link_lengths.tolist(),
                "joint_limits": f.joint_limits.tolist(),
                "workspace_box": f.workspace_box.tolist(),
            }
            for i, f in enumerate(model.fingers)
        ],
    }
