"""Fixed-rate simulated servo loop: PD control with gravity compensation.

The control loop runs at ``control_rate`` (default 300 Hz) on a decoupled
per-joint second-order plant; desired joint angles come from IK on fingertip
targets applied at ``target_rate`` (default 30 Hz) with zero-order hold in
between. Simulation runs in virtual time; callers pace it to wall clock when
needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, SimulationFaultError
from .hand_model import HandModel, IkResult, JointState, as_target_array, solve_ik


def _gain_vector(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(16, float(arr))
    if arr.shape != (16,):
        raise ConfigError(f"{name} must be a scalar or 16-vector")
    if np.any(arr <= 0.0):
        raise ConfigError(f"{name} must be strictly positive")
    return arr


@dataclass(frozen=True)
class ControllerConfig:
    """Gains and rates for the servo loop.

    Defaults give a well-damped response at 300 Hz; they are tuning choices,
    not measurements.
    """

    kp: np.ndarray = 3.0
    kd: np.ndarray = 0.1
    control_rate: int = 300
    target_rate: int = 30
    joint_inertia: np.ndarray = 1e-3
    torque_limit: float = 0.5
    gravity_comp: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kp", _gain_vector(self.kp, "kp"))
        object.__setattr__(self, "kd", _gain_vector(self.kd, "kd"))
        object.__setattr__(self, "joint_inertia", _gain_vector(self.joint_inertia, "joint_inertia"))
        if self.control_rate < self.target_rate:
            raise ConfigError("control_rate must be >= target_rate")
        if self.control_rate % self.target_rate != 0:
            raise ConfigError("control_rate must be an integer multiple of target_rate")
        if self.torque_limit <= 0.0:
            raise ConfigError("torque_limit must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def steps_per_target(self) -> int:
        return self.control_rate // self.target_rate


@dataclass
class ServoState:
    """Joint state plus the currently held desired pose."""

    q: JointState
    q_desired: np.ndarray
    sim_time: float = 0.0

    def copy(self) -> "ServoState":
        return ServoState(q=self.q.copy(), q_desired=self.q_desired.copy(), sim_time=self.sim_time)


def make_servo_state(model: HandModel, angles=None) -> ServoState:
    """Servo state at rest; defaults to the mid-limit pose."""
    if angles is None:
        angles = model.mid_pose()
    js = JointState(np.asarray(angles, dtype=float).copy())
    lim = model.joint_limits
    js.angles[:] = np.clip(js.angles, lim[:, 0], lim[:, 1])
    return ServoState(q=js, q_desired=js.angles.copy(), sim_time=0.0)


def run_control_steps(state: ServoState, model: HandModel, cfg: ControllerConfig, n_steps: int) -> ServoState:
    """Advance the servo loop n_steps control ticks in place."""
    packed = model.packed()
    if not np.all(np.isfinite(state.q_desired)):
        raise SimulationFaultError("non-finite desired pose")
    use_gravity = packed.has_gravity_load
    status = kernels.servo_run(
        packed.base_pos,
        packed.base_rot,
        packed.axes,
        packed.lengths,
        packed.masses,
        packed.gravity,
        packed.lo,
        packed.hi,
        state.q.angles,
        state.q.velocities,
        state.q_desired,
        cfg.kp,
        cfg.kd,
        cfg.joint_inertia,
        cfg.torque_limit,
        cfg.dt,
        int(n_steps),
        use_gravity,
        use_gravity and cfg.gravity_comp,
    )
    if status != 0:
        raise SimulationFaultError("servo loop produced a non-finite state")
    state.sim_time += n_steps * cfg.dt
    return state


def step_control(state: ServoState, model: HandModel, cfg: ControllerConfig) -> ServoState:
    """One control tick (1 / control_rate seconds)."""
    return run_control_steps(state, model, cfg, 1)


def set_targets(state: ServoState, targets, model: HandModel, cfg: ControllerConfig | None = None, **ik_kwargs) -> IkResult:
    """Update q_desired from fingertip targets via IK seeded at the current pose.

    Applied at the target-rate boundary; between calls the desired pose is
    held constant. Returns the IK result (best-effort on unreachable targets).
    """
    result = solve_ik(model, as_target_array(targets), state.q.angles, **ik_kwargs)
    state.q_desired = result.angles
    return result


# ---------------------------------------------------------------------------
# Trajectory dump (newline-delimited records for offline inspection)


def write_trajectory_record(fh, state: ServoState, fingertips) -> None:
    row = {
        "t": round(state.sim_time, 9),
        "q": [round(float(v), 9) for v in state.q.angles],
        "q_des": [round(float(v), 9) for v in state.q_desired],
        "tips": [round(float(v), 9) for v in np.asarray(fingertips).reshape(12)],
    }
    fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_trajectory(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
