"""Three simulated manipulation tasks: flipping, spinning, rotating.

Object dynamics are deliberately simplified analytic models driven by
fingertip motion (kinematic pushing with contact radii), preserving each
task's coordination structure without rigid-body contact simulation. Policies
act at 5 Hz with 12-dim fingertip-target actions; each action period advances
the servo loop through 6 target updates at 30 Hz (60 control steps at 300 Hz).

Observations are always 15-dim: 4 fingertip positions plus a 3-dim tracked
object point, all in the wrist frame. For the spinning task the tracked point
is a marker on the knob rim, so knob rotation is observable through it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .control import ControllerConfig, ServoState, make_servo_state
from .errors import ConfigError, InvalidInputError, InvalidTransitionError, SimulationFaultError
from .geometry import quat_about_axis
from .hand_model import (
    DEFAULT_IK_DAMPING,
    DEFAULT_IK_STEP_CLAMP,
    DEFAULT_IK_TOL,
    HandModel,
    as_target_array,
    forward_kinematics,
    load_hand_model,
)

TASK_NAMES = ("flipping", "spinning", "rotating")

SUPPORT_FINGERS = (0, 1, 2)  # index, middle, ring carry the flipping object


@dataclass(frozen=True)
class ObjectPose:
    position: np.ndarray  # (3,) wrist frame
    orientation: np.ndarray  # unit quaternion (w, x, y, z)


@dataclass(frozen=True)
class SpinParams:
    """Knob on a 1-DOF vertical hinge; fingertips near the rim drag it."""

    center: tuple = (0.105, 0.0, 0.06)
    rim_radius: float = 0.032
    contact_radius: float = 0.015
    drive_coupling: float = 0.85  # per-substep blend toward the pushed rate
    damping: float = 4.0  # 1/s viscous decay without contact
    push_gain: float = 1.0


@dataclass(frozen=True)
class RotateParams:
    """Cube as a planar (x, y, yaw) body on the palm, pushed kinematically.

    Yaw only responds to a force couple: at least two fingertips in contact
    with sufficient angular separation around the cube. A lone finger can
    shove the cube (and shove it off the palm) but cannot rotate it, which is
    what makes undirected exploration fail here.
    """

    center: tuple = (0.10, 0.0)
    cube_half: float = 0.028
    rest_z: float = 0.028
    contact_z_max: float = 0.075
    contact_radius: float = 0.015
    push_gain: float = 1.5
    rot_gain: float = 0.9
    min_lever: float = 0.012
    min_contacts_for_rotation: int = 2
    opposing_angle_min: float = math.radians(150.0)
    palm_box: tuple = ((0.05, -0.062), (0.155, 0.062))


@dataclass(frozen=True)
class FlipParams:
    """Bar resting on index/middle/ring tips; a sharp coordinated drop flips it.

    Landing offset is linear in the fingertip velocity asymmetry at release,
    so uneven strikes miss the palm center and sufficiently uneven support
    drops the object.
    """

    palm_center: tuple = (0.105, 0.0)
    half_thickness: float = 0.015
    strike_speed: float = 0.65  # mean downward tip speed that releases, m/s
    strike_substeps: int = 1  # consecutive substeps the speed must be sustained
    strike_break: float = 0.85  # batting the object faster than this knocks it off
    tilt_limit: float = 0.025  # max-min support tip height before it slides off, m
    slide_gain: float = 0.3  # m/s of downhill object slide per unit support slope
    slide_off: float = 0.04  # object offset from the support centroid that falls off
    asym_gain: float = 0.03  # m of landing offset per unit relative velocity asymmetry
    air_time: float = 0.25
    palm_box: tuple = ((0.04, -0.07), (0.17, 0.07))


@dataclass(frozen=True)
class TaskSpec:
    """Task identity, success threshold, time limit and dynamics parameters."""

    task: str
    success_threshold: float
    time_limit: float = 60.0
    reward_coef: float = 1.0
    action_rate: int = 5
    reset_pos_jitter: float = 0.01  # m, uniform +-
    reset_yaw_jitter: float = math.radians(5.0)  # rad, uniform +-
    drop_penalty: bool = True
    spin: SpinParams = field(default_factory=SpinParams)
    rotate: RotateParams = field(default_factory=RotateParams)
    flip: FlipParams = field(default_factory=FlipParams)

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise ConfigError(f"unknown task {self.task!r}; valid: {', '.join(TASK_NAMES)}")
        if self.time_limit <= 0:
            raise ConfigError("time_limit must be positive")
        if self.action_rate <= 0:
            raise ConfigError("action_rate must be positive")


def task_spec(task: str, **overrides) -> TaskSpec:
    """Spec with the task's standard success threshold; thresholds inclusive."""
    thresholds = {
        "flipping": 0.02,  # m from palm center
        "spinning": math.radians(120.0),
        "rotating": math.radians(90.0),
    }
    if task not in thresholds:
        raise ConfigError(f"unknown task {task!r}; valid: {', '.join(TASK_NAMES)}")
    return TaskSpec(task=task, success_threshold=thresholds[task], **overrides)


@dataclass
class SpinState:
    phi: float = 0.0
    omega: float = 0.0


@dataclass
class RotateState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0


@dataclass
class FlipState:
    phase: str = "supported"  # supported | airborne | landed | dropped
    offset_x: float = 0.0  # object center relative to support centroid
    offset_y: float = 0.0
    strike_run: int = 0  # consecutive substeps at strike speed
    run_start_x: float = 0.0  # object position when the strike run began;
    run_start_y: float = 0.0  # the object separates as the fingers drop away
    air_left: float = 0.0
    release_x: float = 0.0
    release_y: float = 0.0
    release_z: float = 0.0
    landing_x: float = 0.0
    landing_y: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    pitch: float = 0.0


@dataclass
class EnvState:
    servo: ServoState
    object_angle_accum: float = 0.0
    elapsed: float = 0.0
    rng_seed: int = 0
    succeeded: bool = False
    dropped: bool = False
    done: bool = False
    spin: SpinState | None = None
    rotate: RotateState | None = None
    flip: FlipState | None = None


class TaskEnv:
    """One task instance bound to a hand model and controller config.

    Owned by a single rollout worker; fully deterministic given (seed, action
    sequence).
    """

    def __init__(self, spec: TaskSpec, model: HandModel | None = None, ctrl: ControllerConfig | None = None):
        self.spec = spec
        self.model = model if model is not None else load_hand_model()
        self.ctrl = ctrl if ctrl is not None else ControllerConfig()
        if self.ctrl.target_rate % spec.action_rate != 0:
            raise ConfigError("target_rate must be an integer multiple of action_rate")
        self.substeps = self.ctrl.target_rate // spec.action_rate
        self.dt_sub = 1.0 / self.ctrl.target_rate
        self.action_period = 1.0 / spec.action_rate
        # warm-started tracking IK; the cap bounds worst-case work on
        # unreachable clamped targets without hurting tracking accuracy
        self.ik_max_iters = 30
        self.state: EnvState | None = None

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        jp = self.spec.reset_pos_jitter
        jy = self.spec.reset_yaw_jitter
        dx = float(rng.uniform(-jp, jp))
        dy = float(rng.uniform(-jp, jp))
        dyaw = float(rng.uniform(-jy, jy))

        servo = make_servo_state(self.model)
        state = EnvState(servo=servo, rng_seed=int(seed))
        task = self.spec.task
        if task == "spinning":
            state.spin = SpinState(phi=dyaw, omega=0.0)
            # knob hinge is fixed to the table; jitter only its initial angle
        elif task == "rotating":
            p = self.spec.rotate
            state.rotate = RotateState(x=p.center[0] + dx, y=p.center[1] + dy, yaw=dyaw)
        else:
            tips = forward_kinematics(self.model, servo.q.angles)
            cx = (tips[0, 0] + tips[1, 0] + tips[2, 0]) / 3.0
            cy = (tips[0, 1] + tips[1, 1] + tips[2, 1]) / 3.0
            cz = (tips[0, 2] + tips[1, 2] + tips[2, 2]) / 3.0
            fl = FlipState(offset_x=dx, offset_y=dy, pitch=0.0)
            fl.x = cx + dx
            fl.y = cy + dy
            fl.z = cz + self.spec.flip.half_thickness
            state.flip = fl
        self.state = state
        return self.observe()

    # -- observation -------------------------------------------------------

    def _object_point(self) -> tuple:
        st = self.state
        task = self.spec.task
        if task == "spinning":
            p = self.spec.spin
            return (
                p.center[0] + p.rim_radius * math.cos(st.spin.phi),
                p.center[1] + p.rim_radius * math.sin(st.spin.phi),
                p.center[2],
            )
        if task == "rotating":
            return (st.rotate.x, st.rotate.y, self.spec.rotate.rest_z)
        return (st.flip.x, st.flip.y, st.flip.z)

    def object_pose(self) -> ObjectPose:
        st = self.state
        task = self.spec.task
        pos = np.array(self._object_point())
        if task == "spinning":
            quat = quat_about_axis((0.0, 0.0, 1.0), st.spin.phi)
            pos = np.array([*self.spec.spin.center])
        elif task == "rotating":
            quat = quat_about_axis((0.0, 0.0, 1.0), st.rotate.yaw)
        else:
            quat = quat_about_axis((0.0, 1.0, 0.0), st.flip.pitch)
        return ObjectPose(position=pos, orientation=quat)

    def observe(self) -> np.ndarray:
        if self.state is None:
            raise InvalidTransitionError("environment not reset")
        tips = forward_kinematics(self.model, self.state.servo.q.angles)
        obs = np.empty(15)
        obs[:12] = tips.reshape(12)
        obs[12:] = self._object_point()
        return obs

    # -- task distance / success -------------------------------------------

    def task_distance(self) -> float:
        """Distance to the task goal: meters for flipping, radians otherwise."""
        st = self.state
        if self.spec.task == "flipping":
            fl = st.flip
            c = self.spec.flip.palm_center
            return math.hypot(fl.x - c[0], fl.y - c[1])
        return max(0.0, self.spec.success_threshold - abs(st.object_angle_accum))

    def success(self) -> bool:
        st = self.state
        if self.spec.task == "flipping":
            return (
                st.flip.phase == "landed"
                and self.task_distance() <= self.spec.success_threshold
            )
        return abs(st.object_angle_accum) >= self.spec.success_threshold

    # -- stepping ----------------------------------------------------------

    def _kin_substep(self, targets, restart: bool) -> bool:
        """One fused target-rate substep; returns True if the object dropped."""
        st = self.state
        packed = self.model.packed()
        ctrl = self.ctrl
        use_gravity = packed.has_gravity_load
        tips_before = np.empty((4, 3))
        tips_after = np.empty((4, 3))
        status = kernels.env_substep(
            packed.base_pos,
            packed.base_rot,
            packed.axes,
            packed.lengths,
            packed.masses,
            packed.gravity,
            packed.lo,
            packed.hi,
            st.servo.q.angles,
            st.servo.q.velocities,
            st.servo.q_desired,
            targets,
            ctrl.kp,
            ctrl.kd,
            ctrl.joint_inertia,
            ctrl.torque_limit,
            ctrl.dt,
            ctrl.steps_per_target,
            use_gravity,
            use_gravity and ctrl.gravity_comp,
            DEFAULT_IK_TOL,
            DEFAULT_IK_DAMPING,
            self.ik_max_iters,
            DEFAULT_IK_STEP_CLAMP,
            restart,
            tips_before,
            tips_after,
        )
        if status != 0:
            raise SimulationFaultError("servo loop produced a non-finite state")
        st.servo.sim_time += ctrl.steps_per_target * ctrl.dt
        return self._update_object(tips_before, tips_after)

    def tick(self, targets, restart: bool = True) -> None:
        """Advance one target-rate tick (1 / target_rate s); teleop granularity.

        Evaluates success/done continuously so a live session reacts at frame
        rate rather than at the 5 Hz action boundary.
        """
        st = self.state
        if st is None:
            raise InvalidTransitionError("environment not reset")
        if st.done:
            raise InvalidTransitionError("episode already finished")
        targets = np.ascontiguousarray(self.model.clamp_targets(as_target_array(targets)))
        self._kin_substep(targets, restart)
        st.elapsed += self.dt_sub
        st.succeeded = self.success()
        st.done = st.succeeded or st.dropped or st.elapsed >= self.spec.time_limit - 1e-9

    def step(self, action):
        """Advance one action period (1 / action_rate s of simulated time)."""
        st = self.state
        if st is None:
            raise InvalidTransitionError("environment not reset")
        if st.done:
            raise InvalidTransitionError("episode already finished")
        targets = as_target_array(action)
        if not np.all(np.isfinite(targets)):
            raise InvalidInputError("action targets must be finite")
        targets = np.ascontiguousarray(self.model.clamp_targets(targets))

        dropped_now = False
        for sub in range(self.substeps):
            dropped_now |= self._kin_substep(targets, restart=sub == 0)

        st.elapsed += self.action_period
        dist = self.task_distance()
        reward = -self.spec.reward_coef * dist
        if dropped_now and self.spec.drop_penalty:
            # charge the remaining episode at the current distance so ending
            # early by dropping is never advantageous
            remaining = max(0.0, self.spec.time_limit - st.elapsed) * self.spec.action_rate
            reward -= self.spec.reward_coef * dist * remaining
        success = self.success()
        st.succeeded = success
        st.done = success or st.dropped or st.elapsed >= self.spec.time_limit - 1e-9
        info = {
            "distance": dist,
            "accum_deg": math.degrees(st.object_angle_accum),
            "dropped": st.dropped,
            "elapsed": st.elapsed,
        }
        return self.observe(), reward, success, st.done, info

    # -- object dynamics (one 30 Hz substep) ---------------------------------

    def _update_object(self, tips_before, tips_after) -> bool:
        task = self.spec.task
        if task == "spinning":
            return self._update_spin(tips_before, tips_after)
        if task == "rotating":
            return self._update_rotate(tips_before, tips_after)
        return self._update_flip(tips_before, tips_after)

    def _update_spin(self, tips_before, tips_after) -> bool:
        p = self.spec.spin
        st = self.state.spin
        dt = self.dt_sub
        cx, cy, cz = p.center
        vt_sum = 0.0
        n_contact = 0
        for f in range(4):
            x = tips_after[f, 0]
            y = tips_after[f, 1]
            z = tips_after[f, 2]
            dx = x - cx
            dy = y - cy
            rho = math.hypot(dx, dy)
            gap = math.hypot(rho - p.rim_radius, z - cz)
            if gap > p.contact_radius or rho < 1e-9:
                continue
            vx = (tips_after[f, 0] - tips_before[f, 0]) / dt
            vy = (tips_after[f, 1] - tips_before[f, 1]) / dt
            tx = -dy / rho
            ty = dx / rho
            vt_sum += vx * tx + vy * ty
            n_contact += 1
        if n_contact > 0:
            pushed = p.push_gain * (vt_sum / n_contact) / p.rim_radius
            st.omega = (1.0 - p.drive_coupling) * st.omega + p.drive_coupling * pushed
        else:
            st.omega *= math.exp(-p.damping * dt)
        dphi = st.omega * dt
        st.phi += dphi
        self.state.object_angle_accum += dphi
        return False

    def _update_rotate(self, tips_before, tips_after) -> bool:
        p = self.spec.rotate
        st = self.state.rotate
        dt = self.dt_sub
        reach = p.cube_half + p.contact_radius
        dx_total = 0.0
        dy_total = 0.0
        dyaw_total = 0.0
        contact_angles = []
        for f in range(4):
            x = tips_after[f, 0]
            y = tips_after[f, 1]
            z = tips_after[f, 2]
            if z > p.contact_z_max:
                continue
            ox = st.x - x
            oy = st.y - y
            rho = math.hypot(ox, oy)
            if rho > reach or rho < 1e-9:
                continue
            nx = ox / rho
            ny = oy / rho
            vx = (tips_after[f, 0] - tips_before[f, 0]) / dt
            vy = (tips_after[f, 1] - tips_before[f, 1]) / dt
            vn = vx * nx + vy * ny
            if vn > 0.0:  # fingertips push, they cannot pull
                dx_total += p.push_gain * vn * nx * dt
                dy_total += p.push_gain * vn * ny * dt
            # counterclockwise tangent at the contact: z_hat x (tip - center)
            vt = vx * ny - vy * nx
            lever = rho if rho > p.min_lever else p.min_lever
            dyaw_total += p.rot_gain * (vt / lever) * dt
            contact_angles.append(math.atan2(-oy, -ox))
        st.x += dx_total
        st.y += dy_total
        # yaw needs a couple: enough contacts, spread far enough apart
        couple = len(contact_angles) >= p.min_contacts_for_rotation
        if couple and p.min_contacts_for_rotation >= 2:
            spread = 0.0
            for i in range(len(contact_angles)):
                for j in range(i + 1, len(contact_angles)):
                    gap = abs(contact_angles[i] - contact_angles[j]) % (2.0 * math.pi)
                    if gap > math.pi:
                        gap = 2.0 * math.pi - gap
                    spread = max(spread, gap)
            couple = spread >= p.opposing_angle_min
        if couple:
            st.yaw += dyaw_total
            self.state.object_angle_accum += dyaw_total
        (bx0, by0), (bx1, by1) = p.palm_box
        if not (bx0 <= st.x <= bx1 and by0 <= st.y <= by1):
            self.state.dropped = True
            return True
        return False

    def _update_flip(self, tips_before, tips_after) -> bool:
        p = self.spec.flip
        st = self.state.flip
        dt = self.dt_sub
        if st.phase == "supported":
            zs = [tips_after[f, 2] for f in SUPPORT_FINGERS]
            tilt = max(zs) - min(zs)
            cx = sum(tips_after[f, 0] for f in SUPPORT_FINGERS) / 3.0
            cy = sum(tips_after[f, 1] for f in SUPPORT_FINGERS) / 3.0
            cz = sum(zs) / 3.0
            # a tilted support plane slides the object downhill
            gx = 0.0
            gy = 0.0
            den = 0.0
            for idx, f in enumerate(SUPPORT_FINGERS):
                dx = tips_after[f, 0] - cx
                dy = tips_after[f, 1] - cy
                dz = zs[idx] - cz
                gx += dz * dx
                gy += dz * dy
                den += dx * dx + dy * dy
            if den > 1e-12:
                st.offset_x -= p.slide_gain * (gx / den) * dt
                st.offset_y -= p.slide_gain * (gy / den) * dt
            st.x = cx + st.offset_x
            st.y = cy + st.offset_y
            st.z = cz + p.half_thickness
            if tilt > p.tilt_limit or math.hypot(st.offset_x, st.offset_y) > p.slide_off:
                st.phase = "dropped"
                self.state.dropped = True
                return True
            vzs = [(tips_after[f, 2] - tips_before[f, 2]) / dt for f in SUPPORT_FINGERS]
            mean_vz = sum(vzs) / 3.0
            if mean_vz <= -p.strike_break:
                # struck too hard: the object is batted off the hand
                st.phase = "dropped"
                self.state.dropped = True
                return True
            if mean_vz <= -p.strike_speed:
                if st.strike_run == 0:
                    st.run_start_x = st.x
                    st.run_start_y = st.y
                st.strike_run += 1
            else:
                st.strike_run = 0
            if st.strike_run >= p.strike_substeps:
                # release: relative asymmetry of the strike maps linearly to
                # landing offset (unevenness normalized by the strike speed)
                off_x = 0.0
                off_y = 0.0
                for idx, f in enumerate(SUPPORT_FINGERS):
                    rel = (vzs[idx] - mean_vz) / abs(mean_vz)
                    off_x += p.asym_gain * rel * _sign(tips_after[f, 0] - cx)
                    off_y += p.asym_gain * rel * _sign(tips_after[f, 1] - cy)
                st.phase = "airborne"
                st.air_left = p.air_time
                st.release_x = st.run_start_x
                st.release_y = st.run_start_y
                st.release_z = st.z
                st.landing_x = st.run_start_x + off_x
                st.landing_y = st.run_start_y + off_y
                st.x = st.run_start_x
                st.y = st.run_start_y
            return False
        if st.phase == "airborne":
            st.air_left -= dt
            frac = min(1.0, max(0.0, 1.0 - st.air_left / p.air_time))
            st.pitch = math.pi * frac
            st.x = st.release_x + (st.landing_x - st.release_x) * frac
            st.y = st.release_y + (st.landing_y - st.release_y) * frac
            st.z = st.release_z + (p.half_thickness - st.release_z) * frac
            if st.air_left <= 0.0:
                (bx0, by0), (bx1, by1) = p.palm_box
                if not (bx0 <= st.x <= bx1 and by0 <= st.y <= by1):
                    st.phase = "dropped"
                    self.state.dropped = True
                    return True
                st.phase = "landed"
            return False
        # landed or dropped: the reduced model has no further dynamics
        return False


def _sign(v: float) -> float:
    if v > 0:
        return 1.0
    if v < 0:
        return -1.0
    return 0.0


def make_env(task: str, model: HandModel | None = None, ctrl: ControllerConfig | None = None, **spec_overrides) -> TaskEnv:
    return TaskEnv(task_spec(task, **spec_overrides), model=model, ctrl=ctrl)


# ---------------------------------------------------------------------------
# Episode log (newline-delimited, consumed by evaluation and the UI replay)


def write_episode_record(fh, t: float, obs, action, reward: float, pose: ObjectPose, success: bool, done: bool) -> None:
    row = {
        "t": round(float(t), 9),
        "obs": [round(float(v), 9) for v in np.asarray(obs).reshape(15)],
        "action": [round(float(v), 9) for v in np.asarray(action).reshape(12)],
        "reward": round(float(reward), 9),
        "obj_pos": [round(float(v), 9) for v in pose.position],
        "obj_quat": [round(float(v), 9) for v in pose.orientation],
        "success": bool(success),
        "done": bool(done),
    }
    fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_episode_log(path) -> list:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
