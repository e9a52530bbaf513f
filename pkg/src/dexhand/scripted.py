"""Scripted experts for the three tasks.

These solve each task reliably from the full environment state, serving as
the demonstration source and as the oracle the task dynamics and acceptance
thresholds were tuned against. Each expert emits 12-dim fingertip-target
actions at the environment's 5 Hz action rate; per-demo randomness (phase
offsets, waypoint jitter, dwell counts) comes from the generator passed to
``reset`` so demonstration sets have coverage instead of 30 identical files.
"""

from __future__ import annotations

import math

import numpy as np

from .envs import SUPPORT_FINGERS, TaskEnv
from .errors import ConfigError
from .hand_model import forward_kinematics

INDEX, MIDDLE, RING, THUMB = 0, 1, 2, 3


class _ExpertBase:
    def reset(self, env: TaskEnv, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def action(self, env: TaskEnv) -> np.ndarray:
        raise NotImplementedError


def _current_tips(env: TaskEnv) -> np.ndarray:
    return forward_kinematics(env.model, env.state.servo.q.angles)


class SpinExpert(_ExpertBase):
    """Stir the knob rim with index and ring: stroke in contact, lift,
    return out of contact, lower, repeat."""

    STROKE, LIFT, RETURN, LOWER = range(4)

    def __init__(self):
        self.k = 0

    def reset(self, env, rng):
        p = env.spec.spin
        self.k = 0
        self.jitter = rng.uniform(-math.radians(8.0), math.radians(8.0))
        self.speed = rng.uniform(0.9, 1.1)
        self.lift = 0.05 + rng.uniform(-0.005, 0.005)
        self.park_noise = rng.uniform(-0.003, 0.003, size=6)
        self.dwell = int(rng.integers(0, 3))
        # index works the upper arc, ring the lower one; both drag the rim
        # counterclockwise. Strokes move >= 2 cm per action so the recorded
        # waypoints survive the displacement filter intact.
        self.arcs = {
            INDEX: (math.radians(15.0) + self.jitter, math.radians(125.0) + self.jitter),
            RING: (math.radians(195.0) + self.jitter, math.radians(305.0) + self.jitter),
        }
        self.stroke_actions = 2
        self.cycle = self.stroke_actions + 4  # lift, return x2, lower

    def _rim_point(self, env, theta, dz=0.0):
        p = env.spec.spin
        return (
            p.center[0] + p.rim_radius * math.cos(theta),
            p.center[1] + p.rim_radius * math.sin(theta),
            p.center[2] + dz,
        )

    def action(self, env):
        tips = _current_tips(env)
        targets = tips.copy()
        p = env.spec.spin
        # parked fingers stay clear of the rim
        targets[MIDDLE] = (0.05 + self.park_noise[0], 0.0 + self.park_noise[1], 0.10)
        targets[THUMB] = (0.05 + self.park_noise[2], -0.05 + self.park_noise[3], 0.08)
        if self.k < self.dwell:
            self.k += 1
            return targets.reshape(12)
        step = (self.k - self.dwell) % self.cycle
        for finger, (a0, a1) in self.arcs.items():
            if step < self.stroke_actions:
                frac = (step + 1) / self.stroke_actions * self.speed
                theta = a0 + (a1 - a0) * min(1.0, frac)
                targets[finger] = self._rim_point(env, theta)
            elif step == self.stroke_actions:
                targets[finger] = self._rim_point(env, a1, dz=self.lift)
            elif step == self.stroke_actions + 1:
                theta = 0.5 * (a0 + a1)
                targets[finger] = self._rim_point(env, theta, dz=self.lift)
            elif step == self.stroke_actions + 2:
                targets[finger] = self._rim_point(env, a0, dz=self.lift)
            else:
                targets[finger] = self._rim_point(env, a0)
        self.k += 1
        return targets.reshape(12)


class RotateExpert(_ExpertBase):
    """Opposing tangential strokes on the cube's far sides with index and
    ring rotate it in place; strokes recenter on the cube every cycle."""

    def __init__(self):
        self.k = 0

    def reset(self, env, rng):
        self.k = 0
        self.jitter = rng.uniform(-math.radians(10.0), math.radians(10.0))
        self.speed = rng.uniform(0.9, 1.1)
        self.dwell = int(rng.integers(0, 3))
        self.engage = env.spec.rotate.cube_half + 0.006 + rng.uniform(-0.002, 0.002)
        self.z_contact = 0.055
        self.z_clear = 0.10
        # 80 degree strokes in 2 actions keep per-action displacement above
        # the 2 cm filter threshold
        self.arcs = {
            INDEX: (math.radians(55.0) + self.jitter, math.radians(135.0) + self.jitter),
            RING: (math.radians(235.0) + self.jitter, math.radians(315.0) + self.jitter),
        }
        self.stroke_actions = 2
        self.cycle = self.stroke_actions + 4
        self.anchor = None

    def _cube_point(self, theta, z):
        cx, cy = self.anchor
        return (cx + self.engage * math.cos(theta), cy + self.engage * math.sin(theta), z)

    def action(self, env):
        tips = _current_tips(env)
        targets = tips.copy()
        targets[MIDDLE] = (0.16, 0.0, 0.10)
        targets[THUMB] = (0.05, -0.05, 0.09)
        if self.k < self.dwell:
            self.k += 1
            return targets.reshape(12)
        step = (self.k - self.dwell) % self.cycle
        if step == 0 or self.anchor is None:
            st = env.state.rotate
            self.anchor = (st.x, st.y)
        for finger, (a0, a1) in self.arcs.items():
            if step < self.stroke_actions:
                frac = (step + 1) / self.stroke_actions * self.speed
                theta = a0 + (a1 - a0) * min(1.0, frac)
                targets[finger] = self._cube_point(theta, self.z_contact)
            elif step == self.stroke_actions:
                targets[finger] = self._cube_point(a1, self.z_clear)
            elif step == self.stroke_actions + 1:
                targets[finger] = self._cube_point(0.5 * (a0 + a1), self.z_clear)
            elif step == self.stroke_actions + 2:
                targets[finger] = self._cube_point(a0, self.z_clear)
            else:
                targets[finger] = self._cube_point(a0, self.z_contact)
        self.k += 1
        return targets.reshape(12)


class FlipExpert(_ExpertBase):
    """Release the object onto the palm with a sharp coordinated drop of all
    three support fingers, leaving the object undisturbed until release.

    Half the demonstrations strike straight down; the other half cock the
    strike by lifting first. Both routes release cleanly, but their actions
    at the shared start state point in opposite directions, which is exactly
    the kind of multimodality averaging regressors handle badly."""

    def __init__(self):
        self.k = 0

    # per-phase fingertip offsets shared by every demonstration: they make the
    # feint phase visible in the observation (so state-based lookup can follow
    # a demo through the cycle) at a scale regression smoothing washes out
    PHASE_SIG = 0.004
    MAX_PHASES = 14

    def reset(self, env, rng):
        self.k = 0
        self.xy_noise = rng.uniform(-0.0015, 0.0015, size=2)
        # waver between a cocked height and the rest height a random number
        # of times, then strike a calibrated 5 cm drop from the rest height.
        # A harder hit would bat the object off, a softer one fails to
        # release, so the strike depth and its starting height both matter.
        lo = rng.uniform(0.0915, 0.0945)
        self.strike_to = lo - 0.05 - rng.uniform(0.0, 0.004)
        n_feints = int(rng.integers(2, 6))
        plan = []
        for _ in range(n_feints):
            hi = rng.uniform(0.115, 0.124)
            plan += [("wp", hi), ("wp", lo)]
        plan += [("strike", None)]
        plan += [("wp", 0.118), ("wp", lo), ("strike", None)] * 30
        self.plan = plan
        self.strike_from = None

    def _phase_sig(self, k):
        p = min(k, self.MAX_PHASES)
        ang = 2.399963 * p  # low-discrepancy angle sequence
        return self.PHASE_SIG * math.cos(ang), self.PHASE_SIG * math.sin(ang)

    def _support_targets(self, targets, z, k):
        sx, sy = self._phase_sig(k)
        for f in SUPPORT_FINGERS:
            targets[f, 0] = self.strike_from[f, 0] + sx
            targets[f, 1] = self.strike_from[f, 1] + sy
            targets[f, 2] = z

    def action(self, env):
        tips = _current_tips(env)
        targets = tips.copy()
        targets[THUMB] = (0.05, -0.05, 0.06)
        fl = env.state.flip
        if self.strike_from is None:
            base = tips.copy()
            base[:, 0] += self.xy_noise[0]
            base[:, 1] += self.xy_noise[1]
            self.strike_from = base

        if fl.phase != "supported":
            # released: keep commanding the final strike pose
            self._support_targets(targets, self.strike_to, self.k)
            return targets.reshape(12)

        phase, z = self.plan[min(self.k, len(self.plan) - 1)]
        k = self.k
        self.k += 1
        if phase == "wp":
            self._support_targets(targets, z, k)
        else:  # strike
            self._support_targets(targets, self.strike_to, k)
        return targets.reshape(12)


def make_expert(task: str) -> _ExpertBase:
    experts = {"spinning": SpinExpert, "rotating": RotateExpert, "flipping": FlipExpert}
    if task not in experts:
        raise ConfigError(f"no scripted expert for task {task!r}")
    return experts[task]()


def scripted_drag_events(task: str, seed: int, ticks_per_move: int = 6):
    """Synthesize a pointer-teleoperation session as (tick, message) events.

    Drag input pins fingertips to the calibration z plane, so the rotating
    strokes retreat radially instead of lifting. Like the operator it stands
    in for, the generator watches the live cube: it runs a session pipeline
    internally and anchors each stroke cycle on the cube's current position,
    emitting the messages it would have sent. The returned event list replays
    deterministically through the same pipeline.
    """
    import math as _math

    from .protocol import Drag, StartRecording, StopRecording
    from .session import SessionConfig, SessionPipeline

    if task != "rotating":
        raise ConfigError("drag-based scripted sessions are defined for the rotating task")
    pipe = SessionPipeline(SessionConfig(task=task, seed=seed, operator_id="scripted"))
    spec = pipe.env.spec
    rng = np.random.default_rng(seed)
    engage = spec.rotate.cube_half + 0.006
    near = spec.rotate.cube_half + spec.rotate.contact_radius + 0.012
    clear = spec.rotate.cube_half + spec.rotate.contact_radius + 0.035
    jitter = rng.uniform(-_math.radians(6.0), _math.radians(6.0))
    arcs = {
        INDEX: (_math.radians(55.0) + jitter, _math.radians(135.0) + jitter),
        RING: (_math.radians(235.0) + jitter, _math.radians(315.0) + jitter),
    }
    chunks = 4

    events = []
    tick = 0

    def emit(msg):
        events.append((tick, msg))
        pipe.handle(msg)

    def advance(n):
        nonlocal tick
        for _ in range(n):
            if pipe.env.state.done:
                return False
            pipe.tick()
            tick += 1
        return not pipe.env.state.done

    def pt(anchor, theta, radius):
        return (anchor[0] + radius * _math.cos(theta), anchor[1] + radius * _math.sin(theta))

    emit(Drag(finger=MIDDLE, x=0.155, y=0.03))
    emit(Drag(finger=THUMB, x=0.05, y=-0.05))
    anchor = (pipe.env.state.rotate.x, pipe.env.state.rotate.y)
    for finger, (a0, _a1) in arcs.items():
        x, y = pt(anchor, a0, clear)
        emit(Drag(finger=finger, x=x, y=y))
    advance(4 * ticks_per_move)
    emit(StartRecording(id=1))

    alive = True
    for _cycle in range(14):
        if not alive:
            break
        anchor = (pipe.env.state.rotate.x, pipe.env.state.rotate.y)
        moves = []
        for radius in (near, engage):  # two-stage engage: a hard shove would
            moves.append([(f, pt(anchor, a0, radius)) for f, (a0, _a1) in arcs.items()])
        for step in range(chunks):  # stroke in contact  # push the cube away
            moves.append(
                [
                    (f, pt(anchor, a0 + (a1 - a0) * (step + 1) / chunks, engage))
                    for f, (a0, a1) in arcs.items()
                ]
            )
        for radius in (near, clear):  # two-stage retreat
            moves.append([(f, pt(anchor, a1, radius)) for f, (_a0, a1) in arcs.items()])
        moves.append([(f, pt(anchor, a0, clear)) for f, (a0, _a1) in arcs.items()])
        for move in moves:
            for finger, (x, y) in move:
                emit(Drag(finger=finger, x=x, y=y))
            alive = advance(ticks_per_move)
            if not alive:
                break
    emit(StopRecording(id=2))
    return events


def run_expert_episode(env: TaskEnv, seed: int, max_steps: int | None = None):
    """Roll one expert episode; returns (success, transitions) where each
    transition is (t, obs, action, object pose, reward, success, done)."""
    expert = make_expert(env.spec.task)
    obs = env.reset(seed)
    rng = np.random.default_rng(seed + 7919)
    expert.reset(env, rng)
    rows = []
    t = 0.0
    limit = max_steps if max_steps is not None else int(env.spec.time_limit * env.spec.action_rate)
    success = False
    for _ in range(limit):
        act = expert.action(env)
        pose = env.object_pose()
        next_obs, reward, success, done, _ = env.step(act)
        rows.append((t, obs, act, pose, reward, success, done))
        obs = next_obs
        t += env.action_period
        if done:
            break
    return success, rows
