"""Session pipeline: operator input -> retarget -> IK/servo -> env -> frames.

One SessionPipeline instance owns one episode. The live service drives it at
wall-clock rates; replay drives it in a tight loop. Both paths share every
piece of state handling here, which is what makes a drag log replay
bit-identical to the live session that produced it.

Ticks run at the controller's target rate (30 Hz). Input messages accumulate
in a newest-wins mailbox and are applied at tick boundaries; every 6th tick
(5 Hz) appends a transition to the recording buffer while recording.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .demos import Demonstration, EPOCH_TIMESTAMP, Transition
from .envs import TaskEnv, task_spec
from .errors import InvalidInputError, ProtocolError
from .hand_model import HandModel, forward_kinematics, load_hand_model
from .protocol import Drag, Landmarks, Reset, StartRecording, StopRecording
from .retarget import (
    Calibration,
    LandmarkFrame,
    RetargetState,
    default_calibration,
    make_retarget_state,
    retarget,
)

RECORD_EVERY = 6  # ticks per recorded transition (30 Hz -> 5 Hz)


@dataclass
class SessionConfig:
    task: str
    seed: int
    operator_id: str = "operator"
    time_limit: float | None = None


class SessionPipeline:
    """Deterministic session core; one owner, no internal threading."""

    def __init__(self, cfg: SessionConfig, model: HandModel | None = None, calibration: Calibration | None = None):
        self.model = model if model is not None else load_hand_model()
        self.calibration = calibration if calibration is not None else default_calibration(self.model)
        overrides = {}
        if cfg.time_limit is not None:
            overrides["time_limit"] = cfg.time_limit
        self.env = TaskEnv(task_spec(cfg.task, **overrides), model=self.model)
        self.cfg = cfg
        self.tick_count = 0
        self.recording = False
        self._buffer: list = []
        self._demos: list = []
        self._pending_landmarks: LandmarkFrame | None = None
        self._pending_drags: dict = {}
        self.reset()

    # -- message ingestion (newest wins at tick boundaries) -----------------

    def handle(self, msg) -> None:
        if isinstance(msg, Landmarks):
            self._pending_landmarks = LandmarkFrame(
                timestamp=msg.ts,
                keypoints=np.array(msg.keypoints, dtype=float),
                confidence=msg.confidence,
            )
        elif isinstance(msg, Drag):
            self._pending_drags[int(msg.finger)] = (float(msg.x), float(msg.y))
        elif isinstance(msg, StartRecording):
            self.start_recording()
        elif isinstance(msg, StopRecording):
            self.stop_recording()
        elif isinstance(msg, Reset):
            self.reset()
        else:
            raise ProtocolError("unexpected", f"session cannot handle {type(msg).__name__}")

    # -- session state machine ----------------------------------------------

    def reset(self) -> None:
        self.env.reset(self.cfg.seed)
        self.retarget_state: RetargetState = make_retarget_state(self.model, self.calibration)
        self.targets = self.retarget_state.last_targets.positions.copy()
        self.tick_count = 0
        self.recording = False
        self._buffer = []
        self._pending_landmarks = None
        self._pending_drags = {}

    def start_recording(self) -> None:
        if not self.recording:
            self.recording = True
            self._buffer = []

    def stop_recording(self, recorded_at: str = EPOCH_TIMESTAMP):
        """Finalize the recording buffer into a Demonstration (or None if too
        short to be a valid demo)."""
        self.recording = False
        rows = self._buffer
        self._buffer = []
        if len(rows) < 2:
            return None
        demo = Demonstration(
            task=self.cfg.task,
            transitions=tuple(rows),
            operator_id=self.cfg.operator_id,
            recorded_at=recorded_at,
            source="teleop",
        )
        demo.validate()
        self._demos.append(demo)
        return demo

    def discard_recording(self) -> None:
        self.recording = False
        self._buffer = []

    @property
    def demonstrations(self) -> tuple:
        return tuple(self._demos)

    # -- ticking -------------------------------------------------------------

    def _apply_inputs(self) -> None:
        if self._pending_landmarks is not None:
            out = retarget(self._pending_landmarks, self.calibration, self.retarget_state, self.model)
            self.targets = out.positions.copy()
            self._pending_landmarks = None
        if self._pending_drags:
            z = self.calibration.z_plane
            for finger, (x, y) in sorted(self._pending_drags.items()):
                self.targets[finger] = (x, y, z)
            self.targets = self.model.clamp_targets(self.targets)
            self._pending_drags = {}

    def tick(self) -> bool:
        """Advance one target-rate tick; returns True while the episode runs.

        Ticking past the episode end is a no-op (state frames keep streaming
        the terminal state until a Reset arrives).
        """
        st = self.env.state
        if st.done:
            return False
        self._apply_inputs()
        if self.recording and self.tick_count % RECORD_EVERY == 0:
            self._buffer.append(
                Transition(
                    timestamp=st.elapsed,
                    observation=self.env.observe(),
                    action=self.targets.reshape(12).copy(),
                    object_pose=self.env.object_pose(),
                )
            )
        self.env.tick(self.targets, restart=True)
        self.tick_count += 1
        return not self.env.state.done


# ---------------------------------------------------------------------------
# Session logs: replayable record of operator input


SESSION_LOG_FORMAT = "session-log"
SESSION_LOG_VERSION = 1


def write_session_log(path, task: str, seed: int, events) -> None:
    """events: iterable of (tick_index, wire_message)."""
    from .protocol import encode_message

    with open(path, "w") as fh:
        header = {
            "format": SESSION_LOG_FORMAT,
            "version": SESSION_LOG_VERSION,
            "task": task,
            "seed": seed,
        }
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for tick, msg in events:
            fh.write(json.dumps({"tick": tick, "msg": encode_message(msg)}, separators=(",", ":"), sort_keys=True) + "\n")


def read_session_log(path):
    from .protocol import decode_message

    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != SESSION_LOG_FORMAT:
            raise InvalidInputError("not a session log file")
        if header.get("version") != SESSION_LOG_VERSION:
            raise InvalidInputError(f"unsupported session log version {header.get('version')!r}")
        events = []
        prev = -1
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            tick = int(row["tick"])
            if tick < prev:
                raise InvalidInputError("session log ticks must be nondecreasing")
            prev = tick
            events.append((tick, decode_message(row["msg"])))
    return header["task"], int(header["seed"]), events


def replay_session(log_path, model: HandModel | None = None, calibration: Calibration | None = None, operator_id: str = "replay"):
    """Re-execute a session log headlessly in virtual time.

    Returns (demonstrations, success_flag). Identical pipeline as the live
    service; deterministic.
    """
    task, seed, events = read_session_log(log_path)
    pipe = SessionPipeline(
        SessionConfig(task=task, seed=seed, operator_id=operator_id),
        model=model,
        calibration=calibration,
    )
    i = 0
    last_tick = events[-1][0] if events else 0
    max_ticks = int(pipe.env.spec.time_limit * pipe.env.ctrl.target_rate) + last_tick + 1
    for tick in range(max_ticks):
        while i < len(events) and events[i][0] <= tick:
            pipe.handle(events[i][1])
            i += 1
        alive = pipe.tick()
        if not alive and i >= len(events):
            break
    if pipe.recording:
        pipe.discard_recording()  # unterminated recording is dropped
    return pipe.demonstrations, bool(pipe.env.state.succeeded)
