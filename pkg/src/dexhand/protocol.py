"""Wire protocol for the teleoperation service.

Messages are JSON objects in text frames over a persistent bidirectional
channel (one message per frame), with a canonical byte encoding so golden
fixtures are stable: keys sorted, compact separators, every float rendered
as a fixed 9-decimal string. Floats are quantized to that grid when a
message is constructed, which makes encode/decode lossless in both
directions. docs/formats.md documents the schema; docs/fixtures/ carries
golden bytes for every message type.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

from .errors import ProtocolError

PROTOCOL_VERSION = 1


def q9(x) -> float:
    """Quantize to the wire's 9-decimal grid (and normalize -0.0)."""
    v = float(x)
    if not math.isfinite(v):
        raise ProtocolError("non-finite", "wire floats must be finite")
    v = float(f"{v:.9f}")
    return 0.0 if v == 0.0 else v


def q9_list(values) -> tuple:
    return tuple(q9(v) for v in values)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.9f}"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in value) + "]"
    if isinstance(value, dict):
        items = sorted(value.items())
        return "{" + ",".join(f"{json.dumps(k)}:{_fmt(v)}" for k, v in items) + "}"
    if value is None:
        return "null"
    raise ProtocolError("encode", f"cannot encode {type(value).__name__}")


@dataclass(frozen=True)
class Hello:
    """Client handshake: protocol version, task to run, reset seed."""

    protocol_version: int
    task: str
    seed: int
    id: int | None = None


@dataclass(frozen=True)
class Landmarks:
    """One 21-keypoint 2.5D landmark frame from a client-side detector."""

    ts: float
    keypoints: tuple  # 21 x (x, y, z)
    confidence: float
    id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "ts", q9(self.ts))
        kp = tuple(q9_list(p) for p in self.keypoints)
        if len(kp) != 21 or any(len(p) != 3 for p in kp):
            raise ProtocolError("schema", "keypoints must be 21 triples")
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "confidence", q9(self.confidence))


@dataclass(frozen=True)
class Drag:
    """Pointer surrogate input: one fingertip target in palm-plane xy."""

    finger: int
    x: float
    y: float
    id: int | None = None

    def __post_init__(self):
        if not 0 <= int(self.finger) <= 3:
            raise ProtocolError("schema", "finger must be 0..3")
        object.__setattr__(self, "x", q9(self.x))
        object.__setattr__(self, "y", q9(self.y))


@dataclass(frozen=True)
class StartRecording:
    id: int | None = None


@dataclass(frozen=True)
class StopRecording:
    id: int | None = None


@dataclass(frozen=True)
class Reset:
    id: int | None = None


@dataclass(frozen=True)
class StateFrame:
    """Server -> client snapshot broadcast at the target rate."""

    sim_time: float
    q: tuple  # 16 joint angles
    tips: tuple  # 12 fingertip coordinates
    obj_pos: tuple  # 3
    obj_quat: tuple  # 4 (w, x, y, z)
    accum_angle: float
    success: bool
    recording: bool

    def __post_init__(self):
        object.__setattr__(self, "sim_time", q9(self.sim_time))
        object.__setattr__(self, "q", q9_list(self.q))
        object.__setattr__(self, "tips", q9_list(self.tips))
        object.__setattr__(self, "obj_pos", q9_list(self.obj_pos))
        object.__setattr__(self, "obj_quat", q9_list(self.obj_quat))
        object.__setattr__(self, "accum_angle", q9(self.accum_angle))
        if len(self.q) != 16 or len(self.tips) != 12:
            raise ProtocolError("schema", "state frame needs 16 angles and 12 tip values")


@dataclass(frozen=True)
class Ack:
    id: int


@dataclass(frozen=True)
class ErrorMsg:
    code: str
    text: str


_TAGS = {
    "hello": Hello,
    "landmarks": Landmarks,
    "drag": Drag,
    "start_recording": StartRecording,
    "stop_recording": StopRecording,
    "reset": Reset,
    "state": StateFrame,
    "ack": Ack,
    "error": ErrorMsg,
}
_TYPE_TO_TAG = {cls: tag for tag, cls in _TAGS.items()}

CLIENT_MESSAGES = (Hello, Landmarks, Drag, StartRecording, StopRecording, Reset)


def encode_message(msg) -> str:
    tag = _TYPE_TO_TAG.get(type(msg))
    if tag is None:
        raise ProtocolError("encode", f"unknown message type {type(msg).__name__}")
    doc = {"type": tag}
    for f in fields(msg):
        value = getattr(msg, f.name)
        if value is None and f.name == "id":
            continue
        doc[f.name] = value
    items = sorted(doc.items())
    return "{" + ",".join(f"{json.dumps(k)}:{_fmt(v)}" for k, v in items) + "}"


_INT_FIELDS = {"protocol_version", "seed", "finger", "id"}
_BOOL_FIELDS = {"success", "recording"}
_STR_FIELDS = {"task", "code", "text"}


def decode_message(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError("parse", f"message is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProtocolError("schema", "message must be a JSON object")
    tag = doc.pop("type", None)
    cls = _TAGS.get(tag)
    if cls is None:
        raise ProtocolError("unknown-type", f"unknown message tag {tag!r}")
    expected = {f.name for f in fields(cls)}
    unknown = set(doc) - expected
    if unknown:
        raise ProtocolError("schema", f"unexpected fields: {', '.join(sorted(unknown))}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in doc:
            if f.name == "id":
                continue
            raise ProtocolError("schema", f"missing field {f.name!r}")
        value = doc[f.name]
        if f.name in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ProtocolError("schema", f"field {f.name!r} must be an integer")
        elif f.name in _BOOL_FIELDS:
            if not isinstance(value, bool):
                raise ProtocolError("schema", f"field {f.name!r} must be a boolean")
        elif f.name in _STR_FIELDS:
            if not isinstance(value, str):
                raise ProtocolError("schema", f"field {f.name!r} must be a string")
        kwargs[f.name] = tuple(tuple(p) for p in value) if f.name == "keypoints" else (
            tuple(value) if isinstance(value, list) else value
        )
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ProtocolError("schema", f"malformed {tag} message: {exc}") from exc


def state_frame_from_env(env, recording: bool) -> StateFrame:
    """Snapshot the environment into a wire frame."""
    from .hand_model import forward_kinematics

    st = env.state
    pose = env.object_pose()
    tips = forward_kinematics(env.model, st.servo.q.angles)
    return StateFrame(
        sim_time=st.elapsed,
        q=tuple(float(v) for v in st.servo.q.angles),
        tips=tuple(float(v) for v in tips.reshape(12)),
        obj_pos=tuple(float(v) for v in pose.position),
        obj_quat=tuple(float(v) for v in pose.orientation),
        accum_angle=st.object_angle_accum,
        success=bool(env.success()),
        recording=recording,
    )
