"""Demonstration recording, filtering and persistence.

A demonstration is an ordered list of (timestamp, observation, action,
object pose) transitions recorded at 5 Hz. Files are newline-delimited JSON
with a versioned header line, written atomically; the format is documented in
docs/formats.md with a golden example under docs/fixtures/.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .envs import ObjectPose, TaskEnv, TASK_NAMES
from .errors import DemoFormatError, InvalidInputError, VersionError

FORMAT_NAME = "dexhand-demos"
FORMAT_VERSION = 1
NOMINAL_SPACING = 0.2
EPOCH_TIMESTAMP = "1970-01-01T00:00:00Z"  # deterministic stamp for scripted/replayed demos

DEFAULT_FILTER_THRESHOLD = 0.02  # meters


@dataclass(frozen=True)
class Transition:
    timestamp: float
    observation: np.ndarray  # (15,)
    action: np.ndarray  # (12,)
    object_pose: ObjectPose

    def validate(self) -> None:
        if np.asarray(self.observation).shape != (15,):
            raise InvalidInputError("observation must have 15 dimensions")
        if np.asarray(self.action).shape != (12,):
            raise InvalidInputError("action must have 12 dimensions")


@dataclass(frozen=True)
class Demonstration:
    task: str
    transitions: tuple
    operator_id: str = "anonymous"
    recorded_at: str = EPOCH_TIMESTAMP
    source: str = "teleop"  # teleop | scripted

    def validate(self, min_transitions: int = 2) -> None:
        if self.task not in TASK_NAMES:
            raise InvalidInputError(f"unknown task {self.task!r}")
        if self.source not in ("teleop", "scripted"):
            raise InvalidInputError(f"unknown source {self.source!r}")
        if len(self.transitions) < min_transitions:
            raise InvalidInputError(
                f"demonstration needs at least {min_transitions} transitions"
            )
        prev = None
        for tr in self.transitions:
            tr.validate()
            if prev is not None:
                gap = tr.timestamp - prev
                if gap <= 0:
                    raise InvalidInputError("timestamps must be strictly increasing")
            prev = tr.timestamp


@dataclass(frozen=True)
class DemoSet:
    task: str
    demonstrations: tuple
    filter_applied: bool = False

    def validate(self) -> None:
        # a fully-static demo legitimately collapses to one transition under
        # the displacement filter; unfiltered recordings must have >= 2
        min_tr = 1 if self.filter_applied else 2
        for demo in self.demonstrations:
            if demo.task != self.task:
                raise InvalidInputError("all demonstrations in a set must share the task")
            demo.validate(min_transitions=min_tr)

    def n_transitions(self) -> int:
        return sum(len(d.transitions) for d in self.demonstrations)


# ---------------------------------------------------------------------------
# Recording


def record_episode(env: TaskEnv, action_fn, seed: int, operator_id: str = "scripted", source: str = "scripted", recorded_at: str = EPOCH_TIMESTAMP):
    """Drive the env with action_fn at 5 Hz and record one demonstration.

    action_fn(env) -> 12-dim fingertip targets. Recording stops at episode
    end (success or time limit). Returns (Demonstration, success).
    """
    obs = env.reset(seed)
    rows = []
    t = 0.0
    success = False
    done = False
    max_steps = int(env.spec.time_limit * env.spec.action_rate)
    for _ in range(max_steps):
        act = np.asarray(action_fn(env), dtype=float).reshape(12)
        pose = env.object_pose()
        rows.append(Transition(timestamp=t, observation=obs.copy(), action=act.copy(), object_pose=pose))
        obs, _, success, done, _ = env.step(act)
        t += env.action_period
        if done:
            break
    # closing transition so consumers see the terminal observation
    rows.append(Transition(timestamp=t, observation=obs.copy(), action=rows[-1].action.copy(), object_pose=env.object_pose()))
    demo = Demonstration(
        task=env.spec.task,
        transitions=tuple(rows),
        operator_id=operator_id,
        recorded_at=recorded_at,
        source=source,
    )
    demo.validate()
    return demo, success


def scripted_demoset(task: str, n_demos: int, seed: int, model=None, ctrl=None, **spec_overrides) -> DemoSet:
    """Record n successful scripted demonstrations (seeds seed, seed+1, ...)."""
    from .envs import make_env
    from .scripted import make_expert

    env = make_env(task, model=model, ctrl=ctrl, **spec_overrides)
    demos = []
    s = seed
    attempts = 0
    while len(demos) < n_demos:
        if attempts > 20 * n_demos:
            raise RuntimeError(f"scripted expert kept failing on task {task}")
        expert = make_expert(task)
        expert.reset(env, np.random.default_rng(s + 7919))
        demo, success = record_episode(
            env, expert.action, s, operator_id=f"scripted-{s}", source="scripted"
        )
        if success:
            demos.append(demo)
        s += 1
        attempts += 1
    ds = DemoSet(task=task, demonstrations=tuple(demos), filter_applied=False)
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# Transition filter


def _max_fingertip_displacement(a, b) -> float:
    pa = np.asarray(a, dtype=float).reshape(4, 3)
    pb = np.asarray(b, dtype=float).reshape(4, 3)
    return float(np.max(np.linalg.norm(pa - pb, axis=1)))


def filter_small_transitions(demo: Demonstration, threshold: float = DEFAULT_FILTER_THRESHOLD) -> Demonstration:
    """Drop transitions whose action barely moved any fingertip.

    A transition is retained iff the largest per-fingertip displacement of its
    action from the action of the previously *retained* transition is at least
    ``threshold``; the first transition is always retained. Operators pausing
    mid-demonstration therefore contribute one transition, not dozens.
    """
    if threshold < 0:
        raise InvalidInputError("threshold must be nonnegative")
    kept = [demo.transitions[0]]
    for tr in demo.transitions[1:]:
        if _max_fingertip_displacement(tr.action, kept[-1].action) >= threshold:
            kept.append(tr)
    return replace(demo, transitions=tuple(kept))


def filter_demoset(demoset: DemoSet, threshold: float = DEFAULT_FILTER_THRESHOLD) -> DemoSet:
    filtered = tuple(filter_small_transitions(d, threshold) for d in demoset.demonstrations)
    return DemoSet(task=demoset.task, demonstrations=filtered, filter_applied=True)


# ---------------------------------------------------------------------------
# Persistence


def _transition_row(tr: Transition) -> dict:
    return {
        "kind": "t",
        "ts": float(tr.timestamp),
        "obs": [float(v) for v in tr.observation],
        "act": [float(v) for v in tr.action],
        "obj_pos": [float(v) for v in tr.object_pose.position],
        "obj_quat": [float(v) for v in tr.object_pose.orientation],
    }


def save_demoset(demoset: DemoSet, path) -> None:
    """Atomic write (temp file + rename); full float precision."""
    demoset.validate()
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        header = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "task": demoset.task,
            "filter_applied": demoset.filter_applied,
            "demos": len(demoset.demonstrations),
        }
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for demo in demoset.demonstrations:
            meta = {
                "kind": "demo",
                "operator_id": demo.operator_id,
                "recorded_at": demo.recorded_at,
                "source": demo.source,
                "transitions": len(demo.transitions),
            }
            fh.write(json.dumps(meta, separators=(",", ":")) + "\n")
            for tr in demo.transitions:
                fh.write(json.dumps(_transition_row(tr), separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def _parse_line(raw: bytes, offset: int):
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DemoFormatError(f"corrupt record: {exc}", offset=offset) from exc


def load_demoset(path) -> DemoSet:
    """Load and fully validate a demonstration file."""
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0
    lines = []
    for raw in data.splitlines(keepends=True):
        stripped = raw.strip()
        if stripped:
            lines.append((offset, stripped))
        offset += len(raw)
    if not lines:
        raise DemoFormatError("empty demonstration file", offset=0)

    off0, raw0 = lines[0]
    header = _parse_line(raw0, off0)
    if header.get("format") != FORMAT_NAME:
        raise DemoFormatError("not a demonstration file (bad format field)", offset=off0)
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(
            f"unsupported demonstration format version {header.get('version')!r}", offset=off0
        )
    task = header.get("task")
    n_demos = header.get("demos")

    demos = []
    i = 1
    while i < len(lines):
        off, raw = lines[i]
        row = _parse_line(raw, off)
        if row.get("kind") != "demo":
            raise DemoFormatError("expected a demo header record", offset=off)
        count = row.get("transitions")
        if not isinstance(count, int) or count < 1:
            raise DemoFormatError("demo header must declare >= 1 transitions", offset=off)
        if i + count > len(lines) - 1:
            raise DemoFormatError(
                f"truncated file: demo declares {count} transitions", offset=off
            )
        transitions = []
        for j in range(count):
            toff, traw = lines[i + 1 + j]
            trow = _parse_line(traw, toff)
            if trow.get("kind") != "t":
                raise DemoFormatError("expected a transition record", offset=toff)
            try:
                obs = np.array(trow["obs"], dtype=float)
                act = np.array(trow["act"], dtype=float)
                pose = ObjectPose(
                    position=np.array(trow["obj_pos"], dtype=float),
                    orientation=np.array(trow["obj_quat"], dtype=float),
                )
                tr = Transition(
                    timestamp=float(trow["ts"]), observation=obs, action=act, object_pose=pose
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DemoFormatError(f"malformed transition: {exc}", offset=toff) from exc
            if obs.shape != (15,):
                raise DemoFormatError(
                    f"invariant violation: observation has {obs.size} dimensions, expected 15",
                    offset=toff,
                )
            if act.shape != (12,):
                raise DemoFormatError(
                    f"invariant violation: action has {act.size} dimensions, expected 12",
                    offset=toff,
                )
            transitions.append(tr)
        demo = Demonstration(
            task=task,
            transitions=tuple(transitions),
            operator_id=row.get("operator_id", "anonymous"),
            recorded_at=row.get("recorded_at", EPOCH_TIMESTAMP),
            source=row.get("source", "teleop"),
        )
        try:
            demo.validate(min_transitions=1 if header.get("filter_applied") else 2)
        except InvalidInputError as exc:
            raise DemoFormatError(f"invariant violation: {exc}", offset=off) from exc
        demos.append(demo)
        i += 1 + count

    if isinstance(n_demos, int) and n_demos != len(demos):
        raise DemoFormatError(
            f"header declares {n_demos} demos but file contains {len(demos)}", offset=off0
        )
    ds = DemoSet(task=task, demonstrations=tuple(demos), filter_applied=bool(header.get("filter_applied", False)))
    try:
        ds.validate()
    except InvalidInputError as exc:
        raise DemoFormatError(f"invariant violation: {exc}", offset=off0) from exc
    return ds
