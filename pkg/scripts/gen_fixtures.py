#!/usr/bin/env python3
"""Regenerate the golden fixtures under docs/fixtures/.

Everything here is deterministic; rerunning must reproduce the committed
bytes exactly (the test suite and the browser client both assert against
these files).
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from dexhand.demos import DemoSet, save_demoset
from dexhand.hand_model import finger_chain_points, forward_kinematics, load_hand_model
from dexhand.protocol import (
    Ack,
    Drag,
    ErrorMsg,
    Hello,
    Landmarks,
    Reset,
    StartRecording,
    StateFrame,
    StopRecording,
    encode_message,
)
from dexhand.scripted import scripted_drag_events
from dexhand.session import replay_session, write_session_log

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "docs" / "fixtures"


def wire_messages():
    msgs = [
        Hello(protocol_version=1, task="rotating", seed=42, id=1),
        Landmarks(
            ts=0.125,
            keypoints=tuple((0.5, 0.25, -0.125) for _ in range(21)),
            confidence=0.96875,
            id=7,
        ),
        Drag(finger=2, x=0.1, y=-0.0625, id=3),
        StartRecording(id=4),
        StopRecording(id=5),
        Reset(),
        StateFrame(
            sim_time=1.2,
            q=tuple(0.1 * i for i in range(16)),
            tips=tuple(0.01 * i for i in range(12)),
            obj_pos=(0.105, 0.0, 0.028),
            obj_quat=(1.0, 0.0, 0.0, 0.0),
            accum_angle=0.5235987755982988,
            success=False,
            recording=True,
        ),
        Ack(id=9),
        ErrorMsg(code="version", text="unsupported protocol version 0"),
    ]
    with open(FIXTURES / "wire_messages.jsonl", "w") as fh:
        for m in msgs:
            fh.write(encode_message(m) + "\n")


def golden_session():
    events = scripted_drag_events("rotating", seed=3)
    log_path = FIXTURES / "golden_drag_log.jsonl"
    write_session_log(log_path, "rotating", 3, events)
    demos, success = replay_session(log_path)
    assert success and demos, "golden drag session must succeed"
    save_demoset(DemoSet(task="rotating", demonstrations=demos), FIXTURES / "golden_demo.jsonl")


def fk_reference():
    """Fingertip and chain positions for the browser client's FK parity test."""
    import json

    model = load_hand_model()
    cases = []
    rng = np.random.default_rng(2718)
    lim = model.joint_limits
    qs = [np.zeros(16), model.mid_pose()] + [rng.uniform(lim[:, 0], lim[:, 1]) for _ in range(8)]
    for q in qs:
        tips = forward_kinematics(model, q)
        chains = [finger_chain_points(model, q, f).tolist() for f in range(4)]
        cases.append({"q": [float(v) for v in q], "tips": tips.tolist(), "chains": chains})
    with open(FIXTURES / "fk_reference.json", "w") as fh:
        json.dump(cases, fh, indent=1, sort_keys=True)
        fh.write("\n")


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    wire_messages()
    golden_session()
    fk_reference()
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
