"""Wire protocol: canonical encoding, lossless round trips, schema errors."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexhand.errors import ProtocolError
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
    decode_message,
    encode_message,
    q9,
)

EXAMPLES = [
    Hello(protocol_version=1, task="rotating", seed=42, id=1),
    Landmarks(ts=0.125, keypoints=tuple((0.5, 0.25, -0.125) for _ in range(21)), confidence=0.96875, id=7),
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


@pytest.mark.parametrize("msg", EXAMPLES, ids=lambda m: type(m).__name__)
def test_roundtrip_object_level(msg):
    assert decode_message(encode_message(msg)) == msg


@pytest.mark.parametrize("msg", EXAMPLES, ids=lambda m: type(m).__name__)
def test_roundtrip_byte_level(msg):
    wire = encode_message(msg)
    assert encode_message(decode_message(wire)) == wire


def test_canonical_bytes_are_stable():
    wire = encode_message(Drag(finger=0, x=0.5, y=0.25))
    assert wire == '{"finger":0,"type":"drag","x":0.500000000,"y":0.250000000}'


def test_floats_quantized_at_construction():
    d = Drag(finger=0, x=0.1 + 0.2, y=1e-12)
    assert d.x == q9(0.30000000000000004) == 0.3
    assert d.y == 0.0


def test_negative_zero_normalized():
    d = Drag(finger=0, x=-0.0, y=0.0)
    assert "-0" not in encode_message(d)


def test_unknown_tag_rejected():
    with pytest.raises(ProtocolError) as err:
        decode_message('{"type":"teleport","x":1}')
    assert err.value.code == "unknown-type"


def test_unknown_field_rejected():
    with pytest.raises(ProtocolError):
        decode_message('{"type":"drag","finger":0,"x":0.1,"y":0.1,"spin":1}')


def test_missing_field_rejected():
    with pytest.raises(ProtocolError):
        decode_message('{"type":"drag","finger":0,"x":0.1}')


def test_type_mismatch_rejected():
    with pytest.raises(ProtocolError):
        decode_message('{"type":"hello","protocol_version":"one","task":"rotating","seed":1}')
    with pytest.raises(ProtocolError):
        decode_message('{"type":"drag","finger":9,"x":0.1,"y":0.1}')


def test_not_json_rejected():
    with pytest.raises(ProtocolError):
        decode_message("not json at all")


def test_nonfinite_floats_rejected():
    with pytest.raises(ProtocolError):
        Drag(finger=0, x=float("nan"), y=0.0)


@settings(max_examples=300, deadline=None)
@given(
    finger=st.integers(0, 3),
    x=st.floats(-10, 10, width=32),
    y=st.floats(-10, 10, width=32),
)
def test_drag_roundtrip_property(finger, x, y):
    msg = Drag(finger=finger, x=x, y=y)
    wire = encode_message(msg)
    assert decode_message(wire) == msg
    assert encode_message(decode_message(wire)) == wire


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_state_frame_roundtrip_property(data):
    rng_vals = lambda n: tuple(  # noqa: E731
        data.draw(st.floats(-5, 5, width=32)) for _ in range(n)
    )
    msg = StateFrame(
        sim_time=abs(data.draw(st.floats(0, 100, width=32))),
        q=rng_vals(16),
        tips=rng_vals(12),
        obj_pos=rng_vals(3),
        obj_quat=rng_vals(4),
        accum_angle=data.draw(st.floats(-20, 20, width=32)),
        success=data.draw(st.booleans()),
        recording=data.draw(st.booleans()),
    )
    wire = encode_message(msg)
    assert decode_message(wire) == msg
    assert encode_message(decode_message(wire)) == wire


def test_golden_fixture_file_roundtrips():
    from pathlib import Path

    fixture = Path(__file__).parent.parent / "docs" / "fixtures" / "wire_messages.jsonl"
    lines = [l for l in fixture.read_text().splitlines() if l.strip()]
    assert len(lines) >= 9
    for line in lines:
        assert encode_message(decode_message(line)) == line
