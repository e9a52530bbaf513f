"""Live teleop service: handshake gates, frame streaming, recording files,
error replies, and the plain-HTTP endpoints."""

import asyncio
import json
import socket

import pytest
from websockets.asyncio.client import connect

from dexhand.demos import load_demoset
from dexhand.hand_model import load_hand_model
from dexhand.protocol import (
    Ack,
    Drag,
    ErrorMsg,
    Hello,
    StartRecording,
    StateFrame,
    StopRecording,
    decode_message,
    encode_message,
)
from dexhand.retarget import default_calibration
from dexhand.service import ServiceConfig, TeleopService, serve_async


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def model():
    return load_hand_model()


def run_service_test(coro_factory, model, tmp_path, time_scale=20.0):
    async def main():
        port = free_port()
        cfg = ServiceConfig(
            host="127.0.0.1",
            port=port,
            out_dir=tmp_path,
            model=model,
            calibration=default_calibration(model),
            time_scale=time_scale,
        )
        ready = asyncio.Event()
        server = asyncio.create_task(serve_async(cfg, ready))
        await asyncio.wait_for(ready.wait(), 10)
        try:
            await asyncio.wait_for(coro_factory(port), 30)
        finally:
            server.cancel()
            try:
                await server
            except asyncio.CancelledError:
                pass

    asyncio.run(main())


def test_version_gate(model, tmp_path):
    async def scenario(port):
        async with connect(f"ws://127.0.0.1:{port}/ws") as ws:
            await ws.send(encode_message(Hello(protocol_version=99, task="rotating", seed=1)))
            reply = decode_message(await ws.recv())
            assert isinstance(reply, ErrorMsg)
            assert reply.code == "version"

    run_service_test(scenario, model, tmp_path)


def test_unknown_task_rejected(model, tmp_path):
    async def scenario(port):
        async with connect(f"ws://127.0.0.1:{port}/ws") as ws:
            await ws.send(encode_message(Hello(protocol_version=1, task="juggling", seed=1)))
            reply = decode_message(await ws.recv())
            assert isinstance(reply, ErrorMsg) and reply.code == "task"

    run_service_test(scenario, model, tmp_path)


def test_session_streams_frames_and_records(model, tmp_path):
    async def scenario(port):
        async with connect(f"ws://127.0.0.1:{port}/ws") as ws:
            await ws.send(encode_message(Hello(protocol_version=1, task="spinning", seed=4, id=1)))
            first = decode_message(await ws.recv())
            assert isinstance(first, Ack) and first.id == 1

            frame = decode_message(await ws.recv())
            assert isinstance(frame, StateFrame)
            assert len(frame.q) == 16 and not frame.recording

            # malformed input: error reply, session survives
            await ws.send("{broken")
            await ws.send(encode_message(Drag(finger=0, x=0.12, y=0.03, id=2)))
            saw_error = False
            saw_ack = False
            for _ in range(40):
                msg = decode_message(await ws.recv())
                if isinstance(msg, ErrorMsg):
                    saw_error = True
                elif isinstance(msg, Ack) and msg.id == 2:
                    saw_ack = True
                if saw_error and saw_ack:
                    break
            assert saw_error and saw_ack

            await ws.send(encode_message(StartRecording(id=3)))
            recording_seen = False
            for _ in range(80):
                msg = decode_message(await ws.recv())
                if isinstance(msg, StateFrame) and msg.recording:
                    recording_seen = True
                    break
            assert recording_seen
            # let the recorder take a few 5 Hz samples
            count = 0
            while count < 15:
                msg = decode_message(await ws.recv())
                if isinstance(msg, StateFrame):
                    count += 1
            await ws.send(encode_message(StopRecording(id=4)))
            for _ in range(40):
                msg = decode_message(await ws.recv())
                if isinstance(msg, Ack) and msg.id == 4:
                    break

    run_service_test(scenario, model, tmp_path)
    demo_files = list(tmp_path.glob("demos-*.jsonl"))
    assert demo_files, "service should have saved the finished recording"
    ds = load_demoset(demo_files[0])
    assert ds.task == "spinning"
    assert len(ds.demonstrations) == 1
    assert len(ds.demonstrations[0].transitions) >= 2
    logs = list(tmp_path.glob("session-*.log.jsonl"))
    assert logs, "service should write a replayable session log"


def test_http_endpoints(model, tmp_path):
    async def scenario(port):
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        writer.write(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        await writer.drain()
        data = await reader.read()
        assert b"200" in data.split(b"\r\n")[0]
        assert b"ok" in data
        writer.close()

        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        writer.write(b"GET /model.json HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        await writer.drain()
        data = await reader.read()
        body = data.split(b"\r\n\r\n", 1)[1]
        doc = json.loads(body)
        assert doc["format"] == "hand-model/1"
        assert len(doc["fingers"]) == 4
        writer.close()

    run_service_test(scenario, model, tmp_path)
