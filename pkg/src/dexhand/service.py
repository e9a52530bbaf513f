"""Real-time teleoperation server.

One WebSocket connection = one session. The client opens with Hello, then
streams Landmarks or Drag messages; the server paces the servo/env pipeline
to wall clock at the target rate (10 control ticks per target application),
broadcasts a StateFrame per tick, records transitions at 5 Hz while
recording, and writes both demonstration files and replayable session logs.

Plain HTTP on the same port serves the browser client bundle, the hand model
as JSON, and a health probe.
"""

from __future__ import annotations

import asyncio
import datetime
import http
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from websockets.asyncio.server import serve as ws_serve

from .demos import DemoSet, save_demoset
from .envs import TASK_NAMES
from .errors import DemoFormatError, DexhandError, ProtocolError
from .hand_model import model_to_dict
from .protocol import (
    PROTOCOL_VERSION,
    Ack,
    CLIENT_MESSAGES,
    ErrorMsg,
    Hello,
    StopRecording,
    decode_message,
    encode_message,
    state_frame_from_env,
)
from .session import SessionConfig, SessionPipeline, write_session_log

log = logging.getLogger("dexhand.service")

MAX_CATCHUP_SECONDS = 0.030  # beyond this the session lets sim time slip


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8750
    static_dir: Path | None = None
    out_dir: Path = Path("runs/teleop")
    model: object = None
    calibration: object = None
    time_scale: float = 1.0  # >1 runs faster than wall clock (testing)


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
}


class TeleopService:
    def __init__(self, cfg: ServiceConfig):
        self.cfg = cfg
        self._session_counter = 0
        self._model_json = json.dumps(model_to_dict(cfg.model)).encode()
        cfg.out_dir.mkdir(parents=True, exist_ok=True)

    # -- plain HTTP ----------------------------------------------------------

    def process_request(self, connection, request):
        if "Upgrade" in request.headers:
            return None  # continue the websocket handshake
        path = request.path.split("?")[0]
        if path == "/health":
            return self._http(connection, http.HTTPStatus.OK, b"ok\n", "text/plain")
        if path == "/model.json":
            return self._http(connection, http.HTTPStatus.OK, self._model_json, "application/json")
        if self.cfg.static_dir is not None:
            rel = "index.html" if path == "/" else path.lstrip("/")
            target = (self.cfg.static_dir / rel).resolve()
            if target.is_file() and str(target).startswith(str(self.cfg.static_dir.resolve())):
                ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
                return self._http(connection, http.HTTPStatus.OK, target.read_bytes(), ctype)
        if path == "/":
            body = b"dexhand teleop service; connect a client over websocket\n"
            return self._http(connection, http.HTTPStatus.OK, body, "text/plain")
        return self._http(connection, http.HTTPStatus.NOT_FOUND, b"not found\n", "text/plain")

    @staticmethod
    def _http(connection, status, body: bytes, ctype: str):
        response = connection.respond(status, "")
        response.body = body
        # Headers.__setitem__ appends, so clear stale entries first
        del response.headers["Content-Type"]
        del response.headers["Content-Length"]
        response.headers["Content-Type"] = ctype
        response.headers["Content-Length"] = str(len(body))
        return response

    # -- websocket sessions ---------------------------------------------------

    async def handler(self, websocket) -> None:
        self._session_counter += 1
        session_id = f"s{self._session_counter:04d}"
        try:
            hello = await self._handshake(websocket)
        except ProtocolError as exc:
            await websocket.send(encode_message(ErrorMsg(code=exc.code, text=str(exc))))
            await websocket.close()
            return
        if hello is None:
            return

        pipe = SessionPipeline(
            SessionConfig(task=hello.task, seed=hello.seed, operator_id=session_id),
            model=self.cfg.model,
            calibration=self.cfg.calibration,
        )
        if hello.id is not None:
            await websocket.send(encode_message(Ack(id=hello.id)))
        log.info("session %s: task=%s seed=%d", session_id, hello.task, hello.seed)

        events: list = []
        stop = asyncio.Event()
        reader = asyncio.create_task(self._read_loop(websocket, pipe, events, stop))
        try:
            await self._tick_loop(websocket, pipe, stop)
        finally:
            stop.set()
            reader.cancel()
            try:
                await reader
            except (asyncio.CancelledError, Exception):
                pass
            self._finalize(session_id, hello, pipe, events)

    async def _handshake(self, websocket) -> Hello | None:
        try:
            raw = await asyncio.wait_for(websocket.recv(), timeout=30.0)
        except (asyncio.TimeoutError, Exception):
            return None
        msg = decode_message(raw)
        if not isinstance(msg, Hello):
            raise ProtocolError("handshake", "first message must be hello")
        if msg.protocol_version != PROTOCOL_VERSION:
            raise ProtocolError(
                "version",
                f"unsupported protocol version {msg.protocol_version}; server speaks {PROTOCOL_VERSION}",
            )
        if msg.task not in TASK_NAMES:
            raise ProtocolError("task", f"unknown task {msg.task!r}; valid: {', '.join(TASK_NAMES)}")
        return msg

    async def _read_loop(self, websocket, pipe: SessionPipeline, events: list, stop: asyncio.Event) -> None:
        async for raw in websocket:
            if stop.is_set():
                break
            try:
                msg = decode_message(raw)
                if isinstance(msg, Hello):
                    raise ProtocolError("handshake", "hello is only valid once")
                if not isinstance(msg, CLIENT_MESSAGES):
                    raise ProtocolError("unexpected", f"server cannot accept {type(msg).__name__}")
                if isinstance(msg, StopRecording):
                    events.append((pipe.tick_count, msg))
                    pipe.stop_recording(recorded_at=_now_iso())
                else:
                    events.append((pipe.tick_count, msg))
                    pipe.handle(msg)
                if getattr(msg, "id", None) is not None:
                    await websocket.send(encode_message(Ack(id=msg.id)))
            except ProtocolError as exc:
                # malformed input never kills the session
                await websocket.send(encode_message(ErrorMsg(code=exc.code, text=str(exc))))

    async def _tick_loop(self, websocket, pipe: SessionPipeline, stop: asyncio.Event) -> None:
        dt = 1.0 / (pipe.env.ctrl.target_rate * self.cfg.time_scale)
        next_tick = time.monotonic()
        slipped = 0
        while not stop.is_set():
            now = time.monotonic()
            behind = now - next_tick
            if behind > MAX_CATCHUP_SECONDS:
                # long stall: slip sim time instead of spiraling
                next_tick = now
                slipped += 1
                if slipped % 100 == 1:
                    log.warning("session pacing slipped %d times", slipped)
            if not pipe.env.state.done:
                pipe.tick()
            frame = state_frame_from_env(pipe.env, pipe.recording)
            try:
                await websocket.send(encode_message(frame))
            except Exception:
                break
            next_tick += dt
            delay = next_tick - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                await asyncio.sleep(0)

    def _finalize(self, session_id: str, hello: Hello, pipe: SessionPipeline, events: list) -> None:
        # a recording without StopRecording is discarded, finished ones saved
        pipe.discard_recording()
        try:
            if pipe.demonstrations:
                ds = DemoSet(task=hello.task, demonstrations=pipe.demonstrations)
                path = self.cfg.out_dir / f"demos-{session_id}.jsonl"
                save_demoset(ds, path)
                log.info("session %s: saved %d demonstrations to %s", session_id, len(pipe.demonstrations), path)
            if events:
                log_path = self.cfg.out_dir / f"session-{session_id}.log.jsonl"
                write_session_log(log_path, hello.task, hello.seed, events)
        except (OSError, DemoFormatError, DexhandError) as exc:
            log.error("session %s: failed to persist outputs: %s", session_id, exc)


def _now_iso() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


async def serve_async(cfg: ServiceConfig, ready: asyncio.Event | None = None) -> None:
    service = TeleopService(cfg)
    async with ws_serve(
        service.handler,
        cfg.host,
        cfg.port,
        process_request=service.process_request,
        max_size=1 << 20,
    ) as server:
        log.info("listening on %s:%d", cfg.host, cfg.port)
        if ready is not None:
            ready.set()
        await asyncio.Future()  # run until cancelled


def serve(cfg: ServiceConfig) -> None:
    """Blocking entry point used by the command line."""
    try:
        asyncio.run(serve_async(cfg))
    except KeyboardInterrupt:
        pass
