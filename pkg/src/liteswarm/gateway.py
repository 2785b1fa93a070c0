"""OpenAI-compatible HTTP surface over an :class:`~liteswarm.engine.Engine`.

Each served model name maps to an agent or to ``swarm:<entry>``. The server
keeps conversation history itself: from the client's ``messages`` only the
final user message is used.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
import uuid
from typing import Any, Iterator, Optional

import uvicorn
from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse

from .agent import RunOptions
from .engine import Engine, GatewayConfig
from .errors import BindError

logger = logging.getLogger(__name__)

SHUTDOWN_GRACE = 30


def error_body(message: str, kind: str = "invalid_request_error") -> dict:
    return {"error": {"message": message, "type": kind}}


def _error(status: int, message: str, kind: str = "invalid_request_error") -> JSONResponse:
    return JSONResponse(error_body(message, kind), status_code=status)


class BadRequest(ValueError):
    pass


def validate_request(body: Any) -> dict:
    """Check a decoded chat request; returns the normalized fields."""
    if not isinstance(body, dict):
        raise BadRequest("request body must be a JSON object")
    model = body.get("model")
    if not isinstance(model, str) or not model:
        raise BadRequest("'model' must be a non-empty string")
    messages = body.get("messages")
    if not isinstance(messages, list) or not messages:
        raise BadRequest("'messages' must be a non-empty list")
    for i, m in enumerate(messages):
        if not isinstance(m, dict) or not isinstance(m.get("role"), str):
            raise BadRequest(f"messages[{i}] must be an object with a 'role'")
    last = messages[-1]
    if last["role"] != "user":
        raise BadRequest("the last message must have role 'user'")
    content = last.get("content")
    if isinstance(content, list):
        # content parts: keep the text ones
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict) and p.get("type") == "text")
    if not isinstance(content, str) or not content.strip():
        raise BadRequest("the last user message must have non-empty text content")
    stream = body.get("stream", False)
    if not isinstance(stream, bool):
        raise BadRequest("'stream' must be a boolean")
    user = body.get("user")
    if user is not None and (not isinstance(user, str) or not user):
        raise BadRequest("'user' must be a non-empty string")
    temperature = body.get("temperature")
    if temperature is not None and (isinstance(temperature, bool) or not isinstance(temperature, (int, float)) or not 0 <= temperature <= 2):
        raise BadRequest("'temperature' must be a number in [0, 2]")
    return {
        "model": model,
        "query": content,
        "stream": stream,
        "user": user or "default",
        "temperature": float(temperature) if temperature is not None else None,
    }


def completion_object(cid: str, created: int, model: str, content: str) -> dict:
    return {
        "id": cid,
        "object": "chat.completion",
        "created": created,
        "model": model,
        "choices": [
            {
                "index": 0,
                "message": {"role": "assistant", "content": content},
                "finish_reason": "stop",
            }
        ],
    }


def chunk_object(cid: str, created: int, model: str, delta: dict, finish_reason: Optional[str] = None) -> dict:
    return {
        "id": cid,
        "object": "chat.completion.chunk",
        "created": created,
        "model": model,
        "choices": [{"index": 0, "delta": delta, "finish_reason": finish_reason}],
    }


def sse(data: Any) -> str:
    payload = data if isinstance(data, str) else json.dumps(data, ensure_ascii=False, separators=(",", ":"))
    return f"data: {payload}\n\n"


def create_app(engine: Engine, config: GatewayConfig) -> FastAPI:
    app = FastAPI(title="liteswarm gateway", docs_url=None, redoc_url=None, openapi_url=None)
    served = dict(config.served)

    def authorized(request: Request) -> bool:
        if not config.bearer_token:
            return True
        return request.headers.get("authorization", "") == f"Bearer {config.bearer_token}"

    @app.get("/healthz")
    def healthz():
        return PlainTextResponse("ok")

    @app.get("/v1/models")
    def models(request: Request):
        if not authorized(request):
            return _error(401, "invalid bearer token", "authentication_error")
        return {"object": "list", "data": [{"id": name, "object": "model"} for name in served]}

    @app.post("/v1/chat/completions")
    async def chat_completions(request: Request):
        if not authorized(request):
            return _error(401, "invalid bearer token", "authentication_error")
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > config.request_body_limit:
            return _error(413, f"request body exceeds {config.request_body_limit} bytes")
        raw = await request.body()
        if len(raw) > config.request_body_limit:
            return _error(413, f"request body exceeds {config.request_body_limit} bytes")
        try:
            req = validate_request(json.loads(raw))
        except ValueError as exc:
            # json.JSONDecodeError is a ValueError too
            msg = str(exc) if isinstance(exc, BadRequest) else f"malformed JSON body: {exc}"
            return _error(400, msg)
        if req["model"] not in served:
            return _error(404, f"model not found: {req['model']}")
        target = served[req["model"]]
        options = RunOptions(user_id=req["user"], stream=req["stream"], temperature=req["temperature"])
        cid = f"chatcmpl-{uuid.uuid4().hex}"
        created = int(time.time())

        if not req["stream"]:
            try:
                result, _ = await run_in_threadpool(engine.run, target, req["query"], options)
            except Exception as exc:  # noqa: BLE001 - surfaced as server_error
                logger.exception("engine failed on %s", target)
                return _error(500, f"engine error: {exc}", "server_error")
            return completion_object(cid, created, req["model"], result.final_text)

        return StreamingResponse(
            _stream_events(engine, target, req["query"], options, cid, created, req["model"]),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache"},
        )

    return app


def _stream_events(engine: Engine, target: str, query: str, options: RunOptions,
                   cid: str, created: int, model: str) -> Iterator[str]:
    yield sse(chunk_object(cid, created, model, {"role": "assistant", "content": ""}))
    try:
        stream, _ = engine.run_stream(target, query, options)
        for delta in stream:
            if delta:
                yield sse(chunk_object(cid, created, model, {"content": delta}))
    except Exception as exc:  # noqa: BLE001 - the stream must still terminate cleanly
        logger.exception("engine failed while streaming %s", target)
        yield sse(chunk_object(cid, created, model, {"content": f"[error] {exc}"}))
    yield sse(chunk_object(cid, created, model, {}, "stop"))
    yield sse("[DONE]")


class GatewayServer:
    """A bound, runnable gateway. ``start`` runs it on a background thread."""

    def __init__(self, engine: Engine, config: GatewayConfig):
        self.engine = engine
        self.config = config
        host, port = config.host_port
        try:
            self.socket = socket.create_server((host, port), reuse_port=False)
        except OSError as exc:
            raise BindError(f"cannot bind {config.bind_address}: {exc}") from exc
        self.socket.setblocking(False)
        self.app = create_app(engine, config)
        self._server = uvicorn.Server(
            uvicorn.Config(
                self.app,
                log_level="warning",
                timeout_graceful_shutdown=SHUTDOWN_GRACE,
                lifespan="off",
            )
        )
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self.socket.getsockname()[1]

    @property
    def url(self) -> str:
        host = self.socket.getsockname()[0]
        return f"http://{host}:{self.port}"

    def serve_forever(self) -> None:
        """Block until SIGINT/SIGTERM or :meth:`stop`; drains in-flight requests."""
        self._server.run(sockets=[self.socket])

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self.serve_forever, name="liteswarm-gateway", daemon=True)
        self._thread.start()
        deadline = time.monotonic() + 10
        while not self._server.started:
            if not self._thread.is_alive() or time.monotonic() > deadline:
                raise RuntimeError("gateway failed to start")
            time.sleep(0.01)
        return self

    def stop(self, timeout: float = SHUTDOWN_GRACE + 5) -> None:
        self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout)
        self.socket.close()


def serve(config: GatewayConfig, engine: Engine) -> GatewayServer:
    missing = [t for t in config.served.values() if not engine.has_target(t)]
    if missing:
        raise ValueError(f"served targets not in engine: {missing}")
    return GatewayServer(engine, config).start()
