"""Hub daemon: HTTP+JSON command API, WebSocket stream, NDJSON-over-TCP stream.

Authentication is static per-site tokens (X-Site / X-Token headers).  A
request without credentials gets a read-only observer session so liveness
probes and dashboards work; every mutating command still goes through the
site allow-list gate.  Runs launched through the API execute in a worker
thread, wall-clock paced by default so remote consoles can watch live.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import scenarios
from .errors import (
    FedkitError,
    InvalidArgument,
    NoActiveRun,
    PermissionDenied,
    SchemaError,
    UnknownRun,
    UnknownSite,
)
from .experiment import Command, CommandKind, Registry, SiteDescriptor, parse_experiment, validate_layers
from .hub import Envelope, Hub, Session, TraceRecord
from .sync import run_experiment

log = logging.getLogger(__name__)

STREAM_BATCH_MS = 100  # console stream batching default


class HubServer:
    """Shared state between the HTTP app, the WS stream, and the TCP listener."""

    def __init__(self, registry: Registry, pace: float = 1.0):
        observer = SiteDescriptor(
            id="__observer__",
            allow_list=frozenset({CommandKind.GET_STATUS, CommandKind.LIST_RESOURCES, CommandKind.QUERY_TRACE}),
        )
        sites = dict(registry.sites)
        sites[observer.id] = observer
        self.registry = Registry(model=registry.model, sites=sites, participants=dict(registry.participants))
        self.hub = Hub(self.registry)
        self.default_pace = pace
        self._operator_sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._run_threads: dict[str, threading.Thread] = {}
        self._run_errors: dict[str, str] = {}

    # -- session handling -----------------------------------------------------
    def operator_session(self, site: str | None, token: str | None) -> Session:
        site_id = site or "__observer__"
        with self._lock:
            cached = self._operator_sessions.get(site_id)
            if cached is not None:
                return cached
            session = self.hub.register_operator(f"api:{site_id}", site_id, token)
            self._operator_sessions[site_id] = session
            return session

    # -- run lifecycle ----------------------------------------------------------
    def launch(self, document: Any, mode: str | None, seed: int | None, pace: float | None) -> dict:
        if isinstance(document, str):
            document = scenarios.scenario_text(document)
        exp = parse_experiment(document, self.hub.registry)
        report = validate_layers(exp)
        if not report.ok:
            raise SchemaError("invalid-experiment", json.dumps(report.to_dict()))
        if self.hub.active_run is not None:
            raise InvalidArgument("a run is already active")
        merged = Registry(
            model=exp.registry.model,
            sites={**self.registry.sites, **dict(exp.registry.sites)},
            participants=dict(exp.registry.participants),
        )
        self.hub.registry = merged
        done = threading.Event()
        holder: dict[str, Any] = {}

        def work():
            try:
                result = run_experiment(
                    exp, mode=mode, seed=seed, hub=self.hub,
                    pace=self.default_pace if pace is None else pace,
                )
                holder["run_id"] = result.run_id
            except FedkitError as exc:
                log.error("run faulted: %s", exc)
                holder["error"] = str(exc)
            finally:
                done.set()

        thread = threading.Thread(target=work, name="fedkit-run", daemon=True)
        thread.start()
        # wait for the run to exist so the response can carry its id
        while self.hub.active_run is None and not done.is_set():
            done.wait(0.001)
        run = self.hub.active_run
        if run is None:
            raise InvalidArgument(holder.get("error", "run failed to start"))
        self._run_threads[run.run_id] = thread
        return {"run_id": run.run_id, "state": run.state.value}


def _error_response(exc: Exception) -> JSONResponse:
    mapping = [
        (PermissionDenied, 403),
        (UnknownRun, 404),
        (UnknownSite, 404),
        (NoActiveRun, 409),
        (InvalidArgument, 400),
        (SchemaError, 422),
    ]
    for cls, status in mapping:
        if isinstance(exc, cls):
            return JSONResponse(status_code=status, content={"error": type(exc).__name__, "detail": str(exc)})
    return JSONResponse(status_code=500, content={"error": type(exc).__name__, "detail": str(exc)})


def create_app(server: HubServer, console_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="fedkit hub", version="1")
    hub = server.hub

    def session_for(request: Request) -> Session:
        return server.operator_session(request.headers.get("x-site"), request.headers.get("x-token"))

    @app.exception_handler(FedkitError)
    async def fedkit_error_handler(request: Request, exc: FedkitError):
        return _error_response(exc)

    @app.get("/api/v1/resources")
    async def resources(request: Request):
        session = session_for(request)
        return hub.execute_command(session, Command(CommandKind.LIST_RESOURCES)).data

    @app.get("/api/v1/session")
    async def session_info(request: Request):
        session = session_for(request)
        return {
            "operator": session.subject_id,
            "site": session.site_id,
            "granted_commands": sorted(k.value for k in session.granted_commands),
        }

    @app.get("/api/v1/scenarios")
    async def scenario_list():
        return {"scenarios": scenarios.list_scenarios()}

    @app.post("/api/v1/validate")
    async def validate(request: Request):
        body = await request.json()
        document = body.get("experiment")
        if document is None:
            raise InvalidArgument("body requires an experiment document or scenario name")
        if isinstance(document, str):
            document = scenarios.scenario_text(document)
        exp = parse_experiment(document, hub.registry)
        return validate_layers(exp).to_dict()

    @app.post("/api/v1/runs")
    async def start_run(request: Request):
        session = session_for(request)
        if CommandKind.START_EXPERIMENT not in session.granted_commands:
            raise PermissionDenied(f"start_experiment not granted to {session.subject_id}")
        body = await request.json()
        document = body.get("experiment")
        if document is None:
            raise InvalidArgument("body requires an experiment document or scenario name")
        info = await asyncio.to_thread(
            server.launch, document, body.get("mode"), body.get("seed"), body.get("pace")
        )
        return JSONResponse(status_code=201, content=info)

    @app.get("/api/v1/runs/{run_id}/status")
    async def run_status(run_id: str, request: Request):
        session = session_for(request)
        return hub.execute_command(session, Command(CommandKind.GET_STATUS, {"run": run_id})).data

    @app.post("/api/v1/runs/{run_id}/commands")
    async def run_command(run_id: str, request: Request):
        session = session_for(request)
        body = await request.json()
        try:
            kind = CommandKind(body.get("kind"))
        except ValueError:
            raise InvalidArgument(f"unknown command kind {body.get('kind')!r}")
        args = dict(body.get("args") or {})
        args.setdefault("run", run_id)
        if kind in (CommandKind.SET_VALUE,):
            args.pop("run", None)  # set_value applies to the active run
        result = hub.execute_command(session, Command(kind, args))
        return {"ok": result.ok, "data": dict(result.data)}

    @app.get("/api/v1/trace")
    async def trace(
        request: Request,
        run: str = Query(...),
        topic: str = Query("*"),
        from_ns: int | None = Query(None),
        to_ns: int | None = Query(None),
    ):
        session = session_for(request)
        args: dict[str, Any] = {"run": run, "topic": topic}
        if from_ns is not None:
            args["from_ns"] = from_ns
        if to_ns is not None:
            args["to_ns"] = to_ns
        return hub.execute_command(session, Command(CommandKind.QUERY_TRACE, args)).data

    @app.websocket("/api/v1/stream")
    async def stream(websocket: WebSocket):
        await websocket.accept()
        topic_glob = websocket.query_params.get("topic", "*")
        loop = asyncio.get_running_loop()
        queue: asyncio.Queue[dict] = asyncio.Queue()

        def on_record(record: TraceRecord):
            loop.call_soon_threadsafe(queue.put_nowait, record.to_dict())

        cancel = hub.subscribe_stream(on_record)
        seq = 0
        import fnmatch

        try:
            while True:
                batch: list[dict] = []
                try:
                    batch.append(await asyncio.wait_for(queue.get(), timeout=1.0))
                except asyncio.TimeoutError:
                    await websocket.send_text(
                        Envelope(type="stream", session="hub", seq=seq, payload={"records": []}).to_json()
                    )
                    seq += 1
                    continue
                await asyncio.sleep(STREAM_BATCH_MS / 1000)
                while not queue.empty():
                    batch.append(queue.get_nowait())
                batch = [r for r in batch if fnmatch.fnmatchcase(r["topic"], topic_glob)]
                sim_time = batch[-1]["sim_time_ns"] if batch else 0
                envelope = Envelope(
                    type="stream", session="hub", seq=seq, sim_time_ns=sim_time, payload={"records": batch}
                )
                seq += 1
                await websocket.send_text(envelope.to_json())
        except WebSocketDisconnect:
            pass
        finally:
            cancel()

    if console_dir is not None and Path(console_dir).is_dir():
        app.mount("/console", StaticFiles(directory=str(console_dir), html=True), name="console")

    return app


# ---------------------------------------------------------------------------
# NDJSON over TCP: the same envelopes, one JSON document per line
# ---------------------------------------------------------------------------

class TcpStreamServer:
    def __init__(self, server: HubServer):
        self.server = server
        self._server: asyncio.base_events.Server | None = None

    async def start(self, host: str, port: int) -> None:
        self._server = await asyncio.start_server(self._handle, host, port)

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        hub = self.server.hub
        loop = asyncio.get_running_loop()
        queue: asyncio.Queue[dict] = asyncio.Queue()
        cancel = hub.subscribe_stream(lambda record: loop.call_soon_threadsafe(queue.put_nowait, record.to_dict()))
        session: Session | None = None
        last_seq = -1
        out_seq = 0

        async def pump():
            nonlocal out_seq
            while True:
                record = await queue.get()
                env = Envelope(
                    type="stream", session=session.session_id if session else "hub", seq=out_seq,
                    sim_time_ns=record["sim_time_ns"], payload={"records": [record]},
                )
                out_seq += 1
                writer.write((env.to_json() + "\n").encode("utf-8"))
                await writer.drain()

        pump_task: asyncio.Task | None = None
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                envelope: Envelope | None = None
                try:
                    envelope = Envelope.from_json(line.decode("utf-8").strip())
                    if envelope.seq <= last_seq:
                        raise SchemaError("stale-seq", f"envelope seq {envelope.seq} <= {last_seq}")
                    last_seq = envelope.seq
                    reply = self._dispatch(envelope)
                    if envelope.type == "join" and reply.get("ok"):
                        session = hub.session(reply["session"])
                        if pump_task is None:
                            pump_task = asyncio.create_task(pump())
                except (FedkitError, SchemaError) as exc:
                    reply = {"ok": False, "error": type(exc).__name__, "detail": str(exc)}
                kind = "join_ack" if envelope is not None and envelope.type == "join" else "command_result"
                response = Envelope(
                    type=kind, session=session.session_id if session else "", seq=out_seq, payload=reply
                )
                out_seq += 1
                writer.write((response.to_json() + "\n").encode("utf-8"))
                await writer.drain()
        except (ConnectionResetError, asyncio.IncompleteReadError):
            pass
        finally:
            cancel()
            if pump_task is not None:
                pump_task.cancel()
            if session is not None:
                hub.unregister(session)
            writer.close()

    def _dispatch(self, envelope: Envelope) -> dict:
        hub = self.server.hub
        payload = dict(envelope.payload)
        if envelope.type == "join":
            if payload.get("role") == "participant":
                descriptor = hub.registry.participants.get(str(payload.get("id")))
                if descriptor is None:
                    raise InvalidArgument(f"participant {payload.get('id')!r} is not declared on this hub")
                session = hub.register(descriptor)
            else:
                session = hub.register_operator(
                    str(payload.get("id", "tcp-operator")), str(payload.get("site", "__observer__")),
                    payload.get("token"),
                )
            return {"ok": True, "session": session.session_id, "granted": sorted(k.value for k in session.granted_commands)}
        if envelope.type == "publish":
            session = hub.session(envelope.session)
            if session is None:
                raise PermissionDenied("join before publishing")
            from . import model as im

            topic = str(payload.get("topic"))
            entry = hub.registry.model.entry(topic)
            unit = hub.registry.model.units.get(str(payload.get("unit", ""))) or (
                entry.unit if entry is not None else im.DIMENSIONLESS
            )
            sample = im.SignalSample(
                topic=topic,
                sim_time_ns=int(envelope.sim_time_ns),
                value=payload.get("value"),
                unit=unit,
                source=session.subject_id,
                seq=int(payload.get("seq", 0)),
                quality=im.Quality(str(payload.get("quality", "good"))),
            )
            store_seq = hub.publish(session, sample)
            return {"ok": True, "store_seq": store_seq}
        if envelope.type == "command":
            session = hub.session(envelope.session)
            if session is None:
                raise PermissionDenied("join before issuing commands")
            kind = CommandKind(str(payload.get("kind")))
            result = hub.execute_command(session, Command(kind, dict(payload.get("args") or {})))
            return {"ok": result.ok, "data": dict(result.data)}
        raise SchemaError("bad-envelope-type", f"{envelope.type} not accepted on this stream")


def serve(registry: Registry, host: str, port: int, console_dir: str | None = None, pace: float = 1.0) -> None:
    """Run the hub daemon until interrupted (HTTP on port, NDJSON TCP on port+1)."""
    import uvicorn

    server = HubServer(registry, pace=pace)
    tcp = TcpStreamServer(server)
    app = create_app(server, console_dir=console_dir)

    @app.on_event("startup")
    async def _start_tcp():
        await tcp.start(host, port + 1)
        log.info("NDJSON stream on %s:%d", host, port + 1)

    @app.on_event("shutdown")
    async def _stop_tcp():
        await tcp.stop()

    uvicorn.run(app, host=host, port=port, log_level="warning")
