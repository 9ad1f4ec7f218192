"""The consortium hub: sessions, topic routing, trace store, command gateway.

One logical hub per federation.  Participants publish offered topics, which
are appended to the run's append-only trace store and forwarded along the
experiment wiring; operators act through a fixed command set gated by each
site's allow-list (PaaS-style: a curated selection, never full control).
Critical intra-site HIL exchange never traverses these code paths.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping

from . import model as im
from .errors import (
    DuplicateParticipant,
    InvalidArgument,
    NoActiveRun,
    NotOffered,
    PermissionDenied,
    SchemaError,
    StaleSeq,
    UnknownRun,
    UnknownSite,
)
from .experiment import Command, CommandKind, ParticipantDescriptor, Registry

TRACE_CSV_HEADER = "sim_time_ns,topic,value,unit,quality,source,seq,wall_time_ns"


def _csv_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class TraceRecord:
    sample: im.SignalSample
    wall_time_ns: int
    run_id: str
    store_seq: int = 0

    def csv_row(self) -> str:
        s = self.sample
        return (
            f"{s.sim_time_ns},{s.topic},{_csv_value(s.value)},{s.unit.symbol},"
            f"{s.quality.value},{s.source},{s.seq},{self.wall_time_ns}"
        )

    def to_dict(self) -> dict[str, Any]:
        s = self.sample
        return {
            "sim_time_ns": s.sim_time_ns,
            "topic": s.topic,
            "value": s.value,
            "unit": s.unit.symbol,
            "quality": s.quality.value,
            "source": s.source,
            "seq": s.seq,
            "wall_time_ns": self.wall_time_ns,
        }


class TraceStore:
    """Append-only, per-run record log with a total order assigned at append.

    Concurrent appends are serialized by an internal lock; rows are never
    mutated or removed.  (run, source, topic, seq) is unique.
    """

    def __init__(self, run_id: str):
        self.run_id = run_id
        self._rows: list[TraceRecord] = []
        self._seen: set[tuple[str, str, int]] = set()
        self._last_seq: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._rows)

    def append(self, sample: im.SignalSample, wall_time_ns: int = 0, dedupe: bool = False) -> int | None:
        """Append one sample; returns the assigned store sequence.

        With dedupe=True an already-present (source, topic, seq) is skipped
        (returns None) instead of raising StaleSeq: replication semantics.
        """
        key = (sample.source, sample.topic, sample.seq)
        with self._lock:
            if key in self._seen:
                if dedupe:
                    return None
                raise StaleSeq(f"{sample.source}/{sample.topic} seq {sample.seq} already stored")
            last = self._last_seq.get(key[:2])
            if last is not None and sample.seq <= last and not dedupe:
                raise StaleSeq(f"{sample.source}/{sample.topic} seq {sample.seq} <= {last}")
            store_seq = len(self._rows)
            self._rows.append(TraceRecord(sample, wall_time_ns, self.run_id, store_seq))
            self._seen.add(key)
            self._last_seq[key[:2]] = max(last or -1, sample.seq)
            return store_seq

    def rows(self) -> list[TraceRecord]:
        return list(self._rows)

    def query(self, topic_glob: str = "*", from_ns: int | None = None, to_ns: int | None = None) -> list[TraceRecord]:
        """Records matching the filter in (sim_time, source, seq) order; [from, to) range."""
        out = [
            r
            for r in self._rows
            if fnmatch.fnmatchcase(r.sample.topic, topic_glob)
            and (from_ns is None or r.sample.sim_time_ns >= from_ns)
            and (to_ns is None or r.sample.sim_time_ns < to_ns)
        ]
        out.sort(key=lambda r: (r.sample.sim_time_ns, r.sample.source, r.sample.seq))
        return out

    def to_csv(self) -> str:
        lines = [TRACE_CSV_HEADER]
        lines += [r.csv_row() for r in self.query()]
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Wire protocol envelope
# ---------------------------------------------------------------------------

ENVELOPE_TYPES = ("join", "join_ack", "publish", "grant", "request_step", "command", "command_result", "stream")
PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class Envelope:
    type: str
    session: str
    seq: int
    sim_time_ns: int = 0
    payload: Mapping[str, Any] = field(default_factory=dict)
    v: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.type not in ENVELOPE_TYPES:
            raise SchemaError("bad-envelope-type", f"unknown envelope type {self.type!r}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "v": self.v,
                "type": self.type,
                "session": self.session,
                "seq": self.seq,
                "sim_time_ns": self.sim_time_ns,
                "payload": dict(self.payload),
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "Envelope":
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError("syntax", f"bad envelope: {exc}") from exc
        if not isinstance(raw, dict):
            raise SchemaError("bad-envelope", "envelope must be an object")
        unknown = set(raw) - {"v", "type", "session", "seq", "sim_time_ns", "payload"}
        if unknown:
            raise SchemaError("unknown-field", f"unexpected envelope field(s) {sorted(unknown)}")
        if raw.get("v") != PROTOCOL_VERSION:
            raise SchemaError("bad-version", f"unsupported protocol version {raw.get('v')!r}")
        return cls(
            type=str(raw.get("type", "")),
            session=str(raw.get("session", "")),
            seq=int(raw.get("seq", 0)),
            sim_time_ns=int(raw.get("sim_time_ns", 0)),
            payload=raw.get("payload") or {},
        )


# ---------------------------------------------------------------------------
# Sessions, runs, the hub itself
# ---------------------------------------------------------------------------

class Role(str, Enum):
    PARTICIPANT = "participant"
    OPERATOR = "operator"


@dataclass(frozen=True)
class Session:
    session_id: str
    subject_id: str  # participant or operator id
    site_id: str
    role: Role
    granted_commands: frozenset[CommandKind]


class RunState(str, Enum):
    RUNNING = "running"
    STOPPED = "stopped"
    COMPLETED = "completed"
    FAULTED = "faulted"


@dataclass
class Run:
    run_id: str
    experiment_id: str
    state: RunState
    store: TraceStore
    sim_time_ns: int = 0
    pending_setpoints: list[im.SignalSample] = field(default_factory=list)
    stop_requested: bool = False


@dataclass(frozen=True)
class CommandResult:
    ok: bool
    data: Mapping[str, Any] = field(default_factory=dict)


class Hub:
    """In-process consortium hub.

    Deterministic runners drive delivery order themselves (sim order, never
    arrival order); the hub provides sessions, the store, command gating,
    and replication.  ``wall_clock`` injects time for trace records; virtual
    runs pass a constant 0 so exports hash identically across machines.
    """

    def __init__(
        self,
        registry: Registry,
        wall_clock: Callable[[], int] | None = None,
    ):
        self.registry = registry
        self._wall = wall_clock if wall_clock is not None else lambda: time.time_ns()
        self._sessions: dict[str, Session] = {}
        self._by_subject: dict[str, str] = {}
        self._runs: dict[str, Run] = {}
        self._active_run: str | None = None
        self._run_counter = 0
        self._lock = threading.RLock()
        self._stream_subscribers: list[Callable[[TraceRecord], None]] = []

    # -- sessions -----------------------------------------------------------
    def register(self, descriptor: ParticipantDescriptor) -> Session:
        """Create a participant session; grants come from the site allow-list."""
        with self._lock:
            site = self.registry.sites.get(descriptor.site_id)
            if site is None:
                raise UnknownSite(descriptor.site_id)
            if descriptor.id in self._by_subject:
                raise DuplicateParticipant(descriptor.id)
            session = Session(
                session_id=f"s{len(self._sessions)}",
                subject_id=descriptor.id,
                site_id=site.id,
                role=Role.PARTICIPANT,
                granted_commands=frozenset(site.allow_list),
            )
            self._sessions[session.session_id] = session
            self._by_subject[descriptor.id] = session.session_id
            return session

    def register_operator(self, operator_id: str, site_id: str, token: str | None = None) -> Session:
        """Create an operator session after checking the site's static token."""
        with self._lock:
            site = self.registry.sites.get(site_id)
            if site is None:
                raise UnknownSite(site_id)
            if site.token is not None and token != site.token:
                raise PermissionDenied(f"bad token for site {site_id}")
            if operator_id in self._by_subject:
                raise DuplicateParticipant(operator_id)
            session = Session(
                session_id=f"s{len(self._sessions)}",
                subject_id=operator_id,
                site_id=site_id,
                role=Role.OPERATOR,
                granted_commands=frozenset(site.allow_list),
            )
            self._sessions[session.session_id] = session
            self._by_subject[operator_id] = session.session_id
            return session

    def unregister(self, session: Session) -> None:
        with self._lock:
            self._sessions.pop(session.session_id, None)
            self._by_subject.pop(session.subject_id, None)

    def session(self, session_id: str) -> Session | None:
        return self._sessions.get(session_id)

    # -- runs ----------------------------------------------------------------
    def start_run(self, experiment_id: str) -> Run:
        with self._lock:
            self._run_counter += 1
            run_id = f"run-{self._run_counter:04d}"
            run = Run(run_id=run_id, experiment_id=experiment_id, state=RunState.RUNNING, store=TraceStore(run_id))
            self._runs[run_id] = run
            self._active_run = run_id
            return run

    def finish_run(self, run_id: str, state: RunState = RunState.COMPLETED) -> None:
        with self._lock:
            run = self._runs.get(run_id)
            if run is not None:
                run.state = state
            if self._active_run == run_id:
                self._active_run = None

    def run(self, run_id: str) -> Run:
        run = self._runs.get(run_id)
        if run is None:
            raise UnknownRun(run_id)
        return run

    def runs(self) -> list[Run]:
        return list(self._runs.values())

    @property
    def active_run(self) -> Run | None:
        return self._runs.get(self._active_run) if self._active_run else None

    # -- publish / subscribe --------------------------------------------------
    def subscribe_stream(self, callback: Callable[[TraceRecord], None]) -> Callable[[], None]:
        self._stream_subscribers.append(callback)

        def cancel():
            if callback in self._stream_subscribers:
                self._stream_subscribers.remove(callback)

        return cancel

    def _notify(self, record: TraceRecord) -> None:
        for callback in list(self._stream_subscribers):
            callback(record)

    def publish(self, session: Session, sample: im.SignalSample, run_id: str | None = None) -> int:
        """Append an offered sample to the run's store; returns the store seq."""
        if session.session_id not in self._sessions:
            raise PermissionDenied("session not active")
        part = self.registry.participants.get(session.subject_id)
        offered = part.offers if part is not None else ()
        if sample.topic not in offered:
            raise NotOffered(f"{session.subject_id} does not offer {sample.topic}")
        run = self.run(run_id) if run_id else self.active_run
        if run is None:
            raise NoActiveRun("publish requires an active run")
        store_seq = run.store.append(sample, self._wall())
        record = run.store.rows()[store_seq]
        self._notify(record)
        return store_seq

    def record_sample(self, run: Run, sample: im.SignalSample) -> int:
        """Runner-side append (already validated/ordered by the sync module)."""
        store_seq = run.store.append(sample, self._wall())
        self._notify(run.store.rows()[store_seq])
        return store_seq

    # -- commands --------------------------------------------------------------
    def execute_command(self, session: Session, cmd: Command) -> CommandResult:
        """Gate and execute one command; denial leaves observable state untouched."""
        if session.session_id not in self._sessions:
            raise PermissionDenied("session not active")
        if cmd.kind not in session.granted_commands:
            raise PermissionDenied(f"{cmd.kind.value} not granted to {session.subject_id}")
        handler = {
            CommandKind.START_EXPERIMENT: self._cmd_start,
            CommandKind.STOP_EXPERIMENT: self._cmd_stop,
            CommandKind.SET_VALUE: self._cmd_set_value,
            CommandKind.QUERY_TRACE: self._cmd_query_trace,
            CommandKind.GET_STATUS: self._cmd_get_status,
            CommandKind.LIST_RESOURCES: self._cmd_list_resources,
        }[cmd.kind]
        return handler(session, dict(cmd.arguments))

    def _cmd_start(self, session: Session, args: dict) -> CommandResult:
        run = self.start_run(str(args.get("experiment", "adhoc")))
        return CommandResult(ok=True, data={"run_id": run.run_id, "state": run.state.value})

    def _cmd_stop(self, session: Session, args: dict) -> CommandResult:
        run = self.active_run if "run" not in args else self.run(str(args["run"]))
        if run is None or run.state is not RunState.RUNNING:
            raise NoActiveRun("stop_experiment requires a running experiment")
        run.stop_requested = True
        return CommandResult(ok=True, data={"run_id": run.run_id})

    def _cmd_set_value(self, session: Session, args: dict) -> CommandResult:
        run = self.active_run
        if run is None or run.state is not RunState.RUNNING:
            raise NoActiveRun("set_value requires a running experiment")
        topic = args.get("topic")
        if not topic:
            raise InvalidArgument("set_value requires topic")
        entry = self.registry.model.entry(str(topic))
        if entry is None or entry.kind is not im.Kind.SETPOINT:
            raise InvalidArgument(f"{topic} is not a setpoint in the canonical model")
        if "value" not in args:
            raise InvalidArgument("set_value requires value")
        try:
            value = float(args["value"])
        except (TypeError, ValueError) as exc:
            raise InvalidArgument(f"set_value value must be numeric, got {args['value']!r}") from exc
        unit_symbol = args.get("unit", entry.unit.symbol)
        unit = self.registry.model.units.get(str(unit_symbol))
        if unit is None:
            raise InvalidArgument(f"unknown unit {unit_symbol!r}")
        if unit.base_symbol != entry.unit.base_symbol:
            raise InvalidArgument(f"unit {unit.symbol} incompatible with {entry.unit.symbol}")
        canonical_value = entry.unit.from_base(unit.to_base(value))
        sample = im.SignalSample(
            topic=str(topic),
            sim_time_ns=run.sim_time_ns,  # restamped at the applying macro boundary
            value=canonical_value,
            unit=entry.unit,
            source=f"operator:{session.subject_id}",
            seq=len(run.pending_setpoints),
            quality=im.Quality.GOOD,
        )
        run.pending_setpoints.append(sample)
        return CommandResult(ok=True, data={"topic": str(topic), "value": canonical_value, "applied": "next-macro-step"})

    def _cmd_query_trace(self, session: Session, args: dict) -> CommandResult:
        run = self.run(str(args["run"])) if "run" in args else self.active_run
        if run is None:
            raise UnknownRun("no run specified and none active")
        records = run.store.query(
            topic_glob=str(args.get("topic", "*")),
            from_ns=int(args["from_ns"]) if "from_ns" in args else None,
            to_ns=int(args["to_ns"]) if "to_ns" in args else None,
        )
        return CommandResult(ok=True, data={"records": [r.to_dict() for r in records]})

    def _cmd_get_status(self, session: Session, args: dict) -> CommandResult:
        run = self.active_run
        if "run" in args:
            run = self.run(str(args["run"]))
        if run is None:
            return CommandResult(ok=True, data={"state": "idle"})
        return CommandResult(
            ok=True,
            data={
                "run_id": run.run_id,
                "state": run.state.value,
                "sim_time_ns": run.sim_time_ns,
                "rows": len(run.store),
            },
        )

    def _cmd_list_resources(self, session: Session, args: dict) -> CommandResult:
        return CommandResult(
            ok=True,
            data={
                "sites": sorted(s for s in self.registry.sites if not s.startswith("__")),
                "participants": sorted(self.registry.participants),
                "topics": [
                    {"name": e.name, "kind": e.kind.value, "unit": e.unit.symbol}
                    for e in self.registry.model.entries
                ],
                "commands": [k.value for k in CommandKind],
            },
        )

    # -- replication ------------------------------------------------------------
    def replicate(self, batch: Iterable[im.SignalSample], table: im.MappingTable, run_id: str | None = None) -> int:
        """Translate a site-local batch to canonical form and append atomically.

        Idempotent per (source, topic, seq): replayed records insert nothing.
        Any unmapped record aborts the whole batch before any insert.
        """
        run = self.run(run_id) if run_id else self.active_run
        if run is None:
            raise NoActiveRun("replication requires a run")
        translated = [im.to_canonical(s, table, self.registry.model) for s in batch]  # may raise UnmappedTopic
        inserted = 0
        wall = self._wall()
        for sample in translated:
            if run.store.append(sample, wall, dedupe=True) is not None:
                inserted += 1
                self._notify(run.store.rows()[-1])
        return inserted

    # -- observability -------------------------------------------------------------
    def state_fingerprint(self) -> str:
        """Hash over run states plus every store's content: gating side-effect probe."""
        digest = hashlib.sha256()
        for run_id in sorted(self._runs):
            run = self._runs[run_id]
            digest.update(f"{run_id}:{run.state.value}:{len(run.pending_setpoints)}:".encode())
            digest.update(run.store.content_hash().encode())
        digest.update(str(self._active_run).encode())
        return digest.hexdigest()
