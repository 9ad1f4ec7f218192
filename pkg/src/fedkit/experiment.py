"""Machine-readable experiment descriptions and their five-layer validation.

An experiment document wires participants across sites, defines the stage
machine that drives the test, and picks a synchronization discipline.  The
validator classifies issues into five layers (conceptual, semantical,
syntactic, dynamic, technical); the runner refuses experiments whose report
carries errors unless forced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping

from . import model as im
from .errors import DocumentSyntaxError, SchemaError, UnknownTopic
from .netem import LinkModel, parse_link


class SyncMode(str, Enum):
    CONSERVATIVE = "conservative"
    BEST_EFFORT = "best_effort"
    WAVEFORM_RELAXATION = "waveform_relaxation"


class DomainKind(str, Enum):
    POWER_CONTINUOUS = "power_continuous"
    ICT_DISCRETE_EVENT = "ict_discrete_event"
    HIL_REALTIME = "hil_realtime"
    CONTROLLER = "controller"


class CommandKind(str, Enum):
    START_EXPERIMENT = "start_experiment"
    STOP_EXPERIMENT = "stop_experiment"
    SET_VALUE = "set_value"
    QUERY_TRACE = "query_trace"
    GET_STATUS = "get_status"
    LIST_RESOURCES = "list_resources"


@dataclass(frozen=True)
class Command:
    kind: CommandKind
    arguments: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ParticipantDescriptor:
    id: str
    site_id: str
    domain_kind: DomainKind
    step_ns: int
    offers: tuple[str, ...] = ()
    requires: tuple[str, ...] = ()
    realtime_deadline_ns: int | None = None
    model: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SiteDescriptor:
    id: str
    allow_list: frozenset[CommandKind] = frozenset()
    mapping: im.MappingTable | None = None
    links: Mapping[str, LinkModel] = field(default_factory=dict)  # peer site -> link
    token: str | None = None


@dataclass(frozen=True)
class Endpoint:
    participant: str
    topic: str


@dataclass(frozen=True)
class Route:
    src: Endpoint
    dst: Endpoint
    delay_steps: int = 1


@dataclass(frozen=True)
class Guard:
    """Either an elapsed-time guard or a held topic comparison."""

    elapsed_ns: int | None = None
    topic: str | None = None
    cmp: str | None = None  # one of < <= > >=
    threshold: float | None = None
    held_ns: int = 0

    @property
    def is_elapsed(self) -> bool:
        return self.elapsed_ns is not None

    def compare(self, value: float) -> bool:
        if self.cmp == "<":
            return value < self.threshold
        if self.cmp == "<=":
            return value <= self.threshold
        if self.cmp == ">":
            return value > self.threshold
        if self.cmp == ">=":
            return value >= self.threshold
        raise ValueError(f"bad comparator {self.cmp!r}")


@dataclass(frozen=True)
class Transition:
    guard: Guard
    target: str


@dataclass(frozen=True)
class Stage:
    id: str
    entry_actions: tuple[Command, ...] = ()
    transitions: tuple[Transition, ...] = ()


@dataclass(frozen=True)
class WRConfig:
    window_ns: int
    tol: float
    max_iter: int
    scheme: str = "jacobi"


@dataclass(frozen=True)
class ExperimentDescription:
    id: str
    sites: tuple[str, ...]
    participants: tuple[str, ...]
    routes: tuple[Route, ...]
    stages: tuple[Stage, ...]
    initial_stage: str
    sync_mode: SyncMode
    macro_step_ns: int
    duration_ns: int
    wr: WRConfig | None = None
    seed: int = 0

    def stage(self, stage_id: str) -> Stage | None:
        for stage in self.stages:
            if stage.id == stage_id:
                return stage
        return None


@dataclass(frozen=True)
class Registry:
    """Resolved descriptors the validator and runner operate against."""

    model: im.CanonicalModel
    sites: Mapping[str, SiteDescriptor] = field(default_factory=dict)
    participants: Mapping[str, ParticipantDescriptor] = field(default_factory=dict)

    def link(self, from_site: str, to_site: str) -> LinkModel | None:
        site = self.sites.get(from_site)
        if site is None:
            return None
        return site.links.get(to_site)


@dataclass(frozen=True)
class Experiment:
    """A parsed, self-contained experiment: description plus its registry."""

    description: ExperimentDescription
    registry: Registry
    raw: Mapping[str, Any] = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.description.id


EMPTY_MODEL = im.CanonicalModel(version="0", units={"1": im.DIMENSIONLESS}, entries=())


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "id",
    "sites",
    "participants",
    "routes",
    "stages",
    "initial_stage",
    "sync",
    "macro_step_ns",
    "duration_ns",
    "seed",
    "wr",
    "model",
}
_REQUIRED_KEYS = [
    "id",
    "sites",
    "participants",
    "routes",
    "stages",
    "initial_stage",
    "sync",
    "macro_step_ns",
    "duration_ns",
]
_PARTICIPANT_KEYS = {"id", "site", "kind", "step_ns", "offers", "requires", "realtime_deadline_ns", "model"}
_SITE_KEYS = {"id", "allow_list", "mapping", "links", "token"}
_ROUTE_KEYS = {"from", "to", "delay_steps"}
_STAGE_KEYS = {"id", "entry_actions", "transitions"}
_WR_KEYS = {"window_ns", "tol", "max_iter", "scheme"}
_ENTRY_ACTION_KINDS = {CommandKind.SET_VALUE, CommandKind.STOP_EXPERIMENT}


def _require(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise SchemaError("missing-field", f"required field {key}", where)
    return doc[key]


def _int_field(doc: Mapping[str, Any], key: str, where: str, minimum: int | None = None) -> int:
    value = _require(doc, key, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError("bad-type", f"{key} must be an integer", where)
    if minimum is not None and value < minimum:
        raise SchemaError("bad-value", f"{key} must be >= {minimum}", where)
    return value


def _endpoint(raw: Any, where: str) -> Endpoint:
    if isinstance(raw, Mapping):
        unknown = set(raw) - {"participant", "topic"}
        if unknown:
            raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", where)
        return Endpoint(str(_require(raw, "participant", where)), str(_require(raw, "topic", where)))
    if isinstance(raw, (list, tuple)) and len(raw) == 2:
        return Endpoint(str(raw[0]), str(raw[1]))
    raise SchemaError("bad-type", "endpoint must be {participant, topic} or a pair", where)


def _parse_guard(raw: Mapping[str, Any], where: str) -> Guard:
    if "elapsed_ns" in raw:
        unknown = set(raw) - {"elapsed_ns", "target"}
        if unknown:
            raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", where)
        elapsed = raw["elapsed_ns"]
        if isinstance(elapsed, bool) or not isinstance(elapsed, int) or elapsed < 0:
            raise SchemaError("bad-value", "elapsed_ns must be a non-negative integer", where)
        return Guard(elapsed_ns=elapsed)
    unknown = set(raw) - {"topic", "cmp", "threshold", "held_ns", "target"}
    if unknown:
        raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", where)
    for key in ("topic", "cmp", "threshold"):
        if key not in raw:
            raise SchemaError("missing-field", f"guard requires {key} (or elapsed_ns)", where)
    if raw["cmp"] not in ("<", "<=", ">", ">="):
        raise SchemaError("bad-value", f"comparator must be one of < <= > >=, got {raw['cmp']!r}", where)
    held = raw.get("held_ns", 0)
    if isinstance(held, bool) or not isinstance(held, int) or held < 0:
        raise SchemaError("bad-value", "held_ns must be a non-negative integer", where)
    return Guard(topic=str(raw["topic"]), cmp=str(raw["cmp"]), threshold=float(raw["threshold"]), held_ns=held)


def _parse_entry_action(raw: Any, where: str) -> Command:
    if not isinstance(raw, Mapping):
        raise SchemaError("bad-type", "entry action must be an object", where)
    kind_raw = _require(raw, "kind", where)
    try:
        kind = CommandKind(kind_raw)
    except ValueError as exc:
        raise SchemaError("bad-value", f"unknown command kind {kind_raw!r}", where) from exc
    if kind not in _ENTRY_ACTION_KINDS:
        raise SchemaError("bad-entry-action", f"{kind.value} cannot be a stage entry action", where)
    args = {k: v for k, v in raw.items() if k != "kind"}
    if kind is CommandKind.SET_VALUE:
        for key in ("topic", "value"):
            if key not in args:
                raise SchemaError("missing-field", f"set_value requires {key}", where)
    return Command(kind=kind, arguments=args)


def _parse_site(raw: Any, where: str, model: im.CanonicalModel) -> SiteDescriptor:
    if not isinstance(raw, Mapping):
        raise SchemaError("bad-type", "site must be an object (or an id string)", where)
    unknown = set(raw) - _SITE_KEYS
    if unknown:
        raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", where)
    site_id = str(_require(raw, "id", where))
    allow: set[CommandKind] = set()
    for k in raw.get("allow_list", []):
        try:
            allow.add(CommandKind(k))
        except ValueError as exc:
            raise SchemaError("bad-value", f"unknown command kind {k!r} in allow_list", where) from exc
    mapping = None
    if raw.get("mapping") is not None:
        mapping_doc = dict(raw["mapping"])
        mapping_doc.setdefault("site", site_id)
        mapping = im.load_table(mapping_doc, model)
    links: dict[str, LinkModel] = {}
    for i, link_raw in enumerate(raw.get("links", [])):
        if not isinstance(link_raw, Mapping) or "peer" not in link_raw:
            raise SchemaError("missing-field", "link requires peer", f"{where}.links[{i}]")
        peer = str(link_raw["peer"])
        if peer in links:
            raise SchemaError("duplicate-link", f"duplicate link to {peer}", f"{where}.links[{i}]")
        links[peer] = parse_link(dict(link_raw), site_id, peer)
    token = raw.get("token")
    return SiteDescriptor(
        id=site_id,
        allow_list=frozenset(allow),
        mapping=mapping,
        links=links,
        token=str(token) if token is not None else None,
    )


def _parse_participant(raw: Any, where: str) -> ParticipantDescriptor:
    if not isinstance(raw, Mapping):
        raise SchemaError("bad-type", "participant must be an object", where)
    unknown = set(raw) - _PARTICIPANT_KEYS
    if unknown:
        raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", where)
    try:
        kind = DomainKind(_require(raw, "kind", where))
    except ValueError as exc:
        raise SchemaError("bad-value", f"unknown participant kind {raw.get('kind')!r}", where) from exc
    step = _int_field(raw, "step_ns", where, minimum=1)
    offers = tuple(str(t) for t in raw.get("offers", []))
    requires = tuple(str(t) for t in raw.get("requires", []))
    overlap = set(offers) & set(requires)
    if overlap:
        raise SchemaError("offers-requires-overlap", f"topics {sorted(overlap)} both offered and required", where)
    deadline = raw.get("realtime_deadline_ns")
    if kind is DomainKind.HIL_REALTIME and deadline is None:
        raise SchemaError("missing-field", "hil_realtime participant requires realtime_deadline_ns", where)
    if kind is not DomainKind.HIL_REALTIME and deadline is not None:
        raise SchemaError("bad-value", "realtime_deadline_ns only valid for hil_realtime", where)
    return ParticipantDescriptor(
        id=str(_require(raw, "id", where)),
        site_id=str(_require(raw, "site", where)),
        domain_kind=kind,
        step_ns=step,
        offers=offers,
        requires=requires,
        realtime_deadline_ns=int(deadline) if deadline is not None else None,
        model=dict(raw.get("model", {})),
    )


def parse_experiment(document: str | Mapping[str, Any], registry: Registry | None = None) -> Experiment:
    """Parse an experiment document into a description plus resolved registry.

    Shape, typing, uniqueness, and multiplicity are enforced here; reference
    resolution (unknown participants, sites, stages, topics) is reported by
    :func:`validate_layers` so defective documents still parse.
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise DocumentSyntaxError(f"line {exc.lineno}: {exc.msg}", "experiment") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise SchemaError("not-an-object", "experiment document must be a JSON object", "experiment")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", "experiment")
    for key in _REQUIRED_KEYS:
        _require(doc, key, "experiment")

    try:
        sync_mode = SyncMode(doc["sync"])
    except ValueError as exc:
        raise SchemaError("bad-value", f"unknown sync mode {doc['sync']!r}", "experiment.sync") from exc
    macro = _int_field(doc, "macro_step_ns", "experiment", minimum=1)
    duration = _int_field(doc, "duration_ns", "experiment", minimum=1)
    if duration % macro != 0:
        raise SchemaError("duration-not-multiple", f"duration {duration} not a multiple of macro step {macro}", "experiment")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise SchemaError("bad-value", "seed must be a non-negative integer", "experiment.seed")

    canonical = registry.model if registry is not None else EMPTY_MODEL
    if doc.get("model") is not None:
        canonical = im.load_model(doc["model"])

    sites: dict[str, SiteDescriptor] = dict(registry.sites) if registry else {}
    site_ids: list[str] = []
    if not isinstance(doc["sites"], list):
        raise SchemaError("bad-type", "sites must be an array", "experiment.sites")
    for i, raw in enumerate(doc["sites"]):
        where = f"experiment.sites[{i}]"
        if isinstance(raw, str):
            site_ids.append(raw)  # resolved against the external registry, or flagged by the validator
            continue
        site = _parse_site(raw, where, canonical)
        if site.id in site_ids:
            raise SchemaError("duplicate-site", site.id, where)
        site_ids.append(site.id)
        sites[site.id] = site

    participants: dict[str, ParticipantDescriptor] = dict(registry.participants) if registry else {}
    participant_ids: list[str] = []
    if not isinstance(doc["participants"], list):
        raise SchemaError("bad-type", "participants must be an array", "experiment.participants")
    for i, raw in enumerate(doc["participants"]):
        where = f"experiment.participants[{i}]"
        part = _parse_participant(raw, where)
        if part.id in participant_ids:
            raise SchemaError("duplicate-participant", part.id, where)
        participant_ids.append(part.id)
        participants[part.id] = part

    routes: list[Route] = []
    if not isinstance(doc["routes"], list):
        raise SchemaError("bad-type", "routes must be an array", "experiment.routes")
    for i, raw in enumerate(doc["routes"]):
        where = f"experiment.routes[{i}]"
        if not isinstance(raw, Mapping):
            raise SchemaError("bad-type", "route must be an object", where)
        unknown = set(raw) - _ROUTE_KEYS
        if unknown:
            raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", where)
        src = _endpoint(_require(raw, "from", where), f"{where}.from")
        dst = _endpoint(_require(raw, "to", where), f"{where}.to")
        if src == dst:
            raise SchemaError("self-route", "route endpoints must differ", where)
        delay = raw.get("delay_steps", 1)
        if isinstance(delay, bool) or not isinstance(delay, int) or delay < 0:
            raise SchemaError("bad-value", "delay_steps must be a non-negative integer", where)
        routes.append(Route(src=src, dst=dst, delay_steps=delay))

    stages: list[Stage] = []
    stage_ids: set[str] = set()
    if not isinstance(doc["stages"], list):
        raise SchemaError("bad-type", "stages must be an array", "experiment.stages")
    for i, raw in enumerate(doc["stages"]):
        where = f"experiment.stages[{i}]"
        if not isinstance(raw, Mapping):
            raise SchemaError("bad-type", "stage must be an object", where)
        unknown = set(raw) - _STAGE_KEYS
        if unknown:
            raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", where)
        stage_id = str(_require(raw, "id", where))
        if stage_id in stage_ids:
            raise SchemaError("duplicate-stage", stage_id, where)
        stage_ids.add(stage_id)
        actions = tuple(
            _parse_entry_action(a, f"{where}.entry_actions[{j}]") for j, a in enumerate(raw.get("entry_actions", []))
        )
        transitions = []
        for j, t in enumerate(raw.get("transitions", [])):
            t_where = f"{where}.transitions[{j}]"
            if not isinstance(t, Mapping):
                raise SchemaError("bad-type", "transition must be an object", t_where)
            target = _require(t, "target", t_where)
            transitions.append(Transition(guard=_parse_guard(t, t_where), target=str(target)))
        stages.append(Stage(id=stage_id, entry_actions=actions, transitions=tuple(transitions)))

    wr = None
    if doc.get("wr") is not None:
        raw = doc["wr"]
        if not isinstance(raw, Mapping):
            raise SchemaError("bad-type", "wr must be an object", "experiment.wr")
        unknown = set(raw) - _WR_KEYS
        if unknown:
            raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", "experiment.wr")
        window = _int_field(raw, "window_ns", "experiment.wr", minimum=1)
        if window % macro != 0:
            raise SchemaError("bad-value", "wr window must be a positive multiple of macro_step_ns", "experiment.wr")
        tol = float(_require(raw, "tol", "experiment.wr"))
        if tol <= 0:
            raise SchemaError("bad-value", "wr tol must be > 0", "experiment.wr")
        max_iter = _int_field(raw, "max_iter", "experiment.wr", minimum=1)
        scheme = raw.get("scheme", "jacobi")
        if scheme != "jacobi":
            raise SchemaError("bad-value", f"unsupported wr scheme {scheme!r}", "experiment.wr")
        wr = WRConfig(window_ns=window, tol=tol, max_iter=max_iter, scheme=str(scheme))

    description = ExperimentDescription(
        id=str(doc["id"]),
        sites=tuple(site_ids),
        participants=tuple(participant_ids),
        routes=tuple(routes),
        stages=tuple(stages),
        initial_stage=str(doc["initial_stage"]),
        sync_mode=sync_mode,
        macro_step_ns=macro,
        duration_ns=duration,
        wr=wr,
        seed=seed,
    )
    resolved = Registry(model=canonical, sites=sites, participants=participants)
    return Experiment(description=description, registry=resolved, raw=dict(doc))


def load_experiment(path: str, registry: Registry | None = None) -> Experiment:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_experiment(fh.read(), registry)


_SITES_DOC_KEYS = {"version", "model", "sites"}


def parse_sites(document: str | Mapping[str, Any]) -> Registry:
    """Parse a sites.json registry: canonical model plus site descriptors."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise DocumentSyntaxError(f"line {exc.lineno}: {exc.msg}", "sites") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise SchemaError("not-an-object", "sites document must be a JSON object", "sites")
    unknown = set(doc) - _SITES_DOC_KEYS
    if unknown:
        raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", "sites")
    if "sites" not in doc or not isinstance(doc["sites"], list):
        raise SchemaError("missing-field", "sites document requires a sites array", "sites")
    model = im.load_model(doc["model"]) if doc.get("model") is not None else EMPTY_MODEL
    sites: dict[str, SiteDescriptor] = {}
    for i, raw in enumerate(doc["sites"]):
        site = _parse_site(raw, f"sites[{i}]", model)
        if site.id in sites:
            raise SchemaError("duplicate-site", site.id, f"sites[{i}]")
        sites[site.id] = site
    return Registry(model=model, sites=sites, participants={})


def load_sites(path: str) -> Registry:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sites(fh.read())


# ---------------------------------------------------------------------------
# Five-layer validation
# ---------------------------------------------------------------------------

LAYERS = ("conceptual", "semantical", "syntactic", "dynamic", "technical")


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Issue:
    severity: Severity
    code: str
    message: str
    location: str = ""


@dataclass
class ValidationReport:
    layers: dict[str, list[Issue]] = field(default_factory=lambda: {layer: [] for layer in LAYERS})

    def add(self, layer: str, severity: Severity, code: str, message: str, location: str = "") -> None:
        self.layers[layer].append(Issue(severity, code, message, location))

    def errors(self) -> list[tuple[str, Issue]]:
        return [(layer, i) for layer in LAYERS for i in self.layers[layer] if i.severity is Severity.ERROR]

    def warnings(self) -> list[tuple[str, Issue]]:
        return [(layer, i) for layer in LAYERS for i in self.layers[layer] if i.severity is Severity.WARNING]

    @property
    def ok(self) -> bool:
        return not self.errors()

    def to_dict(self) -> dict[str, Any]:
        return {
            "valid": self.ok,
            "layers": {
                layer: [
                    {"severity": i.severity.value, "code": i.code, "message": i.message, "location": i.location}
                    for i in issues
                ]
                for layer, issues in self.layers.items()
            },
        }

    def to_text(self) -> str:
        lines = []
        for layer in LAYERS:
            issues = self.layers[layer]
            lines.append(f"{layer}: {'ok' if not issues else ''}")
            for issue in issues:
                lines.append(f"  [{issue.severity.value}] {issue.code}: {issue.message}"
                             + (f" (at {issue.location})" if issue.location else ""))
        lines.append("result: " + ("VALID" if self.ok else "INVALID"))
        return "\n".join(lines)


def _reachable_stages(desc: ExperimentDescription) -> set[str]:
    ids = {s.id for s in desc.stages}
    if desc.initial_stage not in ids:
        return set()
    seen = {desc.initial_stage}
    frontier = [desc.initial_stage]
    while frontier:
        stage = desc.stage(frontier.pop())
        if stage is None:
            continue
        for t in stage.transitions:
            if t.target in ids and t.target not in seen:
                seen.add(t.target)
                frontier.append(t.target)
    return seen


def _zero_delay_cycle(desc: ExperimentDescription) -> list[str] | None:
    """Find a cycle in the participant graph restricted to delay_steps == 0 edges."""
    adjacency: dict[str, list[str]] = {}
    for route in desc.routes:
        if route.delay_steps == 0:
            adjacency.setdefault(route.src.participant, []).append(route.dst.participant)
    state: dict[str, int] = {}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        state[node] = 1
        stack.append(node)
        for nxt in adjacency.get(node, []):
            if state.get(nxt, 0) == 1:
                return stack[stack.index(nxt):] + [nxt]
            if state.get(nxt, 0) == 0:
                cycle = visit(nxt)
                if cycle:
                    return cycle
        stack.pop()
        state[node] = 2
        return None

    for node in list(adjacency):
        if state.get(node, 0) == 0:
            cycle = visit(node)
            if cycle:
                return cycle
    return None


def validate_layers(exp: Experiment, registry: Registry | None = None) -> ValidationReport:
    """Deterministic five-layer report; issues are data, never raised."""
    desc = exp.description
    reg = registry if registry is not None else exp.registry
    report = ValidationReport()

    # conceptual: generic structure, all referenced ids resolve
    if not desc.stages:
        report.add("conceptual", Severity.ERROR, "no-stages", "experiment declares no stages")
    if desc.duration_ns <= 0:
        report.add("conceptual", Severity.ERROR, "no-duration", "duration must be positive")
    for site_id in desc.sites:
        if site_id not in reg.sites:
            report.add("conceptual", Severity.ERROR, "unknown-site", f"site {site_id} is not defined", site_id)
    declared = {p for p in desc.participants}
    for pid in desc.participants:
        part = reg.participants.get(pid)
        if part is None:
            report.add("conceptual", Severity.ERROR, "unknown-participant", f"participant {pid} undefined", pid)
        elif part.site_id not in reg.sites or part.site_id not in desc.sites:
            report.add(
                "conceptual", Severity.ERROR, "unknown-site",
                f"participant {pid} references undeclared site {part.site_id}", pid,
            )
    for i, route in enumerate(desc.routes):
        for end, role in ((route.src, "from"), (route.dst, "to")):
            part = reg.participants.get(end.participant)
            if end.participant not in declared or part is None:
                report.add(
                    "conceptual", Severity.ERROR, "unknown-participant",
                    f"route {role} references undeclared participant {end.participant}", f"routes[{i}].{role}",
                )
            else:
                pool = part.offers if role == "from" else part.requires
                if end.topic not in pool:
                    report.add(
                        "conceptual", Severity.ERROR, "topic-not-declared",
                        f"{end.participant} does not {'offer' if role == 'from' else 'require'} {end.topic}",
                        f"routes[{i}].{role}",
                    )
    stage_ids = {s.id for s in desc.stages}
    for stage in desc.stages:
        for j, t in enumerate(stage.transitions):
            if t.target not in stage_ids:
                report.add(
                    "conceptual", Severity.ERROR, "unknown-stage",
                    f"transition targets undeclared stage {t.target}", f"stages[{stage.id}].transitions[{j}]",
                )

    # semantical: stage machine meaning
    if desc.stages and desc.initial_stage not in stage_ids:
        report.add(
            "semantical", Severity.ERROR, "no-initial-stage",
            f"initial_stage {desc.initial_stage} does not name a stage", "initial_stage",
        )
    reachable = _reachable_stages(desc)
    if reachable:
        for stage in desc.stages:
            if stage.id not in reachable:
                report.add("semantical", Severity.WARNING, "unreachable-stage", f"stage {stage.id} unreachable", stage.id)
    offered = {t for pid in desc.participants for t in getattr(reg.participants.get(pid), "offers", ())}
    settable = {e.name for e in reg.model.entries if e.kind is im.Kind.SETPOINT}
    for stage in desc.stages:
        for j, t in enumerate(stage.transitions):
            if not t.guard.is_elapsed and t.guard.topic not in offered | settable:
                report.add(
                    "semantical", Severity.ERROR, "unknown-guard-topic",
                    f"guard topic {t.guard.topic} is never produced", f"stages[{stage.id}].transitions[{j}]",
                )

    # syntactic: mapping rows and unit compatibility at both endpoint sites
    for i, route in enumerate(desc.routes):
        src_part = reg.participants.get(route.src.participant)
        dst_part = reg.participants.get(route.dst.participant)
        if src_part is None or dst_part is None:
            continue  # already a conceptual error
        src_entry = reg.model.entry(route.src.topic)
        dst_entry = reg.model.entry(route.dst.topic)
        for topic, entry in ((route.src.topic, src_entry), (route.dst.topic, dst_entry)):
            if entry is None:
                report.add(
                    "syntactic", Severity.ERROR, "unknown-canonical-entry",
                    f"topic {topic} missing from the canonical model", f"routes[{i}]",
                )
        if src_entry is not None and dst_entry is not None:
            if src_entry.unit.base_symbol != dst_entry.unit.base_symbol:
                report.add(
                    "syntactic", Severity.ERROR, "route-unit-mismatch",
                    f"{route.src.topic} ({src_entry.unit.symbol}) incompatible with "
                    f"{route.dst.topic} ({dst_entry.unit.symbol})",
                    f"routes[{i}]",
                )
        for part, topic in ((src_part, route.src.topic), (dst_part, route.dst.topic)):
            site = reg.sites.get(part.site_id)
            if site is None:
                continue
            if site.mapping is None or site.mapping.by_canonical(topic) is None:
                report.add(
                    "syntactic", Severity.ERROR, "missing-mapping",
                    f"site {part.site_id} has no mapping row for {topic}", f"routes[{i}]",
                )
    for site_id in desc.sites:
        site = reg.sites.get(site_id)
        if site is not None and site.mapping is not None:
            for issue in im.validate_table(site.mapping, reg.model):
                report.add("syntactic", Severity.ERROR, issue.code, issue.message, f"sites[{site_id}].mapping")

    # dynamic: execution order, synchronization, causality
    for pid in desc.participants:
        part = reg.participants.get(pid)
        if part is None:
            continue
        if desc.macro_step_ns % part.step_ns != 0:
            report.add(
                "dynamic", Severity.ERROR, "step-not-divisor",
                f"macro step {desc.macro_step_ns} not a multiple of {pid} step {part.step_ns}", pid,
            )
    cycle = _zero_delay_cycle(desc)
    if cycle:
        report.add("dynamic", Severity.ERROR, "zero-delay-cycle", "->".join(cycle), "routes")
    if desc.sync_mode is SyncMode.WAVEFORM_RELAXATION:
        if desc.wr is None:
            report.add("dynamic", Severity.ERROR, "wr-config-missing", "waveform_relaxation requires a wr config", "wr")
        routed = {r.src.participant for r in desc.routes} | {r.dst.participant for r in desc.routes}
        for pid in sorted(routed):
            part = reg.participants.get(pid)
            if part is not None and part.domain_kind is DomainKind.HIL_REALTIME:
                report.add(
                    "dynamic", Severity.ERROR, "wr-hil-participant",
                    f"hil_realtime participant {pid} cannot sit inside a waveform-relaxation loop", pid,
                )

    # technical: interface implementation and performance
    for i, route in enumerate(desc.routes):
        src_part = reg.participants.get(route.src.participant)
        dst_part = reg.participants.get(route.dst.participant)
        if src_part is None or dst_part is None:
            continue
        crosses = src_part.site_id != dst_part.site_id
        hil = None
        if src_part.domain_kind is DomainKind.HIL_REALTIME:
            hil = src_part
        if dst_part.domain_kind is DomainKind.HIL_REALTIME:
            hil = dst_part
        if hil is not None and crosses:
            report.add(
                "technical", Severity.WARNING, "hil-inter-site",
                f"route couples HIL participant {hil.id} across sites; keep the HIL interface intra-platform",
                f"routes[{i}]",
            )
            link = reg.link(src_part.site_id, dst_part.site_id)
            if link is not None and hil.realtime_deadline_ns is not None:
                if link.worst_case_delay_ns > hil.realtime_deadline_ns:
                    report.add(
                        "technical", Severity.ERROR, "deadline-unachievable",
                        f"worst-case link delay {link.worst_case_delay_ns} ns exceeds {hil.id} deadline "
                        f"{hil.realtime_deadline_ns} ns",
                        f"routes[{i}]",
                    )
    return report


# ---------------------------------------------------------------------------
# Runtime stage machine
# ---------------------------------------------------------------------------

@dataclass
class _HoldState:
    since_ns: int | None = None


class StageMachine:
    """Single-owner runtime stage machine advanced at macro-step boundaries.

    Guards are evaluated in document order; the first satisfied guard wins.
    Entry actions are emitted exactly once per stage entry.  Hold guards
    accumulate only while their comparison stays true and reset on failure.
    """

    def __init__(self, desc: ExperimentDescription, known_topics: set[str] | None = None):
        self._desc = desc
        self._known = known_topics
        self.current = desc.initial_stage
        self.entered_at_ns = 0
        self._holds: dict[int, _HoldState] = {}
        self._started = False

    def start(self, now_ns: int = 0) -> list[Command]:
        """Enter the initial stage; returns its entry actions."""
        self._started = True
        self.entered_at_ns = now_ns
        stage = self._desc.stage(self.current)
        return list(stage.entry_actions) if stage else []

    def step(self, observations: Mapping[str, im.SignalSample], now_ns: int) -> list[Command]:
        """Evaluate guards at a macro boundary; returns entry actions on transition."""
        if not self._started:
            raise RuntimeError("StageMachine.start() must run before step()")
        stage = self._desc.stage(self.current)
        if stage is None:
            return []
        for index, transition in enumerate(stage.transitions):
            guard = transition.guard
            if guard.is_elapsed:
                satisfied = now_ns - self.entered_at_ns >= guard.elapsed_ns
            else:
                if self._known is not None and guard.topic not in self._known:
                    raise UnknownTopic(guard.topic)
                sample = observations.get(guard.topic)
                if sample is None:
                    # warm-up: the topic exists but has not been observed yet
                    self._holds.pop(index, None)
                    continue
                if guard.compare(float(sample.value)):
                    hold = self._holds.setdefault(index, _HoldState())
                    if hold.since_ns is None:
                        hold.since_ns = now_ns
                    satisfied = now_ns - hold.since_ns >= guard.held_ns
                else:
                    self._holds.pop(index, None)
                    satisfied = False
            if satisfied:
                return self._enter(transition.target, now_ns)
        return []

    def _enter(self, target: str, now_ns: int) -> list[Command]:
        self.current = target
        self.entered_at_ns = now_ns
        self._holds.clear()
        stage = self._desc.stage(target)
        return list(stage.entry_actions) if stage else []
