"""Canonical ("CIM-lite") information model and per-site translation.

A flat registry of canonical topic entries (kind, unit, value domain), plus
per-site bijective mapping tables that translate locally named, locally
united signal samples into the shared canonical namespace and back.  All
values here are immutable; every operation is a pure function.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Any, Iterable, Mapping

from .errors import DocumentSyntaxError, IncompatibleUnit, SchemaError, UnmappedTopic

CANONICAL_NAME_RE = re.compile(r"^[A-Za-z0-9_]+(\.[A-Za-z0-9_]+)+$")


class Kind(str, Enum):
    MEASUREMENT = "measurement"
    SETPOINT = "setpoint"
    STATUS = "status"


class Quality(str, Enum):
    GOOD = "good"
    STALE = "stale"
    ESTIMATED = "estimated"
    BAD = "bad"


@dataclass(frozen=True)
class UnitDef:
    """A unit expressed against a base symbol: value_base = value*scale + offset."""

    symbol: str
    base_symbol: str
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"unit {self.symbol}: scale must be > 0")

    @property
    def is_base(self) -> bool:
        return self.symbol == self.base_symbol

    def to_base(self, value: float) -> float:
        return value * self.scale + self.offset

    def from_base(self, value: float) -> float:
        return (value - self.offset) / self.scale


@dataclass(frozen=True)
class ValueDomain:
    """Value domain of a canonical entry: real, boolean, or a label enumeration."""

    kind: str  # "real" | "boolean" | "enumeration"
    labels: tuple[str, ...] = ()

    @classmethod
    def real(cls) -> "ValueDomain":
        return cls("real")

    @classmethod
    def boolean(cls) -> "ValueDomain":
        return cls("boolean")

    @classmethod
    def enumeration(cls, labels: Iterable[str]) -> "ValueDomain":
        return cls("enumeration", tuple(labels))


@dataclass(frozen=True)
class CanonicalEntry:
    name: str
    kind: Kind
    unit: UnitDef
    domain: ValueDomain = field(default_factory=ValueDomain.real)


@dataclass(frozen=True)
class CanonicalModel:
    """The consortium-wide topic registry plus its unit registry."""

    version: str
    units: Mapping[str, UnitDef]
    entries: tuple[CanonicalEntry, ...]

    def entry(self, name: str) -> CanonicalEntry | None:
        return self._by_name.get(name)

    @cached_property
    def _by_name(self) -> dict[str, CanonicalEntry]:
        return {e.name: e for e in self.entries}

    def topics(self) -> list[str]:
        return [e.name for e in self.entries]


@dataclass(frozen=True)
class MappingRow:
    local: str
    canonical: str
    unit: UnitDef


@dataclass(frozen=True)
class MappingTable:
    """Bijective local<->canonical name map for one site."""

    site_id: str
    rows: tuple[MappingRow, ...]

    def by_local(self, name: str) -> MappingRow | None:
        for row in self.rows:
            if row.local == name:
                return row
        return None

    def by_canonical(self, name: str) -> MappingRow | None:
        for row in self.rows:
            if row.canonical == name:
                return row
        return None


@dataclass(frozen=True)
class SignalSample:
    """One timestamped, unit-carrying value on a named topic."""

    topic: str
    sim_time_ns: int
    value: Any
    unit: UnitDef
    source: str
    seq: int
    quality: Quality = Quality.GOOD

    def __post_init__(self):
        if self.sim_time_ns < 0:
            raise ValueError("sim_time_ns must be >= 0")
        if self.seq < 0:
            raise ValueError("seq must be >= 0")


@dataclass(frozen=True)
class ModelIssue:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


DIMENSIONLESS = UnitDef("1", "1")


def validate_model(model: CanonicalModel) -> list[ModelIssue]:
    """Collect every invariant violation in the model; empty list means valid."""
    issues: list[ModelIssue] = []
    for symbol, unit in model.units.items():
        if symbol != unit.symbol:
            issues.append(ModelIssue("unit-key-mismatch", f"registry key {symbol} != symbol {unit.symbol}"))
        if unit.is_base and (unit.scale != 1.0 or unit.offset != 0.0):
            issues.append(ModelIssue("non-identity-base", f"base unit {symbol} must have scale 1, offset 0"))
        if unit.base_symbol not in model.units:
            issues.append(ModelIssue("unknown-base", f"unit {symbol} refers to unregistered base {unit.base_symbol}"))
    seen: set[str] = set()
    for entry in model.entries:
        if entry.name in seen:
            issues.append(ModelIssue("duplicate-name", entry.name))
        seen.add(entry.name)
        if not CANONICAL_NAME_RE.match(entry.name):
            issues.append(ModelIssue("bad-name", f"{entry.name!r} is not a dot-separated path"))
        if entry.unit.symbol not in model.units:
            issues.append(ModelIssue("unknown-unit", entry.unit.symbol))
        if entry.domain.kind == "enumeration" and not entry.domain.labels:
            issues.append(ModelIssue("empty-enumeration", entry.name))
    return issues


def validate_table(table: MappingTable, model: CanonicalModel) -> list[ModelIssue]:
    """Check bijectivity and canonical-side existence/compatibility of a table."""
    issues: list[ModelIssue] = []
    locals_seen: set[str] = set()
    canon_seen: set[str] = set()
    for row in table.rows:
        if row.local in locals_seen:
            issues.append(ModelIssue("duplicate-local", row.local))
        locals_seen.add(row.local)
        if row.canonical in canon_seen:
            issues.append(ModelIssue("duplicate-canonical", row.canonical))
        canon_seen.add(row.canonical)
        entry = model.entry(row.canonical)
        if entry is None:
            issues.append(ModelIssue("unknown-canonical", row.canonical))
        elif row.unit.base_symbol != entry.unit.base_symbol:
            issues.append(
                ModelIssue(
                    "incompatible-unit",
                    f"{row.local}: {row.unit.symbol} not convertible to {entry.unit.symbol}",
                )
            )
    return issues


def _convert(value: Any, src: UnitDef, dst: UnitDef) -> Any:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        return value  # units apply to real values only
    if src.base_symbol != dst.base_symbol:
        raise IncompatibleUnit(f"{src.symbol} ({src.base_symbol}) -> {dst.symbol} ({dst.base_symbol})")
    if src == dst:
        return value
    return dst.from_base(src.to_base(float(value)))


def to_canonical(sample: SignalSample, table: MappingTable, model: CanonicalModel) -> SignalSample:
    """Translate a site-local sample into the canonical namespace and unit."""
    row = table.by_local(sample.topic)
    if row is None:
        raise UnmappedTopic(f"{sample.topic} has no row in table for site {table.site_id}")
    entry = model.entry(row.canonical)
    if entry is None:
        raise UnmappedTopic(f"{row.canonical} missing from canonical model")
    value = _convert(sample.value, sample.unit, entry.unit)
    return replace(sample, topic=row.canonical, value=value, unit=entry.unit)


def from_canonical(sample: SignalSample, table: MappingTable, model: CanonicalModel) -> SignalSample:
    """Inverse of :func:`to_canonical`: back to the site-local name and unit."""
    row = table.by_canonical(sample.topic)
    if row is None:
        raise UnmappedTopic(f"{sample.topic} has no canonical row in table for site {table.site_id}")
    value = _convert(sample.value, sample.unit, row.unit)
    return replace(sample, topic=row.local, value=value, unit=row.unit)


# ---------------------------------------------------------------------------
# JSON loading.  Unknown fields are rejected, per the external schema.
# ---------------------------------------------------------------------------

_UNIT_FIELDS = {"symbol", "base", "scale", "offset"}
_ENTRY_FIELDS = {"name", "kind", "unit", "domain"}
_MODEL_FIELDS = {"version", "units", "entries"}
_TABLE_FIELDS = {"site", "rows"}
_ROW_FIELDS = {"local", "canonical", "unit"}


def _reject_unknown(obj: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError("unknown-field", f"unexpected field(s) {sorted(unknown)}", where)


def _as_document(document: str | Mapping[str, Any], where: str) -> Mapping[str, Any]:
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise DocumentSyntaxError(str(exc), where) from exc
    if not isinstance(document, Mapping):
        raise SchemaError("not-an-object", f"{where} document must be a JSON object", where)
    return document


def _parse_units(raw: Any, where: str) -> dict[str, UnitDef]:
    if not isinstance(raw, list):
        raise SchemaError("bad-type", "units must be an array", where)
    units: dict[str, UnitDef] = {}
    for i, item in enumerate(raw):
        loc = f"{where}[{i}]"
        if not isinstance(item, Mapping):
            raise SchemaError("bad-type", "unit must be an object", loc)
        _reject_unknown(item, _UNIT_FIELDS, loc)
        try:
            unit = UnitDef(
                symbol=str(item["symbol"]),
                base_symbol=str(item["base"]),
                scale=float(item.get("scale", 1.0)),
                offset=float(item.get("offset", 0.0)),
            )
        except KeyError as exc:
            raise SchemaError("missing-field", f"unit requires {exc.args[0]}", loc) from exc
        except ValueError as exc:
            raise SchemaError("bad-value", str(exc), loc) from exc
        if unit.symbol in units:
            raise SchemaError("duplicate-unit", unit.symbol, loc)
        units[unit.symbol] = unit
    return units


def _parse_domain(raw: Any, where: str) -> ValueDomain:
    if raw is None or raw == "real":
        return ValueDomain.real()
    if raw == "boolean":
        return ValueDomain.boolean()
    if isinstance(raw, Mapping) and set(raw) == {"enumeration"}:
        labels = raw["enumeration"]
        if not isinstance(labels, list) or not labels:
            raise SchemaError("empty-enumeration", "enumeration needs a non-empty label list", where)
        return ValueDomain.enumeration(str(x) for x in labels)
    raise SchemaError("bad-domain", f"unrecognized domain {raw!r}", where)


def load_model(document: str | Mapping[str, Any]) -> CanonicalModel:
    """Load a canonical model from its JSON document; raises SchemaError."""
    doc = _as_document(document, "model")
    _reject_unknown(doc, _MODEL_FIELDS, "model")
    for key in ("version", "units", "entries"):
        if key not in doc:
            raise SchemaError("missing-field", f"model requires {key}", "model")
    units = _parse_units(doc["units"], "model.units")
    if not isinstance(doc["entries"], list):
        raise SchemaError("bad-type", "entries must be an array", "model.entries")
    entries = []
    for i, item in enumerate(doc["entries"]):
        loc = f"model.entries[{i}]"
        if not isinstance(item, Mapping):
            raise SchemaError("bad-type", "entry must be an object", loc)
        _reject_unknown(item, _ENTRY_FIELDS, loc)
        try:
            kind = Kind(item["kind"])
        except KeyError as exc:
            raise SchemaError("missing-field", "entry requires kind", loc) from exc
        except ValueError as exc:
            raise SchemaError("bad-value", f"unknown kind {item['kind']!r}", loc) from exc
        name = str(item.get("name", ""))
        if not name:
            raise SchemaError("missing-field", "entry requires name", loc)
        symbol = str(item.get("unit", ""))
        unit = units.get(symbol, UnitDef(symbol, symbol) if symbol else DIMENSIONLESS)
        entries.append(CanonicalEntry(name=name, kind=kind, unit=unit, domain=_parse_domain(item.get("domain"), loc)))
    model = CanonicalModel(version=str(doc["version"]), units=units, entries=tuple(entries))
    issues = validate_model(model)
    if issues:
        raise SchemaError("invalid-model", "; ".join(str(i) for i in issues), "model")
    return model


def load_table(document: str | Mapping[str, Any], model: CanonicalModel) -> MappingTable:
    """Load a site mapping table; unit symbols resolve against the model registry."""
    doc = _as_document(document, "table")
    _reject_unknown(doc, _TABLE_FIELDS, "table")
    for key in ("site", "rows"):
        if key not in doc:
            raise SchemaError("missing-field", f"table requires {key}", "table")
    if not isinstance(doc["rows"], list):
        raise SchemaError("bad-type", "rows must be an array", "table.rows")
    rows = []
    for i, item in enumerate(doc["rows"]):
        loc = f"table.rows[{i}]"
        if not isinstance(item, Mapping):
            raise SchemaError("bad-type", "row must be an object", loc)
        _reject_unknown(item, _ROW_FIELDS, loc)
        for key in ("local", "canonical", "unit"):
            if key not in item:
                raise SchemaError("missing-field", f"row requires {key}", loc)
        symbol = str(item["unit"])
        if symbol not in model.units:
            raise SchemaError("unknown-unit", symbol, loc)
        rows.append(MappingRow(local=str(item["local"]), canonical=str(item["canonical"]), unit=model.units[symbol]))
    table = MappingTable(site_id=str(doc["site"]), rows=tuple(rows))
    issues = validate_table(table, model)
    if issues:
        raise SchemaError("invalid-table", "; ".join(str(i) for i in issues), "table")
    return table
