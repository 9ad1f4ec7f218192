"""Walk through the CIM-lite information model and per-site translation.

Two labs name the same physical signal differently and in different units.
A shared canonical model plus per-site mapping tables makes the exchange
loss-free: translate local samples to canonical form for replication into
the consortium store, and back again for local consumption.
"""

from fedkit import (
    SignalSample,
    from_canonical,
    load_model,
    load_table,
    to_canonical,
    validate_model,
)

MODEL = {
    "version": "1.0.0",
    "units": [
        {"symbol": "V", "base": "V"},
        {"symbol": "W", "base": "W"},
        {"symbol": "kW", "base": "W", "scale": 1000.0},
    ],
    "entries": [
        {"name": "siteA.load.p", "kind": "measurement", "unit": "W"},
        {"name": "siteA.feeder.v", "kind": "measurement", "unit": "V"},
    ],
}

TABLE = {
    "site": "siteA",
    "rows": [
        {"local": "P_load", "canonical": "siteA.load.p", "unit": "kW"},
        {"local": "V1", "canonical": "siteA.feeder.v", "unit": "V"},
    ],
}


def main():
    model = load_model(MODEL)
    table = load_table(TABLE, model)
    print(f"model ok: {validate_model(model) == []}, entries: {[e.name for e in model.entries]}")

    local = SignalSample("P_load", sim_time_ns=1_000_000, value=2.5,
                         unit=model.units["kW"], source="scadaA", seq=1)
    canonical = to_canonical(local, table, model)
    print(f"local    {local.topic} = {local.value} {local.unit.symbol}")
    print(f"canonical {canonical.topic} = {canonical.value} {canonical.unit.symbol}")

    back = from_canonical(canonical, table, model)
    print(f"round trip -> {back.topic} = {back.value} {back.unit.symbol} (lossless: {back.value == local.value})")


if __name__ == "__main__":
    main()
