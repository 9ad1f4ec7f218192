"""Acceptance suite: one test per acceptance criterion, tolerances pinned.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion.  Everything here is desk-scale: the whole module completes in
well under two minutes on a laptop.
"""

import hashlib
import json
import math

import numpy as np
import pytest

from fedkit import model as im
from fedkit.errors import NumericalOverflow, PermissionDenied
from fedkit.experiment import (
    Command,
    CommandKind,
    Severity,
    SyncMode,
    parse_experiment,
    validate_layers,
)
from fedkit.hub import Hub, TraceStore
from fedkit.netem import MS, Jitter, LinkModel
from fedkit.plant import (
    HilDevice,
    LoopChannel,
    PhilInterfaceConfig,
    hil_run,
    itm_stability,
    monolithic_oracle,
    simulate_itm,
)
from fedkit.scenarios import load_scenario, scenario_text
from fedkit.sync import (
    Consumption,
    RunResult,
    detect_causality_violations,
    run_best_effort,
    run_conservative,
    run_wr,
)

from .conftest import MODEL_DOC, TABLE_DOC, twosite_doc
from .test_sync_wr import iterations_per_window, wr_doc

LINK_PROFILES = {
    "0ms": {"base_delay_ms": 0, "jitter": "none", "loss": 0.0},
    "50ms": {"base_delay_ms": 50, "jitter": {"type": "uniform", "amplitude_ms": 20}, "loss": 0.0},
    "200ms": {"base_delay_ms": 200, "jitter": {"type": "uniform", "amplitude_ms": 100}, "loss": 0.0},
    "lossy": {"base_delay_ms": 15, "jitter": {"type": "uniform", "amplitude_ms": 5}, "loss": 0.01},
}


def demo_doc(profile=None, **overrides):
    doc = json.loads(scenario_text("demo_twosite"))
    if profile is not None:
        for site in doc["sites"]:
            for link in site["links"]:
                link.update(LINK_PROFILES[profile])
    doc.update(overrides)
    return doc


def ok(name):
    print(f"[ACCEPTANCE] {name}: PASS")


def oracle_lookup(exp, topics):
    oracle = monolithic_oracle(exp, topics=topics)
    return {topic: dict(zip(oracle["t_ns"].tolist(), oracle[topic].tolist())) for topic in topics}


def linf_vs(result, ref, topic):
    t, v = result.topic_series(topic)
    diffs = [abs(val - ref[topic][int(tt)]) for tt, val in zip(t, v) if int(tt) in ref[topic]]
    assert diffs, "no common grid points"
    return max(diffs)


def rms_vs(result, ref, topic):
    t, v = result.topic_series(topic)
    pairs = [(val, ref[topic][int(tt)]) for tt, val in zip(t, v) if int(tt) in ref[topic]]
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    return float(np.sqrt(np.mean((a - b) ** 2)))


def test_conservative_determinism(tmp_path):
    """Four link profiles, fixed seed: byte-identical trace.csv. Tolerance: exact."""
    hashes = set()
    for name in ("0ms", "50ms", "200ms", "lossy"):
        result = run_conservative(parse_experiment(demo_doc(profile=name)))
        out = result.export(tmp_path / name)
        hashes.add(hashlib.sha256(out["trace"].read_bytes()).hexdigest())
    assert len(hashes) == 1, f"traces differ across profiles: {hashes}"
    ok("conservative-determinism")


def test_best_effort_latency_sensitivity():
    """RMS vs oracle strictly increases 0ms -> 200ms; median staleness 20 +/- 2 steps."""
    exp0 = parse_experiment(demo_doc(profile="0ms"))
    ref = oracle_lookup(exp0, ["predis.feeder.v_load"])
    rms0 = rms_vs(run_best_effort(exp0), ref, "predis.feeder.v_load")
    rms200 = rms_vs(run_best_effort(parse_experiment(demo_doc(profile="200ms"))), ref, "predis.feeder.v_load")
    assert rms200 > rms0, f"deviation did not grow with delay: {rms200} <= {rms0}"

    plain = demo_doc()
    for site in plain["sites"]:
        for link in site["links"]:
            link.update({"base_delay_ms": 200, "jitter": "none", "loss": 0.0})
    result = run_best_effort(parse_experiment(plain))
    median = float(np.median(result.staleness_steps))
    assert 18.0 <= median <= 22.0, f"median staleness {median} outside 20 +/- 2 steps"
    ok("best-effort-latency-sensitivity")


def test_splitting_error_convergence():
    """Conservative vs oracle L-inf shrinks by [1.6, 2.4] per macro-step halving, 3 halvings."""
    finest = 1_250_000
    doc = demo_doc()
    doc["macro_step_ns"] = finest
    for p in doc["participants"]:
        p["step_ns"] = finest
    ref = oracle_lookup(parse_experiment(doc), ["predis.feeder.v_load"])
    errors = []
    for macro in (10_000_000, 5_000_000, 2_500_000, 1_250_000):
        doc = demo_doc()
        doc["macro_step_ns"] = macro
        for p in doc["participants"]:
            p["step_ns"] = macro
        errors.append(linf_vs(run_conservative(parse_experiment(doc)), ref, "predis.feeder.v_load"))
    ratios = [errors[i] / errors[i + 1] for i in range(3)]
    for ratio in ratios:
        assert 1.6 <= ratio <= 2.4, f"halving ratios {ratios} out of [1.6, 2.4]"
    ok("splitting-error-convergence")


def test_waveform_relaxation():
    """Coupled pair: all windows converge (max_iter 20), trace within 1e-5 of oracle;
    zero coupling converges in exactly 2 iterations per window."""
    exp = parse_experiment(wr_doc(coupling=0.5, window_ms=100, tol=1e-6, max_iter=20))
    result = run_wr(exp)
    per_window = iterations_per_window(result)
    converged = {e.window_index for e in result.wr_log if e.converged}
    assert converged == set(per_window), "some windows failed to converge"
    assert max(per_window.values()) <= 20
    ref = oracle_lookup(exp, ["wr.x.state", "wr.y.state"])
    for topic in ("wr.x.state", "wr.y.state"):
        scale = max(abs(v) for v in ref[topic].values())
        assert linf_vs(result, ref, topic) / scale < 1e-5, f"{topic} deviates beyond 1e-5 relative"

    zero = run_wr(parse_experiment(wr_doc(coupling=0.0)))
    iters = iterations_per_window(zero)
    assert set(iters.values()) == {2}, f"zero-coupling iterations {iters}"
    assert all(e.residual == 0.0 for e in zero.wr_log if e.iteration == 2)
    ok("waveform-relaxation")


def test_phil_stability_boundary():
    """Verdict agrees with simulated outcome on all 18 sweep points; decay 0.5 +/- 0.05."""
    agreements = 0
    for gain in (0.1, 0.5, 0.9, 1.1, 2.0, 10.0):
        for delay in (1, 2, 5):
            rs, rh = gain * 10.0, 10.0
            verdict = itm_stability(rs, rh, delay)
            assert verdict.loop_gain == pytest.approx(gain)
            try:
                simulate_itm(rs, rh, delay_steps=delay, n_steps=5000)
                overflowed = False
            except NumericalOverflow:
                overflowed = True
            assert verdict.stable == (not overflowed), f"disagreement at gain={gain} delay={delay}"
            agreements += 1
    assert agreements == 18

    series = simulate_itm(5.0, 10.0, delay_steps=1, vs=400.0, n_steps=40)
    i_star = 400.0 / 15.0
    errors = [abs(x - i_star) for x in series]
    ratios = [errors[k + 1] / errors[k] for k in range(5, 20)]
    for ratio in ratios:
        assert 0.45 <= ratio <= 0.55, f"decay ratio {ratio} outside 0.5 +/- 0.05"
    ok("phil-stability-boundary")


def test_intra_platform_hil_guidance():
    """Local loop: 0 misses over 1000 steps; 70 km profile in the loop: misses > 0
    and tracking L-inf at least 5x the local error."""

    def vs(t_ns):
        return 400.0 + 20.0 * math.sin(2 * math.pi * 2.0 * t_ns / 1e9)

    def run(to_hil=None, to_grid=None):
        device = HilDevice(mode="phil", rh=10.0)
        interface = PhilInterfaceConfig(tau_a_ns=1 * MS)
        rows, report = hil_run(
            device, interface, vs_of_t=vs, rs=5.0, n_steps=1000, step_ns=5 * MS,
            deadline_ns=10 * MS, to_hil=to_hil, to_grid=to_grid,
        )
        tracking = max(abs(i - vs(t) / 15.0) for t, _, i in rows[100:])
        return report, tracking

    local_report, local_err = run()
    assert local_report.misses == 0
    assert len(local_report.rows) == 1000

    def demo_link(seed):
        return LoopChannel(
            LinkModel(link_id="loop", base_delay_ns=15 * MS, jitter=Jitter("uniform", 5 * MS), loss_prob=0.001),
            experiment_seed=seed,
        )

    link_report, link_err = run(to_hil=demo_link(1), to_grid=demo_link(2))
    assert link_report.misses > 0
    assert link_err >= 5.0 * local_err, f"tracking ratio {link_err / local_err:.2f} below 5x"
    ok("intra-platform-hil-guidance")


def test_causality():
    """Conservative runs: zero violations; constructed fixture: exactly one."""
    for profile in ("0ms", "200ms"):
        result = run_conservative(parse_experiment(demo_doc(profile=profile)))
        assert result.consumptions
        assert detect_causality_violations(result) == []

    exp = parse_experiment(demo_doc())
    macro = exp.description.macro_step_ns
    fixture = RunResult(
        run_id="fixture", mode=SyncMode.CONSERVATIVE, experiment=exp, store=TraceStore("fixture"),
        consumptions=[
            Consumption("der_ctrl", "predis.feeder.v_load", used_at_ns=0, produced_at_ns=0,
                        src_site="predis", dst_site="prismes", delay_steps=1),
            Consumption("der_ctrl", "predis.feeder.v_load", used_at_ns=macro, produced_at_ns=0,
                        src_site="predis", dst_site="prismes", delay_steps=1),
        ],
    )
    violations = detect_causality_violations(fixture)
    assert len(violations) == 1
    assert violations[0].used_at_ns < violations[0].min_arrival_ns
    ok("causality")


def test_information_model_round_trip():
    """1e4 samples survive to_canonical/from_canonical (topic exact, value ~1 ulp);
    replication of 1e4 records is idempotent on replay."""
    model = im.load_model(MODEL_DOC)
    table = im.load_table(TABLE_DOC, model)
    rng = np.random.default_rng(2024)
    scale_rows = [r for r in table.rows if r.unit.offset == 0.0]
    samples = []
    for i in range(10_000):
        row = scale_rows[int(rng.integers(len(scale_rows)))]
        value = float(rng.uniform(-1e6, 1e6))
        samples.append(im.SignalSample(row.local, int(i), value, row.unit, source="scadaA", seq=i))
    for sample in samples:
        back = im.from_canonical(im.to_canonical(sample, table, model), table, model)
        assert back.topic == sample.topic
        tol = 2.0 * np.spacing(abs(sample.value)) if sample.value != 0 else 1e-300
        assert abs(back.value - sample.value) <= tol, f"{sample.topic}: {back.value} vs {sample.value}"

    from fedkit.experiment import Registry

    exp = parse_experiment(twosite_doc())
    registry = Registry(model=model, sites=exp.registry.sites, participants=exp.registry.participants)
    hub = Hub(registry, wall_clock=lambda: 0)
    hub.start_run("replication")
    batch = [
        im.SignalSample("P_load", int(i), float(rng.uniform(0, 100)), model.units["kW"], source="scadaA", seq=i)
        for i in range(10_000)
    ]
    assert hub.replicate(batch, table) == 10_000
    assert hub.replicate(batch, table) == 0, "replay inserted rows"
    assert len(hub.active_run.store) == 10_000
    ok("information-model-round-trip")


def test_paas_gating():
    """Every CommandKind without grant: PermissionDenied, run state + store hash unchanged."""
    doc = twosite_doc()
    doc["sites"][1]["allow_list"] = []
    hub = Hub(parse_experiment(doc).registry, wall_clock=lambda: 0)
    hub.start_run("gating")
    operator = hub.register_operator("intruder", "prismes")
    args = {"topic": "prismes.ctrl.v_set", "value": 390.0, "experiment": "x", "run": "run-0001"}
    for kind in CommandKind:
        before = hub.state_fingerprint()
        with pytest.raises(PermissionDenied):
            hub.execute_command(operator, Command(kind, args))
        assert hub.state_fingerprint() == before, f"{kind.value} denied but state changed"
    ok("paas-gating")


def _corpus():
    """Ten documents, each seeding one defect in a known layer with known severity."""
    docs = []

    d = twosite_doc()
    d["routes"][0]["from"] = ["phantom", "predis.feeder.v_load"]
    docs.append((d, "conceptual", "unknown-participant", Severity.ERROR))

    d = twosite_doc()
    d["participants"][1]["site"] = "nowhere"
    docs.append((d, "conceptual", "unknown-site", Severity.ERROR))

    d = twosite_doc()
    d["initial_stage"] = "ghost"
    docs.append((d, "semantical", "no-initial-stage", Severity.ERROR))

    d = twosite_doc()
    d["stages"].append({"id": "island"})
    docs.append((d, "semantical", "unreachable-stage", Severity.WARNING))

    d = twosite_doc()
    d["sites"][1]["mapping"]["rows"] = [r for r in d["sites"][1]["mapping"]["rows"] if r["local"] != "U_mes"]
    docs.append((d, "syntactic", "missing-mapping", Severity.ERROR))

    d = twosite_doc()
    d["routes"][0] = {"from": ["grid", "predis.feeder.v_load"], "to": ["grid", "prismes.der.i_inj"]}
    docs.append((d, "syntactic", "route-unit-mismatch", Severity.ERROR))

    d = twosite_doc()
    d["participants"][0]["step_ns"] = 3_000_000
    docs.append((d, "dynamic", "step-not-divisor", Severity.ERROR))

    d = twosite_doc()
    d["routes"][0]["delay_steps"] = 0
    d["routes"][1]["delay_steps"] = 0
    docs.append((d, "dynamic", "zero-delay-cycle", Severity.ERROR))

    d = twosite_doc()
    d["participants"][1]["kind"] = "hil_realtime"
    d["participants"][1]["realtime_deadline_ns"] = 100_000_000
    docs.append((d, "technical", "hil-inter-site", Severity.WARNING))

    d = twosite_doc()
    d["participants"][1]["kind"] = "hil_realtime"
    d["participants"][1]["realtime_deadline_ns"] = 10_000_000
    docs.append((d, "technical", "deadline-unachievable", Severity.ERROR))

    return docs


def test_validator_defect_corpus():
    """Seeded-defect corpus (>= 1 defect per layer, 10 documents) classified 10/10."""
    correct = 0
    for index, (doc, layer, code, severity) in enumerate(_corpus()):
        report = validate_layers(parse_experiment(doc))
        hits = [i for i in report.layers[layer] if i.code == code and i.severity is severity]
        assert hits, f"doc {index}: {code} not reported in {layer} at {severity.value}"
        other_layers = [
            (other, i.code)
            for other in report.layers
            if other != layer
            for i in report.layers[other]
            if i.severity is Severity.ERROR
        ]
        assert not other_layers, f"doc {index}: defect leaked into other layers: {other_layers}"
        correct += 1
    assert correct == 10
    ok("validator-defect-corpus")
