"""Post-hoc causality checking across sync disciplines."""

import pytest

from fedkit.experiment import SyncMode, parse_experiment
from fedkit.hub import TraceStore
from fedkit.sync import (
    Consumption,
    RunResult,
    detect_causality_violations,
    run_best_effort,
    run_conservative,
)

from .conftest import twosite_doc
from .test_sync_best_effort import with_profile

MS = 1_000_000


class TestConservative:
    def test_no_violations_by_construction(self):
        for profile in ((0, 0), (200, 100)):
            doc = with_profile(twosite_doc(), profile[0], jitter_ms=profile[1])
            result = run_conservative(parse_experiment(doc))
            assert result.consumptions  # the checker actually saw data
            assert detect_causality_violations(result) == []


class TestBestEffort:
    def test_no_jitter_no_violations(self):
        result = run_best_effort(parse_experiment(with_profile(twosite_doc(), 200)))
        assert detect_causality_violations(result) == []

    def test_early_jitter_produces_violations(self):
        # deliveries below the nominal base latency beat the modeled minimum
        doc = with_profile(twosite_doc(), 200, jitter_ms=100)
        result = run_best_effort(parse_experiment(doc))
        violations = detect_causality_violations(result)
        assert violations
        for v in violations:
            assert v.used_at_ns < v.min_arrival_ns
            assert v.min_arrival_ns == v.produced_at_ns + 200 * MS


class TestFixture:
    def test_hand_built_single_violation(self):
        exp = parse_experiment(twosite_doc())
        macro = exp.description.macro_step_ns
        consumptions = [
            # consumed exactly one step before the modeled minimum arrival
            Consumption(
                consumer="der_ctrl", topic="predis.feeder.v_load",
                used_at_ns=0 * MS, produced_at_ns=0,
                src_site="predis", dst_site="prismes", delay_steps=1,
            ),
            # a legal one, exactly on the boundary
            Consumption(
                consumer="der_ctrl", topic="predis.feeder.v_load",
                used_at_ns=macro, produced_at_ns=0,
                src_site="predis", dst_site="prismes", delay_steps=1,
            ),
        ]
        result = RunResult(
            run_id="fixture", mode=SyncMode.CONSERVATIVE, experiment=exp,
            store=TraceStore("fixture"), consumptions=consumptions,
        )
        violations = detect_causality_violations(result)
        assert len(violations) == 1
        assert violations[0].used_at_ns == 0
        assert violations[0].min_arrival_ns == macro
