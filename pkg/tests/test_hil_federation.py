"""HIL devices inside federation runs and the critical-loop separation rule."""

import copy

import pytest

from fedkit.experiment import parse_experiment, validate_layers
from fedkit.sync import run_conservative

MS = 1_000_000


def hil_doc(hil_site="predis", deadline_ns=50 * MS):
    doc = {
        "id": "hil-demo",
        "model": {
            "version": "1",
            "units": [{"symbol": "V", "base": "V"}, {"symbol": "A", "base": "A"}],
            "entries": [
                {"name": "predis.feeder.v_load", "kind": "measurement", "unit": "V"},
                {"name": "predis.feeder.i_src", "kind": "measurement", "unit": "A"},
                {"name": "predis.hil.v_ref", "kind": "measurement", "unit": "V"},
                {"name": "predis.hil.i_meas", "kind": "measurement", "unit": "A"},
            ],
        },
        "sites": [
            {
                "id": "predis",
                "allow_list": ["get_status"],
                "mapping": {"rows": [
                    {"local": "V_load", "canonical": "predis.feeder.v_load", "unit": "V"},
                    {"local": "I_src", "canonical": "predis.feeder.i_src", "unit": "A"},
                    {"local": "V_ref", "canonical": "predis.hil.v_ref", "unit": "V"},
                    {"local": "I_meas", "canonical": "predis.hil.i_meas", "unit": "A"},
                ]},
                "links": [{"peer": "prismes", "base_delay_ms": 15,
                           "jitter": {"type": "uniform", "amplitude_ms": 5}, "loss": 0.001}],
            },
            {
                "id": "prismes",
                "allow_list": ["get_status"],
                "mapping": {"rows": [
                    {"local": "U_ref", "canonical": "predis.hil.v_ref", "unit": "V"},
                    {"local": "I_dev", "canonical": "predis.hil.i_meas", "unit": "A"},
                ]},
                "links": [{"peer": "predis", "base_delay_ms": 15,
                           "jitter": {"type": "uniform", "amplitude_ms": 5}, "loss": 0.001}],
            },
        ],
        "participants": [
            {
                "id": "grid",
                "site": "predis",
                "kind": "power_continuous",
                "step_ns": 10 * MS,
                "offers": ["predis.feeder.v_load", "predis.feeder.i_src", "predis.hil.v_ref"],
                "requires": ["predis.hil.i_meas"],
                "model": {
                    "type": "grid", "vs": 400.0, "rs": 1.0, "rl": 10.0,
                    "outputs": {"v": "predis.feeder.v_load", "i": "predis.feeder.i_src",
                                "v_ref": "predis.hil.v_ref"},
                    "inputs": {"i_inj": "predis.hil.i_meas"},
                    "input_defaults": {"predis.hil.i_meas": 0.0},
                },
            },
            {
                "id": "hil_dev",
                "site": hil_site,
                "kind": "hil_realtime",
                "step_ns": 10 * MS,
                "realtime_deadline_ns": deadline_ns,
                "offers": ["predis.hil.i_meas"],
                "requires": ["predis.hil.v_ref"],
                "model": {
                    "type": "hil", "mode": "phil", "rh": 10.0,
                    "interface": {"tau_a_ns": 1 * MS},
                    "inputs": {"v_ref": "predis.hil.v_ref"},
                    "outputs": {"i_meas": "predis.hil.i_meas"},
                    "input_defaults": {"predis.hil.v_ref": 0.0},
                },
            },
        ],
        "routes": [
            {"from": ["grid", "predis.hil.v_ref"], "to": ["hil_dev", "predis.hil.v_ref"]},
            {"from": ["hil_dev", "predis.hil.i_meas"], "to": ["grid", "predis.hil.i_meas"]},
        ],
        "stages": [{"id": "run"}],
        "initial_stage": "run",
        "sync": "conservative",
        "macro_step_ns": 10 * MS,
        "duration_ns": 1_000 * MS,
        "seed": 3,
    }
    return copy.deepcopy(doc)


class TestIntraSiteHil:
    def test_validates_clean(self):
        report = validate_layers(parse_experiment(hil_doc()))
        assert report.ok
        assert report.warnings() == []

    def test_run_converges_to_itm_fixed_point(self):
        result = run_conservative(parse_experiment(hil_doc()))
        t, v = result.topic_series("predis.feeder.v_load")
        # ideal transformer loop: v settles where i_src = v/rh is injected back
        assert v[-1] == pytest.approx(400.0, rel=1e-3)

    def test_critical_loop_never_reaches_hub(self):
        result = run_conservative(parse_experiment(hil_doc()))
        assert result.store.query("predis.hil.v_ref") == []
        assert result.store.query("predis.hil.i_meas") == []
        assert len(result.store.query("predis.feeder.v_load")) > 0
        # the exported CSV carries no critical-loop rows either
        assert "predis.hil." not in result.store.to_csv()


class TestInterSiteHil:
    def test_warned_and_traced(self):
        # crossing sites: the validator warns, and the exchange is hub-visible
        doc = hil_doc(hil_site="prismes", deadline_ns=100 * MS)
        report = validate_layers(parse_experiment(doc))
        assert any(i.code == "hil-inter-site" for i in report.layers["technical"])
        assert report.ok  # warning, not error
        result = run_conservative(parse_experiment(doc))
        assert len(result.store.query("predis.hil.i_meas")) > 0

    def test_tight_deadline_rejected(self):
        doc = hil_doc(hil_site="prismes", deadline_ns=10 * MS)
        report = validate_layers(parse_experiment(doc))
        assert any(i.code == "deadline-unachievable" for i in report.layers["technical"])
        assert not report.ok
