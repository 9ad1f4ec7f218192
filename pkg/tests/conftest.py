"""Shared fixtures: a small canonical model, mapping tables, and experiment builders."""

import copy
import json

import pytest

from fedkit import model as im
from fedkit.experiment import parse_experiment


MODEL_DOC = {
    "version": "1.0.0",
    "units": [
        {"symbol": "V", "base": "V"},
        {"symbol": "kV", "base": "V", "scale": 1000.0},
        {"symbol": "A", "base": "A"},
        {"symbol": "W", "base": "W"},
        {"symbol": "kW", "base": "W", "scale": 1000.0},
        {"symbol": "degC", "base": "K", "offset": 273.15},
        {"symbol": "K", "base": "K"},
        {"symbol": "1", "base": "1"},
    ],
    "entries": [
        {"name": "siteA.load.p", "kind": "measurement", "unit": "W"},
        {"name": "siteA.feeder.v", "kind": "measurement", "unit": "V"},
        {"name": "siteA.der.i_inj", "kind": "measurement", "unit": "A"},
        {"name": "siteA.der.p_set", "kind": "setpoint", "unit": "W"},
        {"name": "siteA.breaker.closed", "kind": "status", "unit": "1", "domain": "boolean"},
    ],
}

TABLE_DOC = {
    "site": "siteA",
    "rows": [
        {"local": "P_load", "canonical": "siteA.load.p", "unit": "kW"},
        {"local": "V1", "canonical": "siteA.feeder.v", "unit": "V"},
        {"local": "I_der", "canonical": "siteA.der.i_inj", "unit": "A"},
        {"local": "P_set", "canonical": "siteA.der.p_set", "unit": "kW"},
    ],
}


@pytest.fixture
def canonical_model():
    return im.load_model(MODEL_DOC)


@pytest.fixture
def mapping_table(canonical_model):
    return im.load_table(TABLE_DOC, canonical_model)


def twosite_doc():
    """A small, fully valid two-site experiment document (deep-copied per call)."""
    return copy.deepcopy(
        {
            "id": "twosite-test",
            "model": {
                "version": "1.0.0",
                "units": [
                    {"symbol": "V", "base": "V"},
                    {"symbol": "A", "base": "A"},
                ],
                "entries": [
                    {"name": "predis.feeder.v_load", "kind": "measurement", "unit": "V"},
                    {"name": "predis.feeder.i_src", "kind": "measurement", "unit": "A"},
                    {"name": "prismes.der.i_inj", "kind": "measurement", "unit": "A"},
                    {"name": "prismes.ctrl.v_set", "kind": "setpoint", "unit": "V"},
                ],
            },
            "sites": [
                {
                    "id": "predis",
                    "allow_list": ["start_experiment", "stop_experiment", "set_value", "query_trace",
                                   "get_status", "list_resources"],
                    "mapping": {
                        "rows": [
                            {"local": "V_load", "canonical": "predis.feeder.v_load", "unit": "V"},
                            {"local": "I_src", "canonical": "predis.feeder.i_src", "unit": "A"},
                            {"local": "I_inj", "canonical": "prismes.der.i_inj", "unit": "A"},
                        ]
                    },
                    "links": [
                        {"peer": "prismes", "base_delay_ms": 15, "jitter": {"type": "uniform", "amplitude_ms": 5},
                         "loss": 0.001, "non_overtaking": False}
                    ],
                },
                {
                    "id": "prismes",
                    "allow_list": ["get_status", "query_trace", "list_resources"],
                    "mapping": {
                        "rows": [
                            {"local": "U_mes", "canonical": "predis.feeder.v_load", "unit": "V"},
                            {"local": "I_cmd", "canonical": "prismes.der.i_inj", "unit": "A"},
                            {"local": "U_set", "canonical": "prismes.ctrl.v_set", "unit": "V"},
                        ]
                    },
                    "links": [
                        {"peer": "predis", "base_delay_ms": 15, "jitter": {"type": "uniform", "amplitude_ms": 5},
                         "loss": 0.001, "non_overtaking": False}
                    ],
                },
            ],
            "participants": [
                {
                    "id": "grid",
                    "site": "predis",
                    "kind": "power_continuous",
                    "step_ns": 10_000_000,
                    "offers": ["predis.feeder.v_load", "predis.feeder.i_src"],
                    "requires": ["prismes.der.i_inj"],
                    "model": {
                        "type": "grid", "vs": 400.0, "rs": 1.0, "rl": 10.0,
                        "outputs": {"v": "predis.feeder.v_load", "i": "predis.feeder.i_src"},
                        "inputs": {"i_inj": "prismes.der.i_inj"},
                        "input_defaults": {"prismes.der.i_inj": 0.0},
                    },
                },
                {
                    "id": "der_ctrl",
                    "site": "prismes",
                    "kind": "controller",
                    "step_ns": 10_000_000,
                    "offers": ["prismes.der.i_inj"],
                    "requires": ["predis.feeder.v_load", "prismes.ctrl.v_set"],
                    "model": {
                        "type": "droop", "gain": 0.5, "tau": 0.1, "v_set": 380.0,
                        "inputs": {"v": "predis.feeder.v_load", "v_set": "prismes.ctrl.v_set"},
                        "outputs": {"i": "prismes.der.i_inj"},
                        "input_defaults": {"predis.feeder.v_load": 363.636363636, "prismes.ctrl.v_set": 380.0},
                    },
                },
            ],
            "routes": [
                {"from": ["grid", "predis.feeder.v_load"], "to": ["der_ctrl", "predis.feeder.v_load"]},
                {"from": ["der_ctrl", "prismes.der.i_inj"], "to": ["grid", "prismes.der.i_inj"]},
            ],
            "stages": [{"id": "run", "entry_actions": [], "transitions": []}],
            "initial_stage": "run",
            "sync": "conservative",
            "macro_step_ns": 10_000_000,
            "duration_ns": 2_000_000_000,
            "seed": 42,
        }
    )


@pytest.fixture
def twosite_experiment():
    return parse_experiment(twosite_doc())


def as_text(doc) -> str:
    return json.dumps(doc)
