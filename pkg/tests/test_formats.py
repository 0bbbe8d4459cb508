import json
import os

import numpy as np
import pytest

from ocplens.costs import COMPONENTS, default_weights
from ocplens.io_formats import (
    FormatError,
    canonical_dumps,
    parse_correction,
    parse_plan,
    parse_report,
    parse_requirements,
    parse_scenario,
    parse_trace,
    parse_weights,
    report_csv,
    weights_to_dict,
)

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def scenario_path(name):
    return os.path.join(SCENARIO_DIR, name)


def minimal_scenario_dict():
    return {
        "version": 1,
        "model": {"dt": 0.1, "horizon": 5},
        "initial_state": [0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0],
        "path": [[-5.0, 0.0], [50.0, 0.0]],
        "context": {"v_ref": 10.0, "d_w": 2.0, "o_buffer": 2.0, "t_h": 1.0},
        "obstacles": [],
    }


def test_shipped_scenarios_parse_and_roundtrip_byte_identically():
    for name in os.listdir(SCENARIO_DIR):
        if not name.startswith(("open_", "closed_", "learn_")):
            continue
        path = scenario_path(name)
        raw = open(path, "rb").read()
        scenario = parse_scenario(path)
        assert canonical_dumps(scenario.to_dict()).encode() == raw, name


def test_scenario_rejects_unknown_keys_with_field_path():
    doc = minimal_scenario_dict()
    doc["extra"] = 1
    with pytest.raises(FormatError) as err:
        parse_scenario(doc)
    assert "extra" in str(err.value)
    doc = minimal_scenario_dict()
    doc["model"]["frobnicate"] = True
    with pytest.raises(FormatError) as err:
        parse_scenario(doc)
    assert "frobnicate" in str(err.value)


def test_scenario_rejects_bad_numbers():
    doc = minimal_scenario_dict()
    doc["model"]["dt"] = -0.1
    with pytest.raises(FormatError) as err:
        parse_scenario(doc)
    assert "dt" in str(err.value)
    doc = minimal_scenario_dict()
    doc["initial_state"] = [0.0] * 6
    with pytest.raises(FormatError):
        parse_scenario(doc)
    doc = minimal_scenario_dict()
    doc["context"]["v_ref"] = float("nan")
    with pytest.raises(ValueError):
        parse_scenario(json.loads(json.dumps(doc)))


def test_scenario_hash_stable_and_content_sensitive():
    a = parse_scenario(minimal_scenario_dict())
    b = parse_scenario(minimal_scenario_dict())
    assert a.scenario_hash == b.scenario_hash
    doc = minimal_scenario_dict()
    doc["context"]["v_ref"] = 9.0
    assert parse_scenario(doc).scenario_hash != a.scenario_hash


def test_correction_file_roundtrip_and_validation():
    doc = {"version": 1, "annotations": [{"stage": 3, "dimension": "V", "sign": 1}]}
    corr = parse_correction(doc, horizon=10)
    assert corr.a_x[3 * 7 + 3] == 1.0
    with pytest.raises(FormatError):
        parse_correction({"version": 1, "annotations": []}, horizon=10)
    with pytest.raises(FormatError):
        parse_correction(
            {"version": 1, "annotations": [{"stage": 3, "cycle": 3, "dimension": "V", "sign": 1}]},
            horizon=10,
        )
    with pytest.raises(FormatError):
        parse_correction(
            {"version": 1, "annotations": [{"stage": 3, "dimension": "Q", "sign": 1}]}, horizon=10
        )
    with pytest.raises(FormatError):
        parse_correction(
            {"version": 1, "annotations": [{"stage": 3, "dimension": "V", "sign": 2}]}, horizon=10
        )


def test_cycle_key_accepted_for_closed_loop_corrections():
    doc = {"version": 1, "annotations": [{"cycle": 2, "dimension": "V", "sign": -1}]}
    corr = parse_correction(doc, horizon=5, mode="closed-loop")
    assert corr.a_x[2 * 7 + 3] == -1.0


def test_weights_file_roundtrip():
    schedule = default_weights(4)
    doc = weights_to_dict(schedule)
    parsed = parse_weights(doc)
    assert np.array_equal(parsed.values, schedule.values)
    assert parsed.components == schedule.components
    text = canonical_dumps(doc)
    assert canonical_dumps(weights_to_dict(parsed)) == text


def test_requirements_parse_and_mode_inference():
    req, cfg = parse_requirements(
        {"version": 1, "speed": {"tolerance": 0.25, "from_stage": 16}, "path": {"tolerance": 0.25}}
    )
    assert cfg.mode == "open-loop"
    assert req.speed_band.from_stage == 16
    req, cfg = parse_requirements({"version": 1, "headway": {"tolerance": 0.1}})
    assert cfg.mode == "closed-loop"
    with pytest.raises(FormatError):
        parse_requirements({"version": 1})
    with pytest.raises(FormatError):
        parse_requirements({"version": 1, "speed": {"tolerance": 0.25}, "components": ["NOPE"]})


def test_report_csv_layout():
    doc = {
        "mode": "open-loop",
        "components": ["A", "B"],
        "scores": [[1.0, -2.5], [0.25, 0.0]],
    }
    csv = report_csv(doc)
    lines = csv.strip().split("\n")
    assert lines[0] == "stage,A,B"
    assert lines[1] == "0,1.0,-2.5"
    assert lines[2] == "1,0.25,0.0"


def test_canonical_dumps_is_fixed_point():
    doc = minimal_scenario_dict()
    once = canonical_dumps(doc)
    again = canonical_dumps(json.loads(once))
    assert once == again
    assert once.endswith("\n")
