#!/usr/bin/env python3
"""Regenerate the shipped scenario, correction, and requirements files.

The S-curve corridor scenario family: a gently curving reference path with
an improperly sensed obstacle sitting right on it (open-loop analysis), a
lead agent with scripted faulty predictions (closed-loop analysis), and the
two weight-learning setups.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ocplens.io_formats import canonical_dumps, parse_scenario  # noqa: E402

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def s_curve_waypoints(x_min=-5.0, x_max=125.0, step=0.4):
    xs = np.arange(x_min, x_max + step / 2, step)
    ys = 1.25 * (1.0 - np.cos(np.pi * xs / 40.0))
    return [[round(float(x), 6), round(float(y), 6)] for x, y in zip(xs, ys)]


PATH = s_curve_waypoints()

# Obstacle buffer wider than the corridor half-width: an obstacle sitting on
# the path cannot be fully cleared laterally, so avoiding it costs speed.
BASE_CONTEXT = {"v_ref": 10.0, "d_w": 2.0, "o_buffer": 3.0, "t_h": 1.0}


def scenario_open_loop_obstacle():
    # The obstacle sits on the path near the edge of what the horizon can
    # reach at reference speed, so slowing down (not just swerving) is the
    # optimizer's way out.
    x_obs = 47.5
    y_obs = round(float(1.25 * (1.0 - np.cos(np.pi * x_obs / 40.0))), 6)
    return {
        "version": 1,
        "model": {"dt": 0.1, "horizon": 50},
        "initial_state": [0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0],
        "path": PATH,
        "context": dict(BASE_CONTEXT),
        "obstacles": [[x_obs, y_obs]],
        "weights": "default",
    }


def scenario_closed_loop_faulty_prediction():
    return {
        "version": 1,
        "model": {"dt": 0.1, "horizon": 50},
        "initial_state": [0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0],
        "path": PATH,
        "context": dict(BASE_CONTEXT),
        "obstacles": [],
        "lead_agent": {
            "initial_arc_offset": 10.0,
            "truth_speed": 10.0,
            "fault_window": [10, 19],
            "fault_rate": -1.0,
            "fault_onset_stage": 0,
        },
        "weights": "default",
        "mpc": {"T": 30},
    }


def straight_waypoints(x_min=-10.0, x_max=500.0, step=0.5):
    xs = np.arange(x_min, x_max + step / 2, step)
    return [[round(float(x), 6), 0.0] for x in xs]


def scenario_learn_open_loop():
    # Straight corridor, robot starting slow with a heading error: speed,
    # path, and boundary requirements all generate corrections with cleanly
    # separated effects (longitudinal vs lateral). The heading error makes
    # early iterates drift well past the tight corridor, but a well-weighted
    # plan can recover inside the path band, so the loop can terminate.
    ctx = dict(BASE_CONTEXT)
    ctx["d_w"] = 0.2
    return {
        "version": 1,
        "model": {"dt": 0.1, "horizon": 50},
        "initial_state": [0.0, 0.0, 0.05, 8.0, 0.0, 0.0, 0.0],
        "path": straight_waypoints(),
        "context": ctx,
        "obstacles": [],
    }


def scenario_learn_closed_loop():
    # Reference speed deliberately below the lead's speed; the lead's
    # initial offset follows the t_h * v_ref convention, which also puts the
    # headway penalty on the active side early on.
    ctx = dict(BASE_CONTEXT)
    ctx["v_ref"] = 8.0
    return {
        "version": 1,
        "model": {"dt": 0.1, "horizon": 50},
        "initial_state": [0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0],
        "path": straight_waypoints(),
        "context": ctx,
        "obstacles": [],
        "lead_agent": {
            "initial_arc_offset": 8.0,
            "truth_speed": 10.0,
            "fault_window": [0, 29],
            "fault_rate": -1.0,
            "fault_onset_stage": 10,
        },
        "mpc": {"T": 30},
    }


CORRECTIONS = {
    "correction_speed_up_stage10.json": {
        "version": 1,
        "annotations": [{"stage": 10, "dimension": "V", "sign": 1}],
    },
    "correction_speed_up_cycle21.json": {
        "version": 1,
        "annotations": [{"cycle": 21, "dimension": "V", "sign": 1}],
    },
}

REQUIREMENTS = {
    "requirements_open_loop.json": {
        "version": 1,
        "speed": {"tolerance": 0.25, "from_stage": 16},
        "path": {"tolerance": 0.25},
        "components": [
            "TANGENTIAL_JERK",
            "ANGULAR_JERK",
            "LATERAL_ACCELERATION",
            "REFERENCE_SPEED",
            "REFERENCE_PATH",
            "BOUNDARY",
        ],
        "max_iterations": 40,
        "mode": "open-loop",
    },
    "requirements_closed_loop.json": {
        "version": 1,
        "headway": {"tolerance": 0.1},
        "components": [
            "TANGENTIAL_JERK",
            "ANGULAR_JERK",
            "LATERAL_ACCELERATION",
            "REFERENCE_SPEED",
            "REFERENCE_PATH",
            "BOUNDARY",
            "HEADWAY",
            "RELATIVE_SPEED",
        ],
        "max_iterations": 30,
        "mode": "closed-loop",
    },
}


def main():
    os.makedirs(OUT_DIR, exist_ok=True)
    scenarios = {
        "open_loop_obstacle.json": scenario_open_loop_obstacle(),
        "closed_loop_faulty_prediction.json": scenario_closed_loop_faulty_prediction(),
        "learn_open_loop.json": scenario_learn_open_loop(),
        "learn_closed_loop.json": scenario_learn_closed_loop(),
    }
    for name, doc in scenarios.items():
        parse_scenario(doc)  # validate before writing
        with open(os.path.join(OUT_DIR, name), "w", encoding="utf-8") as fh:
            fh.write(canonical_dumps(doc))
        print("wrote", name)
    for name, doc in {**CORRECTIONS, **REQUIREMENTS}.items():
        with open(os.path.join(OUT_DIR, name), "w", encoding="utf-8") as fh:
            fh.write(canonical_dumps(doc))
        print("wrote", name)


if __name__ == "__main__":
    main()
