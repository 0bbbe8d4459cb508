"""Scenario, correction, report, and trajectory file formats.

Everything is canonical JSON: sorted keys, two-space indent, trailing
newline, shortest round-trip float repr. Serializing a parsed file
reproduces its bytes exactly, and every derived artifact is stamped with the
scenario's content hash so analyses cannot mix scenarios up. Parsers are
strict: unknown keys, non-finite numbers, and shape mismatches are rejected
with a field path rather than coerced.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .consistency import ConsistencyReport, DirectionalCorrection
from .costs import COMPONENTS, CostContext, WeightSchedule, default_weights
from .dynamics import INPUT_DIMENSIONS, Plan, STATE_DIMENSIONS, SystemModel, unicycle_model
from .geometry import ReferencePath
from .learning import LearnerConfig, LearnResult, RequirementSpec, SpeedBand
from .mpc import MpcTrace, PredictionModel
from .costs import LeadPrediction
from .solver import SolveResult, SolverConfig

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Input file violates the schema; carries the offending field path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def canonical_dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def canonical_bytes(obj) -> bytes:
    return canonical_dumps(obj).encode("utf-8")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        raise ValueError("cannot serialize non-finite numbers")
    return obj


def load_json(path_or_bytes):
    if isinstance(path_or_bytes, bytes):
        text = path_or_bytes.decode("utf-8")
    elif isinstance(path_or_bytes, str) and path_or_bytes.lstrip().startswith(("{", "[")):
        text = path_or_bytes
    else:
        with open(path_or_bytes, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError("$", f"invalid JSON: {exc}") from exc


def _require_mapping(obj, path):
    if not isinstance(obj, dict):
        raise FormatError(path, "expected an object")
    return obj


def _check_keys(obj, path, required, optional=()):
    _require_mapping(obj, path)
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise FormatError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    for key in required:
        if key not in obj:
            raise FormatError(f"{path}.{key}", "missing required key")


def _finite(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(path, "expected a number")
    v = float(value)
    if not np.isfinite(v):
        raise FormatError(path, "must be finite")
    return v


def _positive(value, path):
    v = _finite(value, path)
    if v <= 0:
        raise FormatError(path, "must be > 0")
    return v


def _integer(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise FormatError(path, "expected an integer")
    if minimum is not None and value < minimum:
        raise FormatError(path, f"must be >= {minimum}")
    return value


def _number_list(value, path, length=None):
    if not isinstance(value, list):
        raise FormatError(path, "expected an array")
    if length is not None and len(value) != length:
        raise FormatError(path, f"expected {length} entries, got {len(value)}")
    return np.array([_finite(v, f"{path}[{i}]") for i, v in enumerate(value)])


def _matrix(value, path, cols=None, rows=None):
    if not isinstance(value, list) or (rows is not None and len(value) != rows):
        raise FormatError(path, "expected an array" + (f" of {rows} rows" if rows else ""))
    out = []
    width = cols
    for i, row in enumerate(value):
        arr = _number_list(row, f"{path}[{i}]", length=width)
        width = arr.shape[0] if width is None else width
        out.append(arr)
    if not out:
        raise FormatError(path, "must not be empty")
    return np.array(out)


# ---------------------------------------------------------------------------
# Scenario files


@dataclass(frozen=True)
class Scenario:
    """Parsed scenario: problem geometry, context parameters, and options."""

    dt: float
    horizon: int
    initial_state: np.ndarray
    waypoints: np.ndarray
    v_ref: float
    d_w: float
    o_buffer: float
    t_h: float
    obstacles: tuple
    lead_agent: dict | None
    weights_spec: object  # "default" | np.ndarray | None
    mpc_T: int | None

    def to_dict(self) -> dict:
        doc = {
            "version": FORMAT_VERSION,
            "model": {"dt": self.dt, "horizon": self.horizon},
            "initial_state": list(self.initial_state),
            "path": [list(p) for p in self.waypoints],
            "context": {
                "v_ref": self.v_ref,
                "d_w": self.d_w,
                "o_buffer": self.o_buffer,
                "t_h": self.t_h,
            },
            "obstacles": [list(p) for p in self.obstacles],
        }
        if self.lead_agent is not None:
            doc["lead_agent"] = dict(self.lead_agent)
        if self.weights_spec is not None:
            doc["weights"] = (
                self.weights_spec
                if isinstance(self.weights_spec, str)
                else [list(row) for row in self.weights_spec]
            )
        if self.mpc_T is not None:
            doc["mpc"] = {"T": self.mpc_T}
        return doc

    @property
    def scenario_hash(self) -> str:
        return hashlib.sha256(canonical_bytes(self.to_dict())).hexdigest()

    def system_model(self) -> SystemModel:
        return unicycle_model(self.dt)

    def reference_path(self) -> ReferencePath:
        return ReferencePath.from_waypoints(self.waypoints)

    def base_context(self) -> CostContext:
        return CostContext(
            path=self.reference_path(),
            v_ref=self.v_ref,
            d_w=self.d_w,
            o_buffer=self.o_buffer,
            t_h=self.t_h,
            obstacles=self.obstacles,
        )

    def weight_schedule(self) -> WeightSchedule:
        if self.weights_spec is None or self.weights_spec == "default":
            return default_weights(self.horizon)
        return WeightSchedule(np.asarray(self.weights_spec, dtype=float))

    def prediction_model(self) -> PredictionModel | None:
        if self.lead_agent is None:
            return None
        la = self.lead_agent
        window = la.get("fault_window")
        return PredictionModel(
            truth_speed=la["truth_speed"],
            fault_window=tuple(window) if window is not None else None,
            fault_rate=la.get("fault_rate", 0.0),
            fault_onset_stage=la.get("fault_onset_stage", 0),
        )

    def lead_initial_arc(self) -> float | None:
        if self.lead_agent is None:
            return None
        path = self.reference_path()
        robot_arc = path.arc_length_of(self.initial_state[:2])
        return robot_arc + self.lead_agent["initial_arc_offset"]

    def solve_context(self) -> CostContext:
        """Context for a one-shot open-loop solve: cycle-0 predictions if a lead exists."""
        base = self.base_context()
        pm = self.prediction_model()
        if pm is None:
            return base
        pred = pm.predict(0, self.lead_initial_arc(), self.horizon, self.dt)
        return CostContext(
            path=base.path,
            v_ref=base.v_ref,
            d_w=base.d_w,
            o_buffer=base.o_buffer,
            t_h=base.t_h,
            obstacles=base.obstacles,
            lead=pred,
        )


def parse_scenario(source) -> Scenario:
    doc = load_json(source) if not isinstance(source, dict) else source
    _check_keys(
        doc,
        "$",
        required=("version", "model", "initial_state", "path", "context"),
        optional=("obstacles", "lead_agent", "weights", "mpc"),
    )
    if doc["version"] != FORMAT_VERSION:
        raise FormatError("$.version", f"unsupported version {doc['version']!r}")

    _check_keys(doc["model"], "$.model", required=("dt", "horizon"))
    dt = _positive(doc["model"]["dt"], "$.model.dt")
    horizon = _integer(doc["model"]["horizon"], "$.model.horizon", minimum=1)

    initial_state = _number_list(doc["initial_state"], "$.initial_state", length=7)
    waypoints = _matrix(doc["path"], "$.path", cols=2)
    if waypoints.shape[0] < 2:
        raise FormatError("$.path", "need at least two waypoints")

    ctx_doc = doc["context"]
    _check_keys(ctx_doc, "$.context", required=("v_ref", "d_w", "o_buffer", "t_h"))
    v_ref = _positive(ctx_doc["v_ref"], "$.context.v_ref")
    d_w = _positive(ctx_doc["d_w"], "$.context.d_w")
    o_buffer = _positive(ctx_doc["o_buffer"], "$.context.o_buffer")
    t_h = _positive(ctx_doc["t_h"], "$.context.t_h")

    obstacles = ()
    if "obstacles" in doc:
        obs = _matrix(doc["obstacles"], "$.obstacles", cols=2) if doc["obstacles"] else np.zeros((0, 2))
        obstacles = tuple(obs)

    lead_agent = None
    if "lead_agent" in doc and doc["lead_agent"] is not None:
        la = doc["lead_agent"]
        _check_keys(
            la,
            "$.lead_agent",
            required=("initial_arc_offset", "truth_speed"),
            optional=("fault_window", "fault_rate", "fault_onset_stage"),
        )
        lead_agent = {
            "initial_arc_offset": _positive(la["initial_arc_offset"], "$.lead_agent.initial_arc_offset"),
            "truth_speed": _positive(la["truth_speed"], "$.lead_agent.truth_speed"),
        }
        if "fault_window" in la and la["fault_window"] is not None:
            window = la["fault_window"]
            if not isinstance(window, list) or len(window) != 2:
                raise FormatError("$.lead_agent.fault_window", "expected [t_a, t_b]")
            t_a = _integer(window[0], "$.lead_agent.fault_window[0]", minimum=0)
            t_b = _integer(window[1], "$.lead_agent.fault_window[1]", minimum=0)
            if t_a > t_b:
                raise FormatError("$.lead_agent.fault_window", "t_a must be <= t_b")
            lead_agent["fault_window"] = [t_a, t_b]
        if "fault_rate" in la:
            lead_agent["fault_rate"] = _finite(la["fault_rate"], "$.lead_agent.fault_rate")
        if "fault_onset_stage" in la:
            lead_agent["fault_onset_stage"] = _integer(
                la["fault_onset_stage"], "$.lead_agent.fault_onset_stage", minimum=0
            )

    weights_spec = None
    if "weights" in doc:
        if doc["weights"] == "default":
            weights_spec = "default"
        else:
            weights_spec = _matrix(
                doc["weights"], "$.weights", cols=len(COMPONENTS), rows=horizon + 1
            )
            if np.any(weights_spec < 0):
                raise FormatError("$.weights", "weights must be >= 0")

    mpc_T = None
    if "mpc" in doc:
        _check_keys(doc["mpc"], "$.mpc", required=("T",))
        mpc_T = _integer(doc["mpc"]["T"], "$.mpc.T", minimum=1)

    return Scenario(
        dt=dt,
        horizon=horizon,
        initial_state=initial_state,
        waypoints=waypoints,
        v_ref=v_ref,
        d_w=d_w,
        o_buffer=o_buffer,
        t_h=t_h,
        obstacles=obstacles,
        lead_agent=lead_agent,
        weights_spec=weights_spec,
        mpc_T=mpc_T,
    )


# ---------------------------------------------------------------------------
# Correction files


def parse_correction(source, horizon: int, mode: str = "open-loop") -> DirectionalCorrection:
    doc = load_json(source) if not isinstance(source, dict) else source
    _check_keys(doc, "$", required=("version", "annotations"))
    if doc["version"] != FORMAT_VERSION:
        raise FormatError("$.version", f"unsupported version {doc['version']!r}")
    raw = doc["annotations"]
    if not isinstance(raw, list):
        raise FormatError("$.annotations", "expected an array")
    if not raw:
        raise FormatError("$.annotations", "empty correction")
    annotations = []
    for i, entry in enumerate(raw):
        path = f"$.annotations[{i}]"
        _check_keys(entry, path, required=("dimension", "sign"), optional=("stage", "cycle"))
        has_stage = "stage" in entry
        has_cycle = "cycle" in entry
        if has_stage == has_cycle:
            raise FormatError(path, "exactly one of 'stage' or 'cycle' required")
        stage = _integer(entry["stage"] if has_stage else entry["cycle"], f"{path}.stage", minimum=0)
        dim = entry["dimension"]
        if dim not in STATE_DIMENSIONS + INPUT_DIMENSIONS:
            raise FormatError(f"{path}.dimension", f"unknown dimension {dim!r}")
        sign = entry["sign"]
        if sign not in (1, -1):
            raise FormatError(f"{path}.sign", "must be +1 or -1")
        annotations.append((stage, dim, sign))
    try:
        return DirectionalCorrection.from_annotations(annotations, horizon=horizon)
    except ValueError as exc:
        raise FormatError("$.annotations", str(exc)) from exc


def correction_to_dict(correction: DirectionalCorrection, mode: str = "open-loop") -> dict:
    key = "cycle" if mode == "closed-loop" else "stage"
    return {
        "version": FORMAT_VERSION,
        "annotations": [
            {key: int(stage), "dimension": dim, "sign": int(sign)}
            for stage, dim, sign in correction.annotations
        ],
    }


# ---------------------------------------------------------------------------
# Weight schedule files


def weights_to_dict(schedule: WeightSchedule) -> dict:
    return {
        "version": FORMAT_VERSION,
        "components": list(schedule.components),
        "values": [list(row) for row in schedule.values],
    }


def parse_weights(source) -> WeightSchedule:
    doc = load_json(source) if not isinstance(source, dict) else source
    _check_keys(doc, "$", required=("version", "components", "values"))
    comps = doc["components"]
    if not isinstance(comps, list) or not all(isinstance(c, str) for c in comps):
        raise FormatError("$.components", "expected an array of component ids")
    values = _matrix(doc["values"], "$.values", cols=len(comps))
    if np.any(values < 0):
        raise FormatError("$.values", "weights must be >= 0")
    return WeightSchedule(values=values, components=tuple(comps))


# ---------------------------------------------------------------------------
# Plan and trace artifacts


def solver_diagnostics(cfg: SolverConfig, result: SolveResult | None = None, **extra) -> dict:
    doc = {
        "grad_tol": cfg.grad_tol,
        "max_iters": cfg.max_iters,
        "reg_init": cfg.reg_init,
        "line_search_shrink": cfg.line_search_shrink,
    }
    if result is not None:
        doc.update(
            grad_inf_norm=result.grad_inf_norm,
            iterations=result.iterations,
            converged=result.converged,
        )
    doc.update(extra)
    return doc


def plan_to_dict(scenario_hash: str, result: SolveResult, cfg: SolverConfig, breakdown) -> dict:
    J, table = breakdown
    totals = table.sum(axis=0)
    return {
        "version": FORMAT_VERSION,
        "kind": "plan",
        "scenario_hash": scenario_hash,
        "states": [list(row) for row in result.plan.states],
        "inputs": [list(row) for row in result.plan.inputs],
        "objective": J,
        "objective_breakdown": {
            "per_stage_component": [list(row) for row in table],
            "per_component_totals": {cid: float(totals[i]) for i, cid in enumerate(COMPONENTS)},
        },
        "solver": solver_diagnostics(cfg, result),
    }


def parse_plan(source) -> tuple[str, Plan]:
    doc = load_json(source) if not isinstance(source, dict) else source
    if doc.get("kind") != "plan":
        raise FormatError("$.kind", "expected a plan artifact")
    states = _matrix(doc["states"], "$.states", cols=7)
    inputs = _matrix(doc["inputs"], "$.inputs", cols=2)
    return doc["scenario_hash"], Plan(states=states, inputs=inputs)


def trace_to_dict(scenario_hash: str, trace: MpcTrace, cfg: SolverConfig) -> dict:
    cycles = []
    for t in range(trace.T):
        plan = trace.cycle_plans[t]
        ctx = trace.cycle_contexts[t]
        cycle = {
            "states": [list(row) for row in plan.states],
            "inputs": [list(row) for row in plan.inputs],
            "grad_inf_norm": float(trace.cycle_grad_norms[t]),
        }
        if ctx.lead is not None:
            cycle["lead_arcs"] = list(ctx.lead.arcs)
            cycle["lead_speeds"] = list(ctx.lead.speeds)
        cycles.append(cycle)
    doc = {
        "version": FORMAT_VERSION,
        "kind": "trace",
        "scenario_hash": scenario_hash,
        "closed_loop_states": [list(row) for row in trace.closed_loop_states],
        "executed_inputs": [list(row) for row in trace.executed_inputs],
        "cycles": cycles,
        "solver": solver_diagnostics(cfg),
    }
    if trace.lead_truth_arcs is not None:
        doc["lead_truth_arcs"] = list(trace.lead_truth_arcs)
        doc["lead_truth_speed"] = trace.lead_truth_speed
    return doc


def parse_trace(source, scenario: Scenario) -> tuple[str, MpcTrace]:
    doc = load_json(source) if not isinstance(source, dict) else source
    if doc.get("kind") != "trace":
        raise FormatError("$.kind", "expected a trace artifact")
    states = _matrix(doc["closed_loop_states"], "$.closed_loop_states", cols=7)
    inputs = _matrix(doc["executed_inputs"], "$.executed_inputs", cols=2)
    base = scenario.base_context()
    plans = []
    contexts = []
    grad_norms = []
    for t, cycle in enumerate(doc["cycles"]):
        path = f"$.cycles[{t}]"
        plan = Plan(
            states=_matrix(cycle["states"], f"{path}.states", cols=7),
            inputs=_matrix(cycle["inputs"], f"{path}.inputs", cols=2),
        )
        plans.append(plan)
        if "lead_arcs" in cycle:
            lead = LeadPrediction(
                arcs=_number_list(cycle["lead_arcs"], f"{path}.lead_arcs"),
                speeds=_number_list(cycle["lead_speeds"], f"{path}.lead_speeds"),
            )
            contexts.append(
                CostContext(
                    path=base.path,
                    v_ref=base.v_ref,
                    d_w=base.d_w,
                    o_buffer=base.o_buffer,
                    t_h=base.t_h,
                    obstacles=base.obstacles,
                    lead=lead,
                )
            )
        else:
            contexts.append(base)
        grad_norms.append(_finite(cycle["grad_inf_norm"], f"{path}.grad_inf_norm"))
    trace = MpcTrace(
        closed_loop_states=states,
        executed_inputs=inputs,
        cycle_plans=plans,
        cycle_contexts=contexts,
        cycle_grad_norms=np.array(grad_norms),
        lead_truth_arcs=(
            _number_list(doc["lead_truth_arcs"], "$.lead_truth_arcs")
            if "lead_truth_arcs" in doc
            else None
        ),
        lead_truth_speed=doc.get("lead_truth_speed"),
    )
    return doc["scenario_hash"], trace


def parse_artifact(source, scenario: Scenario):
    """Dispatch a plan or trace artifact by its 'kind' tag."""
    doc = load_json(source) if not isinstance(source, dict) else source
    kind = doc.get("kind")
    if kind == "plan":
        return parse_plan(doc)
    if kind == "trace":
        return parse_trace(doc, scenario)
    raise FormatError("$.kind", f"unknown artifact kind {kind!r}")


# ---------------------------------------------------------------------------
# Reports


def report_to_dict(
    scenario_hash: str,
    report: ConsistencyReport,
    correction: DirectionalCorrection,
    solver: dict,
) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": "report",
        "scenario_hash": scenario_hash,
        "mode": report.mode,
        "components": list(report.component_ids),
        "scores": [list(row) for row in report.scores],
        "cost_magnitudes": [list(row) for row in report.cost_magnitudes],
        "per_component_totals": list(report.per_component_totals),
        "ranking": list(report.ranking),
        "correction": correction_to_dict(correction, report.mode),
        "solver": solver,
    }


def parse_report(source) -> dict:
    doc = load_json(source) if not isinstance(source, dict) else source
    if doc.get("kind") != "report":
        raise FormatError("$.kind", "expected a report artifact")
    _matrix(doc["scores"], "$.scores", cols=len(doc["components"]))
    _matrix(doc["cost_magnitudes"], "$.cost_magnitudes", cols=len(doc["components"]))
    return doc


def report_csv(report_doc: dict) -> str:
    """Flat CSV of the score matrix: one row per stage/cycle, one column per component."""
    label = "cycle" if report_doc["mode"] == "closed-loop" else "stage"
    lines = [",".join([label] + report_doc["components"])]
    for i, row in enumerate(report_doc["scores"]):
        lines.append(",".join([str(i)] + [repr(float(v)) for v in row]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Requirements and learning artifacts


def parse_requirements(source) -> tuple[RequirementSpec, LearnerConfig]:
    doc = load_json(source) if not isinstance(source, dict) else source
    _check_keys(
        doc,
        "$",
        required=("version",),
        optional=("speed", "path", "headway", "components", "max_iterations", "margin", "mode"),
    )
    if doc["version"] != FORMAT_VERSION:
        raise FormatError("$.version", f"unsupported version {doc['version']!r}")
    speed_band = None
    if "speed" in doc:
        _check_keys(doc["speed"], "$.speed", required=("tolerance",), optional=("from_stage", "to_stage"))
        speed_band = SpeedBand(
            tolerance=_positive(doc["speed"]["tolerance"], "$.speed.tolerance"),
            from_stage=_integer(doc["speed"].get("from_stage", 0), "$.speed.from_stage", minimum=0),
            to_stage=(
                _integer(doc["speed"]["to_stage"], "$.speed.to_stage", minimum=0)
                if "to_stage" in doc["speed"]
                else None
            ),
        )
    path_band = None
    if "path" in doc:
        _check_keys(doc["path"], "$.path", required=("tolerance",))
        path_band = _positive(doc["path"]["tolerance"], "$.path.tolerance")
    headway_band = None
    if "headway" in doc:
        _check_keys(doc["headway"], "$.headway", required=("tolerance",))
        headway_band = _positive(doc["headway"]["tolerance"], "$.headway.tolerance")
    if speed_band is None and path_band is None and headway_band is None:
        raise FormatError("$", "at least one requirement band required")

    requirements = RequirementSpec(speed_band=speed_band, path_band=path_band, headway_band=headway_band)

    mode = doc.get("mode")
    if mode is None:
        mode = "closed-loop" if headway_band is not None else "open-loop"
    if mode not in ("open-loop", "closed-loop"):
        raise FormatError("$.mode", f"unknown mode {mode!r}")
    components = tuple(doc.get("components", COMPONENTS))
    for cid in components:
        if cid not in COMPONENTS:
            raise FormatError("$.components", f"unknown component {cid!r}")
    cfg = LearnerConfig(
        max_iterations=_integer(doc.get("max_iterations", 40), "$.max_iterations", minimum=1),
        mode=mode,
        margin=_positive(doc.get("margin", 1e-3), "$.margin"),
        components=components,
    )
    return requirements, cfg


def learn_result_to_dict(scenario_hash: str, result: LearnResult) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": "learn_result",
        "scenario_hash": scenario_hash,
        "converged": result.converged,
        "dataset_size": result.dataset_size,
        "weights": weights_to_dict(result.weights),
        "history": [
            {
                "iteration": rec.iteration,
                "corrections_added": rec.corrections_added,
                "max_speed_error": rec.max_speed_error,
                "max_path_error": rec.max_path_error,
                "max_headway_error": rec.max_headway_error,
                "objective": rec.objective,
                "hinge_objective": rec.hinge_objective,
                "weights": [list(row) for row in rec.weights],
            }
            for rec in result.history
        ],
    }
