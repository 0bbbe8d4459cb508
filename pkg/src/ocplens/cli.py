"""Command-line surface: solve | analyze | simulate | learn | serve.

Exit codes: 0 success (and solver convergence where applicable), 1 input or
format errors, 2 non-convergence or simulation/learning failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .consistency import ZeroCorrectionError, score_closed_loop, score_open_loop
from .costs import assemble_objective
from .dynamics import Plan
from .io_formats import (
    FormatError,
    canonical_dumps,
    learn_result_to_dict,
    parse_artifact,
    parse_correction,
    parse_requirements,
    parse_scenario,
    plan_to_dict,
    report_csv,
    report_to_dict,
    solver_diagnostics,
    trace_to_dict,
    weights_to_dict,
)
from .learning import run_algorithm1
from .mpc import MpcTrace, run_mpc
from .solver import SolverConfig, SolverError, solve_ocp

SCENARIO_DIR_ENV = "OCPLENS_SCENARIO_DIR"


def _resolve_scenario_path(value: str) -> str:
    if os.path.exists(value):
        return value
    root = os.environ.get(SCENARIO_DIR_ENV)
    if root:
        candidate = os.path.join(root, value)
        if os.path.exists(candidate):
            return candidate
        candidate_json = candidate + ".json"
        if os.path.exists(candidate_json):
            return candidate_json
    return value


def _solver_config(args) -> SolverConfig:
    kwargs = {}
    if args.grad_tol is not None:
        kwargs["grad_tol"] = args.grad_tol
    if args.max_iters is not None:
        kwargs["max_iters"] = args.max_iters
    return SolverConfig(**kwargs)


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_solve(args) -> int:
    scenario = parse_scenario(_resolve_scenario_path(args.scenario))
    cfg = _solver_config(args)
    ctx = scenario.solve_context()
    weights = scenario.weight_schedule()
    try:
        result = solve_ocp(scenario.system_model(), scenario.initial_state, weights, ctx, cfg)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    breakdown = assemble_objective(result.plan, weights, ctx)
    doc = plan_to_dict(scenario.scenario_hash, result, cfg, breakdown)
    _write(args.out, canonical_dumps(doc))
    print(f"objective {result.objective:.6f}  grad_inf {result.grad_inf_norm:.3e}  iterations {result.iterations}")
    if not result.converged:
        print("solver did not converge", file=sys.stderr)
        return 2
    return 0


def cmd_analyze(args) -> int:
    scenario = parse_scenario(_resolve_scenario_path(args.scenario))
    kind_hash, artifact = parse_artifact(args.artifact, scenario)
    if kind_hash != scenario.scenario_hash:
        print("scenario hash mismatch between scenario and artifact", file=sys.stderr)
        return 1
    model = scenario.system_model()
    weights = scenario.weight_schedule()
    if isinstance(artifact, Plan):
        correction = parse_correction(args.correction, horizon=artifact.horizon)
        report = score_open_loop(artifact, weights, correction, model, scenario.solve_context())
        solver = solver_diagnostics(SolverConfig(), grad_inf_norm=report.solver_grad_norm)
    else:
        correction = parse_correction(args.correction, horizon=artifact.T, mode="closed-loop")
        report = score_closed_loop(artifact, weights, correction, model)
        solver = solver_diagnostics(SolverConfig(), grad_inf_norm=report.solver_grad_norm)
    doc = report_to_dict(scenario.scenario_hash, report, correction, solver)
    _write(args.out, canonical_dumps(doc))
    csv_path = os.path.splitext(args.out)[0] + ".csv"
    _write(csv_path, report_csv(doc))
    print(f"{'component':<22}{'total score':>14}")
    for cid in report.ranking:
        print(f"{cid:<22}{report.total(cid):>14.6f}")
    return 0


def cmd_simulate(args) -> int:
    scenario = parse_scenario(_resolve_scenario_path(args.scenario))
    if scenario.mpc_T is None:
        print("scenario has no mpc.T section", file=sys.stderr)
        return 1
    cfg = _solver_config(args)
    trace = run_mpc(
        scenario.system_model(),
        scenario.initial_state,
        scenario.weight_schedule(),
        scenario.base_context(),
        scenario.prediction_model(),
        scenario.mpc_T,
        cfg,
        lead_initial_arc=scenario.lead_initial_arc(),
    )
    doc = trace_to_dict(scenario.scenario_hash, trace, cfg)
    _write(args.out, canonical_dumps(doc))
    if not trace.complete:
        print(f"simulation failed at cycle {trace.failed_cycle}: {trace.failure_message}", file=sys.stderr)
        return 2
    print(f"simulated {trace.T} cycles")
    return 0


def cmd_learn(args) -> int:
    scenario = parse_scenario(_resolve_scenario_path(args.scenario))
    requirements, learner_cfg = parse_requirements(args.requirements)
    result = run_algorithm1(
        scenario.system_model(),
        scenario.initial_state,
        scenario.base_context(),
        requirements,
        learner_cfg,
        horizon=scenario.horizon,
        prediction_model=scenario.prediction_model() if learner_cfg.mode == "closed-loop" else None,
        T=scenario.mpc_T,
        lead_initial_arc=scenario.lead_initial_arc(),
    )
    doc = learn_result_to_dict(scenario.scenario_hash, result)
    _write(args.out, canonical_dumps(doc))
    weights_path = os.path.splitext(args.out)[0] + ".weights.json"
    _write(weights_path, canonical_dumps(weights_to_dict(result.weights)))
    print(f"{'converged' if result.converged else 'iteration cap reached'} after {len(result.history)} iterations")
    return 0 if result.converged else 2


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    scenario_dir = args.scenario_dir or os.environ.get(SCENARIO_DIR_ENV) or "."
    app = create_app(scenario_dir)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocplens", description="OCP consistency analysis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_solver_flags(p):
        p.add_argument("--grad-tol", type=float, default=None)
        p.add_argument("--max-iters", type=int, default=None)

    p_solve = sub.add_parser("solve", help="solve a scenario's OCP")
    p_solve.add_argument("--scenario", required=True)
    p_solve.add_argument("--out", required=True)
    add_solver_flags(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_an = sub.add_parser("analyze", help="score cost components against a correction")
    p_an.add_argument("--scenario", required=True)
    p_an.add_argument("--artifact", required=True, help="plan or trace file from solve/simulate")
    p_an.add_argument("--correction", required=True)
    p_an.add_argument("--out", required=True)
    p_an.set_defaults(func=cmd_analyze)

    p_sim = sub.add_parser("simulate", help="run the receding-horizon simulation")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--out", required=True)
    add_solver_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_learn = sub.add_parser("learn", help="learn stage-wise weights from requirements")
    p_learn.add_argument("--scenario", required=True)
    p_learn.add_argument("--requirements", required=True)
    p_learn.add_argument("--out", required=True)
    p_learn.set_defaults(func=cmd_learn)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--scenario-dir", default=None)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, ZeroCorrectionError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
