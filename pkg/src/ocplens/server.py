"""HTTP/JSON service exposing solve, analyze, simulate, learn, and weight edits.

Thin wrappers over the same functions the CLI uses, so both surfaces emit
byte-identical artifacts. The only shared mutable state is the job/report
table, guarded by a lock; long-running work (simulate, learn) goes through
background jobs polled at /jobs/{id}, and at most one learn job per scenario
runs at a time.
"""

from __future__ import annotations

import hashlib
import os
import threading
import uuid

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse

from .consistency import ZeroCorrectionError, score_closed_loop, score_open_loop
from .costs import assemble_objective
from .dynamics import Plan
from .io_formats import (
    FormatError,
    canonical_bytes,
    learn_result_to_dict,
    parse_artifact,
    parse_correction,
    parse_requirements,
    parse_scenario,
    parse_weights,
    plan_to_dict,
    report_csv,
    report_to_dict,
    solver_diagnostics,
    trace_to_dict,
)
from .learning import run_algorithm1
from .mpc import run_mpc
from .solver import SolverConfig, SolverError, solve_ocp


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field

    def response(self) -> JSONResponse:
        body = {"error": {"code": self.code, "message": self.message}}
        if self.field:
            body["error"]["field"] = self.field
        return JSONResponse(status_code=self.status, content=body)


def create_app(scenario_dir: str = ".") -> FastAPI:
    app = FastAPI(title="ocplens", docs_url=None, redoc_url=None)
    jobs: dict = {}
    reports: dict = {}
    active_learn_hashes: set = set()
    table_lock = threading.Lock()

    # ------------------------------------------------------------------ utils

    def load_scenario(payload):
        if payload is None:
            raise ApiError(400, "invalid_scenario", "missing 'scenario'", "$.scenario")
        if isinstance(payload, dict):
            return parse_scenario(payload)
        if isinstance(payload, str):
            for candidate in (payload, payload + ".json"):
                full = os.path.join(scenario_dir, candidate)
                if os.path.exists(full):
                    return parse_scenario(full)
            raise ApiError(404, "unknown_scenario", f"scenario {payload!r} not found", "$.scenario")
        raise ApiError(400, "invalid_scenario", "scenario must be an object or a name", "$.scenario")

    def solver_config(body) -> SolverConfig:
        overrides = body.get("solver") or {}
        if not isinstance(overrides, dict):
            raise ApiError(400, "invalid_solver_config", "solver must be an object", "$.solver")
        allowed = {"grad_tol", "max_iters"}
        unknown = set(overrides) - allowed
        if unknown:
            raise ApiError(400, "invalid_solver_config", f"unknown key {sorted(unknown)[0]}", "$.solver")
        try:
            return SolverConfig(**overrides)
        except (TypeError, ValueError) as exc:
            raise ApiError(400, "invalid_solver_config", str(exc), "$.solver")

    def run_solve(scenario, cfg, weights=None):
        ctx = scenario.solve_context()
        schedule = weights if weights is not None else scenario.weight_schedule()
        try:
            result = solve_ocp(scenario.system_model(), scenario.initial_state, schedule, ctx, cfg)
        except SolverError as exc:
            raise ApiError(422, "solver_failure", str(exc))
        breakdown = assemble_objective(result.plan, schedule, ctx)
        return plan_to_dict(scenario.scenario_hash, result, cfg, breakdown)

    def store_report(doc) -> str:
        report_id = hashlib.sha256(canonical_bytes(doc)).hexdigest()[:16]
        with table_lock:
            reports[report_id] = doc
        return report_id

    def spawn_job(kind: str, scenario_hash: str, work):
        job_id = uuid.uuid4().hex[:12]
        with table_lock:
            jobs[job_id] = {"status": "queued", "kind": kind, "scenario_hash": scenario_hash}

        def runner():
            with table_lock:
                jobs[job_id]["status"] = "running"
            try:
                result = work()
                with table_lock:
                    jobs[job_id].update(status="done", result=result)
            except Exception as exc:  # surfaced through the job record
                with table_lock:
                    jobs[job_id].update(status="error", error=str(exc))
            finally:
                if kind == "learn":
                    with table_lock:
                        active_learn_hashes.discard(scenario_hash)

        threading.Thread(target=runner, daemon=True).start()
        return job_id

    async def body_of(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "invalid_json", "request body is not valid JSON", "$")
        if not isinstance(body, dict):
            raise ApiError(400, "invalid_json", "request body must be an object", "$")
        return body

    @app.exception_handler(ApiError)
    async def api_error_handler(_, exc: ApiError):
        return exc.response()

    @app.exception_handler(FormatError)
    async def format_error_handler(_, exc: FormatError):
        return ApiError(400, "invalid_format", str(exc), exc.field).response()

    @app.exception_handler(ZeroCorrectionError)
    async def zero_correction_handler(_, exc: ZeroCorrectionError):
        return ApiError(400, "empty_correction", str(exc)).response()

    # -------------------------------------------------------------- endpoints

    @app.get("/scenarios")
    def list_scenarios():
        entries = []
        for name in sorted(os.listdir(scenario_dir)):
            if not name.endswith(".json"):
                continue
            try:
                scenario = parse_scenario(os.path.join(scenario_dir, name))
            except (FormatError, ValueError):
                continue
            entries.append(
                {
                    "name": name[: -len(".json")],
                    "scenario_hash": scenario.scenario_hash,
                    "horizon": scenario.horizon,
                    "dt": scenario.dt,
                    "mpc_T": scenario.mpc_T,
                    "has_lead_agent": scenario.lead_agent is not None,
                    "scenario": scenario.to_dict(),
                }
            )
        return {"scenarios": entries}

    @app.post("/solve")
    async def solve_endpoint(request: Request):
        body = await body_of(request)
        scenario = load_scenario(body.get("scenario"))
        cfg = solver_config(body)
        return run_solve(scenario, cfg)

    @app.post("/analyze")
    async def analyze_endpoint(request: Request):
        body = await body_of(request)
        scenario = load_scenario(body.get("scenario"))
        if "artifact" not in body:
            raise ApiError(400, "missing_artifact", "missing 'artifact'", "$.artifact")
        if "correction" not in body:
            raise ApiError(400, "missing_correction", "missing 'correction'", "$.correction")
        artifact_hash, artifact = parse_artifact(body["artifact"], scenario)
        if artifact_hash != scenario.scenario_hash:
            raise ApiError(409, "hash_mismatch", "artifact was produced from a different scenario")
        model = scenario.system_model()
        weights = scenario.weight_schedule()
        if isinstance(artifact, Plan):
            correction = parse_correction(body["correction"], horizon=artifact.horizon)
            report = score_open_loop(artifact, weights, correction, model, scenario.solve_context())
        else:
            correction = parse_correction(body["correction"], horizon=artifact.T, mode="closed-loop")
            report = score_closed_loop(artifact, weights, correction, model)
        solver = solver_diagnostics(SolverConfig(), grad_inf_norm=report.solver_grad_norm)
        doc = report_to_dict(scenario.scenario_hash, report, correction, solver)
        report_id = store_report(doc)
        return {"report_id": report_id, "report": doc, "scenario_hash": scenario.scenario_hash}

    @app.post("/weights")
    async def weights_endpoint(request: Request):
        body = await body_of(request)
        scenario = load_scenario(body.get("scenario"))
        cfg = solver_config(body)
        schedule = scenario.weight_schedule()
        if "weights" in body and "multipliers" in body:
            raise ApiError(400, "invalid_weights", "give either 'weights' or 'multipliers', not both")
        if "weights" in body:
            schedule = parse_weights(body["weights"])
            if schedule.horizon != scenario.horizon:
                raise ApiError(400, "invalid_weights", "weight horizon does not match scenario", "$.weights")
        elif "multipliers" in body:
            multipliers = body["multipliers"]
            if not isinstance(multipliers, dict):
                raise ApiError(400, "invalid_weights", "multipliers must be an object", "$.multipliers")
            for cid, m in multipliers.items():
                if cid not in schedule.components:
                    raise ApiError(400, "invalid_weights", f"unknown component {cid!r}", "$.multipliers")
                if isinstance(m, bool) or not isinstance(m, (int, float)) or m < 0:
                    raise ApiError(400, "invalid_weights", f"multiplier for {cid} must be >= 0", "$.multipliers")
            schedule = schedule.scaled({k: float(v) for k, v in multipliers.items()})
        plan_doc = run_solve(scenario, cfg, weights=schedule)
        from .io_formats import weights_to_dict

        return {"plan": plan_doc, "weights": weights_to_dict(schedule), "scenario_hash": scenario.scenario_hash}

    @app.post("/simulate")
    async def simulate_endpoint(request: Request):
        body = await body_of(request)
        scenario = load_scenario(body.get("scenario"))
        if scenario.mpc_T is None:
            raise ApiError(400, "invalid_scenario", "scenario has no mpc.T section", "$.scenario.mpc")
        cfg = solver_config(body)

        def work():
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
            if not trace.complete:
                raise RuntimeError(f"simulation failed at cycle {trace.failed_cycle}: {trace.failure_message}")
            return trace_to_dict(scenario.scenario_hash, trace, cfg)

        job_id = spawn_job("simulate", scenario.scenario_hash, work)
        return {"job_id": job_id, "scenario_hash": scenario.scenario_hash}

    @app.post("/learn")
    async def learn_endpoint(request: Request):
        body = await body_of(request)
        scenario = load_scenario(body.get("scenario"))
        if "requirements" not in body:
            raise ApiError(400, "missing_requirements", "missing 'requirements'", "$.requirements")
        requirements, learner_cfg = parse_requirements(body["requirements"])
        with table_lock:
            if scenario.scenario_hash in active_learn_hashes:
                raise ApiError(409, "learn_in_progress", "a learn job for this scenario is already running")
            active_learn_hashes.add(scenario.scenario_hash)

        def work():
            result = run_algorithm1(
                scenario.system_model(),
                scenario.initial_state,
                scenario.base_context(),
                requirements,
                learner_cfg,
                horizon=scenario.horizon,
                prediction_model=(
                    scenario.prediction_model() if learner_cfg.mode == "closed-loop" else None
                ),
                T=scenario.mpc_T,
                lead_initial_arc=scenario.lead_initial_arc(),
            )
            return learn_result_to_dict(scenario.scenario_hash, result)

        job_id = spawn_job("learn", scenario.scenario_hash, work)
        return {"job_id": job_id, "scenario_hash": scenario.scenario_hash}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        with table_lock:
            job = jobs.get(job_id)
            if job is None:
                raise ApiError(404, "unknown_job", f"no job {job_id!r}")
            return dict(job)

    @app.get("/report/{report_id}.csv")
    def get_report_csv(report_id: str):
        with table_lock:
            doc = reports.get(report_id)
        if doc is None:
            raise ApiError(404, "unknown_report", f"no report {report_id!r}")
        return PlainTextResponse(report_csv(doc))

    @app.get("/report/{report_id}")
    def get_report(report_id: str):
        with table_lock:
            doc = reports.get(report_id)
        if doc is None:
            raise ApiError(404, "unknown_report", f"no report {report_id!r}")
        return doc

    frontend_dist = os.path.join(os.path.dirname(__file__), "..", "..", "frontend", "dist")

    @app.get("/")
    def index():
        page = os.path.join(frontend_dist, "index.html")
        if os.path.exists(page):
            return FileResponse(page)
        return PlainTextResponse("ocplens service (no frontend build present)")

    @app.get("/app.js")
    def app_js():
        bundle = os.path.join(frontend_dist, "app.js")
        if os.path.exists(bundle):
            return FileResponse(bundle, media_type="text/javascript")
        raise ApiError(404, "no_frontend", "frontend bundle not built")

    return app
