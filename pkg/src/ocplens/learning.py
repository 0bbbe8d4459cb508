"""Requirement-driven corrections and the outer weight-learning loop.

Each iteration solves the current problem (one OCP, or a full MPC run in
closed-loop mode), derives directional corrections from violated
requirements, appends them to the cumulative dataset, and re-solves the
hinge-loss weight problem. The loop stops when a trajectory meets every
requirement or the iteration cap is hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import COMPONENTS, CostContext, WeightSchedule, table_components
from .consistency import DirectionalCorrection
from .dynamics import Plan, SystemModel, V, X, Y, linearize
from .mpc import MpcTrace, PredictionModel, run_mpc
from .sensitivity import correction_coefficients, first_input_gradient_table, input_space_image
from .solver import SolverConfig, solve_ocp
from .weight_lp import CorrectionSample, LearningProblem, hinge_objective, solve_weight_lp


@dataclass(frozen=True)
class SpeedBand:
    """Stay within ``tolerance`` of v_ref over stages [from_stage, to_stage]."""

    tolerance: float
    from_stage: int = 0
    to_stage: int | None = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("speed tolerance must be > 0")


@dataclass(frozen=True)
class RequirementSpec:
    """Violation bands that generate corrections; any subset may be present."""

    speed_band: SpeedBand | None = None
    path_band: float | None = None  # lateral offset tolerance [m]
    headway_band: float | None = None  # closed-loop headway error tolerance [m]

    def __post_init__(self):
        if self.path_band is not None and self.path_band <= 0:
            raise ValueError("path tolerance must be > 0")
        if self.headway_band is not None and self.headway_band <= 0:
            raise ValueError("headway tolerance must be > 0")


@dataclass(frozen=True)
class LearnerConfig:
    max_iterations: int = 40
    mode: str = "open-loop"  # or "closed-loop"
    margin: float = 1e-3
    components: tuple = COMPONENTS
    per_component_normalization: bool = False
    solver_cfg: SolverConfig = SolverConfig()

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.mode not in ("open-loop", "closed-loop"):
            raise ValueError(f"unknown learner mode {self.mode!r}")


@dataclass
class IterationRecord:
    iteration: int
    weights: np.ndarray  # active-component matrix (N+1, R_active)
    corrections_added: int
    max_speed_error: float
    max_path_error: float
    max_headway_error: float
    objective: float
    hinge_objective: float | None


@dataclass
class LearnResult:
    weights: WeightSchedule  # full-width schedule; inactive components zero
    history: list
    converged: bool
    dataset_size: int


def generate_open_loop_corrections(
    plan: Plan, requirements: RequirementSpec, ctx: CostContext
) -> list[DirectionalCorrection]:
    """One single-stage correction per requirement violation.

    Speed-band violations put +-1 on v at the violating stage (signed toward
    the band); path-band violations put the unit vector toward the robot's
    path projection on (X, Y). Returns an empty list when every requirement
    holds.
    """
    N = plan.horizon
    n_x, n_u = plan.states.shape[1], plan.inputs.shape[1]
    corrections = []

    if requirements.speed_band is not None:
        band = requirements.speed_band
        last = band.to_stage if band.to_stage is not None else N
        for k in range(band.from_stage, last + 1):
            err = plan.states[k, V] - ctx.v_ref
            if abs(err) > band.tolerance:
                sign = 1.0 if err < 0 else -1.0
                a_x = np.zeros((N + 1) * n_x)
                a_x[k * n_x + V] = sign
                corrections.append(
                    DirectionalCorrection(
                        a_x=a_x, a_u=np.zeros(N * n_u), annotations=[(k, "V", int(sign))]
                    )
                )

    if requirements.path_band is not None:
        for k in range(N + 1):
            p = plan.states[k, [X, Y]]
            dist, grad = ctx.path.lateral_offset_gradient(p)
            if dist > requirements.path_band:
                toward = -grad  # unit vector from the robot toward its projection
                a_x = np.zeros((N + 1) * n_x)
                a_x[k * n_x + X] = toward[0]
                a_x[k * n_x + Y] = toward[1]
                corrections.append(
                    DirectionalCorrection(
                        a_x=a_x, a_u=np.zeros(N * n_u), annotations=[(k, "LATERAL", 1)]
                    )
                )

    return corrections


def closed_loop_headway_errors(trace: MpcTrace, ctx: CostContext) -> np.ndarray:
    """True headway minus desired gap (t_h times the lead's true speed), per cycle."""
    if trace.lead_truth_arcs is None:
        raise ValueError("trace has no lead agent")
    desired = ctx.t_h * trace.lead_truth_speed
    errors = np.empty(trace.T + 1)
    for t in range(trace.T + 1):
        robot_arc = ctx.path.arc_length_of(trace.closed_loop_states[t, [X, Y]])
        errors[t] = (trace.lead_truth_arcs[t] - robot_arc) - desired
    return errors


def generate_closed_loop_corrections(
    trace: MpcTrace, requirements: RequirementSpec, ctx: CostContext
) -> list[DirectionalCorrection]:
    """One correction per cycle where the true headway leaves its band.

    Each points along the path tangent at the robot's position, signed to
    shrink the headway error (forward when lagging, backward when too close).
    """
    if requirements.headway_band is None:
        return []
    T = trace.T
    n_x = trace.closed_loop_states.shape[1]
    n_u = trace.executed_inputs.shape[1]
    errors = closed_loop_headway_errors(trace, ctx)
    corrections = []
    for t in range(T + 1):
        if abs(errors[t]) > requirements.headway_band:
            tangent = ctx.path.arc_length_gradient(trace.closed_loop_states[t, [X, Y]])
            sign = 1.0 if errors[t] > 0 else -1.0  # positive error: robot lags, push forward
            a_x = np.zeros((T + 1) * n_x)
            a_x[t * n_x + X] = sign * tangent[0]
            a_x[t * n_x + Y] = sign * tangent[1]
            corrections.append(
                DirectionalCorrection(
                    a_x=a_x, a_u=np.zeros(T * n_u), annotations=[(t, "TANGENT", int(sign))]
                )
            )
    return corrections


def open_loop_sample(
    model: SystemModel,
    plan: Plan,
    correction: DirectionalCorrection,
    ctx: CostContext,
    active_components: tuple,
    ref: str,
) -> CorrectionSample:
    """Consistency coefficients <a, F grad(l~_k^(r))> restricted to the learned components."""
    components = table_components(ctx)
    coeffs = correction_coefficients(model, plan, components, correction.a_x, correction.a_u)
    cols = [components.ids.index(cid) for cid in active_components]
    return CorrectionSample(trajectory_ref=ref, coefficients=coeffs[:, cols], correction=correction)


def closed_loop_sample(
    model: SystemModel,
    trace: MpcTrace,
    correction: DirectionalCorrection,
    active_components: tuple,
    ref: str,
) -> CorrectionSample:
    """Closed-loop coefficients via F^cl and per-cycle first-input gradients."""
    executed = Plan(states=trace.closed_loop_states, inputs=trace.executed_inputs)
    jacs = linearize(model, executed)
    v_cl = input_space_image(jacs, correction.a_x, model.n_x, model.n_u) + correction.a_u
    v_cl = v_cl.reshape(trace.T, model.n_u)
    table = first_input_gradient_table(model, trace)  # (T, N+1, R, n_u)
    coeffs = np.einsum("tkrc,tc->kr", table, v_cl)
    all_ids = table_components(trace.cycle_contexts[0]).ids
    cols = [all_ids.index(cid) for cid in active_components]
    return CorrectionSample(trajectory_ref=ref, coefficients=coeffs[:, cols], correction=correction)


# Components acting along the path direction versus across it. A correction
# judges the group aligned with its own direction: couplings into the
# orthogonal group exist only through trajectory transients (heading wiggle,
# speed ringing), and their noise-level hinge terms would pin weights the
# aligned data clearly supports.
LONGITUDINAL_COMPONENTS = frozenset(
    {"TANGENTIAL_JERK", "REFERENCE_SPEED", "HEADWAY", "RELATIVE_SPEED"}
)
LATERAL_COMPONENTS = frozenset(
    {"ANGULAR_JERK", "LATERAL_ACCELERATION", "REFERENCE_PATH", "BOUNDARY"}
)

_ANNOTATION_GROUPS = {
    "V": LONGITUDINAL_COMPONENTS,
    "TANGENT": LONGITUDINAL_COMPONENTS,
    "LATERAL": LATERAL_COMPONENTS,
}


def _correction_group(correction: DirectionalCorrection) -> frozenset | None:
    groups = {_ANNOTATION_GROUPS.get(dim) for _, dim, _ in correction.annotations}
    if len(groups) == 1 and None not in groups:
        return groups.pop()
    return None


def prepare_learning_samples(samples, components: tuple, margin: float) -> tuple:
    """LP-ready dataset: group filtering, scale normalization, inert floor.

    Three deterministic steps between raw coefficients and the hinge
    problem. (1) Keep only the coefficient columns of the component group
    each sample's correction is aligned with (everything when the alignment
    is mixed or unknown): orthogonal-group couplings are trajectory-transient
    noise. (2) Normalize every component column by its dataset-wide maximum
    magnitude, so the shared consistency margin demands comparable weight
    from strongly and weakly coupled components instead of letting
    position-scale couplings hog the normalization budget. (3) Zero
    couplings too small to ever deactivate their hinge. Raw samples are
    unchanged.
    """
    filtered = []
    for sample in samples:
        cleaned = sample.coefficients.copy()
        group = _correction_group(sample.correction) if sample.correction is not None else None
        if group is not None:
            for r, cid in enumerate(components):
                if cid not in group:
                    cleaned[:, r] = 0.0
        filtered.append(cleaned)

    stacked = np.stack(filtered)
    col_scale = np.abs(stacked).max(axis=(0, 1))
    col_scale[col_scale == 0.0] = 1.0

    out = []
    for sample, cleaned in zip(samples, filtered):
        cleaned = cleaned / col_scale[None, :]
        cleaned[np.abs(cleaned) < margin / cleaned.shape[0]] = 0.0
        out.append(CorrectionSample(trajectory_ref=sample.trajectory_ref, coefficients=cleaned))
    return tuple(out)


def embed_weights(active_values: np.ndarray, active_components: tuple) -> WeightSchedule:
    """Expand an active-component weight matrix to the full component order."""
    N1 = active_values.shape[0]
    full = np.zeros((N1, len(COMPONENTS)))
    for i, cid in enumerate(active_components):
        full[:, COMPONENTS.index(cid)] = active_values[:, i]
    return WeightSchedule(values=full, components=COMPONENTS)


def run_algorithm1(
    model: SystemModel,
    x_init,
    ctx: CostContext,
    requirements: RequirementSpec,
    cfg: LearnerConfig,
    horizon: int,
    prediction_model: PredictionModel | None = None,
    T: int | None = None,
    lead_initial_arc: float | None = None,
) -> LearnResult:
    """Alternate trajectory generation, correction derivation, and weight re-fitting.

    Open-loop mode solves one OCP per iteration and checks the speed/path
    bands; closed-loop mode runs a full MPC simulation and checks the
    headway band against the lead's true motion. The correction dataset is
    cumulative across iterations. Weights start uniform over the learned
    components and always satisfy the normalization and monotonicity
    constraints.
    """
    if cfg.mode == "closed-loop" and (prediction_model is None or T is None):
        raise ValueError("closed-loop learning requires a prediction model and T")

    samples: list[CorrectionSample] = []
    history: list[IterationRecord] = []
    active = tuple(cfg.components)
    total = horizon + 1.0
    active_values = np.full((horizon + 1, len(active)), total / ((horizon + 1) * len(active)))
    converged = False
    cut_anchors: dict = {}

    for iteration in range(cfg.max_iterations):
        if cfg.mode == "open-loop":
            schedule = embed_weights(active_values, active)
            result = solve_ocp(model, x_init, schedule, ctx, cfg.solver_cfg)
            plan = result.plan
            corrections = generate_open_loop_corrections(plan, requirements, ctx)
            speed_err, path_err = _open_loop_errors(plan, ctx)
            headway_err = 0.0
            objective = result.objective
            new_samples = [
                open_loop_sample(model, plan, corr, ctx, active, f"iter{iteration}.{i}")
                for i, corr in enumerate(corrections)
            ]
        else:
            schedule = embed_weights(active_values, active)
            trace = run_mpc(
                model,
                x_init,
                schedule,
                ctx,
                prediction_model,
                T,
                cfg.solver_cfg,
                lead_initial_arc=lead_initial_arc,
            )
            if not trace.complete:
                return LearnResult(
                    weights=schedule,
                    history=history,
                    converged=False,
                    dataset_size=len(samples),
                )
            corrections = generate_closed_loop_corrections(trace, requirements, ctx)
            errors = closed_loop_headway_errors(trace, ctx)
            speed_err = path_err = 0.0
            headway_err = float(np.max(np.abs(errors)))
            objective = float(np.sum(trace.cycle_grad_norms))
            new_samples = [
                closed_loop_sample(model, trace, corr, active, f"iter{iteration}.{i}")
                for i, corr in enumerate(corrections)
            ]

        hinge = None
        if corrections:
            samples.extend(new_samples)
            problem = LearningProblem(
                samples=prepare_learning_samples(samples, active, cfg.margin),
                margin=cfg.margin,
                horizon=active_values.shape[0] - 1,
                components=active,
                per_component_normalization=cfg.per_component_normalization,
            )
            learned = solve_weight_lp(problem, hint=active_values, cut_anchors=cut_anchors)
            active_values = learned.values
            hinge = hinge_objective(problem, active_values)

        history.append(
            IterationRecord(
                iteration=iteration,
                weights=active_values.copy(),
                corrections_added=len(corrections),
                max_speed_error=speed_err,
                max_path_error=path_err,
                max_headway_error=headway_err,
                objective=objective,
                hinge_objective=hinge,
            )
        )
        if not corrections:
            converged = True
            break

    return LearnResult(
        weights=embed_weights(active_values, active),
        history=history,
        converged=converged,
        dataset_size=len(samples),
    )


def _open_loop_errors(plan: Plan, ctx: CostContext) -> tuple[float, float]:
    speed = float(np.max(np.abs(plan.states[:, V] - ctx.v_ref)))
    path = max(
        ctx.path.lateral_offset_gradient(plan.states[k, [X, Y]])[0] for k in range(plan.horizon + 1)
    )
    return speed, float(path)
