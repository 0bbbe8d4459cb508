"""Directional corrections, consistency scores, and the descent probe.

The score of stage cost k of component r against a correction a is
cs_k^(r) = <a, -w_k^(r) F grad(l~_k^(r))>: positive means the component on
its own would locally push the plan along the correction, negative that it
pushes against it. Open-loop scores use the plan's sensitivity matrix;
closed-loop scores use the executed trajectory's analogue with per-cycle
first-input gradients. Constraint variants ask whether an active constraint
blocks the correction locally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .costs import ComponentSet, CostContext, WeightSchedule, table_components
from .dynamics import (
    INPUT_DIMENSIONS,
    Plan,
    STATE_DIMENSIONS,
    SystemModel,
    linearize,
    rollout,
)
from .mpc import MpcTrace
from .sensitivity import (
    correction_coefficients,
    eliminate_stage_gradient,
    eliminated_gradient,
    first_input_gradient_table,
    input_space_image,
    state_space_image,
)
from .solver import WeightedObjective, eliminated_objective_gradient, ocp_objective, solve


class ZeroCorrectionError(ValueError):
    """Correction vector has no nonzero coefficient."""


class ProbeRejectedError(ValueError):
    """Descent probe preconditions not met (delta <= 0 or component not consistent)."""


class ProbeFailedError(RuntimeError):
    """No improving step length found; the component was not actually consistent here."""


@dataclass(frozen=True)
class DirectionalCorrection:
    """Desired local direction of plan change: state part a_x, input part a_u."""

    a_x: np.ndarray
    a_u: np.ndarray
    annotations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "a_x", np.asarray(self.a_x, dtype=float).reshape(-1))
        object.__setattr__(self, "a_u", np.asarray(self.a_u, dtype=float).reshape(-1))
        object.__setattr__(self, "annotations", tuple(self.annotations))

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.a_x**2) + np.sum(self.a_u**2)))

    def negated(self) -> "DirectionalCorrection":
        return DirectionalCorrection(-self.a_x, -self.a_u, self.annotations)

    @staticmethod
    def from_annotations(annotations, horizon: int, n_x: int = 7, n_u: int = 2) -> "DirectionalCorrection":
        """Build a unit-coefficient correction from (stage, dimension, sign) records."""
        if not annotations:
            raise ZeroCorrectionError("empty correction")
        a_x = np.zeros((horizon + 1) * n_x)
        a_u = np.zeros(horizon * n_u)
        seen = set()
        for stage, dim, sign in annotations:
            if sign not in (-1, 1):
                raise ValueError(f"annotation sign must be +1 or -1, got {sign!r}")
            if dim in STATE_DIMENSIONS:
                if not 0 <= stage <= horizon:
                    raise ValueError(f"stage {stage} outside [0, {horizon}] for state dimension {dim}")
                idx = ("x", stage * n_x + STATE_DIMENSIONS.index(dim))
            elif dim in INPUT_DIMENSIONS:
                if not 0 <= stage < horizon:
                    raise ValueError(f"stage {stage} outside [0, {horizon - 1}] for input dimension {dim}")
                idx = ("u", stage * n_u + INPUT_DIMENSIONS.index(dim))
            else:
                raise ValueError(f"unknown dimension {dim!r}")
            if idx in seen:
                raise ValueError(f"duplicate annotation for stage {stage} dimension {dim}")
            seen.add(idx)
            (a_x if idx[0] == "x" else a_u)[idx[1]] = float(sign)
        return DirectionalCorrection(a_x=a_x, a_u=a_u, annotations=tuple(annotations))


@dataclass(frozen=True)
class ConsistencyReport:
    """Stage-by-component score matrix with aggregations and diagnostics."""

    mode: str  # "open-loop" | "closed-loop"
    component_ids: tuple
    scores: np.ndarray  # (N+1, R) open-loop, (T, R) closed-loop
    cost_magnitudes: np.ndarray  # weighted per-stage (or per-cycle realized) values
    per_component_totals: np.ndarray  # (R,)
    ranking: tuple  # component ids, ascending total (most inconsistent first)
    solver_grad_norm: float

    def total(self, cid: str) -> float:
        return float(self.per_component_totals[self.component_ids.index(cid)])


def _rank(component_ids, totals) -> tuple:
    order = np.argsort(totals, kind="stable")
    return tuple(component_ids[i] for i in order)


def _check_correction(correction: DirectionalCorrection, n_state: int, n_input: int):
    if correction.a_x.shape[0] != n_state or correction.a_u.shape[0] != n_input:
        raise ValueError(
            f"correction shape mismatch: got ({correction.a_x.shape[0]}, "
            f"{correction.a_u.shape[0]}), expected ({n_state}, {n_input})"
        )
    if correction.norm == 0.0:
        raise ZeroCorrectionError("zero correction")


def score_components(
    plan: Plan,
    weight_values: np.ndarray,
    correction: DirectionalCorrection,
    model: SystemModel,
    components: ComponentSet,
    solver_grad_norm: float = float("nan"),
) -> ConsistencyReport:
    """Open-loop consistency report for an arbitrary component family."""
    N = plan.horizon
    _check_correction(correction, (N + 1) * model.n_x, N * model.n_u)
    coeffs = correction_coefficients(model, plan, components, correction.a_x, correction.a_u)
    weight_values = np.asarray(weight_values, dtype=float)
    scores = -weight_values * coeffs
    magnitudes = np.zeros_like(scores)
    for k in range(N + 1):
        u_k = plan.inputs[k] if k < N else None
        values, _, _ = components.stage_terms(k, plan.states[k], u_k)
        magnitudes[k] = weight_values[k] * values
    totals = scores.sum(axis=0)
    return ConsistencyReport(
        mode="open-loop",
        component_ids=tuple(components.ids),
        scores=scores,
        cost_magnitudes=magnitudes,
        per_component_totals=totals,
        ranking=_rank(components.ids, totals),
        solver_grad_norm=solver_grad_norm,
    )


def score_open_loop(
    plan: Plan,
    weights: WeightSchedule,
    correction: DirectionalCorrection,
    model: SystemModel,
    ctx: CostContext,
) -> ConsistencyReport:
    """Definition-1 scores of every (stage, component) pair at a solved plan."""
    objective = ocp_objective(weights, ctx)
    grad_norm = float(np.max(np.abs(eliminated_objective_gradient(model, plan, objective))))
    return score_components(
        plan, weights.values, correction, model, table_components(ctx), solver_grad_norm=grad_norm
    )


def score_closed_loop(
    trace: MpcTrace,
    weights: WeightSchedule,
    correction: DirectionalCorrection,
    model: SystemModel,
) -> ConsistencyReport:
    """Per-cycle consistency of each component along an executed MPC trajectory.

    Cycle t's score aggregates the component's weighted first-input gradients
    over the predicted stages of the plan computed at t.
    """
    if not trace.complete:
        raise ValueError("closed-loop scoring requires a complete trace")
    T = trace.T
    _check_correction(correction, (T + 1) * model.n_x, T * model.n_u)
    executed = Plan(states=trace.closed_loop_states, inputs=trace.executed_inputs)
    jacs = linearize(model, executed)
    v_cl = input_space_image(jacs, correction.a_x, model.n_x, model.n_u) + correction.a_u
    v_cl = v_cl.reshape(T, model.n_u)

    table = first_input_gradient_table(model, trace)  # (T, N+1, R, n_u)
    weighted = np.einsum("tkrc,kr->trc", table, weights.values)
    scores = -np.einsum("trc,tc->tr", weighted, v_cl)

    component_ids = tuple(weights.components)
    magnitudes = np.zeros((T, len(component_ids)))
    for t in range(T):
        components = table_components(trace.cycle_contexts[t])
        values, _, _ = components.stage_terms(0, trace.closed_loop_states[t], trace.executed_inputs[t])
        magnitudes[t] = weights.values[0] * values

    totals = scores.sum(axis=0)
    return ConsistencyReport(
        mode="closed-loop",
        component_ids=component_ids,
        scores=scores,
        cost_magnitudes=magnitudes,
        per_component_totals=totals,
        ranking=_rank(component_ids, totals),
        solver_grad_norm=float(np.max(trace.cycle_grad_norms)) if trace.T else float("nan"),
    )


def closed_loop_breakdown(
    trace: MpcTrace,
    weights: WeightSchedule,
    correction: DirectionalCorrection,
    model: SystemModel,
) -> np.ndarray:
    """Per-(cycle, predicted-stage, component) score decomposition, (T, N+1, R)."""
    T = trace.T
    _check_correction(correction, (T + 1) * model.n_x, T * model.n_u)
    executed = Plan(states=trace.closed_loop_states, inputs=trace.executed_inputs)
    jacs = linearize(model, executed)
    v_cl = input_space_image(jacs, correction.a_x, model.n_x, model.n_u) + correction.a_u
    v_cl = v_cl.reshape(T, model.n_u)
    table = first_input_gradient_table(model, trace)
    return -np.einsum("tkrc,kr,tc->tkr", table, weights.values, v_cl)


@dataclass(frozen=True)
class StageConstraint:
    """Differentiable stage inequality h(x_k, u_k) <= 0."""

    constraint_id: str
    stage: int
    value: Callable
    grad_x: Callable
    grad_u: Callable


@dataclass(frozen=True)
class ConstraintConsistencyResult:
    constraint_id: tuple  # (id, stage)
    active: bool
    activation_residual: float
    score: float
    blocking: bool


def score_constraint(
    plan: Plan,
    constraint: StageConstraint,
    correction: DirectionalCorrection,
    model: SystemModel,
    active_tol: float = 1e-6,
) -> ConstraintConsistencyResult:
    """Would relaxing this constraint move the plan along the correction?

    Inactive constraints are reported but never flagged blocking; an active
    constraint blocks when <a, -F grad(h~)> < 0.
    """
    N = plan.horizon
    _check_correction(correction, (N + 1) * model.n_x, N * model.n_u)
    k = constraint.stage
    x_k = plan.states[k]
    u_k = plan.inputs[k] if k < N else None
    h = float(constraint.value(x_k, u_k))
    active = abs(h) <= active_tol
    gx = np.asarray(constraint.grad_x(x_k, u_k), dtype=float)
    gu = None if k >= N else np.asarray(constraint.grad_u(x_k, u_k), dtype=float)
    grad_h = eliminate_stage_gradient(model, plan, k, gx, gu)
    jacs = linearize(model, plan)
    image_x = state_space_image(jacs, grad_h, model.n_x, model.n_u)
    score = -(float(correction.a_x @ image_x) + float(correction.a_u @ grad_h))
    return ConstraintConsistencyResult(
        constraint_id=(constraint.constraint_id, k),
        active=active,
        activation_residual=h,
        score=score,
        blocking=bool(active and score < 0.0),
    )


@dataclass(frozen=True)
class DescentProbe:
    """Certificate that a consistent component's weight bump admits an improving step."""

    component: tuple  # (stage, component id)
    delta: float
    epsilon: float
    new_objective: float
    old_objective: float
    correction_inner_product: float


def descent_probe(
    plan: Plan,
    component: tuple,
    correction: DirectionalCorrection,
    delta: float,
    model: SystemModel,
    weights,
    components: ComponentSet | CostContext,
    min_epsilon: float = 1e-12,
    shrink: float = 0.5,
) -> DescentProbe:
    """Step u* -> u* - eps*delta*grad(l~_k^(r)) and verify the bumped objective drops.

    ``plan`` must be the solved optimum; the probed component must score
    cs > 0 against the correction. The reported inner product <a, dzeta>
    uses the re-rollout difference, which for linear systems equals F du.
    """
    if delta <= 0:
        raise ProbeRejectedError("delta must be > 0")
    if isinstance(components, CostContext):
        components = table_components(components)
    weight_values = weights.values if isinstance(weights, WeightSchedule) else np.asarray(weights, dtype=float)
    k, cid = component
    r = components.ids.index(cid)
    N = plan.horizon
    _check_correction(correction, (N + 1) * model.n_x, N * model.n_u)

    coeffs = correction_coefficients(model, plan, components, correction.a_x, correction.a_u)
    cs = -weight_values[k, r] * coeffs[k, r]
    if cs <= 0:
        raise ProbeRejectedError(f"component {cid} at stage {k} is not consistent here (cs={cs:.3e})")

    objective = WeightedObjective(weights=weight_values, components=components)

    def bumped(p: Plan) -> float:
        u_k = p.inputs[k] if k < N else None
        values, _, _ = components.stage_terms(k, p.states[k], u_k)
        return objective.value(p) + delta * float(values[r])

    grad = eliminated_gradient(model, plan, components, cid, k).grad_u
    old = bumped(plan)
    epsilon = 1.0
    while epsilon >= min_epsilon:
        u_hat = plan.inputs.reshape(-1) - epsilon * delta * grad
        candidate = rollout(model, plan.states[0], u_hat.reshape(N, model.n_u))
        new = bumped(candidate)
        if np.isfinite(new) and new < old:
            d_x = (candidate.states - plan.states).reshape(-1)
            d_u = (candidate.inputs - plan.inputs).reshape(-1)
            inner = float(correction.a_x @ d_x + correction.a_u @ d_u)
            return DescentProbe(
                component=(k, cid),
                delta=delta,
                epsilon=epsilon,
                new_objective=new,
                old_objective=old,
                correction_inner_product=inner,
            )
        epsilon *= shrink
    raise ProbeFailedError(
        f"no improving step above {min_epsilon:g} for component {cid} at stage {k}"
    )


def resolve_probe(
    plan: Plan,
    component: tuple,
    correction: DirectionalCorrection,
    delta: float,
    model: SystemModel,
    weights,
    components: ComponentSet | CostContext,
    solver_cfg=None,
) -> float:
    """Optional stronger check: re-solve with the bumped weight and report <a, zeta_new - zeta*>."""
    from .solver import SolverConfig

    if isinstance(components, CostContext):
        components = table_components(components)
    weight_values = weights.values if isinstance(weights, WeightSchedule) else np.asarray(weights, dtype=float)
    k, cid = component
    r = components.ids.index(cid)
    bumped = weight_values.copy()
    bumped[k, r] += delta
    objective = WeightedObjective(weights=bumped, components=components)
    result = solve(model, plan.states[0], objective, solver_cfg or SolverConfig(), warm_start=plan.inputs)
    d_x = (result.plan.states - plan.states).reshape(-1)
    d_u = (result.plan.inputs - plan.inputs).reshape(-1)
    return float(correction.a_x @ d_x + correction.a_u @ d_u)


def aggregate(report: ConsistencyReport, mode: str, k: int = 3) -> dict:
    """Deterministic summary tables for the CLI and UI.

    Modes: ``per-component-total`` (ascending, most inconsistent first),
    ``per-stage`` (score summed over components per stage/cycle), and
    ``top-k`` (the k most inconsistent components).
    """
    if mode == "per-component-total":
        order = np.argsort(report.per_component_totals, kind="stable")
        rows = [[report.component_ids[i], float(report.per_component_totals[i])] for i in order]
        return {"columns": ["component", "total_score"], "rows": rows}
    if mode == "per-stage":
        sums = report.scores.sum(axis=1)
        label = "cycle" if report.mode == "closed-loop" else "stage"
        return {"columns": [label, "total_score"], "rows": [[int(i), float(s)] for i, s in enumerate(sums)]}
    if mode == "top-k":
        return {"columns": ["component"], "rows": [[cid] for cid in report.ranking[:k]]}
    raise ValueError(f"unknown aggregation mode {mode!r}")
