"""Receding-horizon simulation with a lead agent and fault-injectable predictions.

Each cycle solves the full-horizon OCP, executes only the first input, and
advances the true world: the robot through its dynamics and the lead agent
at constant speed along the reference path. Predictions handed to the OCP
can be scripted to decelerate incorrectly over a window of cycles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import CostContext, LeadPrediction, WeightSchedule
from .dynamics import Plan, SystemModel
from .solver import SolverConfig, SolverError, solve_ocp


@dataclass(frozen=True)
class PredictionModel:
    """Lead-agent truth motion plus an optional scripted prediction fault.

    Truth is constant-speed travel along the path. During cycles inside
    ``fault_window`` (inclusive), predictions decelerate at ``fault_rate``
    from ``fault_onset_stage`` onward, clamped at zero speed; outside the
    window they extrapolate the truth.
    """

    truth_speed: float
    fault_window: tuple[int, int] | None = None
    fault_rate: float = 0.0
    fault_onset_stage: int = 0

    def __post_init__(self):
        if self.fault_window is not None and self.fault_window[0] > self.fault_window[1]:
            raise ValueError("fault_window must satisfy t_a <= t_b")

    def is_faulty(self, cycle: int) -> bool:
        return self.fault_window is not None and self.fault_window[0] <= cycle <= self.fault_window[1]

    def predict(self, cycle: int, lead_arc: float, horizon: int, dt: float) -> LeadPrediction:
        speeds = np.full(horizon + 1, self.truth_speed)
        if self.is_faulty(cycle):
            stages = np.arange(horizon + 1)
            ramp = np.maximum(stages - self.fault_onset_stage, 0)
            speeds = np.maximum(self.truth_speed + self.fault_rate * dt * ramp, 0.0)
        arcs = np.empty(horizon + 1)
        arcs[0] = lead_arc
        arcs[1:] = lead_arc + np.cumsum(speeds[:-1]) * dt
        return LeadPrediction(arcs=arcs, speeds=speeds)


@dataclass(frozen=True)
class MpcTrace:
    """Closed-loop record: executed trajectory plus every cycle's plan and context."""

    closed_loop_states: np.ndarray  # (T+1, n_x)
    executed_inputs: np.ndarray  # (T, n_u)
    cycle_plans: list[Plan]
    cycle_contexts: list[CostContext]
    cycle_grad_norms: np.ndarray  # (T,)
    lead_truth_arcs: np.ndarray | None = None  # (T+1,)
    lead_truth_speed: float | None = None
    failed_cycle: int | None = None
    failure_message: str | None = None

    @property
    def T(self) -> int:
        return self.executed_inputs.shape[0]

    @property
    def complete(self) -> bool:
        return self.failed_cycle is None


def shift_warm_start(previous: Plan) -> np.ndarray:
    """Shift inputs one stage forward, duplicating the final input."""
    inputs = previous.inputs
    return np.vstack([inputs[1:], inputs[-1:]])


def run_mpc(
    model: SystemModel,
    x_init,
    weights: WeightSchedule,
    ctx_base: CostContext,
    prediction_model: PredictionModel | None,
    T: int,
    solver_cfg: SolverConfig = SolverConfig(),
    lead_initial_arc: float | None = None,
) -> MpcTrace:
    """Simulate T execution cycles of the receding-horizon controller.

    ``ctx_base`` supplies the environment without lead predictions; when a
    prediction model is given, each cycle's context carries fresh predictions
    from the lead's true arc position, and ``lead_initial_arc`` locates the
    lead at cycle 0. On a solver failure the trace collected so far is
    returned with the failing cycle recorded.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if prediction_model is not None and lead_initial_arc is None:
        raise ValueError("lead_initial_arc required with a prediction model")

    N = weights.horizon
    x = np.asarray(x_init, dtype=float)
    states = [x]
    inputs: list[np.ndarray] = []
    plans: list[Plan] = []
    contexts: list[CostContext] = []
    grad_norms: list[float] = []
    lead_arcs = [lead_initial_arc] if prediction_model is not None else None

    warm = None
    failed_cycle = None
    failure_message = None
    for t in range(T):
        if prediction_model is not None:
            pred = prediction_model.predict(t, lead_arcs[t], N, model.dt)
            ctx_t = CostContext(
                path=ctx_base.path,
                v_ref=ctx_base.v_ref,
                d_w=ctx_base.d_w,
                o_buffer=ctx_base.o_buffer,
                t_h=ctx_base.t_h,
                obstacles=ctx_base.obstacles,
                lead=pred,
            )
        else:
            ctx_t = ctx_base
        try:
            result = solve_ocp(model, x, weights, ctx_t, solver_cfg, warm_start=warm)
        except SolverError as exc:
            failed_cycle = t
            failure_message = str(exc)
            break
        plans.append(result.plan)
        contexts.append(ctx_t)
        grad_norms.append(result.grad_inf_norm)
        u0 = result.plan.inputs[0]
        inputs.append(u0)
        x = model.transition(x, u0)
        states.append(x)
        if lead_arcs is not None:
            lead_arcs.append(lead_arcs[t] + prediction_model.truth_speed * model.dt)
        warm = shift_warm_start(result.plan)

    return MpcTrace(
        closed_loop_states=np.array(states),
        executed_inputs=np.array(inputs) if inputs else np.zeros((0, model.n_u)),
        cycle_plans=plans,
        cycle_contexts=contexts,
        cycle_grad_norms=np.array(grad_norms),
        lead_truth_arcs=np.array(lead_arcs) if lead_arcs is not None else None,
        lead_truth_speed=prediction_model.truth_speed if prediction_model is not None else None,
        failed_cycle=failed_cycle,
        failure_message=failure_message,
    )
