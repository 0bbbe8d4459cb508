"""Sensitivity matrices and eliminated cost-component gradients.

The open-loop matrix maps input-trajectory perturbations to state-trajectory
perturbations along a plan; its closed-loop analogue does the same along an
executed MPC trajectory. Contractions against these matrices are computed
with adjoint/rollout passes rather than dense products where possible; the
dense form is still exposed for verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import ComponentSet, CostContext, table_components
from .dynamics import Plan, SystemModel, linearize
from .mpc import MpcTrace


@dataclass(frozen=True)
class SensitivityMatrix:
    """Dense F_xu with the stacked form F = [F_xu; I] available on demand."""

    F_xu: np.ndarray  # ((N+1)*n_x, N*n_u)
    n_x: int
    n_u: int

    @property
    def F(self) -> np.ndarray:
        return np.vstack([self.F_xu, np.eye(self.F_xu.shape[1])])


@dataclass(frozen=True)
class EliminatedGradient:
    """Gradient of one stage cost re-expressed over the whole input trajectory."""

    component: str
    stage: int
    grad_u: np.ndarray  # (N*n_u,)


def build_F(model: SystemModel, plan: Plan) -> SensitivityMatrix:
    """Open-loop sensitivity: block (k, j) = A_{k-1}...A_{j+1} B_j for j < k."""
    N = plan.horizon
    n_x, n_u = model.n_x, model.n_u
    jacs = linearize(model, plan)
    F_xu = np.zeros(((N + 1) * n_x, N * n_u))
    row = np.zeros((n_x, N * n_u))
    for k in range(1, N + 1):
        A_prev, B_prev = jacs[k - 1]
        row = A_prev @ row
        row[:, (k - 1) * n_u : k * n_u] = B_prev
        F_xu[k * n_x : (k + 1) * n_x] = row
    return SensitivityMatrix(F_xu=F_xu, n_x=n_x, n_u=n_u)


def build_F_cl(model: SystemModel, trace: MpcTrace) -> SensitivityMatrix:
    """Closed-loop sensitivity, linearized along the executed trajectory."""
    if not trace.complete:
        raise ValueError("closed-loop sensitivity requires a complete trace")
    executed = Plan(states=trace.closed_loop_states, inputs=trace.executed_inputs)
    return build_F(model, executed)


def input_space_image(jacs, a_x: np.ndarray, n_x: int, n_u: int) -> np.ndarray:
    """F_xu^T a_x via one backward pass over the linearization."""
    N = len(jacs)
    a_x = a_x.reshape(N + 1, n_x)
    out = np.zeros((N, n_u))
    mu = a_x[N].copy()
    for j in range(N - 1, -1, -1):
        A_j, B_j = jacs[j]
        out[j] = B_j.T @ mu
        mu = a_x[j] + A_j.T @ mu
    return out.reshape(-1)


def state_space_image(jacs, v: np.ndarray, n_x: int, n_u: int) -> np.ndarray:
    """F_xu v via a linearized rollout of the input perturbation v."""
    N = len(jacs)
    v = v.reshape(N, n_u)
    out = np.zeros((N + 1, n_x))
    for k in range(N):
        A_k, B_k = jacs[k]
        out[k + 1] = A_k @ out[k] + B_k @ v[k]
    return out.reshape(-1)


def eliminate_stage_gradient(model: SystemModel, plan: Plan, k: int, gx, gu) -> np.ndarray:
    """Re-express a stage-k gradient (gx, gu) over the input trajectory.

    Inputs after stage k get exactly zero; block k carries only the direct
    input gradient; earlier blocks come from the backward chain through the
    dynamics. ``gu`` is ignored at the terminal stage.
    """
    N = plan.horizon
    grad = np.zeros((N, model.n_u))
    if k < N and gu is not None:
        grad[k] = gu
    lam = np.asarray(gx, dtype=float).copy()
    for j in range(k - 1, -1, -1):
        A_j, B_j = model.jacobians(plan.states[j], plan.inputs[j])
        grad[j] = B_j.T @ lam
        lam = A_j.T @ lam
    return grad.reshape(-1)


def eliminated_gradient(
    model: SystemModel,
    plan: Plan,
    components: ComponentSet | CostContext,
    cid: str,
    k: int,
) -> EliminatedGradient:
    """Gradient of the stage-k component over the input trajectory."""
    if isinstance(components, CostContext):
        components = table_components(components)
    r = components.ids.index(cid)
    u_k = plan.inputs[k] if k < plan.horizon else None
    _, gx, gu = components.stage_terms(k, plan.states[k], u_k)
    grad = eliminate_stage_gradient(model, plan, k, gx[r], gu[r])
    return EliminatedGradient(component=cid, stage=k, grad_u=grad)


def correction_coefficients(
    model: SystemModel,
    plan: Plan,
    components: ComponentSet,
    a_x: np.ndarray,
    a_u: np.ndarray,
) -> np.ndarray:
    """<a, F grad(l~_k^(r))> for every stage and component, shape (N+1, R).

    Uses the transpose identity: with v = F^T a, the coefficient equals
    grad_x l_k . (F_xu v)_k + grad_u l_k . v_k, so one backward and one
    forward pass cover the whole table.
    """
    N = plan.horizon
    jacs = linearize(model, plan)
    v = input_space_image(jacs, np.asarray(a_x, dtype=float), model.n_x, model.n_u)
    v = v + np.asarray(a_u, dtype=float)
    z = state_space_image(jacs, v, model.n_x, model.n_u).reshape(N + 1, model.n_x)
    v = v.reshape(N, model.n_u)
    coeffs = np.zeros((N + 1, components.size))
    for k in range(N + 1):
        u_k = plan.inputs[k] if k < N else None
        _, gx, gu = components.stage_terms(k, plan.states[k], u_k)
        coeffs[k] = gx @ z[k]
        if k < N:
            coeffs[k] += gu @ v[k]
    return coeffs


def first_input_gradients(
    model: SystemModel,
    trace: MpcTrace,
    cid: str,
    weight_column: np.ndarray,
) -> np.ndarray:
    """Per-cycle weighted first-input gradients, stacked to a (T*n_u,) vector.

    For cycle t this is sum_k w_k^(r) d(l~_{k|t}^(r))/d(u_{0|t}): the
    component's whole-plan pull on the one input that actually got executed,
    aggregated over predicted stages with the component's weight column.
    """
    table = first_input_gradient_table(model, trace, cid)
    col = np.asarray(weight_column, dtype=float)
    if col.shape != (table.shape[1],):
        raise ValueError("weight column length must be N+1")
    return np.einsum("tkc,k->tc", table, col).reshape(-1)


def first_input_gradient_table(model: SystemModel, trace: MpcTrace, cid: str | None = None) -> np.ndarray:
    """Unweighted d(l~_{k|t})/d(u_{0|t}) for all cycles and stages.

    Shape (T, N+1, n_u) for a single component, or (T, N+1, R, n_u) for all
    of them when ``cid`` is None.
    """
    if not trace.complete:
        raise ValueError("first-input gradients require a complete trace")
    T = trace.T
    out = None
    for t in range(T):
        plan = trace.cycle_plans[t]
        components = table_components(trace.cycle_contexts[t])
        N = plan.horizon
        if out is None:
            out = np.zeros((T, N + 1, components.size, model.n_u))
        jacs = linearize(model, plan)
        G = jacs[0][1].T  # B_0^T, promoted through A_k^T as k grows
        for k in range(N + 1):
            u_k = plan.inputs[k] if k < N else None
            _, gx, gu = components.stage_terms(k, plan.states[k], u_k)
            if k == 0:
                out[t, k] = gu
            else:
                out[t, k] = gx @ G.T
                if k < N:
                    G = G @ jacs[k][0].T
    if cid is not None:
        ctx0 = trace.cycle_contexts[0]
        r = table_components(ctx0).ids.index(cid)
        return out[:, :, r, :]
    return out
