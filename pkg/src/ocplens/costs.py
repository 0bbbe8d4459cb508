"""Stage cost components, weights, and total-objective assembly.

Each component is a nonnegative squared penalty with analytic gradients with
respect to the stage state and input. One-sided penalties (obstacle,
boundary, headway) are inactive-with-zero-gradient outside their activation
region. Evaluation is batched over whole trajectories (one path projection
pass per trajectory); the per-stage API is a view onto the same code.
Gauss-Newton curvature blocks back the trajectory solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ALPHA, A, ETA, J, OMEGA, THETA, V, X, Y
from .geometry import ReferencePath

TANGENTIAL_JERK = "TANGENTIAL_JERK"
ANGULAR_JERK = "ANGULAR_JERK"
LATERAL_ACCELERATION = "LATERAL_ACCELERATION"
REFERENCE_SPEED = "REFERENCE_SPEED"
REFERENCE_PATH = "REFERENCE_PATH"
OBSTACLE = "OBSTACLE"
BOUNDARY = "BOUNDARY"
HEADWAY = "HEADWAY"
RELATIVE_SPEED = "RELATIVE_SPEED"

# Report-column order; fixed.
COMPONENTS = (
    TANGENTIAL_JERK,
    ANGULAR_JERK,
    LATERAL_ACCELERATION,
    REFERENCE_SPEED,
    REFERENCE_PATH,
    OBSTACLE,
    BOUNDARY,
    HEADWAY,
    RELATIVE_SPEED,
)
NUM_COMPONENTS = len(COMPONENTS)
COMPONENT_INDEX = {cid: i for i, cid in enumerate(COMPONENTS)}

INPUT_COMPONENTS = frozenset({TANGENTIAL_JERK, ANGULAR_JERK})
LEAD_COMPONENTS = frozenset({HEADWAY, RELATIVE_SPEED})

DEFAULT_WEIGHTS = {
    TANGENTIAL_JERK: 0.1,
    ANGULAR_JERK: 0.1,
    LATERAL_ACCELERATION: 1.0,
    REFERENCE_SPEED: 10.0,
    REFERENCE_PATH: 100.0,
    OBSTACLE: 1000.0,
    BOUNDARY: 1000.0,
    HEADWAY: 1000.0,
    RELATIVE_SPEED: 1.0,
}

_OBSTACLE_GRAD_GUARD = 1e-6  # robot-on-obstacle singularity guard [m]


class MissingLeadAgentError(ValueError):
    """Headway / relative-speed cost evaluated without lead-agent predictions."""


@dataclass(frozen=True)
class LeadPrediction:
    """Per-stage lead-agent prediction: arc positions along the path and speeds."""

    arcs: np.ndarray  # (N+1,)
    speeds: np.ndarray  # (N+1,)

    def __post_init__(self):
        object.__setattr__(self, "arcs", np.asarray(self.arcs, dtype=float))
        object.__setattr__(self, "speeds", np.asarray(self.speeds, dtype=float))
        if self.arcs.shape != self.speeds.shape:
            raise ValueError("lead prediction arcs/speeds length mismatch")

    def positions(self, path: ReferencePath) -> np.ndarray:
        return np.array([path.point_at_arc(s) for s in self.arcs])


@dataclass(frozen=True)
class CostContext:
    """Environment inputs shared by all cost components."""

    path: ReferencePath
    v_ref: float
    d_w: float
    o_buffer: float
    t_h: float
    obstacles: tuple = ()
    lead: LeadPrediction | None = None

    def __post_init__(self):
        for name in ("v_ref", "d_w", "o_buffer", "t_h"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        object.__setattr__(
            self, "obstacles", tuple(np.asarray(o, dtype=float) for o in self.obstacles)
        )

    def component_available(self, cid: str) -> bool:
        return self.lead is not None or cid not in LEAD_COMPONENTS


@dataclass(frozen=True)
class WeightSchedule:
    """Stage-wise nonnegative weights, shape (N+1, R); row N is the terminal stage."""

    values: np.ndarray
    components: tuple = COMPONENTS

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != len(self.components):
            raise ValueError(f"weights must have shape (N+1, {len(self.components)})")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("weights must be finite and >= 0")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def column(self, cid: str) -> int:
        return self.components.index(cid)

    def scaled(self, multipliers: dict[str, float]) -> "WeightSchedule":
        vals = self.values.copy()
        for cid, m in multipliers.items():
            if m < 0:
                raise ValueError(f"negative multiplier for {cid}")
            vals[:, self.column(cid)] *= m
        return WeightSchedule(vals, self.components)


def default_weights(horizon: int) -> WeightSchedule:
    """Stage-uniform schedule with the nominal component weights."""
    row = np.array([DEFAULT_WEIGHTS[cid] for cid in COMPONENTS])
    return WeightSchedule(np.tile(row, (horizon + 1, 1)))


def uniform_weights(horizon: int, components=COMPONENTS, total: float | None = None) -> WeightSchedule:
    """Uniform schedule over the given components summing to ``total`` (default N+1)."""
    if total is None:
        total = horizon + 1.0
    vals = np.zeros((horizon + 1, NUM_COMPONENTS))
    per_entry = total / ((horizon + 1) * len(components))
    for cid in components:
        vals[:, COMPONENT_INDEX[cid]] = per_entry
    return WeightSchedule(vals)


@dataclass(frozen=True)
class CostEvaluation:
    value: float
    grad_x: np.ndarray
    grad_u: np.ndarray


class TableEvaluation:
    """Batched evaluation of all nine components along a trajectory.

    ``stages[i]`` is the stage index of row i (used to index lead
    predictions); rows with no input (the terminal stage) take zeros for the
    input components. Carries enough geometry to assemble the Gauss-Newton
    blocks of any stage on demand.
    """

    def __init__(self, ctx: CostContext, states: np.ndarray, inputs, stages: np.ndarray):
        K = states.shape[0]
        self.ctx = ctx
        self.stages = stages
        positions = states[:, [X, Y]]
        closest, seg_idx, arcs = ctx.path.project_batch(positions)
        diff = positions - closest
        offsets = np.linalg.norm(diff, axis=1)
        safe = np.maximum(offsets, 1e-30)
        self.offset_dirs = np.where(offsets[:, None] > 1e-9, diff / safe[:, None], 0.0)
        self.offsets = offsets
        self.arcs = arcs
        grad_idx = ctx.path.gradient_segment_indices(seg_idx, arcs)
        self.tangents = ctx.path.tangents()[grad_idx]
        self.normals = np.column_stack([-self.tangents[:, 1], self.tangents[:, 0]])

        v = states[:, V]
        omega = states[:, OMEGA]
        self.speeds = v
        self.yaw_rates = omega

        values = np.zeros((K, NUM_COMPONENTS))
        grads_x = np.zeros((K, NUM_COMPONENTS, 7))
        grads_u = np.zeros((K, NUM_COMPONENTS, 2))

        # Input components; rows beyond the given inputs stay zero.
        if inputs is not None and len(inputs) > 0:
            n_in = inputs.shape[0]
            for cid, col in ((TANGENTIAL_JERK, J), (ANGULAR_JERK, ETA)):
                r = COMPONENT_INDEX[cid]
                u_col = inputs[:, col]
                values[:n_in, r] = 0.5 * u_col**2
                grads_u[:n_in, r, col] = u_col
        self.n_inputs = 0 if inputs is None else len(inputs)

        r = COMPONENT_INDEX[LATERAL_ACCELERATION]
        g = v * omega
        values[:, r] = 0.5 * g * g
        grads_x[:, r, V] = g * omega
        grads_x[:, r, OMEGA] = g * v

        r = COMPONENT_INDEX[REFERENCE_SPEED]
        e = v - ctx.v_ref
        values[:, r] = 0.5 * e * e
        grads_x[:, r, V] = e

        r = COMPONENT_INDEX[REFERENCE_PATH]
        values[:, r] = 0.5 * offsets**2
        grads_x[:, r, X] = offsets * self.offset_dirs[:, 0]
        grads_x[:, r, Y] = offsets * self.offset_dirs[:, 1]

        # Obstacles: keep per-obstacle activation data for the Hessians.
        n_obs = len(ctx.obstacles)
        self.obstacle_sgrads = np.zeros((K, n_obs, 2))
        self.obstacle_slacks = np.zeros((K, n_obs))
        if n_obs:
            r = COMPONENT_INDEX[OBSTACLE]
            for o, p_o in enumerate(ctx.obstacles):
                od = positions - p_o
                dist = np.linalg.norm(od, axis=1)
                slack = np.maximum(ctx.o_buffer - dist, 0.0)
                values[:, r] += 0.5 * slack**2
                usable = (slack > 0.0) & (dist >= _OBSTACLE_GRAD_GUARD)
                sgrad = np.zeros((K, 2))
                sgrad[usable] = -od[usable] / dist[usable, None]
                self.obstacle_sgrads[:, o, :] = sgrad
                self.obstacle_slacks[:, o] = slack
                grads_x[:, r, X] += slack * sgrad[:, 0]
                grads_x[:, r, Y] += slack * sgrad[:, 1]

        r = COMPONENT_INDEX[BOUNDARY]
        b = np.maximum(offsets - ctx.d_w, 0.0)
        self.boundary_slacks = b
        values[:, r] = 0.5 * b * b
        grads_x[:, r, X] = b * self.offset_dirs[:, 0]
        grads_x[:, r, Y] = b * self.offset_dirs[:, 1]

        self.headway_slacks = np.zeros(K)
        if ctx.lead is not None:
            r = COMPONENT_INDEX[HEADWAY]
            gaps = ctx.lead.arcs[stages] - arcs
            h = np.maximum(ctx.t_h * v - gaps, 0.0)
            self.headway_slacks = h
            values[:, r] = 0.5 * h * h
            grads_x[:, r, V] = h * ctx.t_h
            grads_x[:, r, X] = h * self.tangents[:, 0]
            grads_x[:, r, Y] = h * self.tangents[:, 1]

            r = COMPONENT_INDEX[RELATIVE_SPEED]
            e = v - ctx.lead.speeds[stages]
            values[:, r] = 0.5 * e * e
            grads_x[:, r, V] = e

        self.values = values
        self.grads_x = grads_x
        self.grads_u = grads_u

    def gauss_newton(self, row: int, weight_row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Weighted Gauss-Newton blocks (Q_xx, Q_uu) for one trajectory row."""
        ctx = self.ctx
        Q_xx = np.zeros((7, 7))
        Q_uu = np.zeros((2, 2))
        w = weight_row

        if row < self.n_inputs:
            Q_uu[J, J] += w[COMPONENT_INDEX[TANGENTIAL_JERK]]
            Q_uu[ETA, ETA] += w[COMPONENT_INDEX[ANGULAR_JERK]]

        wl = w[COMPONENT_INDEX[LATERAL_ACCELERATION]]
        if wl != 0.0:
            gvec = np.array([self.yaw_rates[row], self.speeds[row]])  # grad of v*omega
            Q_xx[np.ix_([V, OMEGA], [V, OMEGA])] += wl * np.outer(gvec, gvec)

        Q_xx[V, V] += w[COMPONENT_INDEX[REFERENCE_SPEED]]

        wp = w[COMPONENT_INDEX[REFERENCE_PATH]]
        if wp != 0.0:
            n = self.normals[row]
            Q_xx[np.ix_([X, Y], [X, Y])] += wp * np.outer(n, n)

        wo = w[COMPONENT_INDEX[OBSTACLE]]
        if wo != 0.0:
            for o in range(self.obstacle_sgrads.shape[1]):
                sg = self.obstacle_sgrads[row, o]
                if sg[0] != 0.0 or sg[1] != 0.0:
                    Q_xx[np.ix_([X, Y], [X, Y])] += wo * np.outer(sg, sg)

        wb = w[COMPONENT_INDEX[BOUNDARY]]
        if wb != 0.0 and self.boundary_slacks[row] > 0.0:
            d = self.offset_dirs[row]
            Q_xx[np.ix_([X, Y], [X, Y])] += wb * np.outer(d, d)

        wh = w[COMPONENT_INDEX[HEADWAY]]
        if wh != 0.0 and self.headway_slacks[row] > 0.0:
            gvec = np.zeros(7)
            gvec[V] = self.ctx.t_h
            gvec[X] = self.tangents[row, 0]
            gvec[Y] = self.tangents[row, 1]
            Q_xx += wh * np.outer(gvec, gvec)

        if self.ctx.lead is not None:
            Q_xx[V, V] += w[COMPONENT_INDEX[RELATIVE_SPEED]]

        return Q_xx, Q_uu


def evaluate_trajectory(ctx: CostContext, states, inputs, stages=None) -> TableEvaluation:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if inputs is not None:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if stages is None:
        stages = np.arange(states.shape[0])
    return TableEvaluation(ctx, states, inputs, np.asarray(stages, dtype=int))


def eval_component(cid: str, k: int, x, u, ctx: CostContext) -> CostEvaluation:
    """Evaluate one component at stage k; pass u=None at the terminal stage."""
    if cid not in COMPONENT_INDEX:
        raise KeyError(f"unknown cost component {cid!r}")
    if cid in LEAD_COMPONENTS and ctx.lead is None:
        raise MissingLeadAgentError(f"{cid} requires lead-agent predictions")
    x = np.asarray(x, dtype=float)
    u_arr = None if u is None else np.asarray(u, dtype=float)[None, :]
    ev = evaluate_trajectory(ctx, x[None, :], u_arr, stages=[k])
    r = COMPONENT_INDEX[cid]
    return CostEvaluation(value=float(ev.values[0, r]), grad_x=ev.grads_x[0, r], grad_u=ev.grads_u[0, r])


def stage_component_table(k, x, u, ctx, include_hessians=False):
    """All components at one stage: values (R,), grads (R, n_x) and (R, n_u).

    Lead-dependent components evaluate to zero when no lead is present
    (their weights are required to be zero in that case).
    """
    x = np.asarray(x, dtype=float)
    u_arr = None if u is None else np.asarray(u, dtype=float)[None, :]
    ev = evaluate_trajectory(ctx, x[None, :], u_arr, stages=[k])
    if include_hessians:
        return ev.values[0], ev.grads_x[0], ev.grads_u[0], ev
    return ev.values[0], ev.grads_x[0], ev.grads_u[0]


def assemble_objective(plan, weights: WeightSchedule, ctx: CostContext):
    """Total objective J and the (N+1, R) matrix of weighted per-stage values."""
    N = plan.horizon
    if weights.horizon != N:
        raise ValueError("weight schedule horizon does not match plan")
    ev = evaluate_trajectory(ctx, plan.states, plan.inputs)
    table = weights.values * ev.values
    return float(table.sum()), table


@dataclass(frozen=True)
class ComponentSet:
    """A family of stage cost components for some system.

    ``terms(k, x, u, include_hessians)`` returns per-component values (R,),
    gradients (R, n_x) and (R, n_u), and optionally a list of per-component
    Gauss-Newton blocks (Hxx, Huu). ``u`` is None at the terminal stage. The
    Table-1 library additionally exposes a batched trajectory evaluator the
    solver uses; generic test families may leave it unset.
    """

    ids: tuple
    n_x: int
    n_u: int
    terms: object
    trajectory: object = None  # optional: (states, inputs) -> TableEvaluation-like

    @property
    def size(self) -> int:
        return len(self.ids)

    def stage_terms(self, k, x, u, include_hessians=False):
        return self.terms(k, x, u, include_hessians)


def table_components(ctx: CostContext) -> ComponentSet:
    """The nine-component library bound to a context, as a ComponentSet."""

    def terms(k, x, u, include_hessians):
        return stage_component_table(k, x, u, ctx, include_hessians=include_hessians)

    def trajectory(states, inputs):
        return evaluate_trajectory(ctx, states, inputs)

    return ComponentSet(ids=COMPONENTS, n_x=7, n_u=2, terms=terms, trajectory=trajectory)


def stage_quadratic_model(k, x, u, weight_row, components: ComponentSet):
    """Weighted stage cost with gradient and Gauss-Newton Hessian blocks.

    Returns (value, q_x, q_u, Q_xx, Q_uu); no library component couples x
    and u, so the cross block is omitted.
    """
    weight_row = np.asarray(weight_row, dtype=float)
    out = components.stage_terms(k, x, u, include_hessians=True)
    values, grads_x, grads_u, hess = out
    value = float(weight_row @ values)
    q_x = grads_x.T @ weight_row
    q_u = grads_u.T @ weight_row
    if isinstance(hess, TableEvaluation):
        Q_xx, Q_uu = hess.gauss_newton(0, weight_row)
    else:
        Q_xx = np.zeros((components.n_x, components.n_x))
        Q_uu = np.zeros((components.n_u, components.n_u))
        for w, (Hxx, Huu) in zip(weight_row, hess):
            if w != 0.0:
                Q_xx += w * Hxx
                Q_uu += w * Huu
    return value, q_x, q_u, Q_xx, Q_uu
