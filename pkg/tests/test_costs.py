import numpy as np
import pytest

from conftest import central_difference_gradient, relative_error
from ocplens.costs import (
    ANGULAR_JERK,
    BOUNDARY,
    COMPONENTS,
    CostContext,
    HEADWAY,
    LATERAL_ACCELERATION,
    LeadPrediction,
    MissingLeadAgentError,
    OBSTACLE,
    REFERENCE_PATH,
    REFERENCE_SPEED,
    RELATIVE_SPEED,
    TANGENTIAL_JERK,
    WeightSchedule,
    assemble_objective,
    default_weights,
    eval_component,
    uniform_weights,
)
from ocplens.dynamics import V, rollout, unicycle_model
from ocplens.geometry import ReferencePath


def make_ctx(horizon=10, obstacles=(), with_lead=False):
    path = ReferencePath.from_waypoints([[-5.0, 0.0], [60.0, 0.0]])
    lead = None
    if with_lead:
        arcs = 20.0 + np.arange(horizon + 1) * 1.0
        lead = LeadPrediction(arcs=arcs, speeds=np.full(horizon + 1, 10.0))
    return CostContext(
        path=path, v_ref=10.0, d_w=2.0, o_buffer=2.0, t_h=1.0, obstacles=obstacles, lead=lead
    )


def state(X=0.0, Y=0.0, theta=0.0, v=0.0, omega=0.0, a=0.0, alpha=0.0):
    return np.array([X, Y, theta, v, omega, a, alpha])


def test_reference_speed_at_target_is_free():
    out = eval_component(REFERENCE_SPEED, 0, state(v=10.0), np.zeros(2), make_ctx())
    assert out.value == 0.0
    assert np.all(out.grad_x == 0.0)


def test_reference_speed_quadratic_value_and_gradient():
    out = eval_component(REFERENCE_SPEED, 0, state(v=8.0), np.zeros(2), make_ctx())
    assert out.value == pytest.approx(2.0)
    assert out.grad_x[V] == pytest.approx(-2.0)


def test_obstacle_outside_buffer_is_exactly_zero():
    ctx = make_ctx(obstacles=(np.array([40.0, 2.5]),))
    out = eval_component(OBSTACLE, 0, state(X=10.0), np.zeros(2), ctx)
    assert out.value == 0.0
    assert np.all(out.grad_x == 0.0)


def test_lateral_acceleration_product_rule():
    out = eval_component(LATERAL_ACCELERATION, 0, state(v=2.0, omega=0.5), np.zeros(2), make_ctx())
    assert out.value == pytest.approx(0.5)
    assert out.grad_x[3] == pytest.approx(0.5)  # v * omega^2
    assert out.grad_x[4] == pytest.approx(2.0)  # v^2 * omega


def test_input_components_vanish_at_terminal_stage():
    ctx = make_ctx()
    for cid in (TANGENTIAL_JERK, ANGULAR_JERK):
        out = eval_component(cid, 10, state(v=3.0), None, ctx)
        assert out.value == 0.0
        assert np.all(out.grad_u == 0.0)


def test_lead_components_require_lead_agent():
    ctx = make_ctx(with_lead=False)
    for cid in (HEADWAY, RELATIVE_SPEED):
        with pytest.raises(MissingLeadAgentError):
            eval_component(cid, 0, state(v=5.0), np.zeros(2), ctx)


def test_headway_active_when_too_close():
    ctx = make_ctx(with_lead=True)
    # Robot at X=10 is at arc 15; lead at arc 20: gap 5 < t_h * v = 8.
    out = eval_component(HEADWAY, 0, state(X=10.0, v=8.0), np.zeros(2), ctx)
    assert out.value == pytest.approx(0.5 * 3.0**2)
    assert out.grad_x[V] == pytest.approx(3.0 * 1.0)
    assert out.grad_x[0] == pytest.approx(3.0)  # tangent is +X


def test_one_sided_components_have_zero_gradient_strictly_inside():
    ctx = make_ctx(obstacles=(np.array([40.0, 0.0]),), with_lead=True)
    x = state(X=5.0, Y=0.5, v=2.0)  # inside corridor, far from obstacle, huge gap
    for cid in (OBSTACLE, BOUNDARY, HEADWAY):
        out = eval_component(cid, 0, x, np.zeros(2), ctx)
        assert out.value == 0.0
        assert np.all(out.grad_x == 0.0)
        assert np.all(out.grad_u == 0.0)


def _component_boundary_safe(cid, x, ctx, k):
    """Keep finite-difference probes away from one-sided activation kinks."""
    p = x[[0, 1]]
    margin = 1e-4
    if cid == OBSTACLE:
        return all(abs(np.linalg.norm(p - o) - ctx.o_buffer) > margin for o in ctx.obstacles)
    if cid == BOUNDARY:
        d, _ = ctx.path.lateral_offset_gradient(p)
        return abs(d - ctx.d_w) > margin and d > margin
    if cid == HEADWAY:
        gap = ctx.lead.arcs[k] - ctx.path.arc_length_of(p)
        return abs(ctx.t_h * x[V] - gap) > margin
    if cid == REFERENCE_PATH:
        d, _ = ctx.path.lateral_offset_gradient(p)
        return d > margin
    return True


def test_all_component_gradients_match_finite_differences(rng):
    ctx = make_ctx(horizon=10, obstacles=(np.array([6.0, 1.0]),), with_lead=True)
    checked = {cid: 0 for cid in COMPONENTS}
    attempts = 0
    while min(checked.values()) < 100 and attempts < 20000:
        attempts += 1
        x = np.concatenate(
            [
                rng.uniform([-2, -4], [20, 4]),  # position
                rng.uniform(-0.6, 0.6, size=1),  # heading
                rng.uniform(0.0, 14.0, size=1),  # speed
                rng.uniform(-1, 1, size=3),
            ]
        )
        u = rng.uniform(-2, 2, size=2)
        k = int(rng.integers(0, 10))
        for cid in COMPONENTS:
            if checked[cid] >= 100 or not _component_boundary_safe(cid, x, ctx, k):
                continue
            out = eval_component(cid, k, x, u, ctx)
            fd_x = central_difference_gradient(
                lambda xx: eval_component(cid, k, xx, u, ctx).value, x, eps=1e-6
            )
            fd_u = central_difference_gradient(
                lambda uu: eval_component(cid, k, x, uu, ctx).value, u, eps=1e-6
            )
            assert relative_error(out.grad_x, fd_x) <= 1e-5, cid
            assert relative_error(out.grad_u, fd_u) <= 1e-5, cid
            checked[cid] += 1
    assert min(checked.values()) >= 100


def test_default_weights_match_nominal_values():
    schedule = default_weights(50)
    assert schedule.values.shape == (51, 9)
    assert np.all(schedule.values[:, COMPONENTS.index(OBSTACLE)] == 1000.0)
    assert np.all(schedule.values[:, COMPONENTS.index(TANGENTIAL_JERK)] == 0.1)
    assert np.all(schedule.values[:, COMPONENTS.index(REFERENCE_PATH)] == 100.0)
    assert np.all(schedule.values[:, COMPONENTS.index(RELATIVE_SPEED)] == 1.0)


def test_assemble_objective_zero_weights():
    model = unicycle_model(0.1)
    plan = rollout(model, state(v=10.0), np.zeros((10, 2)))
    ctx = make_ctx()
    weights = WeightSchedule(np.zeros((11, 9)))
    J, table = assemble_objective(plan, weights, ctx)
    assert J == 0.0
    assert np.all(table == 0.0)


def test_assemble_objective_linear_in_weights(rng):
    model = unicycle_model(0.1)
    plan = rollout(model, state(v=7.0, omega=0.1), rng.uniform(-1, 1, (10, 2)))
    ctx = make_ctx(obstacles=(np.array([3.0, 0.5]),), with_lead=True)
    w1 = WeightSchedule(rng.uniform(0, 2, (11, 9)))
    w2 = WeightSchedule(rng.uniform(0, 2, (11, 9)))
    alpha, beta = 0.3, 1.7
    J1, _ = assemble_objective(plan, w1, ctx)
    J2, _ = assemble_objective(plan, w2, ctx)
    Jc, _ = assemble_objective(plan, WeightSchedule(alpha * w1.values + beta * w2.values), ctx)
    assert Jc == pytest.approx(alpha * J1 + beta * J2, rel=1e-14)


def test_assemble_single_weight_is_summed_component(rng):
    model = unicycle_model(0.1)
    plan = rollout(model, state(v=7.0), rng.uniform(-1, 1, (10, 2)))
    ctx = make_ctx()
    vals = np.zeros((11, 9))
    vals[:, COMPONENTS.index(REFERENCE_SPEED)] = 2.5
    J, table = assemble_objective(plan, WeightSchedule(vals), ctx)
    expected = sum(
        2.5 * eval_component(REFERENCE_SPEED, k, plan.states[k], None, ctx).value for k in range(11)
    )
    assert J == pytest.approx(expected, rel=1e-12)
    assert J == pytest.approx(table.sum(), rel=1e-12)


def test_all_component_values_nonnegative(rng):
    ctx = make_ctx(obstacles=(np.array([2.0, 0.0]),), with_lead=True)
    for _ in range(200):
        x = rng.uniform(-5, 5, size=7)
        u = rng.uniform(-5, 5, size=2)
        for cid in COMPONENTS:
            assert eval_component(cid, 3, x, u, ctx).value >= 0.0


def test_uniform_weights_partition_total():
    schedule = uniform_weights(50, components=COMPONENTS[:6])
    assert schedule.values.sum() == pytest.approx(51.0)
    assert np.all(schedule.values[:, 6:] == 0.0)


def test_weight_schedule_rejects_negative_and_nonfinite():
    with pytest.raises(ValueError):
        WeightSchedule(-np.ones((2, 9)))
    bad = np.ones((2, 9))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        WeightSchedule(bad)


def test_scaled_multipliers_zero_out_component():
    schedule = default_weights(5).scaled({OBSTACLE: 0.0})
    assert np.all(schedule.values[:, COMPONENTS.index(OBSTACLE)] == 0.0)
    with pytest.raises(ValueError):
        default_weights(5).scaled({OBSTACLE: -1.0})
