import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference_jacobian, relative_error
from ocplens.dynamics import (
    ModelBlowupError,
    Plan,
    SystemModel,
    X,
    Y,
    linearize,
    rollout,
    single_integrator,
    step,
    unicycle_model,
)


def test_step_equilibrium_is_fixed_point():
    model = unicycle_model(dt=0.1)
    out = step(model, np.zeros(7), np.zeros(2))
    assert np.array_equal(out, np.zeros(7))


def test_step_pure_x_translation():
    model = unicycle_model(dt=0.1)
    x = np.array([0, 0, 0, 1.0, 0, 0, 0])
    out = step(model, x, np.zeros(2))
    np.testing.assert_allclose(out, [0.1, 0, 0, 1.0, 0, 0, 0], atol=1e-15)


def test_step_motion_along_y_at_pi_half():
    model = unicycle_model(dt=0.1)
    x = np.array([0, 0, np.pi / 2, 2.0, 0, 0, 0])
    out = step(model, x, np.zeros(2))
    assert abs(out[X]) <= 1e-12
    np.testing.assert_allclose(out[1:], [0.2, np.pi / 2, 2.0, 0, 0, 0], atol=1e-15)


def test_rollout_single_zero_stage():
    model = unicycle_model(dt=0.1)
    plan = rollout(model, np.zeros(7), np.zeros((1, 2)))
    assert plan.horizon == 1
    assert np.array_equal(plan.states, np.zeros((2, 7)))


def test_rollout_constant_speed_advances_one_meter_per_stage():
    model = unicycle_model(dt=0.1)
    x0 = np.array([0, 0, 0, 10.0, 0, 0, 0])
    plan = rollout(model, x0, np.zeros((50, 2)))
    np.testing.assert_allclose(plan.states[:, X], np.arange(51) * 1.0, atol=1e-12)
    np.testing.assert_allclose(plan.states[:, Y], 0.0, atol=1e-15)


def test_rollout_single_integrator_matches_hand_computed_sums():
    # x0 = 2.0, dt = 0.1, u = (1, 2, 3): cumulative sums computed by hand.
    model = single_integrator(dt=0.1)
    plan = rollout(model, [2.0], np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(plan.states[:, 0], [2.0, 2.1, 2.3, 2.6], atol=1e-15)


def test_rollout_rejects_empty_inputs():
    model = single_integrator(dt=0.1)
    with pytest.raises(ValueError):
        rollout(model, [0.0], np.zeros((0, 1)))


def test_rollout_reports_blowup_stage():
    def transition(x, u):
        return x * 1e200

    model = SystemModel(
        n_x=1, n_u=1, dt=1.0, transition=transition, jacobians=lambda x, u: (np.eye(1), np.eye(1))
    )
    with pytest.raises(ModelBlowupError) as err:
        rollout(model, [1.0], np.zeros((3, 1)))
    assert err.value.stage == 2


def test_plan_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        Plan(states=np.zeros((3, 7)), inputs=np.zeros((3, 2)))


def test_linearize_single_integrator_closed_form():
    model = single_integrator(dt=0.1)
    plan = rollout(model, [0.0], np.ones((4, 1)))
    for A_k, B_k in linearize(model, plan):
        assert A_k[0, 0] == 1.0
        assert B_k[0, 0] == 0.1


def test_unicycle_jacobian_entries_at_theta_zero():
    model = unicycle_model(dt=0.1)
    x = np.array([0, 0, 0, 1.0, 0, 0, 0])
    A_k, _ = model.jacobians(x, np.zeros(2))
    assert A_k[X, 2] == 0.0  # dX'/dtheta = -v sin(theta) dt
    assert A_k[Y, 2] == pytest.approx(0.1)  # dY'/dtheta = v cos(theta) dt


def test_unicycle_jacobians_match_finite_differences(rng):
    model = unicycle_model(dt=0.1)
    for _ in range(100):
        x = rng.uniform(-3, 3, size=7)
        u = rng.uniform(-2, 2, size=2)
        A_k, B_k = model.jacobians(x, u)
        A_fd = central_difference_jacobian(lambda xx: model.transition(xx, u), x)
        B_fd = central_difference_jacobian(lambda uu: model.transition(x, uu), u)
        assert relative_error(A_k, A_fd) <= 1e-6
        assert relative_error(B_k, B_fd) <= 1e-6


def test_plan_feasibility_residual_is_tiny():
    model = unicycle_model(dt=0.1)
    plan = rollout(model, np.array([0, 0, 0.3, 5.0, 0.1, 0, 0]), np.full((20, 2), 0.5))
    assert plan.feasibility_residual(model) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31 - 1),
    n=st.integers(min_value=1, max_value=30),
)
def test_rollout_is_deterministic_and_shaped(seed, n):
    model = unicycle_model(dt=0.1)
    gen = np.random.default_rng(seed)
    x0 = gen.uniform(-1, 1, size=7)
    inputs = gen.uniform(-1, 1, size=(n, 2))
    a = rollout(model, x0, inputs)
    b = rollout(model, x0, inputs)
    assert a.states.shape == (n + 1, 7)
    assert a.inputs.shape == (n, 2)
    assert np.array_equal(a.states, b.states)
