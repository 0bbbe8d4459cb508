"""Discrete-time system models, rollouts, and linearizations.

The primary model is a planar unicycle with jerk-level inputs, discretized
with forward Euler. A generic ``SystemModel`` abstraction lets tests and
oracles swap in 1-D integrators and other linear systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# State layout for the unicycle model.
X, Y, THETA, V, OMEGA, A, ALPHA = range(7)
STATE_DIMENSIONS = ("X", "Y", "THETA", "V", "OMEGA", "A", "ALPHA")

# Input layout (linear jerk, angular jerk).
J, ETA = range(2)
INPUT_DIMENSIONS = ("J", "ETA")


class ModelBlowupError(RuntimeError):
    """A transition produced a non-finite state."""

    def __init__(self, stage: int, state: np.ndarray):
        super().__init__(f"non-finite state at stage {stage}")
        self.stage = stage
        self.state = state


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time system x_{k+1} = f(x_k, u_k) with analytic Jacobians.

    ``transition(x, u)`` returns the next state; ``jacobians(x, u)`` returns
    (A, B) with A = df/dx of shape (n_x, n_x) and B = df/du of shape
    (n_x, n_u), evaluated at (x, u).
    """

    n_x: int
    n_u: int
    dt: float
    transition: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobians: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    name: str = "generic"


@dataclass(frozen=True)
class Plan:
    """A dynamically feasible trajectory: states x_{0:N}, inputs u_{0:N-1}."""

    states: np.ndarray  # (N+1, n_x)
    inputs: np.ndarray  # (N, n_u)

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=float))
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float))
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ValueError(
                f"plan shape mismatch: {self.states.shape[0]} states vs "
                f"{self.inputs.shape[0]} inputs"
            )

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    def feasibility_residual(self, model: SystemModel) -> float:
        """Max infinity-norm defect ||x_{k+1} - f(x_k, u_k)||_inf over stages."""
        worst = 0.0
        for k in range(self.horizon):
            defect = self.states[k + 1] - model.transition(self.states[k], self.inputs[k])
            worst = max(worst, float(np.max(np.abs(defect))))
        return worst


def unicycle_model(dt: float) -> SystemModel:
    """Forward-Euler unicycle: state (X, Y, theta, v, omega, a, alpha), input (j, eta)."""

    def transition(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        theta, v = x[THETA], x[V]
        xdot = np.array(
            [
                v * np.cos(theta),
                v * np.sin(theta),
                x[OMEGA],
                x[A],
                x[ALPHA],
                u[J],
                u[ETA],
            ]
        )
        return x + xdot * dt

    def jacobians(x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta, v = x[THETA], x[V]
        A_mat = np.eye(7)
        A_mat[X, THETA] = -v * np.sin(theta) * dt
        A_mat[X, V] = np.cos(theta) * dt
        A_mat[Y, THETA] = v * np.cos(theta) * dt
        A_mat[Y, V] = np.sin(theta) * dt
        A_mat[THETA, OMEGA] = dt
        A_mat[V, A] = dt
        A_mat[OMEGA, ALPHA] = dt
        B_mat = np.zeros((7, 2))
        B_mat[A, J] = dt
        B_mat[ALPHA, ETA] = dt
        return A_mat, B_mat

    return SystemModel(n_x=7, n_u=2, dt=dt, transition=transition, jacobians=jacobians, name="unicycle")


def single_integrator(dt: float) -> SystemModel:
    """1-D single integrator x' = x + u*dt, used by tests and oracles."""

    def transition(x, u):
        return x + u * dt

    def jacobians(x, u):
        return np.array([[1.0]]), np.array([[dt]])

    return SystemModel(n_x=1, n_u=1, dt=dt, transition=transition, jacobians=jacobians, name="single_integrator")


def double_integrator(dt: float) -> SystemModel:
    """1-D double integrator with state (position, velocity) and input acceleration."""
    A_mat = np.array([[1.0, dt], [0.0, 1.0]])
    B_mat = np.array([[0.0], [dt]])

    def transition(x, u):
        return A_mat @ x + B_mat @ u

    def jacobians(x, u):
        return A_mat, B_mat

    return SystemModel(n_x=2, n_u=1, dt=dt, transition=transition, jacobians=jacobians, name="double_integrator")


def linear_model(A_mat: np.ndarray, B_mat: np.ndarray, dt: float = 1.0) -> SystemModel:
    """Generic LTI system x' = A x + B u."""
    A_mat = np.asarray(A_mat, dtype=float)
    B_mat = np.asarray(B_mat, dtype=float)
    n_x, n_u = B_mat.shape

    def transition(x, u):
        return A_mat @ x + B_mat @ u

    def jacobians(x, u):
        return A_mat, B_mat

    return SystemModel(n_x=n_x, n_u=n_u, dt=dt, transition=transition, jacobians=jacobians, name="linear")


def step(model: SystemModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Advance one stage; raises ModelBlowupError on a non-finite result."""
    nxt = np.asarray(model.transition(np.asarray(x, dtype=float), np.asarray(u, dtype=float)), dtype=float)
    if not np.all(np.isfinite(nxt)):
        raise ModelBlowupError(0, nxt)
    return nxt


def rollout(model: SystemModel, x_init: np.ndarray, inputs: np.ndarray) -> Plan:
    """Roll the dynamics forward from x_init under the given input sequence."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    n = inputs.shape[0]
    if n < 1:
        raise ValueError("rollout requires at least one input")
    states = np.zeros((n + 1, model.n_x))
    states[0] = np.asarray(x_init, dtype=float)
    for k in range(n):
        states[k + 1] = model.transition(states[k], inputs[k])
        if not np.all(np.isfinite(states[k + 1])):
            raise ModelBlowupError(k + 1, states[k + 1])
    return Plan(states=states, inputs=inputs)


def linearize(model: SystemModel, plan: Plan) -> list[tuple[np.ndarray, np.ndarray]]:
    """Jacobian pairs (A_k, B_k) along the plan, one per stage k = 0..N-1."""
    return [model.jacobians(plan.states[k], plan.inputs[k]) for k in range(plan.horizon)]
