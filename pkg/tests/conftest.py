"""Shared oracles and fixtures: finite differences, dense sampling, LQR via least squares."""

from __future__ import annotations

import numpy as np
import pytest


def central_difference_gradient(f, x, eps=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += eps
        lo[i] -= eps
        grad[i] = (f(hi) - f(lo)) / (2 * eps)
    return grad


def central_difference_jacobian(f, x, eps=1e-6):
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += eps
        lo[i] -= eps
        jac[:, i] = (np.asarray(f(hi)) - np.asarray(f(lo))) / (2 * eps)
    return jac


def relative_error(actual, expected):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    scale = max(1.0, float(np.max(np.abs(expected))))
    return float(np.max(np.abs(actual - expected))) / scale


def sample_path_points(vertices, spacing=1e-3):
    """Densely sampled points along a polyline, for brute-force projection oracles."""
    vertices = np.asarray(vertices, dtype=float)
    points = [vertices[0]]
    for a, b in zip(vertices[:-1], vertices[1:]):
        seg = b - a
        length = np.linalg.norm(seg)
        n = max(1, int(np.ceil(length / spacing)))
        for i in range(1, n + 1):
            points.append(a + seg * (i / n))
    return np.array(points)


def brute_force_projection(vertices, p, spacing=1e-3):
    """Closest sampled point and its distance, independent of the geometry module."""
    samples = sample_path_points(vertices, spacing)
    dists = np.linalg.norm(samples - np.asarray(p, dtype=float), axis=1)
    idx = int(np.argmin(dists))
    return samples[idx], float(dists[idx])


def lqr_least_squares(A, B, x0, N, Q_stages, q_stages, R_stages, r_stages):
    """Dense closed-form minimizer of a linear-quadratic OCP over inputs.

    Builds the input-to-state map explicitly (x_k = A^k x0 + sum_j A^{k-1-j} B u_j)
    and solves the stacked least-squares normal equations. Independent of the
    package's sensitivity machinery.

    Cost: sum_k 0.5 x_k' Q_k x_k + q_k' x_k  (k = 0..N)
        + sum_k 0.5 u_k' R_k u_k + r_k' u_k  (k = 0..N-1)
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    n_x, n_u = B.shape

    # x_stack = Phi x0 + G u_stack
    Phi = np.zeros(((N + 1) * n_x, n_x))
    G = np.zeros(((N + 1) * n_x, N * n_u))
    Ak = np.eye(n_x)
    for k in range(N + 1):
        Phi[k * n_x : (k + 1) * n_x] = Ak
        Ak = A @ Ak
    for k in range(1, N + 1):
        for j in range(k):
            block = np.eye(n_x)
            for _ in range(k - 1 - j):
                block = A @ block
            G[k * n_x : (k + 1) * n_x, j * n_u : (j + 1) * n_u] = block @ B

    Q = np.zeros(((N + 1) * n_x, (N + 1) * n_x))
    q = np.zeros((N + 1) * n_x)
    for k in range(N + 1):
        Q[k * n_x : (k + 1) * n_x, k * n_x : (k + 1) * n_x] = Q_stages[k]
        q[k * n_x : (k + 1) * n_x] = q_stages[k]
    R = np.zeros((N * n_u, N * n_u))
    r = np.zeros(N * n_u)
    for k in range(N):
        R[k * n_u : (k + 1) * n_u, k * n_u : (k + 1) * n_u] = R_stages[k]
        r[k * n_u : (k + 1) * n_u] = r_stages[k]

    H = G.T @ Q @ G + R
    g = G.T @ (Q @ (Phi @ x0) + q) + r
    u = np.linalg.solve(H, -g)
    x = Phi @ x0 + G @ u
    J = 0.5 * x @ Q @ x + q @ x + 0.5 * u @ R @ u + r @ u
    return u.reshape(N, n_u), x.reshape(N + 1, n_x), float(J)


def double_integrator_components(goal=3.0):
    """Quadratic components on the (position, velocity) double integrator."""
    from ocplens.costs import ComponentSet

    ids = ("GOAL_POSITION", "VELOCITY", "EFFORT")

    def terms(k, x, u, include_hessians=False):
        values = np.zeros(3)
        gx = np.zeros((3, 2))
        gu = np.zeros((3, 1))
        hxx = [np.zeros((2, 2)) for _ in range(3)]
        huu = [np.zeros((1, 1)) for _ in range(3)]
        e = x[0] - goal
        values[0] = 0.5 * e * e
        gx[0, 0] = e
        hxx[0][0, 0] = 1.0
        values[1] = 0.5 * x[1] ** 2
        gx[1, 1] = x[1]
        hxx[1][1, 1] = 1.0
        if u is not None:
            values[2] = 0.5 * u[0] ** 2
            gu[2, 0] = u[0]
            huu[2][0, 0] = 1.0
        if include_hessians:
            return values, gx, gu, list(zip(hxx, huu))
        return values, gx, gu

    return ComponentSet(ids=ids, n_x=2, n_u=1, terms=terms)


def lqr_oracle_for_weights(model, x0, N, weights, goal=3.0):
    """Dense least-squares optimum for the double-integrator component family."""
    Q_stages = []
    q_stages = []
    for k in range(N + 1):
        w_goal, w_vel, _ = weights[k]
        Q = np.diag([w_goal, w_vel])
        Q_stages.append(Q)
        q_stages.append(np.array([-w_goal * goal, 0.0]))
    R_stages = [np.array([[weights[k][2]]]) for k in range(N)]
    r_stages = [np.zeros(1) for _ in range(N)]
    A, B = model.jacobians(np.zeros(2), np.zeros(1))
    u, x, J = lqr_least_squares(A, B, x0, N, Q_stages, q_stages, R_stages, r_stages)
    const = sum(0.5 * weights[k][0] * goal**2 for k in range(N + 1))
    return u, x, J + const


@pytest.fixture
def rng():
    return np.random.default_rng(20250809)
