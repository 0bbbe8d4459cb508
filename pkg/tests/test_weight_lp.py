import itertools

import numpy as np
import pytest

from ocplens.weight_lp import (
    CorrectionSample,
    LearningProblem,
    constraint_residuals,
    hinge_objective,
    solve_weight_lp,
)


def make_problem(coeff_list, margin=1e-3, horizon=None, R=None, total=None):
    coeffs = [np.asarray(c, dtype=float) for c in coeff_list]
    N1, width = coeffs[0].shape
    samples = [CorrectionSample(trajectory_ref=f"s{i}", coefficients=c) for i, c in enumerate(coeffs)]
    return LearningProblem(
        samples=tuple(samples),
        margin=margin,
        horizon=N1 - 1,
        components=tuple(f"C{r}" for r in range(width)),
        normalization_total=total,
    )


def _batched_objective(problem, flats):
    """Hinge objective for a batch of flattened weight matrices, vectorized."""
    N1 = problem.horizon + 1
    R = len(problem.components)
    w = flats.reshape(-1, N1, R)
    total = np.zeros(w.shape[0])
    for sample in problem.samples:
        total += np.maximum(problem.margin + sample.coefficients[None] * w, 0.0).sum(axis=(1, 2))
    return total


def _feasible_mask(problem, flats):
    N1 = problem.horizon + 1
    R = len(problem.components)
    w = flats.reshape(-1, N1, R)
    ok = np.all(w >= -1e-12, axis=(1, 2))
    if N1 > 1:
        ok &= np.all(w[:, 1:, :] <= w[:, :-1, :] + 1e-12, axis=(1, 2))
    return ok


def _lattice_candidates(n, total, step):
    """All points of the scaled simplex lattice: first n-1 coords free, last the remainder."""
    ticks = int(round(total / step))
    axes = [np.arange(ticks + 1)] * (n - 1)
    if n == 1:
        return np.array([[total]])
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
    sums = grid.sum(axis=1)
    grid = grid[sums <= ticks]
    last = ticks - grid.sum(axis=1)
    return np.column_stack([grid, last]).astype(float) * step


def grid_oracle(problem, step=1e-3, refine_to=1e-5):
    """Brute-force minimum over the feasible lattice, with convex refinement.

    Starts at the stated resolution (coarser for 4-dimensional instances) and
    locally refines around the running argmin; the objective is convex, so
    shrinking the lattice around the coarse argmin cannot lose the optimum.
    """
    N1 = problem.horizon + 1
    R = len(problem.components)
    n = N1 * R
    total = problem.total

    def best_of(flats):
        mask = _feasible_mask(problem, flats)
        flats = flats[mask]
        values = _batched_objective(problem, flats)
        idx = int(np.argmin(values))
        return flats[idx], float(values[idx])

    coarse = step if n <= 3 else 1e-2
    w, J = best_of(_lattice_candidates(n, total, coarse))

    current = coarse
    while current > refine_to:
        nxt = current / 10.0
        offsets = np.arange(-2 * current, 2 * current + nxt / 2, nxt)
        grid = np.stack(np.meshgrid(*([offsets] * (n - 1)), indexing="ij"), axis=-1).reshape(-1, n - 1)
        flats = np.tile(w, (grid.shape[0], 1))
        flats[:, :-1] += grid
        flats[:, -1] = total - flats[:, :-1].sum(axis=1)
        w, J = best_of(np.vstack([flats, w[None]]))
        current = nxt
    return w.reshape(N1, R), J


def random_instance(gen):
    N1 = int(gen.integers(1, 3))  # 1 or 2 stages
    R = int(gen.integers(1, 3)) if N1 == 2 else int(gen.integers(2, 5))
    while N1 * R > 4 or N1 * R < 2:
        N1 = int(gen.integers(1, 3))
        R = int(gen.integers(1, 3)) if N1 == 2 else int(gen.integers(2, 5))
    n_samples = int(gen.integers(1, 4))
    coeffs = []
    for _ in range(n_samples):
        c = gen.uniform(-1.0, 1.0, size=(N1, R))
        c[gen.uniform(size=(N1, R)) < 0.3] = 0.0
        coeffs.append(c)
    return make_problem(coeffs, margin=1e-3, total=float(N1))


def test_all_zero_coefficients_returns_uniform():
    problem = make_problem([np.zeros((3, 2))])
    schedule = solve_weight_lp(problem)
    np.testing.assert_allclose(schedule.values, 0.5)
    assert hinge_objective(problem, schedule.values) == pytest.approx(6 * 1e-3)


def test_two_stage_single_component_flat_optimum():
    # c = -1 at both stages: hinges vanish for w >= m; centering picks (1, 1).
    problem = make_problem([np.array([[-1.0], [-1.0]])])
    schedule = solve_weight_lp(problem)
    assert hinge_objective(problem, schedule.values) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(schedule.values, [[1.0], [1.0]], atol=1e-9)
    _, J_grid = grid_oracle(problem)
    assert abs(hinge_objective(problem, schedule.values) - J_grid) <= 1e-4


def test_positive_coefficient_drives_weight_to_zero():
    # One inconsistent entry and one untouched component; N = 0 so no chain.
    problem = make_problem([np.array([[1.0, 0.0]])], total=1.0)
    schedule = solve_weight_lp(problem)
    assert schedule.values[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert schedule.values[0, 1] == pytest.approx(1.0, abs=1e-9)
    # Both hinges sit at their floor of m.
    assert hinge_objective(problem, schedule.values) == pytest.approx(2e-3, abs=1e-9)
    _, J_grid = grid_oracle(problem)
    assert abs(hinge_objective(problem, schedule.values) - J_grid) <= 1e-4


def test_monotonicity_binds_when_late_stage_demands_weight():
    # Late-stage consistent coefficient forces the earlier stage up too.
    problem = make_problem([np.array([[0.0], [-0.002]])])  # breakpoint at 0.5
    schedule = solve_weight_lp(problem)
    w = schedule.values
    assert w[0, 0] >= w[1, 0] - 1e-12
    assert w[1, 0] >= 0.5 - 1e-9
    res = constraint_residuals(problem, schedule)
    assert res["monotonicity"] <= 1e-12
    assert res["normalization"] <= 1e-9


def test_lp_matches_grid_oracle_on_random_instances():
    gen = np.random.default_rng(7)
    for trial in range(50):
        problem = random_instance(gen)
        schedule = solve_weight_lp(problem)
        J_lp = hinge_objective(problem, schedule.values)
        _, J_grid = grid_oracle(problem)
        # The tie-break pass may give back up to its 1e-9 slack on the optimum.
        assert J_lp <= J_grid + 1e-6, trial
        assert abs(J_lp - J_grid) <= 1e-4, trial
        res = constraint_residuals(problem, schedule)
        assert max(res.values()) <= 1e-9, trial


def test_subgradient_fallback_agrees_with_simplex():
    gen = np.random.default_rng(11)
    for trial in range(10):
        problem = random_instance(gen)
        J_lp = hinge_objective(problem, solve_weight_lp(problem).values)
        J_sub = hinge_objective(problem, solve_weight_lp(problem, method="subgradient").values)
        assert abs(J_lp - J_sub) <= 1e-4, trial


def test_resolve_same_dataset_objective_not_increasing():
    gen = np.random.default_rng(3)
    problem = random_instance(gen)
    first = solve_weight_lp(problem)
    J1 = hinge_objective(problem, first.values)
    second = solve_weight_lp(problem, hint=first.values)
    J2 = hinge_objective(problem, second.values)
    assert J2 <= J1 + 1e-9


def test_problem_validation():
    with pytest.raises(ValueError):
        LearningProblem(samples=(), margin=1e-3, horizon=1, components=("C0",))
    sample = CorrectionSample(trajectory_ref="s", coefficients=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        LearningProblem(samples=(sample,), margin=0.0, horizon=1, components=("C0",))
    with pytest.raises(ValueError):
        LearningProblem(samples=(sample,), margin=1e-3, horizon=3, components=("C0",))
    with pytest.raises(ValueError):
        CorrectionSample(trajectory_ref="s", coefficients=np.array([[np.inf]]))


def test_larger_realistic_instance_solves_and_satisfies_constraints():
    gen = np.random.default_rng(5)
    N1, R = 21, 4
    coeffs = [gen.uniform(-0.5, 0.5, size=(N1, R)) for _ in range(6)]
    for c in coeffs:
        c[gen.uniform(size=(N1, R)) < 0.5] = 0.0
    problem = make_problem(coeffs)
    schedule = solve_weight_lp(problem)
    res = constraint_residuals(problem, schedule)
    assert max(res.values()) <= 1e-9
    # Sanity: the learned objective is no worse than the uniform start.
    uniform = np.full((N1, R), problem.total / (N1 * R))
    assert hinge_objective(problem, schedule.values) <= hinge_objective(problem, uniform) + 1e-9


def test_per_component_normalization_flag():
    problem = LearningProblem(
        samples=(CorrectionSample(trajectory_ref="s", coefficients=np.array([[0.5, -0.5], [0.0, -0.5]])),),
        margin=1e-3,
        horizon=1,
        components=("C0", "C1"),
        per_component_normalization=True,
    )
    schedule = solve_weight_lp(problem)
    np.testing.assert_allclose(schedule.values.sum(axis=0), [1.0, 1.0], atol=1e-9)
