"""Exact solver for the hinge-loss weight-learning problem.

The objective sum_j sum_{k,r} max(m + c_{j,k,r} w_k^(r), 0) is separable per
weight entry, so every entry's hinge sum collapses to one convex
piecewise-linear function. An epigraph LP over those functions - with the
normalization row, and the stage-monotonicity constraints absorbed by a
suffix-sum reparameterization - is solved exactly by the dense simplex,
generating the affine pieces lazily (each is a valid cut, and the functions
have finitely many, so the loop terminates at the exact optimum).

A second LP pass picks deterministically among the many optima: it pins the
achieved hinge objective and raises a common floor under every entry whose
hinge sum is flat above its thresholds, spreading the surplus normalization
mass evenly instead of leaving it at an arbitrary simplex vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import WeightSchedule
from .simplex import LinearProgram, solve_linear_program

_CUT_TOL = 1e-9
_MAX_CUT_ROUNDS = 60


@dataclass(frozen=True)
class CorrectionSample:
    """One (trajectory, correction) pair reduced to its consistency coefficients.

    ``coefficients[k, r]`` holds <a_j, F(zeta_j) grad(l~_k^(r))(zeta_j)>; the
    hinge term for weight w_k^(r) is max(m + coefficients[k, r] * w, 0). The
    generating correction rides along for provenance when available.
    """

    trajectory_ref: str
    coefficients: np.ndarray  # (N+1, R)
    correction: object = None

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float)
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("sample coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)


@dataclass(frozen=True)
class LearningProblem:
    samples: tuple
    margin: float
    horizon: int
    components: tuple
    normalization_total: float | None = None
    per_component_normalization: bool = False

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if len(self.samples) < 1:
            raise ValueError("at least one sample required")
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "components", tuple(self.components))
        shape = (self.horizon + 1, len(self.components))
        for sample in self.samples:
            if sample.coefficients.shape != shape:
                raise ValueError(f"sample coefficient shape {sample.coefficients.shape} != {shape}")

    @property
    def total(self) -> float:
        return float(self.normalization_total if self.normalization_total is not None else self.horizon + 1)


def hinge_objective(problem: LearningProblem, values: np.ndarray) -> float:
    """The Eq.-style hinge loss of a weight matrix, computed directly."""
    m = problem.margin
    total = 0.0
    for sample in problem.samples:
        total += float(np.maximum(m + sample.coefficients * values, 0.0).sum())
    return total


@dataclass
class _EntryHinges:
    """All hinge terms touching one weight entry, merged to a convex PWL function.

    Coefficients that keep the hinge active over the whole feasible range
    [0, cap] fold into a single affine part; the rest contribute breakpoints
    at m / (-c). ``base_beta == 0`` means the function is flat once every
    breakpoint is passed - the entry can absorb surplus mass for free.
    """

    margin: float
    base_alpha: float
    base_beta: float
    breaks: np.ndarray  # ascending
    neg_c: np.ndarray  # coefficients of the kept hinges, aligned with breaks

    @staticmethod
    def build(margin: float, coeffs: np.ndarray, cap: float) -> "_EntryHinges":
        base_alpha = 0.0
        base_beta = 0.0
        kept_breaks = []
        kept_c = []
        for c in coeffs:
            if c == 0.0:
                base_alpha += margin
                continue
            if c > 0.0:
                base_alpha += margin
                base_beta += c
                continue
            brk = margin / (-c)
            if brk >= cap:
                base_alpha += margin
                base_beta += c
            else:
                kept_breaks.append(brk)
                kept_c.append(c)
        order = np.argsort(kept_breaks, kind="stable")
        return _EntryHinges(
            margin=margin,
            base_alpha=base_alpha,
            base_beta=base_beta,
            breaks=np.asarray(kept_breaks, dtype=float)[order],
            neg_c=np.asarray(kept_c, dtype=float)[order],
        )

    @property
    def num_segments(self) -> int:
        return self.breaks.size + 1

    @property
    def constant(self) -> bool:
        return self.base_beta == 0.0 and self.breaks.size == 0

    @property
    def flat_above(self) -> bool:
        return self.base_beta == 0.0

    def value(self, omega: float) -> float:
        active = self.margin + self.neg_c * omega
        return self.base_alpha + self.base_beta * omega + float(np.maximum(active, 0.0).sum())

    def segment_at(self, omega: float) -> int:
        return int(np.searchsorted(self.breaks, omega, side="right"))

    def piece(self, segment: int) -> tuple[float, float]:
        """Affine (alpha, beta) of the given segment; hinges past it are inactive."""
        alpha = self.base_alpha + self.margin * (self.breaks.size - segment)
        beta = self.base_beta + float(self.neg_c[segment:].sum())
        return alpha, beta


def _build_entry_hinges(problem: LearningProblem) -> list[list[_EntryHinges]]:
    N1 = problem.horizon + 1
    R = len(problem.components)
    cap = problem.total / R if problem.per_component_normalization else problem.total
    stacked = np.stack([s.coefficients for s in problem.samples])  # (J, N+1, R)
    return [
        [_EntryHinges.build(problem.margin, stacked[:, k, r], cap) for r in range(R)]
        for k in range(N1)
    ]


def _suffix_coefficients(N1: int) -> np.ndarray:
    # w_k = sum_{j >= k} s_j, hence sum_k w_k = sum_j (j+1) s_j.
    return np.arange(1, N1 + 1, dtype=float)


class _WeightLpBuilder:
    """Assembles the epigraph LP over (s, t [, z]) columns for a working piece set."""

    def __init__(self, problem: LearningProblem, hinges):
        self.problem = problem
        self.N1 = problem.horizon + 1
        self.R = len(problem.components)
        self.hinges = hinges
        self.t_entries = [
            (k, r) for k in range(self.N1) for r in range(self.R) if not hinges[k][r].constant
        ]
        self.t_index = {e: i for i, e in enumerate(self.t_entries)}
        self.constant_term = sum(
            hinges[k][r].base_alpha
            for k in range(self.N1)
            for r in range(self.R)
            if hinges[k][r].constant
        )
        self.n_s = self.N1 * self.R
        self.n_t = len(self.t_entries)

    def s_col(self, k: int, r: int) -> int:
        return k * self.R + r

    def weight_row_coeffs(self, k: int, r: int, n_cols: int) -> np.ndarray:
        """Row with w_{k,r} = sum_{j>=k} s_{j,r} expanded over the s columns."""
        row = np.zeros(n_cols)
        for j in range(k, self.N1):
            row[self.s_col(j, r)] = 1.0
        return row

    def weights_from(self, x: np.ndarray) -> np.ndarray:
        s = np.maximum(x[: self.n_s].reshape(self.N1, self.R), 0.0)
        return np.flip(np.cumsum(np.flip(s, axis=0), axis=0), axis=0)

    def build(self, working: dict, stage2: float | None = None, flat_floor_rows=None):
        """LP for the current working piece set.

        Stage 1 minimizes sum(t). With ``stage2`` set to the stage-1 optimum,
        the t-sum is capped there instead and a shared floor variable z under
        the ``flat_floor_rows`` entries is maximized.
        """
        n_cols = self.n_s + self.n_t + (1 if stage2 is not None else 0)
        rows_ub = []
        b_ub = []
        for (k, r), segments in working.items():
            t_col = self.n_s + self.t_index[(k, r)]
            for seg in sorted(segments):
                alpha, beta = self.hinges[k][r].piece(seg)
                row = beta * self.weight_row_coeffs(k, r, n_cols)
                row[t_col] -= 1.0
                rows_ub.append(row)
                b_ub.append(-alpha)

        rows_eq = []
        b_eq = []
        suffix = _suffix_coefficients(self.N1)
        if self.problem.per_component_normalization:
            share = self.problem.total / self.R
            for r in range(self.R):
                row = np.zeros(n_cols)
                for j in range(self.N1):
                    row[self.s_col(j, r)] = suffix[j]
                rows_eq.append(row)
                b_eq.append(share)
        else:
            row = np.zeros(n_cols)
            for r in range(self.R):
                for j in range(self.N1):
                    row[self.s_col(j, r)] = suffix[j]
            rows_eq.append(row)
            b_eq.append(self.problem.total)

        if stage2 is None:
            c = np.zeros(n_cols)
            c[self.n_s : self.n_s + self.n_t] = 1.0
        else:
            floating, fixed = flat_floor_rows
            cap_row = np.zeros(n_cols)
            cap_row[self.n_s : self.n_s + self.n_t] = 1.0
            rows_ub.append(cap_row)
            b_ub.append(stage2 + 1e-9)
            z_col = n_cols - 1
            for r in floating:
                # Aggregate floor: sum_k w_{k,r} = sum_j (j+1) s_{j,r} >= z.
                row = np.zeros(n_cols)
                for j in range(self.N1):
                    row[self.s_col(j, r)] = -suffix[j]
                row[z_col] = 1.0
                rows_ub.append(row)
                b_ub.append(0.0)
            for r, floor in fixed.items():
                row = np.zeros(n_cols)
                for j in range(self.N1):
                    row[self.s_col(j, r)] = -suffix[j]
                rows_ub.append(row)
                b_ub.append(-floor)
            c = np.zeros(n_cols)
            c[z_col] = -1.0

        return LinearProgram(
            c=c,
            A_ub=np.array(rows_ub) if rows_ub else None,
            b_ub=np.array(b_ub) if rows_ub else None,
            A_eq=np.array(rows_eq),
            b_eq=np.array(b_eq),
        )


def _cut_loop(builder: _WeightLpBuilder, working, hint_w, stage2=None, flat_floor_rows=None, anchors=None):
    """Solve, add violated pieces at the solution, repeat until exact."""
    for k, r in builder.t_entries:
        entry = working.setdefault((k, r), set())
        h = builder.hinges[k][r]
        entry.add(h.segment_at(float(hint_w[k, r])))
        entry.add(0)
        entry.add(h.num_segments - 1)
        if anchors is not None:
            for omega in anchors.get((k, r), ()):
                entry.add(h.segment_at(omega))

    last = None
    for _ in range(_MAX_CUT_ROUNDS):
        lp = builder.build(working, stage2=stage2, flat_floor_rows=flat_floor_rows)
        result = solve_linear_program(lp)
        if result.status != "optimal":
            raise RuntimeError(f"weight LP solve failed: {result.status}")
        w = builder.weights_from(result.x)
        violated = 0
        for k, r in builder.t_entries:
            h = builder.hinges[k][r]
            t_val = result.x[builder.n_s + builder.t_index[(k, r)]]
            if t_val < h.value(float(w[k, r])) - _CUT_TOL:
                seg = h.segment_at(float(w[k, r]))
                if seg not in working[(k, r)]:
                    working[(k, r)].add(seg)
                    violated += 1
        last = (result, w)
        if violated == 0:
            return last
    return last


def solve_weight_lp(
    problem: LearningProblem,
    method: str = "simplex",
    hint: np.ndarray | None = None,
    cut_anchors: dict | None = None,
) -> WeightSchedule:
    """Globally minimize the hinge loss subject to w >= 0, stage monotonicity,
    and the normalization row; ties broken by raising a common floor under
    the aggregate weight of every component the data actively supports.

    ``cut_anchors`` optionally carries piece anchor points from a previous
    solve of a related problem (the Algorithm-1 loop); it is updated in
    place and only saves cut rounds, never changes the optimum.
    """
    if method == "subgradient":
        values = _subgradient_solve(problem)
        return WeightSchedule(values=values, components=problem.components)
    if method != "simplex":
        raise ValueError(f"unknown method {method!r}")

    N1 = problem.horizon + 1
    R = len(problem.components)
    uniform = np.full((N1, R), problem.total / (N1 * R))
    hinges = _build_entry_hinges(problem)

    if all(hinges[k][r].constant for k in range(N1) for r in range(R)):
        return WeightSchedule(values=uniform, components=problem.components)

    builder = _WeightLpBuilder(problem, hinges)
    hint_w = np.asarray(hint, dtype=float) if hint is not None else uniform
    working: dict = {}
    result, w = _cut_loop(builder, working, hint_w, anchors=cut_anchors)
    t_opt = float(result.objective)

    # Components the data actively supports: some entry is hinge-flat above
    # a real threshold (all coefficients pushing the weight up, none pushing
    # back). Their aggregate weights get a lexicographic max-min floor:
    # components that cannot rise (chains drag penalized entries with them)
    # are pinned where they stand, and the floor re-maximizes over the rest.
    # Purely no-data components receive nothing.
    supported = sorted(
        {
            r
            for k in range(N1)
            for r in range(R)
            if hinges[k][r].flat_above and hinges[k][r].breaks.size > 0
        }
    )
    remaining = list(supported)
    fixed: dict = {}
    suffix_totals = lambda mat: mat.sum(axis=0)
    for _ in range(3):
        if not remaining:
            break
        result, w = _cut_loop(
            builder,
            working,
            w,
            stage2=t_opt,
            flat_floor_rows=(remaining, fixed),
            anchors=cut_anchors,
        )
        z_star = float(result.x[-1])
        aggregates = suffix_totals(w)
        blocked = [r for r in remaining if aggregates[r] <= z_star * (1 + 1e-6) + 1e-6]
        if not blocked or len(blocked) == len(remaining):
            break
        for r in blocked:
            fixed[r] = min(float(aggregates[r]), z_star)
        remaining = [r for r in remaining if r not in blocked]

    if cut_anchors is not None:
        for k, r in builder.t_entries:
            anchors = cut_anchors.setdefault((k, r), set())
            anchors.add(float(w[k, r]))

    values = _normalize(problem, w)
    return WeightSchedule(values=values, components=problem.components)


def _normalize(problem: LearningProblem, w: np.ndarray) -> np.ndarray:
    w = np.maximum(w, 0.0)
    if problem.per_component_normalization:
        share = problem.total / len(problem.components)
        for r in range(w.shape[1]):
            col_sum = w[:, r].sum()
            if col_sum > 0:
                w[:, r] *= share / col_sum
    else:
        total = w.sum()
        if total > 0:
            w *= problem.total / total
    return w


def constraint_residuals(problem: LearningProblem, schedule: WeightSchedule) -> dict:
    """Max violations of the three constraint families, for verification."""
    w = schedule.values
    mono = float(np.max(np.maximum(w[1:] - w[:-1], 0.0))) if w.shape[0] > 1 else 0.0
    if problem.per_component_normalization:
        share = problem.total / len(problem.components)
        norm = float(np.max(np.abs(w.sum(axis=0) - share)))
    else:
        norm = abs(float(w.sum()) - problem.total)
    return {
        "nonnegativity": float(max(0.0, -w.min())),
        "normalization": norm,
        "monotonicity": mono,
    }


def _monotone_nonneg_projection(w: np.ndarray) -> np.ndarray:
    out = np.empty_like(w)
    for r in range(w.shape[1]):
        out[:, r] = _pav_nonincreasing(w[:, r])
    return np.maximum(out, 0.0)


def _project_feasible(problem: LearningProblem, w: np.ndarray, rounds: int = 100) -> np.ndarray:
    """Dykstra projection onto {w >= 0, monotone columns, normalization}."""
    w = w.copy()
    p = np.zeros_like(w)
    q = np.zeros_like(w)
    for _ in range(rounds):
        y = w + p
        proj1 = _monotone_nonneg_projection(y)
        p = y - proj1
        y = proj1 + q
        if problem.per_component_normalization:
            share = problem.total / len(problem.components)
            proj2 = y + (share - y.sum(axis=0, keepdims=True)) / y.shape[0]
        else:
            proj2 = y + (problem.total - y.sum()) / y.size
        q = y - proj2
        w = proj2
    w = _monotone_nonneg_projection(w)
    scale = problem.total / w.sum() if w.sum() > 0 else 1.0
    return w * scale


def _pav_nonincreasing(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto nonincreasing sequences (pool adjacent violators)."""
    blocks = [[float(v), 1] for v in y]
    merged = []
    for val, cnt in blocks:
        merged.append([val, cnt])
        while len(merged) > 1 and merged[-2][0] < merged[-1][0]:
            v2, c2 = merged.pop()
            v1, c1 = merged.pop()
            merged.append([(v1 * c1 + v2 * c2) / (c1 + c2), c1 + c2])
    out = np.empty_like(y, dtype=float)
    i = 0
    for val, cnt in merged:
        out[i : i + cnt] = val
        i += cnt
    return out


def _subgradient_solve(problem: LearningProblem, iterations: int = 3000) -> np.ndarray:
    """Projected subgradient fallback used to cross-check the simplex path.

    Diminishing steps with a few geometric restarts; intended for small
    cross-check instances, not the full learning problems.
    """
    N1 = problem.horizon + 1
    R = len(problem.components)
    w = np.full((N1, R), problem.total / (N1 * R))
    best_w = w.copy()
    best_obj = hinge_objective(problem, w)
    stacked = np.stack([s.coefficients for s in problem.samples])
    scale = max(1.0, float(np.abs(stacked).max()))
    per_phase = max(1, iterations // 4)
    for phase in range(4):
        w = best_w.copy()
        base = problem.total / (scale * 10.0**phase)
        for it in range(1, per_phase + 1):
            active = (problem.margin + stacked * w[None, :, :]) > 0
            grad = (stacked * active).sum(axis=0)
            step = base / np.sqrt(it)
            w = _project_feasible(problem, w - step * grad, rounds=15)
            obj = hinge_objective(problem, w)
            if obj < best_obj:
                best_obj = obj
                best_w = w.copy()
    return _project_feasible(problem, best_w, rounds=300)
