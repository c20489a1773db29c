"""Semidefinite programs over the confidence set.

Three problems, all small (d <= ~20, a few dozen cuts):

* largest inscribed Frobenius ball (center + radius),
* linear maximization <A, S> with its dual certificate,
* center search tolerating a bounded number of violated cuts.

The backend is cvxpy; every returned point is re-verified against the raw
constraints, so the contract does not depend on solver internals.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .core import (
    ConfidenceSet,
    CostMatrix,
    ZERO_CUT_TOL,
    frobenius_inner,
    max_violation,
    symmetrize,
)

FEAS_TOL = 1e-7
GAP_TOL = 1e-5
# Radius below which the polytope is treated as having an empty interior.
INTERIOR_TOL = 1e-9

SOLVER_ORDER = ("CLARABEL", "SCS")
_SOLVER_OPTS = {
    "CLARABEL": {},
    "SCS": {"eps": 1e-9, "max_iters": 200_000},
}


class InfeasibleSet(RuntimeError):
    """The confidence set has an empty interior (or is empty) as posed."""

    solver_status = "infeasible"


class SolverFailure(RuntimeError):
    """No backend produced a point passing the post-hoc feasibility check."""

    solver_status = "tolerance_failure"


@dataclass(frozen=True)
class CenterResult:
    """Center of the largest inscribed ball, with its radius."""

    center: CostMatrix
    radius: float
    solver_status: str = "optimal"


@dataclass(frozen=True)
class WorstCaseResult:
    """max <A, S> over the confidence set, plus the dual bound."""

    value: float
    argmax: CostMatrix
    dual_value: float

    @property
    def gap(self) -> float:
        return abs(self.value - self.dual_value)


@dataclass(frozen=True)
class TolerantCenterResult:
    """Center found after discarding a bounded set of violated cuts."""

    center: CostMatrix
    radius: float
    violated: tuple[int, ...]  # positions into the ConfidenceSet's cut list


def _solve(problem: cp.Problem) -> str | None:
    """Try solvers in order; return the name of the first that reports a
    usable status, leaving its solution loaded in the problem variables."""
    for name in SOLVER_ORDER:
        try:
            problem.solve(solver=name, **_SOLVER_OPTS[name])
        except Exception:  # noqa: BLE001 - backend failure modes vary widely
            continue
        if problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return name
        if problem.status in (cp.INFEASIBLE, cp.UNBOUNDED):
            return name
    return None


def _clean_psd(a: np.ndarray) -> np.ndarray:
    """Clip tiny negative/super-unit eigenvalues introduced by the solver."""
    m = symmetrize(a, tol=np.inf)
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, 1.0)
    return (v * w) @ v.T


def center_feasibility(center: np.ndarray, radius: float, spec: ConfidenceSet) -> float:
    """Largest violation of the ball-robust constraints at (center, radius);
    <= 0 means feasible.  Evaluated directly from the definition."""
    w = np.linalg.eigvalsh(symmetrize(center, tol=np.inf))
    worst = max(-float(w[0]), float(w[-1]) - 1.0, -radius)
    for c in spec.cuts:
        worst = max(
            worst,
            frobenius_inner(center, c.matrix) + radius * c.norm - spec.margin,
        )
    return worst


def _chebyshev_program(spec: ConfidenceSet, relaxed: set[int], big_m: float):
    d = spec.dim
    a = cp.Variable((d, d), symmetric=True)
    r = cp.Variable(nonneg=True)
    cons = [a >> 0, np.eye(d) - a >> 0]
    for k, cut in enumerate(spec.cuts):
        if cut.is_degenerate:
            continue
        bound = spec.margin + (big_m if k in relaxed else 0.0)
        cons.append(cp.sum(cp.multiply(cut.matrix, a)) + r * cut.norm <= bound)
    return cp.Problem(cp.Maximize(r), cons), a, r


def default_big_m(spec: ConfidenceSet) -> float:
    """Constant large enough to deactivate any cut over 0 <= A <= I.

    Scaled from the cut norms (a trace-based constant can vanish for
    traceless cuts); any matrix in the box has Frobenius norm <= sqrt(d) and
    the radius never exceeds 1/2, so this bound is safely slack."""
    if not spec.cuts:
        return 10.0 * (spec.margin + 1.0)
    top = max(c.norm for c in spec.cuts)
    return 10.0 * (spec.margin + top * (1.0 + np.sqrt(spec.dim)))


def chebyshev_center(spec: ConfidenceSet) -> CenterResult:
    """Center and radius of the largest Frobenius ball inscribed in the set.

    With no cuts the program leaves the radius unconstrained, so the
    uninformative center I/2 with radius 1/2 is returned by convention.
    Raises InfeasibleSet when the interior is (numerically) empty and
    SolverFailure when no backend passes the feasibility re-check.
    """
    if all(c.is_degenerate for c in spec.cuts):
        return CenterResult(CostMatrix.identity(spec.dim, 0.5), 0.5)

    problem, a, r = _chebyshev_program(spec, relaxed=set(), big_m=0.0)
    solver = _solve(problem)
    if solver is None:
        raise SolverFailure("no solver converged on the center program")
    if problem.status in (cp.INFEASIBLE, cp.UNBOUNDED):
        raise InfeasibleSet(f"center program is {problem.status}")

    radius = float(r.value)
    if radius < INTERIOR_TOL:
        raise InfeasibleSet(
            f"confidence set has an empty interior (radius {radius:.2e})"
        )
    center = _clean_psd(a.value)
    # Shrink the radius if eigenvalue cleaning nudged a cut constraint.
    slack = center_feasibility(center, radius, spec)
    if slack > 0.0:
        radius = max(0.0, radius - slack)
    if center_feasibility(center, radius, spec) > FEAS_TOL:
        raise SolverFailure("center failed the post-hoc feasibility check")
    if radius < INTERIOR_TOL:
        raise InfeasibleSet("confidence set has an empty interior after cleanup")
    return CenterResult(CostMatrix(center), radius)


class WorstCaseOracle:
    """Repeated maximization of <A, S> over one fixed confidence set.

    The program is compiled once with S as a parameter, which makes the
    per-call cost a bare solver invocation; this is the inner loop of both
    gradient recourse and worst-case edge weighting.  With no cuts the
    maximizer over 0 <= A <= I of a PSD objective is the identity, so that
    case is answered in closed form.
    """

    def __init__(self, spec: ConfidenceSet):
        self.spec = spec
        self._trivial = spec.num_cuts == 0 or all(c.is_degenerate for c in spec.cuts)
        if self._trivial:
            return
        d = spec.dim
        self._a = cp.Variable((d, d), symmetric=True)
        self._s = cp.Parameter((d, d), symmetric=True)
        cons = [self._a >> 0, np.eye(d) - self._a >> 0]
        for cut in spec.cuts:
            if cut.is_degenerate:
                continue
            cons.append(cp.sum(cp.multiply(cut.matrix, self._a)) <= spec.margin)
        self._problem = cp.Problem(
            cp.Maximize(cp.sum(cp.multiply(self._s, self._a))), cons
        )

    def solve(self, s: np.ndarray) -> tuple[float, np.ndarray]:
        """Return (max value, an attaining matrix) for symmetric PSD S."""
        s = symmetrize(s)
        if self._trivial:
            return float(np.trace(s)), np.eye(self.spec.dim)
        self._s.value = s
        solver = _solve(self._problem)
        if solver is None or self._problem.status not in (
            cp.OPTIMAL,
            cp.OPTIMAL_INACCURATE,
        ):
            raise SolverFailure("worst-case program did not solve")
        a = _clean_psd(self._a.value)
        if max_violation(a, self.spec) > FEAS_TOL:
            raise SolverFailure("worst-case argmax failed the feasibility check")
        return float(np.sum(a * s)), a


def _dual_value(s: np.ndarray, spec: ConfidenceSet) -> float:
    """Dual program: min <U, I> + margin * sum(t) s.t.
    U + sum_k t_k M_k >= S, t >= 0, U PSD."""
    d = spec.dim
    cuts = [c for c in spec.cuts if not c.is_degenerate]
    u = cp.Variable((d, d), symmetric=True)
    cons = [u >> 0]
    obj = cp.trace(u)
    if cuts:
        t = cp.Variable(len(cuts), nonneg=True)
        lhs = u
        for k, cut in enumerate(cuts):
            lhs = lhs + t[k] * cut.matrix
        cons.append(lhs - s >> 0)
        obj = obj + spec.margin * cp.sum(t)
    else:
        cons.append(u - s >> 0)
    problem = cp.Problem(cp.Minimize(obj), cons)
    solver = _solve(problem)
    if solver is None or problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverFailure("dual worst-case program did not solve")
    return float(problem.value)


def max_over_confidence(s, spec: ConfidenceSet) -> WorstCaseResult:
    """Worst-case quadratic coefficient matrix over the confidence set.

    Solves the primal maximization and, independently, its dual; the result
    carries both values so callers can check the duality gap.
    """
    sm = symmetrize(np.asarray(s, dtype=float))
    if sm.shape[0] != spec.dim:
        raise ValueError("objective matrix dimension does not match the set")
    lo = float(np.linalg.eigvalsh(sm)[0]) if sm.size else 0.0
    if lo < -1e-9:
        raise ValueError("objective matrix must be PSD")
    if np.linalg.norm(sm, "fro") < ZERO_CUT_TOL:
        # Zero objective: any feasible point attains the max.
        return WorstCaseResult(0.0, CostMatrix(np.zeros_like(sm)), 0.0)
    value, argmax = WorstCaseOracle(spec).solve(sm)
    dual = _dual_value(sm, spec)
    return WorstCaseResult(value, CostMatrix(argmax), dual)


def _center_or_none(spec: ConfidenceSet, relaxed: set[int], big_m: float):
    problem, a, r = _chebyshev_program(spec, relaxed, big_m)
    solver = _solve(problem)
    if solver is None or problem.status in (cp.INFEASIBLE, cp.UNBOUNDED):
        return None
    radius = float(r.value)
    center = _clean_psd(a.value)
    kept = spec.without(relaxed)
    slack = center_feasibility(center, radius, kept)
    if slack > 0.0:
        radius = max(0.0, radius - slack)
    if center_feasibility(center, radius, kept) > FEAS_TOL:
        return None
    return center, radius


ENUMERATION_LIMIT = 15


def tolerant_center(
    spec: ConfidenceSet, alpha: float, big_m: float | None = None
) -> TolerantCenterResult:
    """Center search allowing at most floor(alpha * |cuts|) cuts to be violated.

    Violated cuts keep their big-M-relaxed halfspace, which de-activates them
    for any attainable radius.  The search prefers the FEWEST violations that
    yield a non-degenerate interior, then the largest radius; ties go to the
    lexicographically first violation pattern.  Exact subset enumeration up to
    15 cuts, greedy removal beyond.
    """
    if spec.num_cuts < 1:
        raise ValueError("tolerant center needs at least one cut")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must be in [0, 1)")
    budget = int(np.floor(alpha * spec.num_cuts))
    m_const = default_big_m(spec) if big_m is None else float(big_m)

    if spec.num_cuts <= ENUMERATION_LIMIT:
        for size in range(budget + 1):
            best = None
            for combo in itertools.combinations(range(spec.num_cuts), size):
                got = _center_or_none(spec, set(combo), m_const)
                if got is None:
                    continue
                center, radius = got
                if radius < INTERIOR_TOL:
                    continue
                if best is None or radius > best[1] + 1e-12:
                    best = (center, radius, combo)
            if best is not None:
                return TolerantCenterResult(
                    CostMatrix(best[0]), best[1], tuple(best[2])
                )
        raise InfeasibleSet(
            f"no violation pattern within budget {budget} yields an interior"
        )

    # Greedy: drop the cut whose removal grows the radius the most.
    dropped: list[int] = []
    while True:
        got = _center_or_none(spec, set(dropped), m_const)
        if got is not None and got[1] >= INTERIOR_TOL:
            return TolerantCenterResult(CostMatrix(got[0]), got[1], tuple(sorted(dropped)))
        if len(dropped) >= budget:
            raise InfeasibleSet(
                f"greedy search exhausted budget {budget} without an interior"
            )
        best_k, best_r = None, -np.inf
        for k in range(spec.num_cuts):
            if k in dropped:
                continue
            trial = _center_or_none(spec, set(dropped) | {k}, m_const)
            r = -np.inf if trial is None else trial[1]
            if r > best_r + 1e-12:
                best_k, best_r = k, r
        if best_k is None:
            raise InfeasibleSet("no removable cut restores feasibility")
        dropped.append(best_k)
