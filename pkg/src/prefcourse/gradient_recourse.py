"""Single-step recourse by projected gradient descent.

The objective trades classifier validity against the worst-case quadratic
cost over the confidence set; the inner maximization is re-solved at every
iterate.  Failing runs lower the trade-off weight stepwise and retry, so a
valid endpoint is still found when the cost term initially dominates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfidenceSet, CostMatrix, as_vector, cost
from .sdp import WorstCaseOracle

LOSS_KINDS = ("quadratic", "hinge")
PLATEAU_TOL = 1e-10


@dataclass(frozen=True)
class GradConfig:
    lam: float = 1.0
    alpha_lr: float = 0.01
    max_iters: int = 1000
    loss_kind: str = "quadratic"
    lam_decrement: float = 0.05
    early_stop: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.alpha_lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}")


@dataclass
class RecoursePlan:
    terminal: np.ndarray
    valid: bool
    iterations_used: int
    worst_case_cost: float
    truth_cost: float | None = None


def loss(kind: str, p: float, target: int = 1) -> tuple[float, float]:
    """Validity loss and its derivative in p.

    Quadratic pulls the probability to the 0.5 threshold; hinge penalizes
    only the infeasible side.  `target` is fixed at the favorable class.
    """
    if target != 1:
        raise ValueError("only the favorable target is supported")
    if kind == "quadratic":
        return (p - 0.5) ** 2, 2.0 * (p - 0.5)
    if kind == "hinge":
        if p < 0.5:
            return 0.5 - p, -1.0
        return 0.0, 0.0
    raise ValueError(f"unknown loss kind {kind!r}")


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(v) + 1)
    cond = u - css / ks > 0
    rho = int(np.max(np.nonzero(cond))) if np.any(cond) else 0
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _project(
    x: np.ndarray,
    blocks: list[tuple[int, int]],
    freeze_mask: np.ndarray | None,
    x0: np.ndarray,
) -> np.ndarray:
    out = np.clip(x, 0.0, 1.0)
    for lo, hi in blocks:
        out[lo:hi] = project_simplex(x[lo:hi])
    if freeze_mask is not None:
        out[freeze_mask] = x0[freeze_mask]
    return out


def round_blocks(x: np.ndarray, blocks: list[tuple[int, int]]) -> np.ndarray:
    """Snap each relaxed one-hot block to its nearest vertex."""
    out = x.copy()
    for lo, hi in blocks:
        vertex = np.zeros(hi - lo)
        vertex[int(np.argmax(x[lo:hi]))] = 1.0
        out[lo:hi] = vertex
    return out


class _FixedOracle:
    """Stands in for the worst-case oracle when the matrix is pinned."""

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=float)

    def solve(self, s: np.ndarray) -> tuple[float, np.ndarray]:
        return float(np.sum(self.matrix * s)), self.matrix


def _descend(
    x0: np.ndarray,
    model,
    oracle,
    lam: float,
    cfg: GradConfig,
    blocks: list[tuple[int, int]],
    freeze_mask: np.ndarray | None,
) -> tuple[np.ndarray, bool, int, float]:
    """One descent run at a fixed trade-off weight.

    Returns (iterate, valid, iterations, best probability seen).  Validity is
    always judged on the vertex-rounded point.
    """
    x = x0.copy()
    best_p = -np.inf
    best_x = x.copy()
    prev_obj = None
    plateau = 0
    for it in range(1, cfg.max_iters + 1):
        p = float(model.predict_proba(x)[0])
        if p > best_p:
            best_p, best_x = p, x.copy()
        _, dl = loss(cfg.loss_kind, p)
        u = x - x0
        wc_val, a_star = oracle.solve(np.outer(u, u))
        grad = dl * model.gradient(x.reshape(1, -1))[0] + 2.0 * lam * (a_star @ u)
        x_new = _project(x - cfg.alpha_lr * grad, blocks, freeze_mask, x0)
        obj = loss(cfg.loss_kind, p)[0] + lam * wc_val
        x = x_new
        if cfg.early_stop:
            snapped = round_blocks(x, blocks)
            if int(model.predict(snapped.reshape(1, -1))[0]) == 1:
                return snapped, True, it, best_p
        if prev_obj is not None and abs(obj - prev_obj) < PLATEAU_TOL:
            plateau += 1
            if plateau >= 2:  # stable objective two rounds running: converged
                break
        else:
            plateau = 0
        prev_obj = obj
    snapped = round_blocks(x, blocks)
    valid = int(model.predict(snapped.reshape(1, -1))[0]) == 1
    if not valid:
        # Fall back to the highest-probability iterate seen.
        alt = round_blocks(best_x, blocks)
        if int(model.predict(alt.reshape(1, -1))[0]) == 1:
            return alt, True, cfg.max_iters, best_p
        snapped = alt if best_p > float(model.predict_proba(snapped)[0]) else snapped
    return snapped, valid, cfg.max_iters, best_p


def _run(
    x0: np.ndarray,
    model,
    oracle,
    cfg: GradConfig,
    blocks: list[tuple[int, int]],
    freeze_mask: np.ndarray | None,
) -> RecoursePlan:
    x0 = as_vector(x0)
    if freeze_mask is not None:
        freeze_mask = np.asarray(freeze_mask, dtype=bool)
        if freeze_mask.shape != x0.shape:
            raise ValueError("freeze mask must match the feature dimension")
    blocks = blocks or []
    if int(model.predict(x0.reshape(1, -1))[0]) == 1:
        return RecoursePlan(x0.copy(), True, 0, 0.0)

    lam = cfg.lam
    total_iters = 0
    best: tuple[float, np.ndarray] | None = None  # (probability, point)
    while True:
        x, valid, used, best_p = _descend(
            x0, model, oracle, lam, cfg, blocks, freeze_mask
        )
        total_iters += used
        if valid:
            u = x - x0
            wc, _ = oracle.solve(np.outer(u, u))
            return RecoursePlan(x, True, total_iters, float(wc))
        if best is None or best_p > best[0]:
            best = (best_p, x)
        if lam <= 0.0:
            break
        # Clamp so the schedule always ends on a pure-validity pass.
        lam = max(lam - cfg.lam_decrement, 0.0)
    x = best[1]
    u = x - x0
    wc, _ = oracle.solve(np.outer(u, u))
    return RecoursePlan(x, False, total_iters, float(wc))


def generate(
    x0,
    model,
    spec: ConfidenceSet,
    cfg: GradConfig = GradConfig(),
    one_hot_blocks: list[tuple[int, int]] | None = None,
    freeze_mask=None,
) -> RecoursePlan:
    """Recourse against the worst-case cost over the confidence set.

    `model` must expose predict_proba / predict / gradient over rows (the
    classifier surface).  A favorably classified start returns immediately.
    """
    oracle = WorstCaseOracle(spec)
    return _run(as_vector(x0), model, oracle, cfg, one_hot_blocks, freeze_mask)


def generate_fixed(
    x0,
    model,
    matrix,
    cfg: GradConfig = GradConfig(),
    one_hot_blocks: list[tuple[int, int]] | None = None,
    freeze_mask=None,
) -> RecoursePlan:
    """Same descent with a pinned cost matrix (no confidence set).

    With the half-identity this is the plain squared-Euclidean baseline.
    """
    m = matrix.mat if isinstance(matrix, CostMatrix) else np.asarray(matrix, float)
    return _run(as_vector(x0), model, _FixedOracle(m), cfg, one_hot_blocks, freeze_mask)


def plan_cost(plan: RecoursePlan, truth, x0) -> float:
    """Ground-truth cost of the plan endpoint; fills plan.truth_cost."""
    value = cost(truth, plan.terminal, as_vector(x0))
    plan.truth_cost = float(value)
    return plan.truth_cost
