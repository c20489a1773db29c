"""Question-answer loop for learning a subject's cost matrix.

Ground-truth generators, the two question-selection rules (exhaustive scan
and the sorted-cost windowing heuristic) plus a random baseline, a simulated
subject, and the session orchestration that feeds answers back into the
confidence set and re-centers after each one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    ConfidenceSet,
    CostMatrix,
    DEFAULT_MARGIN,
    PreferenceSet,
    ZERO_CUT_TOL,
    as_vector,
    confidence_set,
    cost,
    symmetrize,
)
from .sdp import CenterResult, InfeasibleSet, chebyshev_center, tolerant_center

DEFAULT_TOLERANT_ALPHA = 0.5
QUESTION_TIMEOUT_S = 600.0

STRATEGIES = ("exhaustive", "similar_cost", "random")


class PoolExhausted(RuntimeError):
    """Every admissible pair (or window) has already been asked."""


@dataclass(frozen=True)
class Question:
    """A k-way comparison between pool members, k >= 2."""

    option_indices: tuple[int, ...]
    projection_distance: float

    def __post_init__(self):
        if len(self.option_indices) < 2:
            raise ValueError("a question needs at least two options")
        if len(set(self.option_indices)) != len(self.option_indices):
            raise ValueError("option indices must be distinct")


@dataclass(frozen=True)
class Answer:
    """preferred(index), or indifferent (two options only)."""

    preferred: int | None  # None encodes indifference

    @property
    def is_indifferent(self) -> bool:
        return self.preferred is None

    def to_json(self) -> dict:
        if self.is_indifferent:
            return {"kind": "indifferent"}
        return {"kind": "preferred", "index": int(self.preferred)}

    @classmethod
    def from_json(cls, obj: dict) -> "Answer":
        kind = obj.get("kind")
        if kind == "indifferent":
            return cls(None)
        if kind == "preferred":
            return cls(int(obj["index"]))
        raise ValueError(f"unknown answer kind: {kind!r}")


@dataclass
class ElicitationSession:
    """Mutable state of one elicitation run against a fixed candidate pool."""

    x0: np.ndarray
    pool: np.ndarray  # (N, d), row per candidate
    budget: int
    margin: float = DEFAULT_MARGIN
    tolerant_alpha: float = DEFAULT_TOLERANT_ALPHA
    rng_seed: int = 0
    prefs: PreferenceSet = None
    round: int = 0
    incumbent: CenterResult = None
    asked: set[tuple[int, int]] = field(default_factory=set)
    rng: np.random.Generator = None

    def __post_init__(self):
        self.x0 = as_vector(self.x0)
        self.pool = np.asarray(self.pool, dtype=float)
        if self.pool.ndim != 2 or self.pool.shape[1] != self.x0.shape[0]:
            raise ValueError("pool must be (N, d) matching x0")
        if self.pool.shape[0] < 2:
            raise ValueError("pool needs at least two candidates")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if self.prefs is None:
            self.prefs = PreferenceSet(pairs=[], margin=self.margin)
        if self.incumbent is None:
            self.incumbent = CenterResult(
                CostMatrix.identity(self.dim, 0.5), 0.5
            )
        if self.rng is None:
            self.rng = np.random.default_rng(self.rng_seed)

    @property
    def dim(self) -> int:
        return self.x0.shape[0]

    @property
    def pool_size(self) -> int:
        return self.pool.shape[0]

    def mark_asked(self, i: int, j: int):
        self.asked.add((min(i, j), max(i, j)))

    def was_asked(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.asked

    def spec(self) -> ConfidenceSet:
        return confidence_set(self.prefs, self.pool, self.x0)


# ---------------------------------------------------------------------------
# Ground-truth generators


def gen_truth_random(d: int, rng: np.random.Generator) -> CostMatrix:
    """AA^T for Gaussian A, normalized to unit spectral radius."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    a = rng.standard_normal((d, d))
    g = a @ a.T
    top = float(np.linalg.eigvalsh(g)[-1])
    if top <= 0.0:
        # Probability-zero draw; fall back to the identity.
        return CostMatrix.identity(d)
    return CostMatrix(g / top)


def gen_truth_lqr(
    q: np.ndarray,
    r: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> CostMatrix:
    """Fixed point of A = Q + A - A (R + A)^{-1} A, iterated from A = Q + I.

    The returned matrix satisfies Q = A (R + A)^{-1} A up to tol; this is the
    quadratic value matrix of a one-step linear regulator, usable as a
    structured ground truth.  Raises on non-convergence.
    """
    q = symmetrize(np.asarray(q, dtype=float))
    r = symmetrize(np.asarray(r, dtype=float))
    if q.shape != r.shape:
        raise ValueError("Q and R must share a dimension")
    if np.linalg.eigvalsh(q)[0] < -1e-12:
        raise ValueError("Q must be PSD")
    if np.linalg.eigvalsh(r)[0] <= 0.0:
        raise ValueError("R must be PD")
    a = q + np.eye(q.shape[0])
    for _ in range(max_iter):
        middle = a @ np.linalg.solve(r + a, a)
        nxt = symmetrize(q + a - middle, tol=np.inf)
        if np.linalg.norm(q - (nxt @ np.linalg.solve(r + nxt, nxt)), "fro") <= tol:
            return CostMatrix(nxt)
        a = nxt
    raise RuntimeError(f"Riccati-type iteration did not converge in {max_iter} steps")


def lqr_residual(a: CostMatrix | np.ndarray, q: np.ndarray, r: np.ndarray) -> float:
    """|| Q - A (R + A)^{-1} A ||_F, evaluated directly."""
    m = a.mat if isinstance(a, CostMatrix) else np.asarray(a, dtype=float)
    return float(np.linalg.norm(q - m @ np.linalg.solve(r + m, m), "fro"))


def gen_truth_causal(w: np.ndarray, d_noise: np.ndarray) -> CostMatrix:
    """(I - W)^T D^{-1} (I - W) for an edge-weight matrix W and PD noise D.

    This is the intervention cost induced by a linear structural model; it is
    returned unnormalized.
    """
    w = np.asarray(w, dtype=float)
    d_noise = symmetrize(np.asarray(d_noise, dtype=float))
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape != d_noise.shape:
        raise ValueError("W and D must be square with equal dimension")
    if np.linalg.eigvalsh(d_noise)[0] <= 0.0:
        raise ValueError("D must be PD")
    eye_w = np.eye(w.shape[0]) - w
    if np.linalg.cond(eye_w) > 1e12:
        raise np.linalg.LinAlgError("I - W is singular")
    inner = np.linalg.solve(d_noise, eye_w)
    return CostMatrix(eye_w.T @ inner)


# ---------------------------------------------------------------------------
# Question selection


def pool_costs(a, pool: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """(x_i - x0)^T A (x_i - x0) for every pool row, in one pass."""
    m = a.mat if isinstance(a, CostMatrix) else np.asarray(a, dtype=float)
    u = pool - x0
    return np.einsum("ij,jk,ik->i", u, m, u)


def _pair_norms_sq(
    row_sq: np.ndarray, col_sq: np.ndarray, gram: np.ndarray
) -> np.ndarray:
    """||M_ij||_F^2 from centered Gram blocks.

    With u = x - x0 the cut matrix is u_i u_i^T - u_j u_j^T, whose squared
    Frobenius norm is ||u_i||^4 + ||u_j||^4 - 2 (u_i . u_j)^2.
    """
    return row_sq[:, None] ** 2 + col_sq[None, :] ** 2 - 2.0 * gram**2


def next_question_exhaustive(session: ElicitationSession) -> Question:
    """Pair whose cut hyperplane lies closest to the incumbent center.

    Scans every unasked pair, scoring |<A_c, M_ij>| / ||M_ij||_F; zero cuts
    (duplicate candidates) are skipped; ties break lexicographically.
    Runs chunked so million-pair pools stay within memory.
    """
    n = session.pool_size
    u = session.pool - session.x0
    s = pool_costs(session.incumbent.center, session.pool, session.x0)
    sq = np.einsum("ij,ij->i", u, u)

    best_score = np.inf
    best_pair: tuple[int, int] | None = None
    chunk = max(1, int(4e6) // max(n, 1))
    for lo in range(0, n - 1, chunk):
        hi = min(lo + chunk, n - 1)
        gram = u[lo:hi] @ u.T
        norms_sq = _pair_norms_sq(sq[lo:hi], sq, gram)  # local rows lo..hi
        diffs = np.abs(s[lo:hi, None] - s[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            scores = diffs / np.sqrt(np.maximum(norms_sq, 0.0))
        # Keep strictly-upper-triangular, non-degenerate, unasked entries.
        cols = np.arange(n)[None, :]
        rows = np.arange(lo, hi)[:, None]
        scores[cols <= rows] = np.inf
        scores[norms_sq <= ZERO_CUT_TOL**2] = np.inf
        for (i, j) in session.asked:
            if lo <= i < hi:
                scores[i - lo, j] = np.inf
            if lo <= j < hi:
                scores[j - lo, i] = np.inf
        flat = np.argmin(scores)
        val = scores.flat[flat]
        if val < best_score:  # strict: earlier chunks win ties, so lexicographic
            best_score = float(val)
            i_loc, j = divmod(int(flat), n)
            best_pair = (lo + i_loc, j)
    if best_pair is None or not np.isfinite(best_score):
        raise PoolExhausted("no unasked non-degenerate pair remains")
    return Question(best_pair, best_score)


def _adjacent_distances(
    session: ElicitationSession, order: np.ndarray, s: np.ndarray
) -> np.ndarray:
    """Projection distance for each sorted-adjacent pair (order[l], order[l+1])."""
    u = session.pool - session.x0
    ui, uj = u[order[:-1]], u[order[1:]]
    sq_i = np.einsum("ij,ij->i", ui, ui)
    sq_j = np.einsum("ij,ij->i", uj, uj)
    dots = np.einsum("ij,ij->i", ui, uj)
    norms = np.sqrt(np.maximum(sq_i**2 + sq_j**2 - 2.0 * dots**2, 0.0))
    gaps = np.abs(s[order[:-1]] - s[order[1:]])
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.where(norms > ZERO_CUT_TOL, gaps / norms, np.inf)
    return dist


def next_question_similar_cost(
    session: ElicitationSession, k: int = 2, gamma: float | None = None
) -> Question:
    """Windowed heuristic: sort candidates by incumbent cost and pick the k
    adjacent ones whose k-1 adjacent cuts lie closest to the center on average.

    Only N-k+1 windows are examined, so selection is O(N log N).  Windows
    whose every adjacent pair was already asked are skipped.  With gamma set,
    adjacent pairs whose cost gap is at most gamma are discarded as probable
    noise, removing every window that contains one.
    """
    n = session.pool_size
    if not 2 <= k <= n:
        raise ValueError("k must be between 2 and the pool size")
    s = pool_costs(session.incumbent.center, session.pool, session.x0)
    order = np.argsort(s, kind="stable")
    dist = _adjacent_distances(session, order, s)
    if gamma is not None:
        gaps = np.abs(s[order[:-1]] - s[order[1:]])
        dist = np.where(gaps > gamma, dist, np.inf)

    asked_mask = np.fromiter(
        (session.was_asked(int(a), int(b)) for a, b in zip(order[:-1], order[1:])),
        dtype=bool,
        count=n - 1,
    )
    windows = np.lib.stride_tricks.sliding_window_view(dist, k - 1)
    means = windows.mean(axis=1)
    all_asked = np.lib.stride_tricks.sliding_window_view(asked_mask, k - 1).all(axis=1)
    means = np.where(all_asked, np.inf, means)
    pick = int(np.argmin(means))  # first window on ties
    if not np.isfinite(means[pick]):
        raise PoolExhausted("no admissible window remains")
    idx = tuple(int(v) for v in order[pick : pick + k])
    return Question(idx, float(means[pick]))


def next_question_random(session: ElicitationSession) -> Question:
    """Uniform unasked pair; the baseline selection strategy."""
    n = session.pool_size
    u = session.pool - session.x0
    s = pool_costs(session.incumbent.center, session.pool, session.x0)
    # Sampling beats enumeration for big pools; fall back past 4N misses.
    for _ in range(4 * n):
        i, j = session.rng.choice(n, size=2, replace=False)
        i, j = int(i), int(j)
        if session.was_asked(i, j):
            continue
        ui, uj = u[i], u[j]
        norm_sq = (ui @ ui) ** 2 + (uj @ uj) ** 2 - 2.0 * (ui @ uj) ** 2
        if norm_sq <= ZERO_CUT_TOL**2:
            continue
        return Question((i, j), float(abs(s[i] - s[j]) / np.sqrt(norm_sq)))
    # Dense fallback guarantees termination near exhaustion.
    remaining = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if not session.was_asked(i, j)
    ]
    session.rng.shuffle(remaining)
    for i, j in remaining:
        ui, uj = u[i], u[j]
        norm_sq = (ui @ ui) ** 2 + (uj @ uj) ** 2 - 2.0 * (ui @ uj) ** 2
        if norm_sq > ZERO_CUT_TOL**2:
            return Question((i, j), float(abs(s[i] - s[j]) / np.sqrt(norm_sq)))
    raise PoolExhausted("no unasked non-degenerate pair remains")


def select_question(
    session: ElicitationSession,
    strategy: str = "exhaustive",
    k: int = 2,
    gamma: float | None = None,
) -> Question:
    if strategy == "exhaustive":
        if k != 2:
            raise ValueError("exhaustive selection poses pairwise questions only")
        return next_question_exhaustive(session)
    if strategy == "similar_cost":
        return next_question_similar_cost(session, k=k, gamma=gamma)
    if strategy == "random":
        if k != 2:
            raise ValueError("random selection poses pairwise questions only")
        return next_question_random(session)
    raise ValueError(f"unknown strategy {strategy!r}; pick from {STRATEGIES}")


# ---------------------------------------------------------------------------
# Answering


def respond_simulated(
    truth: CostMatrix,
    question: Question,
    session: ElicitationSession,
    indiff_band: float = 0.0,
    flip_prob: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Answer:
    """Answer as a subject whose true cost matrix is `truth`.

    Two options: prefer the strictly cheaper one unless the gap is within the
    indifference band.  More options: prefer the cheapest (ties to the lowest
    pool index).  With probability flip_prob the preferred index is swapped
    for a uniformly random other option.
    """
    opts = question.option_indices
    costs = np.array(
        [cost(truth, session.pool[i], session.x0) for i in opts]
    )
    if len(opts) == 2:
        gap = costs[0] - costs[1]
        if abs(gap) <= indiff_band:
            return Answer(None)
        preferred = opts[0] if gap < 0 else opts[1]
    else:
        winners = np.flatnonzero(costs == costs.min())
        preferred = min(opts[w] for w in winners)
    if flip_prob > 0.0:
        if rng is None:
            raise ValueError("flip_prob > 0 needs an rng")
        if rng.random() < flip_prob:
            others = [o for o in opts if o != preferred]
            preferred = int(others[rng.integers(len(others))])
    return Answer(int(preferred))


def apply_answer(
    session: ElicitationSession, question: Question, answer: Answer
) -> ElicitationSession:
    """Record the answer's cuts, mark pairs asked, re-center, bump the round.

    A preferred option among k reveals k-1 pairwise preferences; indifference
    records both orderings of the pair.  If the enlarged set loses its
    interior, the tolerant center (budget alpha) is tried before giving up.
    """
    opts = question.option_indices
    if answer.is_indifferent:
        if len(opts) != 2:
            raise ValueError("indifference is only defined for two options")
        i, j = opts
        session.prefs.add(i, j)
        session.prefs.add(j, i)
        session.mark_asked(i, j)
    else:
        if answer.preferred not in opts:
            raise ValueError("preferred index is not among the options")
        for other in opts:
            if other == answer.preferred:
                continue
            session.prefs.add(answer.preferred, other)
            session.mark_asked(answer.preferred, other)
    spec = session.spec()
    try:
        session.incumbent = chebyshev_center(spec)
    except InfeasibleSet:
        # Keeps the violated-cut list visible to callers; the result quacks
        # like a CenterResult (center, radius).
        session.incumbent = tolerant_center(spec, session.tolerant_alpha)
    session.round += 1
    return session


# ---------------------------------------------------------------------------
# Orchestration

Responder = Callable[[Question, float], "Answer | None"]


def simulated_responder(
    truth: CostMatrix,
    session: ElicitationSession,
    indiff_band: float = 0.0,
    flip_prob: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Responder:
    """Wrap a ground-truth matrix as a responder callback."""

    def _answer(question: Question, _timeout_s: float) -> Answer:
        return respond_simulated(
            truth, question, session, indiff_band, flip_prob, rng
        )

    return _answer


def run_session(
    x0,
    pool,
    responder: "Responder | CostMatrix",
    budget: int,
    strategy: str = "exhaustive",
    k: int = 2,
    gamma: float | None = None,
    margin: float = DEFAULT_MARGIN,
    seed: int = 0,
    indiff_band: float = 0.0,
    flip_prob: float = 0.0,
    tolerant_alpha: float = DEFAULT_TOLERANT_ALPHA,
    timeout_s: float = QUESTION_TIMEOUT_S,
    session: ElicitationSession | None = None,
) -> tuple[CenterResult, list[dict]]:
    """Drive a full select / answer / update loop for `budget` rounds.

    `responder` is either a ground-truth CostMatrix (simulated subject) or a
    callback (question, timeout_s) -> Answer | None; None pauses the session,
    which can be resumed by passing it back in.  A zero budget returns the
    uninformative center untouched.  The transcript lists one entry per
    answered round: options, answer, re-solved center and radius.
    """
    if session is None:
        session = ElicitationSession(
            x0=x0,
            pool=pool,
            budget=budget,
            margin=margin,
            tolerant_alpha=tolerant_alpha,
            rng_seed=seed,
        )
    if isinstance(responder, CostMatrix):
        responder = simulated_responder(
            responder, session, indiff_band, flip_prob, session.rng
        )
    transcript: list[dict] = []
    while session.round < session.budget:
        question = select_question(session, strategy=strategy, k=k, gamma=gamma)
        answer = responder(question, timeout_s)
        if answer is None:
            break
        apply_answer(session, question, answer)
        transcript.append(
            {
                "round": session.round,
                "option_indices": [int(i) for i in question.option_indices],
                "projection_distance": question.projection_distance,
                "answer": answer.to_json(),
                "center": session.incumbent.center.to_lists(),
                "radius": session.incumbent.radius,
            }
        )
    return session.incumbent, transcript
