"""Shared numeric types: cost matrices, preference cuts and confidence sets.

Everything downstream (solvers, elicitation, recourse generation) speaks in
terms of these few objects.  All matrices are dense numpy arrays; the intended
problem sizes are d <= ~100 features and a few dozen preference cuts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Tolerances applied at type boundaries.
SYMMETRY_TOL = 1e-8
EIGEN_FLOOR = -1e-9
ZERO_CUT_TOL = 1e-14

DEFAULT_MARGIN = 0.01


class DimensionMismatch(ValueError):
    """Operands do not share the feature dimension."""


class NotSymmetric(ValueError):
    """Matrix asymmetry exceeds the construction tolerance."""


class NotPositiveSemidefinite(ValueError):
    """Matrix has an eigenvalue below the PSD floor."""


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-d float array, optionally checking its length."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def symmetrize(m, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Return (M + M^T)/2, rejecting matrices that are asymmetric beyond tol."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > tol:
        raise NotSymmetric(f"asymmetry {asym:.3e} exceeds tolerance {tol:.1e}")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class CostMatrix:
    """Symmetric PSD matrix A defining the quadratic effort model
    (x - x0)^T A (x - x0).

    Construction symmetrizes the input and rejects matrices whose smallest
    eigenvalue falls below ``EIGEN_FLOOR``; nothing is silently projected.
    """

    mat: np.ndarray

    def __post_init__(self):
        m = symmetrize(self.mat)
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix has non-finite entries")
        if m.size:
            lo = float(np.linalg.eigvalsh(m)[0])
            if lo < EIGEN_FLOOR:
                raise NotPositiveSemidefinite(
                    f"smallest eigenvalue {lo:.3e} below floor {EIGEN_FLOOR:.1e}"
                )
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def cost(self, x, x0) -> float:
        return cost(self, x, x0)

    def to_lists(self) -> list[list[float]]:
        return matrix_to_lists(self.mat)

    @classmethod
    def identity(cls, d: int, scale: float = 1.0) -> "CostMatrix":
        return cls(scale * np.eye(d))

    @classmethod
    def from_lists(cls, rows) -> "CostMatrix":
        return cls(matrix_from_lists(rows))


@dataclass(frozen=True)
class Cut:
    """Halfspace <A, matrix> <= margin recording that recourse i was preferred
    to recourse j (ordered pair ``source``)."""

    matrix: np.ndarray
    source: tuple[int, int]

    def __post_init__(self):
        m = symmetrize(self.matrix)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "source", (int(self.source[0]), int(self.source[1])))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, "fro"))

    @property
    def is_degenerate(self) -> bool:
        """Zero cuts (identical recourses) constrain nothing."""
        return self.norm < ZERO_CUT_TOL


@dataclass
class PreferenceSet:
    """Ordered preference pairs (i, j) meaning "i preferred to j", with the
    shared comparison margin.  Both orders may coexist (indifference)."""

    pairs: list[tuple[int, int]] = field(default_factory=list)
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        seen = set()
        for p in self.pairs:
            t = (int(p[0]), int(p[1]))
            if t in seen:
                raise ValueError(f"duplicate ordered pair {t}")
            seen.add(t)
        self.pairs = [(int(i), int(j)) for i, j in self.pairs]

    def add(self, i: int, j: int) -> bool:
        """Record i preferred to j; returns False if already present."""
        t = (int(i), int(j))
        if t[0] == t[1]:
            raise ValueError("a preference pair needs two distinct indices")
        if t in self.pairs:
            return False
        self.pairs.append(t)
        return True

    def __len__(self) -> int:
        return len(self.pairs)

    def copy(self) -> "PreferenceSet":
        return PreferenceSet(list(self.pairs), self.margin)


@dataclass(frozen=True)
class ConfidenceSet:
    """The polytope of PSD matrices A with A <= I (Loewner) satisfying
    <A, cut> <= margin for every recorded preference cut."""

    cuts: tuple[Cut, ...]
    margin: float
    dim: int

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        object.__setattr__(self, "cuts", tuple(self.cuts))
        for c in self.cuts:
            if c.matrix.shape != (self.dim, self.dim):
                raise DimensionMismatch("cut dimension does not match the set")

    @property
    def num_cuts(self) -> int:
        return len(self.cuts)

    def contains(self, a: np.ndarray, tol: float = 1e-7) -> bool:
        """Direct feasibility check, independent of any solver."""
        return max_violation(a, self) <= tol

    def without(self, drop: set[int]) -> "ConfidenceSet":
        kept = tuple(c for k, c in enumerate(self.cuts) if k not in drop)
        return ConfidenceSet(kept, self.margin, self.dim)


def cost(a, x, x0) -> float:
    """Quadratic effort (x - x0)^T A (x - x0); nonnegative for PSD A."""
    m = a.mat if isinstance(a, CostMatrix) else np.asarray(a, dtype=float)
    xv = as_vector(x, m.shape[0])
    x0v = as_vector(x0, m.shape[0])
    d = xv - x0v
    return float(d @ m @ d)


def pair_matrix(xi, xj, x0) -> np.ndarray:
    """Symmetric matrix M with <A, M> = cost(A, xi, x0) - cost(A, xj, x0)
    for every symmetric A."""
    a = as_vector(xi)
    b = as_vector(xj, a.shape[0])
    o = as_vector(x0, a.shape[0])
    m = np.outer(a, a) - np.outer(b, b) + np.outer(b - a, o) + np.outer(o, b - a)
    return 0.5 * (m + m.T)


def frobenius_inner(a, b) -> float:
    """Entrywise inner product sum_ij A_ij B_ij."""
    am = a.mat if isinstance(a, CostMatrix) else np.asarray(a, dtype=float)
    bm = b.mat if isinstance(b, CostMatrix) else np.asarray(b, dtype=float)
    if am.shape != bm.shape:
        raise DimensionMismatch(f"shape mismatch {am.shape} vs {bm.shape}")
    return float(np.sum(am * bm))


def confidence_set(prefs: PreferenceSet, pool: np.ndarray, x0) -> ConfidenceSet:
    """Build the confidence polytope from revealed preferences over pool rows.

    Degenerate cuts from identical candidates are dropped: they are the zero
    matrix, so they constrain nothing but would break norm-based formulas.
    """
    pts = np.asarray(pool, dtype=float)
    x0v = as_vector(x0, pts.shape[1])
    cuts = []
    for (i, j) in prefs.pairs:
        c = Cut(pair_matrix(pts[i], pts[j], x0v), (i, j))
        if not c.is_degenerate:
            cuts.append(c)
    return ConfidenceSet(tuple(cuts), prefs.margin, pts.shape[1])


def max_violation(a, cset: ConfidenceSet) -> float:
    """Largest constraint violation of ``a`` against the confidence set:
    eigenvalue bounds 0 <= A <= I and every cut halfspace.  <= 0 means feasible.
    """
    m = a.mat if isinstance(a, CostMatrix) else symmetrize(a)
    w = np.linalg.eigvalsh(m)
    worst = max(-float(w[0]), float(w[-1]) - 1.0)
    for c in cset.cuts:
        worst = max(worst, frobenius_inner(m, c.matrix) - cset.margin)
    return worst


def matrix_to_lists(m: np.ndarray) -> list[list[float]]:
    """Row-major nested lists of finite doubles (wire format)."""
    a = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("refusing to serialize non-finite entries")
    return [[float(v) for v in row] for row in a]


def matrix_from_lists(rows) -> np.ndarray:
    a = np.asarray(rows, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected nested lists of depth 2, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def vector_to_list(v) -> list[float]:
    return [float(x) for x in as_vector(v)]
