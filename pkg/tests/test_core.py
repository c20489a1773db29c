"""Cost matrices, preference cuts, and the confidence set container."""

import numpy as np
import pytest

from prefcourse.core import (
    ConfidenceSet,
    CostMatrix,
    PreferenceSet,
    confidence_set,
    cost,
    frobenius_inner,
    max_violation,
    pair_matrix,
)


def test_cost_half_identity_fixture():
    a = CostMatrix.identity(2, 0.5)
    assert cost(a, np.array([1.0, 1.0]), np.zeros(2)) == pytest.approx(1.0)


def test_cost_is_zero_at_the_subject():
    a = CostMatrix.identity(3)
    x0 = np.array([0.3, -0.2, 0.9])
    assert cost(a, x0, x0) == 0.0


def test_cost_rejects_nonpsd():
    with pytest.raises(ValueError):
        CostMatrix(np.array([[1.0, 0.0], [0.0, -0.5]]))


def test_cost_rejects_asymmetric_beyond_tolerance():
    with pytest.raises(ValueError):
        CostMatrix(np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_pair_matrix_hand_fixture():
    x0 = np.zeros(2)
    m = pair_matrix(np.array([1.0, 0.0]), np.array([0.0, 1.0]), x0)
    assert np.allclose(m, np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_pair_matrix_inner_fixture():
    m = np.array([[1.0, 0.0], [0.0, -1.0]])
    assert frobenius_inner(0.5 * np.eye(2), m) == pytest.approx(0.0)


def test_pair_matrix_inner_is_cost_gap():
    # <A, M_ij> must equal cost(A, xi) - cost(A, xj) for symmetric A.
    rng = np.random.default_rng(11)
    for _ in range(300):
        d = rng.integers(1, 7)
        x0 = rng.normal(size=d)
        xi, xj = rng.normal(size=d), rng.normal(size=d)
        b = rng.normal(size=(d, d))
        a = b @ b.T
        m = pair_matrix(xi, xj, x0)
        lhs = frobenius_inner(a, m)
        rhs = cost(a, xi, x0) - cost(a, xj, x0)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


def test_preferences_dedupe_and_self_reject():
    prefs = PreferenceSet(pairs=[], margin=0.01)
    prefs.add(3, 5)
    prefs.add(3, 5)
    assert prefs.pairs == [(3, 5)]
    with pytest.raises(ValueError):
        prefs.add(2, 2)


def test_preferences_reject_negative_margin():
    with pytest.raises(ValueError):
        PreferenceSet(pairs=[], margin=-0.1)


def test_confidence_set_drops_degenerate_cuts():
    # xi == xj makes M = 0; such cuts constrain nothing and must vanish.
    pool = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    prefs = PreferenceSet(pairs=[(0, 1), (0, 2)], margin=0.01)
    cset = confidence_set(prefs, pool, np.zeros(2))
    assert len(cset.cuts) == 1
    assert cset.cuts[0].source == (0, 2)


def test_confidence_set_contains_uninformative_center():
    rng = np.random.default_rng(5)
    pool = rng.normal(size=(6, 3))
    x0 = rng.normal(size=3)
    truth = CostMatrix.identity(3, 0.7)
    pairs = []
    for i in range(len(pool)):
        for j in range(i + 1, len(pool)):
            ci, cj = cost(truth, pool[i], x0), cost(truth, pool[j], x0)
            pairs.append((i, j) if ci < cj else (j, i))
    cset = confidence_set(PreferenceSet(pairs=pairs, margin=0.01), pool, x0)
    # the generating matrix satisfies every one of its own cuts
    assert max_violation(truth.mat, cset) <= 1e-9


def test_without_removes_cuts_by_index():
    pool = np.array([[1.0], [2.0], [3.0]])
    prefs = PreferenceSet(pairs=[(0, 1), (1, 2)], margin=0.01)
    cset = confidence_set(prefs, pool, np.zeros(1))
    kept = cset.without({0})
    assert [c.source for c in kept.cuts] == [(1, 2)]


def test_matrix_round_trip():
    rng = np.random.default_rng(2)
    b = rng.normal(size=(4, 4))
    a = CostMatrix(b @ b.T / 10.0)
    again = CostMatrix.from_lists(a.to_lists())
    assert np.allclose(a.mat, again.mat, atol=1e-12)
