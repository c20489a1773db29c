"""Classifiers and descent-based recourse generation."""

import numpy as np
import pytest

from prefcourse.classifiers import (
    LogisticClassifier,
    accuracy,
    load_classifier,
    save_classifier,
    train_classifier,
)
from prefcourse.core import ConfidenceSet, CostMatrix, PreferenceSet, confidence_set, cost
from prefcourse.datasets import gen_synthetic
from prefcourse.elicitation import gen_truth_random
from prefcourse.gradient_recourse import (
    GradConfig,
    generate,
    generate_fixed,
    loss,
    project_simplex,
    round_blocks,
)


def _empty_spec(d):
    return ConfidenceSet(cuts=(), margin=0.01, dim=d)


@pytest.fixture(scope="module")
def trained():
    """One synthetic dataset and classifier shared across the module."""
    ds = gen_synthetic(2000, np.random.default_rng(0))
    model = train_classifier(ds, seed=0)
    xt, yt = ds.test()
    pred = model.predict(xt)
    return {
        "ds": ds,
        "model": model,
        "xt": xt,
        "yt": yt,
        "negatives": xt[pred == 0],
        "positives": xt[pred == 1],
    }


def test_loss_fixtures():
    v, dv = loss("quadratic", 0.1)
    assert v == pytest.approx(0.16)
    assert dv == pytest.approx(2 * (0.1 - 0.5))
    v, dv = loss("hinge", 0.1)
    assert v == pytest.approx(0.4)
    assert dv == -1.0
    v, _ = loss("hinge", 0.9)
    assert v == 0.0


def test_mlp_training_is_deterministic():
    ds = gen_synthetic(400, np.random.default_rng(0))
    m1 = train_classifier(ds, epochs=20, seed=3)
    m2 = train_classifier(ds, epochs=20, seed=3)
    for w1, w2 in zip(m1.weights, m2.weights):
        assert np.array_equal(w1, w2)


def test_mlp_reaches_target_accuracy(trained):
    assert accuracy(trained["model"], trained["xt"], trained["yt"]) >= 0.95


def test_mlp_gradient_matches_finite_differences(trained):
    model = trained["model"]
    rng = np.random.default_rng(5)
    eps = 1e-6
    for _ in range(10):
        x = rng.uniform(0.05, 0.95, size=2)
        g = model.gradient(x[None, :])[0]
        for k in range(2):
            e = np.zeros(2)
            e[k] = eps
            fd = (
                model.predict_proba((x + e)[None, :])[0]
                - model.predict_proba((x - e)[None, :])[0]
            ) / (2 * eps)
            assert g[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_classifier_round_trip(tmp_path):
    ds = gen_synthetic(300, np.random.default_rng(2))
    model = train_classifier(ds, epochs=10, seed=0)
    p = tmp_path / "clf.json"
    save_classifier(model, p)
    again = load_classifier(p)
    x = ds.x[:7]
    assert np.allclose(model.predict_proba(x), again.predict_proba(x), atol=1e-12)


def test_simplex_projection_properties():
    rng = np.random.default_rng(8)
    for _ in range(50):
        v = rng.normal(size=rng.integers(2, 6))
        p = project_simplex(v)
        assert p.min() >= -1e-12
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(project_simplex(np.array([0.0, 1.0, 0.0])), [0, 1, 0])


def test_round_blocks_snaps_to_vertex():
    x = np.array([0.2, 0.5, 0.3, 0.9])
    out = round_blocks(x, [(0, 3)])
    assert np.array_equal(out[:3], [0.0, 1.0, 0.0])
    assert out[3] == 0.9


def test_symmetric_toy_lands_on_the_decision_line():
    # f = sigma(x1 + x2 - 1) from (0, 0): symmetry forces x1 = x2 and the
    # quadratic loss pulls the iterate to the p = 1/2 line.
    model = LogisticClassifier(w=np.array([1.0, 1.0]), b=-1.0)
    plan = generate(np.zeros(2), model, _empty_spec(2), GradConfig(max_iters=4000))
    assert plan.terminal[0] == pytest.approx(plan.terminal[1], abs=1e-9)
    assert plan.terminal[0] == pytest.approx(0.5, abs=5e-3)


def test_already_positive_returns_immediately():
    model = LogisticClassifier(w=np.array([1.0, 1.0]), b=-1.0)
    x0 = np.array([0.9, 0.9])
    plan = generate(x0, model, _empty_spec(2), GradConfig())
    assert plan.valid and plan.iterations_used == 0
    assert np.array_equal(plan.terminal, x0)


def _reachable_negative(trained, skip=0):
    """A negative subject with usable gradient signal (not saturated flat)."""
    model = trained["model"]
    found = 0
    for x0 in trained["negatives"]:
        if model.predict_proba(x0[None, :])[0] > 0.05:
            if found == skip:
                return x0
            found += 1
    raise RuntimeError("no near-boundary negative in the test split")


def test_trained_mlp_recourse_is_valid(trained):
    model = trained["model"]
    x0 = _reachable_negative(trained)
    plan = generate(x0, model, _empty_spec(2), GradConfig())
    assert plan.valid
    assert model.predict(plan.terminal[None, :])[0] == 1
    assert np.all(plan.terminal >= 0.0) and np.all(plan.terminal <= 1.0)


def test_saturated_subject_reports_invalid_honestly(trained):
    # deep-negative subjects can defeat gradient descent entirely; the plan
    # must say so rather than pretend.
    model = trained["model"]
    worst = min(
        trained["negatives"][:40],
        key=lambda x: model.predict_proba(x[None, :])[0],
    )
    if model.predict_proba(worst[None, :])[0] > 1e-3:
        pytest.skip("no saturated negative available")
    plan = generate(
        worst, model, _empty_spec(2), GradConfig(max_iters=50)
    )
    assert plan.valid == bool(model.predict(plan.terminal[None, :])[0] == 1)


def test_lambda_zero_is_pure_validity_descent(trained):
    x0 = _reachable_negative(trained, skip=1)
    plan = generate(x0, trained["model"], _empty_spec(2), GradConfig(lam=0.0))
    assert plan.valid


def test_freeze_mask_pins_coordinates(trained):
    x0 = _reachable_negative(trained)
    freeze = np.array([True, False])
    plan = generate(
        x0, trained["model"], _empty_spec(2), GradConfig(), freeze_mask=freeze
    )
    assert plan.terminal[0] == pytest.approx(x0[0], abs=1e-12)


def test_one_hot_blocks_end_on_a_vertex():
    # 2 real coordinates plus a 3-way one-hot block; a linear model that
    # rewards the third category.
    w = np.array([0.8, 0.8, -0.5, 0.0, 0.9])
    model = LogisticClassifier(w=w, b=-1.4)
    x0 = np.array([0.1, 0.1, 1.0, 0.0, 0.0])
    plan = generate(
        x0, model, _empty_spec(5), GradConfig(), one_hot_blocks=[(2, 5)]
    )
    block = plan.terminal[2:5]
    assert sorted(block) == [0.0, 0.0, 1.0]


def test_worst_case_cost_bounds_truth_cost(trained):
    rng = np.random.default_rng(9)
    model = trained["model"]
    pool = trained["positives"][:30]
    for trial in range(3):
        truth = gen_truth_random(2, rng)
        x0 = _reachable_negative(trained, skip=trial)
        order = np.argsort([cost(truth, p, x0) for p in pool])
        pairs = [(int(order[k]), int(order[k + 1])) for k in range(6)]
        spec = confidence_set(PreferenceSet(pairs=pairs, margin=0.01), pool, x0)
        plan = generate(x0, model, spec, GradConfig())
        if plan.valid:
            truth_cost = cost(truth, plan.terminal, x0)
            assert plan.worst_case_cost >= truth_cost - 1e-6


def test_fixed_half_identity_matches_itself_run_to_run(trained):
    x0 = _reachable_negative(trained)
    half = CostMatrix.identity(2, 0.5)
    p1 = generate_fixed(x0, trained["model"], half, GradConfig())
    p2 = generate_fixed(x0, trained["model"], half, GradConfig())
    assert np.array_equal(p1.terminal, p2.terminal)
