import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldp_influence.dataset import make_synthetic
from ldp_influence.randomize import (
    DistortionMatrix, PerturbationPlan, build_distortion, change_probability, joint_outcomes,
    keep_probability, observed_distribution, outcome_probabilities, outcome_probability,
    perturb_record, perturb_records, recover_distribution, switch_probability,
)

sizes = st.integers(2, 16)
epsilons = st.floats(0.0, 10.0, allow_nan=False)


@given(sizes, epsilons)
def test_rows_sum_to_one(C, eps):
    P = build_distortion(C, eps).entries
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12, rtol=0)


@given(sizes, epsilons)
def test_diagonal_matches_exponential_form(C, eps):
    P = build_distortion(C, eps)
    assert abs(P.diagonal - np.exp(eps) / (C - 1 + np.exp(eps))) < 1e-12
    assert abs(P.off_diagonal - 1.0 / (C - 1 + np.exp(eps))) < 1e-12


@given(sizes, epsilons)
def test_symmetric_and_diagonal_dominant(C, eps):
    P = build_distortion(C, eps).entries
    assert np.array_equal(P, P.T)
    assert P[0, 0] >= P[0, 1]


@given(sizes, st.floats(1e-3, 10.0), st.integers(0, 2**31))
def test_recover_inverts_observe(C, eps, seed):
    pi = np.random.default_rng(seed).dirichlet(np.ones(C))
    P = build_distortion(C, eps)
    back = recover_distribution(observed_distribution(pi, P).proportions, P)
    assert np.allclose(back.proportions, pi, atol=1e-10 * max(1.0, 1.0 / eps), rtol=0)


def test_epsilon_zero_is_uniform_and_singular():
    P = build_distortion(4, 0.0)
    assert np.allclose(P.entries, 0.25)
    with pytest.raises(np.linalg.LinAlgError):
        recover_distribution(np.full(4, 0.25), P)


def test_huge_epsilon_is_identity_without_overflow():
    with np.errstate(over="raise"):
        P = build_distortion(5, 1e4).entries
    assert np.array_equal(P, np.eye(5))


@pytest.mark.parametrize("C,eps", [(1, 1.0), (3, -0.1), (3, float("nan"))])
def test_invalid_matrix(C, eps):
    with pytest.raises(ValueError):
        DistortionMatrix(C, eps)


def test_recover_clips_and_reports_negative_mass():
    P = build_distortion(2, 0.5)
    res = recover_distribution([0.99, 0.01], P)
    assert res.clipped > 0
    assert res.proportions.min() >= 0 and abs(res.proportions.sum() - 1) < 1e-12


def test_keep_and_switch_partition():
    for d in (2, 3, 7):
        for e in (0.0, 0.3, 4.0):
            assert abs(keep_probability(d, e) + (d - 1) * switch_probability(d, e) - 1) < 1e-15


def _plan(cards=(2, 3), eps=(1.0, 0.5), attrs=(0, 1)):
    return PerturbationPlan(attrs, eps, cards)


def test_plan_validation():
    with pytest.raises(ValueError):
        PerturbationPlan((0, 0), (1.0, 1.0), (2, 2))
    with pytest.raises(ValueError):
        PerturbationPlan((0,), (1.0, 2.0), (2,))
    with pytest.raises(ValueError):
        PerturbationPlan((0,), (-1.0,), (2,))
    with pytest.raises(ValueError):
        PerturbationPlan((), (), ())
    with pytest.raises(ValueError):
        PerturbationPlan((0,), (1.0,), (2,), mode="bogus")


def test_plan_for_dataset_and_with_epsilon():
    ds = make_synthetic(50, (2, 4), seed=0)
    plan = PerturbationPlan.for_dataset(ds, ["x1", "label"], 2.0)
    assert plan.attributes == (1, 2) and plan.cardinalities == (4, 2)
    assert plan.with_epsilon(0.5).epsilons == (0.5, 0.5)
    assert plan.with_epsilon([0.1, 0.2]).epsilons == (0.1, 0.2)


@given(st.lists(st.integers(2, 4), min_size=1, max_size=3),
       st.lists(st.floats(0.0, 5.0), min_size=3, max_size=3),
       st.integers(0, 1000))
def test_outcome_probabilities_form_a_distribution(cards, eps, seed):
    plan = PerturbationPlan(tuple(range(len(cards))), tuple(eps[:len(cards)]), tuple(cards))
    alpha = np.array([seed % d for d in cards])
    outs = joint_outcomes(cards)
    joint = np.prod(outcome_probabilities(alpha, outs, plan), axis=1)
    assert abs(joint.sum() - 1.0) < 1e-12
    own = int(np.flatnonzero((outs == alpha).all(axis=1))[0])
    assert abs((1 - joint[own]) - change_probability(plan)) < 1e-12
    assert abs(outcome_probability(alpha, outs[own], plan) - joint[own]) < 1e-15


def test_joint_outcomes_lexicographic():
    outs = joint_outcomes((2, 3))
    assert outs.shape == (6, 2)
    assert outs.tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]


def test_perturb_record_is_keyed_by_seed_and_index():
    plan = _plan()
    rec = np.array([1, 2, 0])
    a = perturb_record(rec, plan, seed=5, index=9)
    b = perturb_record(rec, plan, seed=5, index=9)
    assert np.array_equal(a, b)
    assert a[2] == 0  # untouched attribute


def test_perturb_records_order_independent():
    plan = _plan()
    recs = np.random.default_rng(0).integers(0, 2, size=(30, 3))
    out = perturb_records(recs, plan, [3, 10, 20], seed=4)
    rev = perturb_records(recs, plan, [20, 10, 3], seed=4)
    assert np.array_equal(out, rev)
    untouched = np.setdiff1d(np.arange(30), [3, 10, 20])
    assert np.array_equal(out[untouched], recs[untouched])
    for i in (3, 10, 20):
        assert np.array_equal(out[i], perturb_record(recs[i], plan, 4, i))


def test_perturbation_frequencies_match_matrix():
    plan = PerturbationPlan((0,), (0.7,), (3,))
    recs = np.zeros((20000, 1), dtype=np.int64)
    out = perturb_records(recs, plan, np.arange(20000), seed=1)
    freq = np.bincount(out[:, 0], minlength=3) / 20000
    P = build_distortion(3, 0.7).entries
    assert np.allclose(freq, P[0], atol=0.015)


def test_large_epsilon_keeps_values():
    plan = PerturbationPlan((0,), (50.0,), (4,))
    recs = np.arange(4).reshape(4, 1)
    assert np.array_equal(perturb_records(recs, plan, np.arange(4), 0), recs)
