import numpy as np
import pytest

from dfm.paths import (ConditionalPath, JointDistribution, enumerate_states,
                       marginal_path, mask_mixture_path, metric_path,
                       state_index)
from dfm.rngs import substream
from dfm.schedule import BetaSchedule, KappaSchedule
from dfm.token_space import random_token_space


@pytest.fixture
def space():
    return random_token_space(5, E=4, seed=7)


@pytest.fixture
def masked_space():
    return random_token_space(4, E=4, seed=8)


def test_enumerate_states_order_and_inverse():
    states = enumerate_states(3, 2)
    assert states.shape == (9, 2)
    assert states[0].tolist() == [0, 0]
    assert states[1].tolist() == [0, 1]  # last coordinate fastest
    assert states[-1].tolist() == [2, 2]
    for s, row in enumerate(states):
        assert state_index(row, 3) == s


def test_enumerate_states_capacity_guard():
    with pytest.raises(ValueError, match="too large"):
        enumerate_states(10, 7)


def test_joint_distribution_validation():
    with pytest.raises(ValueError):
        JointDistribution(K=2, D=2, probs=np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        JointDistribution(K=2, D=1, probs=np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        JointDistribution(K=2, D=1, probs=np.array([1.5, -0.5]))


def test_joint_distribution_sampling_frequencies():
    q = JointDistribution(K=2, D=2, probs=np.array([0.7, 0.1, 0.1, 0.1]))
    draws = q.sample(substream(0, "jd"), 20000)
    frac00 = np.mean(np.all(draws == 0, axis=1))
    assert frac00 == pytest.approx(0.7, abs=0.02)


def test_metric_rows_are_distributions(space):
    path = metric_path(space)
    for t in (0.0, 0.3, 0.7, 0.95):
        P = path.prob_matrix(t)
        assert np.all(P >= 0)
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_metric_uniform_at_zero_and_peaked_late(space):
    path = metric_path(space)
    assert np.allclose(path.prob_matrix(0.0), 1.0 / space.K, atol=1e-15)
    P = path.prob_matrix(0.99)
    assert np.all(P.argmax(axis=1) == np.arange(space.K))


def test_metric_exact_delta_beyond_cap(space):
    path = metric_path(space, BetaSchedule(beta_cap=5.0))
    t = 0.999  # raw beta far above the cap
    assert path.schedule.capped(t)
    assert np.array_equal(path.prob_matrix(t), np.eye(space.K))


def test_metric_softmax_explicit_small_case():
    space = random_token_space(3, E=4, seed=2)
    sched = BetaSchedule(c=1.0, a=1.0)
    path = metric_path(space, sched)
    t = 0.4
    b = sched.beta(t)
    expect = np.exp(-b * space.distances[1])
    expect /= expect.sum()
    assert np.allclose(path.prob(t, 1), expect, atol=1e-14)


def test_metric_dprob_matches_finite_difference(space):
    path = metric_path(space)
    t, h = 0.6, 1e-6
    fd = (path.prob_matrix(t + h) - path.prob_matrix(t - h)) / (2 * h)
    assert np.allclose(path.dprob_matrix(t), fd, atol=1e-4)
    assert np.allclose(path.dprob_matrix(t).sum(axis=1), 0.0, atol=1e-12)


def test_metric_domain_errors(space):
    path = metric_path(space)
    with pytest.raises(ValueError):
        path.prob_matrix(1.0)
    with pytest.raises(ValueError):
        path.dprob_matrix(0.0)
    with pytest.raises(ValueError):
        metric_path(space, BetaSchedule(beta_cap=1.0)).dprob_matrix(0.9)


def test_mixture_interpolates_mask_to_delta(masked_space):
    path = mask_mixture_path(masked_space, mask_token=2)
    K = masked_space.K
    P0 = path.prob_matrix(0.0)
    assert np.allclose(P0, np.tile(np.eye(K)[2], (K, 1)))
    assert np.array_equal(path.prob_matrix(1.0), np.eye(K))
    t = 0.3
    P = path.prob_matrix(t)
    for x1 in range(K):
        expect = (1 - t) * np.eye(K)[2] + t * np.eye(K)[x1]
        assert np.allclose(P[x1], expect, atol=1e-15)


def test_mixture_dprob_matches_finite_difference(masked_space):
    path = mask_mixture_path(masked_space, mask_token=0)
    t, h = 0.5, 1e-6
    fd = (path.prob_matrix(t + h) - path.prob_matrix(t - h)) / (2 * h)
    assert np.allclose(path.dprob_matrix(t), fd, atol=1e-6)


def test_mixture_requires_source_or_mask(masked_space):
    with pytest.raises(ValueError):
        ConditionalPath("mixture", masked_space, KappaSchedule())


def test_path_schedule_type_checked(space):
    with pytest.raises(TypeError):
        ConditionalPath("metric", space, KappaSchedule())
    with pytest.raises(TypeError):
        ConditionalPath("mixture", space, BetaSchedule(), mask_token=0)


def test_unknown_kind_rejected(space):
    with pytest.raises(ValueError):
        ConditionalPath("linear", space, BetaSchedule())


def test_sample_corrupted_matches_rows(space):
    path = metric_path(space)
    t = 0.5
    x1 = np.array([2, 2, 2, 2])
    draws = np.stack([path.sample_corrupted(t, x1, substream(i, "c"))
                      for i in range(4000)])
    emp = np.bincount(draws.ravel(), minlength=space.K) / draws.size
    assert np.abs(emp - path.prob(t, 2)).max() < 0.02


def test_sample_corrupted_exact_at_one(space):
    path = metric_path(space)
    x1 = np.array([0, 3, 1])
    out = path.sample_corrupted(1.0, x1, substream(0, "c"))
    assert np.array_equal(out, x1)
    assert out is not x1


def test_sample_corrupted_range_check(space):
    path = metric_path(space)
    with pytest.raises(ValueError):
        path.sample_corrupted(0.5, np.array([0, space.K]), substream(0, "c"))


def test_marginal_path_boundaries(space):
    rng = substream(1, "q")
    raw = rng.random(space.K ** 2)
    q = JointDistribution(K=space.K, D=2, probs=raw / raw.sum())
    path = metric_path(space)
    p0 = marginal_path(q, path, 0.0)
    assert np.allclose(p0.probs, 1.0 / space.K ** 2, atol=1e-12)
    # near t = 1 the marginal approaches q itself
    p1 = marginal_path(q, path, 0.999999)
    assert np.abs(p1.probs - q.probs).max() < 1e-3


def test_marginal_path_explicit_enumeration(space):
    """Brute-force sum over x1 must equal the tensor contraction."""
    rng = substream(2, "q")
    raw = rng.random(space.K ** 2)
    q = JointDistribution(K=space.K, D=2, probs=raw / raw.sum())
    path = metric_path(space)
    t = 0.45
    P = path.prob_matrix(t)
    states = q.states()
    expect = np.zeros(len(states))
    for s1, row in enumerate(states):
        for s, x in enumerate(states):
            expect[s] += q.probs[s1] * P[row[0], x[0]] * P[row[1], x[1]]
    got = marginal_path(q, path, t).probs
    assert np.allclose(got, expect, atol=1e-12)


def test_marginal_path_k_mismatch(space):
    q = JointDistribution(K=2, D=2, probs=np.full(4, 0.25))
    with pytest.raises(ValueError, match="disagree"):
        marginal_path(q, metric_path(space), 0.5)
