import numpy as np
import pytest

from dfm._kernels import (_euler_update_serial, active_backend, euler_update,
                          euler_update_numpy)
from dfm.rngs import substream


def _random_tables(rng, K, zero_rows=()):
    W = rng.random((K, K, K))
    idx = np.arange(K)
    W[:, idx, idx] = 0.0
    for a, z in zero_rows:
        W[a, z] = 0.0
    lam = W.sum(axis=2)
    return W, lam


def _random_inputs(rng, n, D, K):
    X = rng.integers(0, K, (n, D))
    x1 = rng.integers(0, K, (n, D))
    zu = rng.random((n, D))
    du = rng.random((n, D))
    return X, x1, zu, du


def test_backends_bit_identical():
    rng = substream(0, "kern")
    for trial in range(10):
        K = int(rng.integers(2, 9))
        W, lam = _random_tables(rng, K, zero_rows=[(0, 1 % K)])
        if trial % 3 == 0:
            lam[0, :] = np.inf  # exercise the certain-jump branch
        X, x1, zu, du = _random_inputs(rng, 200, 4, K)
        a1, j1 = euler_update_numpy(X, x1, W, lam, 0.05, zu, du)
        a2, j2 = _euler_update_serial(X, x1, W, lam, 0.05, zu, du)
        assert np.array_equal(a1, a2)
        assert np.array_equal(j1, j2)


def test_dispatcher_matches_numpy():
    rng = substream(1, "kern")
    K = 5
    W, lam = _random_tables(rng, K)
    X, x1, zu, du = _random_inputs(rng, 300, 3, K)
    a1, j1 = euler_update(X, x1, W, lam, 0.1, zu, du)
    a2, j2 = euler_update_numpy(X, x1, W, lam, 0.1, zu, du)
    assert np.array_equal(a1, a2)
    assert np.array_equal(j1, j2)


def test_active_backend_reports_a_known_name():
    assert active_backend() in ("numba", "numpy")


def test_no_jump_when_rate_zero():
    K = 3
    W = np.zeros((K, K, K))
    lam = np.zeros((K, K))
    X = np.array([[0, 1, 2]])
    x1 = np.array([[2, 2, 2]])
    out, jumped = euler_update_numpy(X, x1, W, lam, 0.5,
                                     np.zeros((1, 3)), np.zeros((1, 3)))
    assert np.array_equal(out, X)
    assert not jumped.any()


def test_certain_jump_at_infinite_rate():
    K = 3
    rng = substream(2, "kern")
    W, lam = _random_tables(rng, K)
    lam[:] = np.inf
    X, x1, zu, du = _random_inputs(rng, 100, 2, K)
    out, jumped = euler_update_numpy(X, x1, W, lam, 1e-9, zu, du)
    assert jumped.all()


def test_jump_probability_matches_exponential():
    K = 2
    W = np.zeros((K, K, K))
    W[1, 0, 1] = 1.0  # only transition: 0 -> 1 under target 1
    lam = W.sum(axis=2)
    h = 0.7
    n = 200_000
    rng = substream(3, "kern")
    X = np.zeros((n, 1), dtype=np.int64)
    x1 = np.ones((n, 1), dtype=np.int64)
    _, jumped = euler_update_numpy(X, x1, W, lam, h,
                                   rng.random((n, 1)), rng.random((n, 1)))
    expect = 1.0 - np.exp(-h)
    assert jumped.mean() == pytest.approx(expect, abs=0.005)


def test_destination_frequencies_proportional_to_weights():
    K = 4
    W = np.zeros((K, K, K))
    W[2, 0] = np.array([0.0, 0.5, 0.3, 0.2])
    lam = np.full((K, K), 0.0)
    lam[2, 0] = np.inf  # force a jump so every draw picks a destination
    n = 100_000
    rng = substream(4, "kern")
    X = np.zeros((n, 1), dtype=np.int64)
    x1 = np.full((n, 1), 2, dtype=np.int64)
    out, _ = euler_update_numpy(X, x1, W, lam, 1.0,
                                rng.random((n, 1)), rng.random((n, 1)))
    freq = np.bincount(out.ravel(), minlength=K) / n
    assert np.abs(freq - W[2, 0]).max() < 0.01


def test_edge_uniform_lands_in_last_positive_bin():
    # dest_unif == 1 walks past every partial sum; both backends take
    # the final bin by convention
    K = 3
    W = np.zeros((K, K, K))
    W[1, 0] = np.array([0.0, 0.4, 0.6])
    lam = np.full((K, K), np.inf)
    X = np.array([[0]])
    x1 = np.array([[1]])
    du = np.array([[1.0]])
    zu = np.array([[0.0]])
    o1, _ = euler_update_numpy(X, x1, W, lam, 1.0, zu, du)
    o2, _ = _euler_update_serial(X, x1, W, lam, 1.0, zu, du)
    assert o1[0, 0] == o2[0, 0] == K - 1


def test_input_arrays_not_mutated():
    rng = substream(5, "kern")
    K = 4
    W, lam = _random_tables(rng, K)
    X, x1, zu, du = _random_inputs(rng, 50, 3, K)
    X0 = X.copy()
    euler_update_numpy(X, x1, W, lam, 0.3, zu, du)
    assert np.array_equal(X, X0)
