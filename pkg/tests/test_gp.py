import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebmprior.core import RngStream, State, Trajectory, TimeGrid, build_time_grid, flatten
from ebmprior.errors import ConfigInvalid, InvalidArgument, OutOfRange
from ebmprior.gp import (
    GPConfig,
    assemble_precision,
    build_prior,
    const_velocity_mean,
    interpolate,
    log_prob_unnorm,
    precision_from_times,
    sample_flat,
    samples_from_noise,
    transition_matrices,
)


def _prior(n=8, d=1, sigma=0.1, q_c=1.0, dt=0.1, start=0.0, goal=1.0):
    grid = build_time_grid(0, dt, n)
    cfg = GPConfig(sigma, sigma, q_c, grid)
    x0 = State.at_rest(np.full(d, start))
    xg = State.at_rest(np.full(d, goal))
    return build_prior(const_velocity_mean(x0, xg, grid), cfg)


def test_transition_examples():
    phi, Q = transition_matrices(0.02, 1.0, 1)
    np.testing.assert_allclose(phi, [[1, 0.02], [0, 1]])
    np.testing.assert_allclose(Q, [[0.02**3 / 3, 2e-4], [2e-4, 0.02]], rtol=1e-12)
    assert Q[0, 0] == pytest.approx(2.667e-6, rel=1e-3)
    _, Q1 = transition_matrices(1.0, 1.0, 1)
    np.testing.assert_allclose(Q1, [[1 / 3, 1 / 2], [1 / 2, 1]])
    with pytest.raises(InvalidArgument):
        transition_matrices(0.0, 1.0, 1)


@given(st.floats(1e-3, 10), st.floats(1e-3, 100), st.integers(1, 3))
def test_transition_properties(dt, qc, d):
    phi, Q = transition_matrices(dt, qc, d)
    assert np.linalg.det(phi) == pytest.approx(1.0)
    assert np.all(np.linalg.eigvalsh(Q) > 0)


def test_config_validation():
    g = build_time_grid(0, 1, 1)
    for bad in [(0, 1, 1), (1, -1, 1), (1, 1, 0)]:
        with pytest.raises(ConfigInvalid):
            GPConfig(*bad, g)


def test_const_velocity_mean_examples():
    grid = build_time_grid(0, 0.5, 2)
    tr = const_velocity_mean(State.at_rest(np.zeros(2)), State.at_rest(np.array([1.0, 0.0])), grid)
    np.testing.assert_allclose(tr.q, [[0, 0], [0.5, 0], [1, 0]])
    np.testing.assert_allclose(tr.qdot, np.tile([1.0, 0.0], (3, 1)))
    same = const_velocity_mean(State.at_rest(np.ones(2)), State.at_rest(np.ones(2)), grid)
    assert not np.any(same.qdot)
    assert np.all(same.q == 1)


@given(st.integers(2, 20).filter(lambda n: n % 2 == 0), st.floats(-5, 5), st.floats(-5, 5))
def test_const_velocity_midpoint(n, a, b):
    grid = build_time_grid(0, 0.1, n)
    tr = const_velocity_mean(State.at_rest(np.array([a])), State.at_rest(np.array([b])), grid)
    assert tr.q[n // 2, 0] == pytest.approx((a + b) / 2, abs=1e-12)


def test_precision_unary_limit():
    grid = build_time_grid(0, 1, 1)
    P = assemble_precision(GPConfig(1.0, 1.0, 1e12, grid), 1)
    np.testing.assert_allclose(P, np.eye(4), atol=1e-9)


def test_precision_band_and_symmetry():
    for n, d in [(2, 1), (6, 2)]:
        P = assemble_precision(GPConfig(0.1, 0.1, 1.0, build_time_grid(0, 0.1, n)), d)
        s = 2 * d
        assert np.max(np.abs(P - P.T)) <= 1e-12 * np.max(np.abs(P))
        for i in range(n + 1):
            for j in range(n + 1):
                if abs(i - j) > 1:
                    assert not np.any(P[i * s:(i + 1) * s, j * s:(j + 1) * s])


def test_precision_b1_is_spd():
    P = assemble_precision(GPConfig(1e-2, 1e-2, 400.0, build_time_grid(0, 1 / 64, 64)), 2)
    assert np.all(np.linalg.eigvalsh(P) > 0)


def _factor_sum(prior, traj):
    """Explicit start + goal + binary transition energies on the deviation."""
    cfg = prior.config
    d = prior.dim
    v = traj.states - prior.mean.states
    e = 0.5 * v[0] @ v[0] / cfg.sigma_start**2 + 0.5 * v[-1] @ v[-1] / cfg.sigma_goal**2
    phi, Q = transition_matrices(cfg.grid.dt, cfg.q_c, d)
    Qi = np.linalg.inv(Q)
    for i in range(len(v) - 1):
        r = v[i + 1] - phi @ v[i]
        e += 0.5 * r @ Qi @ r
    return e


@given(st.integers(0, 2**32))
def test_log_prob_matches_factor_sum(seed):
    prior = _prior(n=4, d=2, sigma=0.3, q_c=2.0)
    rng = RngStream(seed)
    tr = Trajectory(prior.grid, prior.mean.states + rng.normal(prior.mean.states.shape))
    assert log_prob_unnorm(prior, tr) == pytest.approx(-_factor_sum(prior, tr), rel=1e-9)
    assert log_prob_unnorm(prior, prior.mean) == 0.0
    assert log_prob_unnorm(prior, tr) < 0


def test_log_prob_grid_mismatch():
    prior = _prior(n=4)
    other = Trajectory(build_time_grid(0, 0.1, 5), np.zeros((6, 2)))
    with pytest.raises(InvalidArgument):
        log_prob_unnorm(prior, other)


def test_zero_noise_samples_equal_mean():
    prior = _prior(n=5, d=2)
    X = samples_from_noise(prior, np.zeros((3, prior.precision.shape[0])))
    for x in X:
        np.testing.assert_array_equal(x, prior.mean_flat)


def test_sample_moments():
    prior = _prior(n=10, d=1, sigma=0.1, q_c=4.0, dt=0.1)
    k = 50_000
    X = sample_flat(prior, k, RngStream(0))
    K = prior.covariance
    bound = 4 * np.sqrt(np.diag(K) / k)
    assert np.all(np.abs(X.mean(0) - prior.mean_flat) <= bound)
    var = X.var(0)
    assert var[0] == pytest.approx(0.1**2, rel=0.05)
    mid = 2 * (prior.grid.n_steps // 2)
    assert var[mid] > var[0] and var[mid] > var[-2]


def test_interpolate_identity_at_supports():
    prior = _prior(n=6, d=2)
    rng = RngStream(4)
    mean = Trajectory(prior.grid, prior.mean.states + rng.normal(prior.mean.states.shape))
    out = interpolate(prior, mean, prior.grid)
    np.testing.assert_array_equal(out.states, mean.states)
    dense = interpolate(prior, mean, TimeGrid(0.0, prior.grid.dt / 2, 2 * prior.grid.n_steps))
    np.testing.assert_array_equal(dense.states[::2], mean.states)


def test_interpolate_straight_line_midpoint():
    prior = _prior(n=4, d=1, start=-1.0, goal=3.0)
    mid = interpolate(prior, prior.mean, np.array([0.05, 0.15]))
    np.testing.assert_allclose(mid.q[:, 0], [-0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(mid.qdot[:, 0], [10.0, 10.0], atol=1e-9)


def full_conditioning_oracle(prior, mean, t):
    """Posterior mean at ``t`` by conditioning the augmented joint Gaussian on all supports."""
    times = prior.grid.times
    d = prior.dim
    s = 2 * d
    aug = np.sort(np.append(times, t))
    q_idx = int(np.searchsorted(aug, t))
    cfg = prior.config
    P = precision_from_times(aug, cfg.sigma_start, cfg.sigma_goal, cfg.q_c, d)
    K = np.linalg.inv(P)
    sup = [i for i in range(len(aug)) if i != q_idx]
    rows = np.concatenate([np.arange(i * s, (i + 1) * s) for i in sup])
    qr = np.arange(q_idx * s, (q_idx + 1) * s)
    return K[np.ix_(qr, rows)] @ np.linalg.solve(K[np.ix_(rows, rows)], flatten(mean))


@given(st.integers(0, 2**32), st.floats(0.01, 0.99))
def test_interpolate_matches_full_conditioning(seed, frac):
    prior = _prior(n=5, d=2, sigma=0.5, q_c=3.0)
    mean = Trajectory(prior.grid, prior.mean.states + RngStream(seed).normal(prior.mean.states.shape))
    t = frac * prior.grid.t_end
    if np.min(np.abs(prior.grid.times - t)) < 1e-6:
        return
    got = interpolate(prior, mean, np.array([t]))
    got = got.states[0] if hasattr(got, "states") else got[0]
    np.testing.assert_allclose(got, full_conditioning_oracle(prior, mean, t), rtol=1e-7, atol=1e-8)


def test_interpolate_out_of_range():
    prior = _prior(n=4)
    with pytest.raises(OutOfRange):
        interpolate(prior, prior.mean, np.array([prior.grid.t_end + 0.1]))
