"""Goal-directed Gaussian-process trajectory prior.

The prior over support states is the product of a start factor, a goal factor
and constant-velocity transition factors between neighbouring support times.
It is stored through its precision (the factor sum), factorized once; the
covariance and the sampling map are derived lazily from that factor.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import (
    RngStream,
    State,
    TimeGrid,
    Trajectory,
    cholesky_spd,
    flatten,
    solve_triangular,
    unflatten,
)
from .errors import ConfigInvalid, FactorizationError, InvalidArgument, OutOfRange


@dataclass(frozen=True)
class GPConfig:
    """Std-devs of the start/goal factors (scalar or per state dim) and the
    power-spectral density ``q_c`` (scalar or ``d x d``)."""

    sigma_start: float | np.ndarray
    sigma_goal: float | np.ndarray
    q_c: float | np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        for name in ("sigma_start", "sigma_goal"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ConfigInvalid(f"{name} must be strictly positive")
        qc = np.asarray(self.q_c, dtype=np.float64)
        if qc.ndim == 0 and not qc > 0:
            raise ConfigInvalid("q_c must be strictly positive")
        if qc.ndim == 2 and np.any(np.linalg.eigvalsh(qc) <= 0):
            raise ConfigInvalid("q_c matrix must be positive definite")

    def scaled(self, factor: float) -> "GPConfig":
        """Same config with the GP std-dev multiplied by ``factor`` (q_c by factor^2)."""
        return GPConfig(self.sigma_start, self.sigma_goal, np.asarray(self.q_c) * factor**2, self.grid)


def _qc_matrix(q_c, d: int) -> np.ndarray:
    qc = np.asarray(q_c, dtype=np.float64)
    if qc.ndim == 0:
        return float(qc) * np.eye(d)
    if qc.shape != (d, d):
        raise InvalidArgument(f"q_c has shape {qc.shape}, expected ({d}, {d})")
    return qc


def _state_weights(sigma, d: int) -> np.ndarray:
    s = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (2 * d,))
    return np.diag(1.0 / s**2)


def transition_matrices(dt: float, q_c, d: int) -> tuple[np.ndarray, np.ndarray]:
    """State transition ``Phi`` and process covariance ``Q`` over an interval ``dt``."""
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    qc = _qc_matrix(q_c, d)
    eye = np.eye(d)
    phi = np.block([[eye, dt * eye], [np.zeros((d, d)), eye]])
    Q = np.block([[dt**3 / 3 * qc, dt**2 / 2 * qc], [dt**2 / 2 * qc, dt * qc]])
    return phi, Q


def _transition_precision(dt: float, q_c, d: int) -> np.ndarray:
    # closed-form inverse of Q for the constant-velocity model
    qc_inv = np.linalg.inv(_qc_matrix(q_c, d))
    return np.block(
        [
            [12.0 / dt**3 * qc_inv, -6.0 / dt**2 * qc_inv],
            [-6.0 / dt**2 * qc_inv, 4.0 / dt * qc_inv],
        ]
    )


def const_velocity_mean(x0: State, xg: State, grid: TimeGrid) -> Trajectory:
    if x0.dim != xg.dim:
        raise InvalidArgument("start and goal dimensions differ")
    frac = np.arange(grid.n_steps + 1)[:, None] / grid.n_steps
    q = x0.q + frac * (xg.q - x0.q)
    v = (xg.q - x0.q) / (grid.n_steps * grid.dt)
    return Trajectory(grid, np.hstack([q, np.broadcast_to(v, q.shape)]))


def precision_from_times(times, sigma_start, sigma_goal, q_c, d: int, goal: bool = True) -> np.ndarray:
    """Factor-sum precision for arbitrary (strictly increasing) support times."""
    times = np.asarray(times, dtype=np.float64)
    n_sup = times.size
    s = 2 * d
    P = np.zeros((n_sup * s, n_sup * s))
    P[:s, :s] += _state_weights(sigma_start, d)
    if goal:
        P[-s:, -s:] += _state_weights(sigma_goal, d)
    eye = np.eye(s)
    for i in range(n_sup - 1):
        dt = times[i + 1] - times[i]
        phi, _ = transition_matrices(dt, q_c, d)
        Qi = _transition_precision(dt, q_c, d)
        J = np.hstack([-phi, eye])
        P[i * s : (i + 2) * s, i * s : (i + 2) * s] += J.T @ Qi @ J
    return 0.5 * (P + P.T)


def assemble_precision(config: GPConfig, d: int) -> np.ndarray:
    P = precision_from_times(config.grid.times, config.sigma_start, config.sigma_goal, config.q_c, d)
    try:
        cholesky_spd(P)
    except FactorizationError as exc:
        raise ConfigInvalid(f"degenerate GP configuration: {exc}") from exc
    return P


@dataclass(frozen=True, eq=False)
class GPPrior:
    mean: Trajectory
    precision: np.ndarray
    precision_chol: np.ndarray
    config: GPConfig

    @property
    def dim(self) -> int:
        return self.mean.dim

    @property
    def grid(self) -> TimeGrid:
        return self.config.grid

    @cached_property
    def mean_flat(self) -> np.ndarray:
        return flatten(self.mean)

    @cached_property
    def chol_inv(self) -> np.ndarray:
        """``L^{-1}``; rows of ``Z @ chol_inv`` are draws from N(0, K)."""
        n = self.precision.shape[0]
        return solve_triangular(self.precision_chol, np.eye(n))

    @cached_property
    def covariance(self) -> np.ndarray:
        Li = self.chol_inv
        return Li.T @ Li

    def with_mean(self, mean: Trajectory) -> "GPPrior":
        """Prior with a different mean but the same (already factorized) covariance."""
        if mean.grid != self.grid or mean.dim != self.dim:
            raise InvalidArgument("mean does not match the prior grid/dimension")
        other = GPPrior(mean, self.precision, self.precision_chol, self.config)
        if "chol_inv" in self.__dict__:
            other.__dict__["chol_inv"] = self.__dict__["chol_inv"]
        if "covariance" in self.__dict__:
            other.__dict__["covariance"] = self.__dict__["covariance"]
        return other


def build_prior(mean: Trajectory, config: GPConfig) -> GPPrior:
    if mean.grid != config.grid:
        raise InvalidArgument("mean trajectory grid differs from the config grid")
    P = precision_from_times(config.grid.times, config.sigma_start, config.sigma_goal, config.q_c, mean.dim)
    try:
        L = cholesky_spd(P)
    except FactorizationError as exc:
        raise ConfigInvalid(f"degenerate GP configuration: {exc}") from exc
    return GPPrior(mean, P, L, config)


def goal_prior(x0: State, xg: State, config: GPConfig) -> GPPrior:
    return build_prior(const_velocity_mean(x0, xg, config.grid), config)


def samples_from_noise(prior: GPPrior, z) -> np.ndarray:
    """Map standard-normal rows ``z`` (k, n) to flat trajectories ``mu + L^{-T} z``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return prior.mean_flat + z @ prior.chol_inv


def sample_flat(prior: GPPrior, k: int, rng: RngStream) -> np.ndarray:
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    return samples_from_noise(prior, rng.normal((k, prior.precision.shape[0])))


def sample_trajectories(prior: GPPrior, k: int, rng: RngStream) -> list[Trajectory]:
    X = sample_flat(prior, k, rng)
    return [unflatten(x, prior.grid, prior.dim) for x in X]


def log_prob_flat(prior: GPPrior, X) -> np.ndarray:
    """Unnormalized log density for a batch of flat trajectories (k, n)."""
    V = np.atleast_2d(X) - prior.mean_flat
    return -0.5 * np.einsum("ij,jk,ik->i", V, prior.precision, V)


def log_prob_unnorm(prior: GPPrior, traj: Trajectory) -> float:
    if traj.grid != prior.grid or traj.dim != prior.dim:
        raise InvalidArgument("trajectory grid/dimension does not match the prior")
    v = flatten(traj) - prior.mean_flat
    return float(-0.5 * v @ prior.precision @ v)


def interpolate(prior: GPPrior, mean: Trajectory, dense_times) -> Trajectory:
    """Posterior-mean densification of ``mean`` at ``dense_times``.

    ``dense_times`` is a TimeGrid or an array of query times.  Each query only
    depends on the two bracketing support states (Markov structure); queries
    that coincide with a support time return that support state unchanged.
    """
    grid = prior.grid
    if isinstance(dense_times, TimeGrid):
        out_grid = dense_times
        tq = dense_times.times
    else:
        tq = np.asarray(dense_times, dtype=np.float64)
        out_grid = None
    support = grid.times
    t_lo, t_hi = support[0], support[-1]
    tol = 1e-12 * max(1.0, abs(t_hi))
    if np.any(tq < t_lo - tol) or np.any(tq > t_hi + tol):
        raise OutOfRange("query time outside the planning horizon")
    d = mean.dim
    qc = prior.config.q_c
    X = mean.states
    out = np.empty((tq.size, 2 * d))
    for j, t in enumerate(tq):
        # exact support-time hits
        i = int(round((t - grid.t0) / grid.dt))
        i = min(max(i, 0), grid.n_steps)
        if abs(t - support[i]) <= tol:
            out[j] = X[i]
            continue
        i = int(np.searchsorted(support, t, side="right") - 1)
        i = min(max(i, 0), grid.n_steps - 1)
        tau = t - support[i]
        span = support[i + 1] - support[i]
        phi_tau, Q_tau = transition_matrices(tau, qc, d)
        phi_rest, _ = transition_matrices(span - tau, qc, d)
        phi_span, _ = transition_matrices(span, qc, d)
        psi = Q_tau @ phi_rest.T @ _transition_precision(span, qc, d)
        lam = phi_tau - psi @ phi_span
        out[j] = lam @ X[i] + psi @ X[i + 1]
    if out_grid is None:
        if tq.size >= 2 and np.allclose(np.diff(tq), tq[1] - tq[0]):
            out_grid = TimeGrid(float(tq[0]), float(tq[1] - tq[0]), tq.size - 1)
        else:
            return out
    return Trajectory(out_grid, out)
