"""StochGPMP, its multi-goal/multi-plan batch form, and a tempered gradient planner.

Cost functions follow one convention: a callable mapping a batch of flat
trajectories ``(B, n)`` to costs ``(B,)``.  An :class:`~ebmprior.costs.Objective`
is adapted automatically.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kinematics as kin
from .core import RngStream, State, Trajectory, flatten, unflatten
from .costs import CostTerm, Objective
from .errors import InvalidArgument, PlannerDiverged, StepFailure
from .gp import GPConfig, GPPrior, build_prior, const_velocity_mean, interpolate

CostFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class PlannerConfig:
    gp: GPConfig
    temperature: float = 1.0
    step_size: float = 0.5
    n_samples: int = 32
    iterations: int = 100
    plans_per_goal: int = 1
    init_scale: float = 4.0  # std multiplier of the initialization GP (Alg. 2 prior)
    tol: float = 1e-6
    # alpha(tau) = -is_coeff * (mu - mu_prior)^T K^{-1} tau; 1.0 is the exact prior/proposal density ratio
    is_coeff: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidArgument("temperature must be positive")
        if not 0.0 <= self.step_size <= 1.0:
            raise InvalidArgument("step_size must lie in [0, 1]")
        if self.n_samples < 1 or self.plans_per_goal < 1:
            raise InvalidArgument("n_samples and plans_per_goal must be >= 1")
        if self.iterations < 0:
            raise InvalidArgument("iterations must be >= 0")


@dataclass
class PlanningProblem:
    start: State
    goals: list  # States (configuration space) or 2-D task-space targets when ``arm`` is set
    objective: Objective | CostFn | list
    arm: kin.PlanarArm | None = None
    goals_in_task_space: bool = False
    environment: object = None

    def resolve_goals(self) -> list:
        """Configuration-space goal states (task-space goals go through IK once)."""
        out = []
        for g in self.goals:
            if isinstance(g, State):
                out.append(g)
            elif self.goals_in_task_space:
                if self.arm is None:
                    raise InvalidArgument("task-space goals need an arm")
                out.append(State.at_rest(kin.ik(self.arm, g, self.start.q)))
            else:
                out.append(State.at_rest(g))
        return out


def as_cost_fn(objective, n_states: int, d: int) -> CostFn:
    if isinstance(objective, Objective):
        return objective.flat_cost_fn(n_states, d)
    return objective


def softmax_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of ``-costs / temperature`` along the last axis; non-finite costs get weight 0."""
    z = -np.asarray(costs, dtype=np.float64) / temperature
    z = np.where(np.isfinite(z), z, -np.inf)
    zmax = np.max(z, axis=-1, keepdims=True)
    w = np.exp(z - zmax)
    return w / np.sum(w, axis=-1, keepdims=True)


def importance_term(mean, ref_mean, precision, samples, coeff: float = 1.0) -> np.ndarray:
    """``alpha(tau) = -coeff (mu - mu_ref)^T K^{-1} tau`` for each sample.

    With ``coeff=1`` this is, up to a constant, the log ratio between the GP
    prior centred at ``mu_ref`` and the proposal centred at ``mu``.
    ``mean``/``ref_mean`` are (..., n), ``samples`` (..., K, n).
    """
    v = (mean - ref_mean) @ precision
    return -coeff * np.einsum("...n,...kn->...k", v, samples)


def _update(M, M_ref, T, costs, precision, cfg: PlannerConfig):
    lam = cfg.temperature
    shifted = costs - lam * importance_term(M, M_ref, precision, T, cfg.is_coeff)
    w = softmax_weights(shifted, lam)
    new = (1.0 - cfg.step_size) * M + cfg.step_size * np.einsum("...k,...kn->...n", w, T)
    return new, w


def stochgpmp_step(mean, prior: GPPrior, cost_fn, cfg: PlannerConfig, rng: RngStream, noise=None):
    """One importance-sampling update of the proposal mean.

    Returns the new mean (same type as ``mean``) and a diagnostics dict with
    the sample weights, costs and effective sample size.
    """
    is_traj = isinstance(mean, Trajectory)
    mu = flatten(mean) if is_traj else np.asarray(mean, dtype=np.float64)
    n = mu.size
    cost_fn = as_cost_fn(cost_fn, prior.grid.n_steps + 1, prior.dim)
    z = rng.normal((cfg.n_samples, n)) if noise is None else np.asarray(noise, dtype=np.float64)
    T = mu + z @ prior.chol_inv
    costs = np.asarray(cost_fn(T), dtype=np.float64)
    if not np.any(np.isfinite(costs)):
        raise StepFailure("all sample costs are non-finite")
    new, w = _update(mu, prior.mean_flat, T, costs, prior.precision, cfg)
    diag = {
        "weights": w,
        "costs": costs,
        "samples": T,
        "ess": float(1.0 / np.sum(w**2)),
        "best_cost": float(np.nanmin(np.where(np.isfinite(costs), costs, np.nan))),
        "mean_cost": float(np.mean(costs[np.isfinite(costs)])),
    }
    if is_traj:
        new = unflatten(new, prior.grid, prior.dim)
    return new, diag


def stochgpmp_plan(problem: PlanningProblem, cfg: PlannerConfig, rng: RngStream, dense_grid=None):
    """Single-goal StochGPMP; returns the final mean and a per-iteration history."""
    goals = problem.resolve_goals()
    if len(goals) != 1:
        raise InvalidArgument("stochgpmp_plan expects exactly one goal")
    prior = build_prior(const_velocity_mean(problem.start, goals[0], cfg.gp.grid), cfg.gp)
    cost_fn = as_cost_fn(problem.objective, cfg.gp.grid.n_steps + 1, prior.dim)
    mu = prior.mean_flat.copy()
    history = []
    for it in range(cfg.iterations):
        new, diag = stochgpmp_step(mu, prior, cost_fn, cfg, rng.spawn(it))
        delta = float(np.max(np.abs(new - mu)))
        mu = new
        history.append({"iteration": it + 1, "best_cost": diag["best_cost"], "mean_cost": diag["mean_cost"],
                        "ess": diag["ess"], "delta": delta})
        if delta < cfg.tol:
            break
    result = unflatten(mu, prior.grid, prior.dim)
    if dense_grid is not None:
        result = interpolate(prior, result, dense_grid)
    return result, history


@dataclass
class MultiPlanResult:
    best: Trajectory
    best_index: tuple
    means: np.ndarray  # (G, P, n) final plan means
    costs: np.ndarray  # (G, P) costs of the final means
    priors: list
    snapshots: dict = field(default_factory=dict)  # budget -> (G, P, n)
    history: list = field(default_factory=list)

    def trajectory(self, g: int, p: int, means: np.ndarray | None = None) -> Trajectory:
        prior = self.priors[g]
        M = self.means if means is None else means
        return unflatten(M[g, p], prior.grid, prior.dim)


def _goal_costs(cost_fns: list, X: np.ndarray) -> np.ndarray:
    """Evaluate (G, ..., n) trajectories with the per-goal cost functions."""
    G = X.shape[0]
    n = X.shape[-1]
    if len(cost_fns) == 1:
        flat = X.reshape(-1, n)
        return np.asarray(cost_fns[0](flat), dtype=np.float64).reshape(X.shape[:-1])
    return np.stack([np.asarray(cost_fns[g](X[g].reshape(-1, n))).reshape(X.shape[1:-1]) for g in range(G)])


def multi_stochgpmp_plan(
    problem: PlanningProblem,
    cfg: PlannerConfig,
    rng: RngStream,
    budgets: Sequence[int] = (),
    include_prior_mean: bool = False,
    dense_grid=None,
    init_means=None,
) -> MultiPlanResult:
    """Batched StochGPMP over goals x plans-per-goal (fixed iteration count).

    Initial plan means are drawn from the inflated GP around each straight
    line; with ``include_prior_mean`` plan 0 of every goal starts exactly on
    the straight line.  ``init_means`` (G, P, n) or (G, n) replaces the centre
    of the initialization draw (warm start).  ``budgets`` records snapshots of
    all means after that many iterations (0 = initialization).
    """
    goals = problem.resolve_goals()
    G, P, K = len(goals), cfg.plans_per_goal, cfg.n_samples
    base = build_prior(const_velocity_mean(problem.start, goals[0], cfg.gp.grid), cfg.gp)
    priors = [base] + [base.with_mean(const_velocity_mean(problem.start, g, cfg.gp.grid)) for g in goals[1:]]
    n_states, d = cfg.gp.grid.n_steps + 1, base.dim
    objectives = problem.objective if isinstance(problem.objective, list) else [problem.objective]
    if len(objectives) not in (1, G):
        raise InvalidArgument("need one objective or one per goal")
    cost_fns = [as_cost_fn(o, n_states, d) for o in objectives]

    M_ref = np.stack([p.mean_flat for p in priors])  # (G, n)
    n = M_ref.shape[1]
    streams = [[rng.spawn(g, p) for p in range(P)] for g in range(G)]
    centre = np.repeat(M_ref[:, None, :], P, axis=1)
    if init_means is not None:
        W = np.asarray(init_means, dtype=np.float64)
        centre = np.broadcast_to(W[:, None, :] if W.ndim == 2 else W, (G, P, n)).copy()
    if cfg.init_scale == 0:
        M = centre
    else:
        init_prior = build_prior(priors[0].mean, cfg.gp.scaled(cfg.init_scale))
        Z0 = np.stack([[streams[g][p].spawn(0).normal(n) for p in range(P)] for g in range(G)])
        M = centre + Z0 @ init_prior.chol_inv
    if include_prior_mean:
        M[:, 0] = centre[:, 0]
    Li, prec = base.chol_inv, base.precision
    budgets = sorted(set(int(b) for b in budgets))
    snapshots = {}
    history = []
    if 0 in budgets:
        snapshots[0] = M.copy()
    for it in range(cfg.iterations):
        Z = np.stack([[streams[g][p].spawn(1, it).normal((K, n)) for p in range(P)] for g in range(G)])
        T = M[:, :, None, :] + Z @ Li  # (G, P, K, n)
        costs = _goal_costs(cost_fns, T)
        if not np.any(np.isfinite(costs)):
            raise StepFailure(f"all sample costs non-finite at iteration {it}")
        M, w = _update(M, M_ref[:, None, :], T, costs, prec, cfg)
        finite = np.where(np.isfinite(costs), costs, np.nan)
        history.append({
            "iteration": it + 1,
            "best_cost": float(np.nanmin(finite)),
            "mean_cost": float(np.nanmean(finite)),
            "ess": float(np.mean(1.0 / np.sum(w**2, axis=-1))),
        })
        if it + 1 in budgets:
            snapshots[it + 1] = M.copy()
    final_costs = _goal_costs(cost_fns, M)
    flat = np.where(np.isfinite(final_costs), final_costs, np.inf).reshape(-1)
    k = int(np.argmin(flat))  # first minimum == lowest (goal, plan) on ties
    gi, pi = divmod(k, P)
    best = unflatten(M[gi, pi], priors[gi].grid, d)
    if dense_grid is not None:
        best = interpolate(priors[gi], best, dense_grid)
    return MultiPlanResult(best, (gi, pi), M, final_costs, priors, snapshots, history)


# ---------------------------------------------------------------------------
# gradient-based planner


@dataclass
class GradientPlannerConfig:
    gp: GPConfig
    particles: int = 8
    iterations: int = 200
    learning_rate: float = 1e-2
    clip_norm: float = 10.0
    prior_weight_max: float = 1.0
    precondition: bool = False  # descend along K @ grad instead of grad

    def tempering_weight(self, t: int) -> float:
        """Linear decay from ``prior_weight_max`` at t=0 to 0 at the last iteration."""
        return self.prior_weight_max * (1.0 - t / max(self.iterations, 1))


def gradient_plan(problem: PlanningProblem, ebm_terms: Sequence[CostTerm], cfg: GradientPlannerConfig,
                  rng: RngStream | None = None, init=None):
    """Batch gradient descent of particles on ``objective + w(t) * sum(ebm_terms)``.

    Particles start as samples of the goal-directed GP prior (or ``init``,
    shape ``(P, N+1, 2d)``).  Returns the lowest-objective particle and a
    per-iteration history.
    """
    if not isinstance(problem.objective, Objective):
        raise InvalidArgument("gradient planning needs an Objective with gradient support")
    goals = problem.resolve_goals()
    prior = build_prior(const_velocity_mean(problem.start, goals[0], cfg.gp.grid), cfg.gp)
    shape = (prior.grid.n_steps + 1, 2 * prior.dim)
    if init is not None:
        S = np.array(init, dtype=np.float64).reshape((-1,) + shape)
    else:
        rng = rng or RngStream(0)
        z = rng.normal((cfg.particles, prior.precision.shape[0]))
        S = (prior.mean_flat + z @ prior.chol_inv).reshape((-1,) + shape)
    cov = prior.covariance if cfg.precondition else None
    objective = problem.objective
    history = []
    for t in range(cfg.iterations):
        g = objective.batch_grads(S)
        w = cfg.tempering_weight(t)
        if w != 0:
            for term in ebm_terms:
                g = g + w * term.weight * term.grads(S)
        g = g.reshape(len(S), -1)
        bad = ~np.all(np.isfinite(g), axis=1)
        if np.any(bad):
            raise PlannerDiverged(int(np.argmax(bad)), t)
        if cov is not None:
            g = g @ cov
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        g = g * np.minimum(1.0, cfg.clip_norm / np.maximum(norms, 1e-300))
        S = S - cfg.learning_rate * g.reshape(S.shape)
        costs = objective.batch_values(S)
        history.append({"iteration": t + 1, "best_cost": float(np.min(costs)),
                        "mean_cost": float(np.mean(costs)), "prior_weight": w})
    costs = objective.batch_values(S)
    best = int(np.argmin(costs))
    return Trajectory(prior.grid, S[best]), history
