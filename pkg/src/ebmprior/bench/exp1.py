"""Experiment I: navigation among unknown obstacles with learned priors.

Pipeline: generate worlds and demonstrations, train obstacle-conditioned
EBMs (expert trajectories or free-space points) and a behavioural-cloning
policy, then plan on held-out worlds and count successes per budget.
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from ..core import RngStream, State, trajectory_to_dict
from ..costs import EBMFactor, GPFactor, Objective, SphereObstacles
from ..ebm import (
    EnergyModel,
    ModelField,
    canonical_obstacles,
    load_checkpoint,
    rollout_bc,
    save_checkpoint,
    train_bc,
    train_ebm,
)
from ..environments import (
    START,
    Demonstration,
    Environment,
    generate_environment,
    generate_expert_trajectories_partial,
    load_dataset,
    sample_free_space_points,
    sample_goals,
    save_dataset,
    success_metric,
)
from ..errors import DegenerateEnvironment, GenerationFailure, InvalidArgument
from ..gp import build_prior, const_velocity_mean
from ..planners import GradientPlannerConfig, PlanningProblem, gradient_plan, multi_stochgpmp_plan
from .config import Exp1Config, config_to_dict
from .parallel import parallel_map
from .report import Report, RunRecord, _csv, fmt

log = logging.getLogger(__name__)

WORLD = ((-10.0, -10.0), (10.0, 10.0))


def _env_rng(cfg: Exp1Config, env_id: int, purpose: int) -> RngStream:
    return RngStream(cfg.seed, (purpose, env_id))


def make_env(cfg: Exp1Config, env_id: int) -> Environment:
    return generate_environment(cfg.env, _env_rng(cfg, env_id, 2), env_id)


def env_goals(cfg: Exp1Config, env: Environment) -> list[State]:
    return sample_goals(env, cfg.n_goals, _env_rng(cfg, env.env_id, 4))


# ---------------------------------------------------------------------------
# data generation


def _gen_one(args):
    cfg, env_id, mode = args
    try:
        env = make_env(cfg, env_id)
        demos, failed = [], []
        if mode in ("free", "both"):
            pts = sample_free_space_points(env, cfg.free_points, _env_rng(cfg, env_id, 6))
            demos += [Demonstration("free_point", p, env_id) for p in pts]
        if mode in ("expert", "both"):
            goals = env_goals(cfg, env)
            trajs, failed = generate_expert_trajectories_partial(env, goals, cfg.expert, _env_rng(cfg, env_id, 3))
            demos += trajs
    except (GenerationFailure, DegenerateEnvironment) as exc:
        return env_id, None, [], str(exc)
    return env_id, env, demos, failed


def gen_data(cfg: Exp1Config, out_dir, mode: str = "both", threads: int = 1) -> dict:
    """Writes ``train/`` (worlds + demonstrations) and ``eval/`` (worlds only).

    Returns ``{"envs", "failed_goals", "errors"}``.  Goals without a
    successful demonstration are soft failures; an environment that cannot
    be generated at all is a hard failure (listed in ``errors``).  Neither
    stops the run.
    """
    if mode not in ("free", "expert", "both"):
        raise InvalidArgument(f"unknown data mode {mode!r}")
    out = Path(out_dir)
    results = parallel_map(_gen_one, [(cfg, i, mode) for i in cfg.train_ids], threads)
    errors = {i: r for i, env, _, r in results if env is None}
    ok = [(env, demos, failed) for _, env, demos, failed in results if env is not None]
    envs = [r[0] for r in ok]
    records = {env.env_id: demos for env, demos, _ in ok}
    failed_goals = {env.env_id: failed for env, _, failed in ok if failed}
    spec = {"experiment": "exp1", "split": "train", "mode": mode, "config": config_to_dict(cfg)}
    save_dataset(out / "train", spec, cfg.seed, envs, records)
    eval_envs = []
    for i in cfg.eval_ids:
        try:
            eval_envs.append(make_env(cfg, i))
        except GenerationFailure as exc:
            errors[i] = str(exc)
    save_dataset(out / "eval", {"experiment": "exp1", "split": "eval", "config": config_to_dict(cfg)},
                 cfg.seed, eval_envs, {})
    for i, msg in sorted(errors.items()):
        log.error("environment %d: %s", i, msg)
    return {"envs": len(envs), "failed_goals": failed_goals, "errors": errors}


# ---------------------------------------------------------------------------
# training


def expert_states(envs, records):
    X, C = [], []
    for env in envs:
        for d in records[env.env_id]:
            if d.kind == "trajectory":
                X.append(d.payload.q)
                C.append(np.repeat(env.centers.reshape(1, -1), len(d.payload.q), axis=0))
    if not X:
        raise InvalidArgument("dataset holds no expert trajectories")
    return np.vstack(X), np.vstack(C)


def free_states(envs, records):
    X, C = [], []
    for env in envs:
        pts = [d.payload for d in records[env.env_id] if d.kind == "free_point"]
        if pts:
            X.append(np.array(pts))
            C.append(np.repeat(env.centers.reshape(1, -1), len(pts), axis=0))
    if not X:
        raise InvalidArgument("dataset holds no free-space points")
    return np.vstack(X), np.vstack(C)


def _expert_paths(envs, records) -> list:
    paths = [d.payload.q for env in envs for d in records[env.env_id] if d.kind == "trajectory"]
    if not paths:
        raise InvalidArgument("dataset holds no expert trajectories")
    return paths


def phase_states(envs, records):
    """Expert states paired with their phase k/N along the path."""
    paths = _expert_paths(envs, records)
    X = np.vstack(paths)
    C = np.concatenate([np.linspace(0.0, 1.0, len(q)) for q in paths])
    return X, C


def trajectory_rows(envs, records) -> np.ndarray:
    """One flattened configuration path per row."""
    return np.stack([q.reshape(-1) for q in _expert_paths(envs, records)])


def bc_context(env: Environment, goal) -> np.ndarray:
    g = goal.q if isinstance(goal, State) else np.asarray(goal, dtype=np.float64)
    return np.concatenate([canonical_obstacles(env.centers).reshape(-1), g])


def bc_dataset(envs, records):
    X, Y = [], []
    for env in envs:
        for d in records[env.env_id]:
            if d.kind != "trajectory":
                continue
            q = d.payload.q
            v = np.diff(q, axis=0) / d.payload.grid.dt
            ctx = bc_context(env, d.goal)
            X.append(np.hstack([q[:-1], np.repeat(ctx[None], len(v), axis=0)]))
            Y.append(v)
    if not X:
        raise InvalidArgument("dataset holds no expert trajectories")
    return np.vstack(X), np.vstack(Y)


def write_history(path, header, rows) -> None:
    Path(path).write_text(_csv([header] + [[fmt(v) for v in r] for r in rows]))


def train_model(dataset_dir, method: str, cfg: Exp1Config, out_path):
    """Train ``ebm_expert``, ``ebm_free``, ``ebm_phase``, ``ebm_trajectory`` or ``bc``."""
    _, envs, records = load_dataset(Path(dataset_dir) / "train" if (Path(dataset_dir) / "train").exists()
                                    else dataset_dir)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if method == "bc":
        X, Y = bc_dataset(envs, records)
        policy, hist = train_bc(X, Y, cfg.bc_train)
        save_checkpoint(policy, out_path)
        write_history(out_path.with_suffix(".csv"), ["iteration", "loss"], hist)
        return policy
    if method == "ebm_phase":
        X, C = phase_states(envs, records)
        res = train_ebm(X, C, "phase_concat", cfg.train, domain=WORLD)
    elif method == "ebm_trajectory":
        X = trajectory_rows(envs, records)
        res = train_ebm(X, None, "plain_trajectory", cfg.train)
    elif method in ("ebm_expert", "ebm_free"):
        X, C = expert_states(envs, records) if method == "ebm_expert" else free_states(envs, records)
        res = train_ebm(X, C, "obstacle_concat", cfg.train, domain=WORLD)
    else:
        raise InvalidArgument(f"unknown exp1 model {method!r}")
    save_checkpoint(res.model, out_path)
    write_history(out_path.with_suffix(".csv"), ["iteration", "total", "cd", "dsm"], res.history)
    return res.model


# ---------------------------------------------------------------------------
# evaluation


def ebm_objective(model: EnergyModel, env: Environment, cfg: Exp1Config, weight: float | None = None) -> Objective:
    w = cfg.planner.ebm_weight if weight is None else weight
    field = ModelField(model, env.centers.reshape(-1))
    return Objective([EBMFactor(field, weight=w, steps=cfg.planner.ebm_steps())])


def _eval_ebm_env(args):
    cfg, method, model, env_id, keep_plans = args
    env = make_env(cfg, env_id)
    goals = env_goals(cfg, env)
    objective = ebm_objective(model, env, cfg)
    cost = objective.flat_cost_fn(cfg.planner.n_steps + 1, 2)
    pcfg = cfg.planner.planner_config(max(cfg.budgets))
    problem = PlanningProblem(State.at_rest(np.array(START)), goals, objective)
    t0 = time.perf_counter()
    res = multi_stochgpmp_plan(problem, pcfg, _env_rng(cfg, env_id, 5), budgets=cfg.budgets,
                               include_prior_mean=True)
    wall = (time.perf_counter() - t0) / len(goals)
    recs, plans = [], {}
    for b in cfg.budgets:
        M = res.snapshots[b]
        costs = cost(M.reshape(-1, M.shape[-1])).reshape(M.shape[:2])
        for g, goal in enumerate(goals):
            p = 0 if b == 0 else int(np.argmin(costs[g]))
            traj = res.trajectory(g, p, M)
            ok = success_metric(traj, env, goal)
            recs.append(RunRecord(method, str(b), env_id, g, ok, float(costs[g, p]), wall))
            if keep_plans and b == max(cfg.budgets):
                plans[g] = traj
    return recs, plans


def _eval_bc_env(args):
    cfg, policy, env_id, keep_plans = args
    env = make_env(cfg, env_id)
    recs, plans = [], {}
    grid = cfg.planner.grid
    for g, goal in enumerate(env_goals(cfg, env)):
        t0 = time.perf_counter()
        try:
            traj = rollout_bc(policy, np.array(START), bc_context(env, goal), grid.n_steps, grid.dt)
            ok = success_metric(traj, env, goal)
            err = float(np.linalg.norm(traj.q[-1] - goal.q))
        except Exception as exc:  # a failed rollout counts as unsuccessful
            log.warning("bc rollout failed in env %d goal %d: %s", env_id, g, exc)
            traj, ok, err = None, False, float("inf")
        recs.append(RunRecord("bc", "", env_id, g, ok, err, time.perf_counter() - t0))
        if keep_plans and traj is not None:
            plans[g] = traj
    return recs, plans


def _eval_gradient_env(args):
    cfg, method, model, env_id = args
    gs = cfg.gradient
    env = make_env(cfg, env_id)
    goals = env_goals(cfg, env)
    recs = []
    x0 = State.at_rest(np.array(START))
    gp = cfg.planner.gp()
    for g, goal in enumerate(goals):
        prior = build_prior(const_velocity_mean(x0, goal, gp.grid), gp)
        objective = Objective([GPFactor(prior),
                               SphereObstacles(env.centers, env.radii, eps=0.3, weight=gs.obstacle_weight)])
        terms = []
        if model is not None:
            terms = [EBMFactor(ModelField(model, env.centers.reshape(-1)), weight=cfg.planner.ebm_weight,
                               steps=cfg.planner.ebm_steps())]
        gcfg = GradientPlannerConfig(gp, particles=gs.particles, iterations=gs.iterations,
                                     learning_rate=gs.learning_rate, clip_norm=gs.clip_norm,
                                     prior_weight_max=gs.prior_weight_max, precondition=True)
        t0 = time.perf_counter()
        try:
            traj, _ = gradient_plan(PlanningProblem(x0, [goal], objective), terms, gcfg,
                                    RngStream(cfg.seed, (7, env_id, g)))
            ok = success_metric(traj, env, goal)
            cost = float(objective.batch_values(traj.states[None])[0])
        except Exception as exc:
            log.warning("gradient planner failed in env %d goal %d: %s", env_id, g, exc)
            ok, cost = False, float("inf")
        recs.append(RunRecord(method, str(gs.iterations), env_id, g, ok, cost, time.perf_counter() - t0))
    return recs


def evaluate(cfg: Exp1Config, models: dict, out_dir, threads: int = 1, eval_ids=None,
             train_ids=None, n_plot_envs: int = 2) -> Report:
    """Plan on held-out worlds for every method in ``models`` (name -> model or policy)."""
    eval_ids = list(cfg.eval_ids if eval_ids is None else eval_ids)
    train_ids = list(cfg.train_ids if train_ids is None else train_ids)
    if set(eval_ids) & set(train_ids):
        raise InvalidArgument("evaluation environments overlap the training set")
    for method, model in models.items():
        if isinstance(model, EnergyModel) and model.conditioning != "obstacle_concat":
            raise InvalidArgument(f"{method}: planning here needs an obstacle-conditioned model")
    report = Report()
    plans: dict = {}
    keep = set(eval_ids[:n_plot_envs])
    for method, model in models.items():
        if method == "bc":
            out = parallel_map(_eval_bc_env, [(cfg, model, i, i in keep) for i in eval_ids], threads)
        else:
            out = parallel_map(_eval_ebm_env, [(cfg, method, model, i, i in keep) for i in eval_ids], threads)
        for env_id, (recs, p) in zip(eval_ids, out):
            for r in recs:
                report.add(r)
            if p:
                plans.setdefault(env_id, {})[method] = p
    if cfg.gradient.enabled and "ebm_expert" in models:
        ids = eval_ids[: cfg.gradient.n_eval_envs]
        for method, model in (("grad_noprior", None), ("grad_ebm", models["ebm_expert"])):
            for recs in parallel_map(_eval_gradient_env, [(cfg, method, model, i) for i in ids], threads):
                for r in recs:
                    report.add(r)
    out = Path(out_dir)
    report.write(out)
    _write_plans(out / "plans", cfg, plans)
    return report


def _write_plans(root: Path, cfg: Exp1Config, plans: dict) -> None:
    root.mkdir(parents=True, exist_ok=True)
    for env_id, by_method in plans.items():
        env = make_env(cfg, env_id)
        body = {
            "environment": env.to_dict(),
            "goals": [g.q.tolist() for g in env_goals(cfg, env)],
            "plans": {m: {str(g): trajectory_to_dict(t) for g, t in p.items()} for m, p in by_method.items()},
        }
        (root / f"env_{env_id}.json").write_text(json.dumps(body, sort_keys=True))


# ---------------------------------------------------------------------------
# full pipeline


def run_experiment_1(cfg: Exp1Config, out_dir, threads: int = 1, reuse: bool = True) -> Report:
    """Data -> models -> evaluation -> report; existing artifacts are reused when ``reuse``."""
    out = Path(out_dir)
    data = out / "data"
    if not (reuse and (data / "train" / "manifest.json").exists()):
        summary = gen_data(cfg, data, "both", threads)
        if summary["failed_goals"]:
            log.warning("goals without demonstrations: %s", summary["failed_goals"])
    models = {}
    for method in cfg.methods:
        path = out / "models" / f"{method}.json"
        if reuse and path.exists():
            models[method] = load_checkpoint(path)
        else:
            models[method] = train_model(data, method, cfg, path)
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=1, sort_keys=True))
    return evaluate(cfg, models, out / "report", threads)
