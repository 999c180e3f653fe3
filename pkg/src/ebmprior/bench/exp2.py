"""Experiment II: touch a cube, then reach into a two-walled cubby.

Three ways of shaping the arm trajectory are compared under the same
StochGPMP optimizer, collision and joint-limit costs:

* ``gaussian``: quadratic end-effector potentials at a random cube-surface
  point (mid horizon) and at the cubby centre (end);
* ``bc_warm``: the same potentials, with plans initialised from a
  behavioural-cloning rollout of the insertion demonstrations;
* ``ebm``: composed object-centric grasp and insertion energies.
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .. import kinematics as kin
from ..core import RngStream, State, TimeGrid, trajectory_from_dict, trajectory_to_dict
from ..costs import EBMFactor, JointLimit, Objective, PosePotential, SphereObstacles
from ..ebm import ModelField, frame_rotation, frame_transform, train_bc, train_ebm
from ..environments import GraspInsertScene, generate_grasp_insert_datasets, sample_scene
from ..errors import IKFailure
from ..gp import GPConfig
from ..planners import PlannerConfig, PlanningProblem, multi_stochgpmp_plan
from .config import Exp2Config, config_to_dict
from .parallel import parallel_map
from .report import Report, RunRecord

log = logging.getLogger(__name__)

METHODS = ("gaussian", "bc_warm", "ebm")


def insert_configuration(scene: GraspInsertScene, q_ref=None) -> np.ndarray:
    """Joint angles placing the end-effector at the cubby centre with the last
    link along the cubby axis (elbow branch closest to ``q_ref``)."""
    arm = scene.arm
    if arm.n_links != 3:
        raise IKFailure(float("nan"), "aligned insertion needs a 3-link arm")
    l1, l2, l3 = arm.link_lengths
    bx, by, bth = arm.base_pose
    heading = scene.cubby_pose[2]
    wrist = scene.cubby_center - l3 * np.array([np.cos(heading), np.sin(heading)]) - np.array([bx, by])
    r2 = float(wrist @ wrist)
    c2 = (r2 - l1**2 - l2**2) / (2 * l1 * l2)
    if abs(c2) > 1:
        raise IKFailure(abs(c2) - 1, "wrist point out of reach")
    q_ref = np.asarray(scene.start_q if q_ref is None else q_ref, dtype=np.float64)
    best, best_d = None, np.inf
    for sgn in (1.0, -1.0):
        q2 = sgn * np.arccos(c2)
        q1 = np.arctan2(wrist[1], wrist[0]) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2)) - bth
        q3 = heading - bth - q1 - q2
        q = kin.wrap_angles(np.array([q1, q2, q3]))
        d = float(np.sum(kin.wrap_angles(q - q_ref) ** 2))
        if not scene.collides(q) and d < best_d:
            best, best_d = q, d
    if best is None:
        raise IKFailure(0.0, "no collision-free insertion configuration")
    # unwrap towards the reference so the straight-line mean takes the short way round
    return q_ref + kin.wrap_angles(best - q_ref)


def evaluate_success(scene: GraspInsertScene, q_traj: np.ndarray, band: float) -> dict:
    ee = kin.end_effector(scene.arm, q_traj)
    touched = bool(np.min(scene.edge_distance(ee)) <= band)
    inside = bool(scene.inside_cubby(ee[-1]))
    collision = bool(np.any(scene.collides(q_traj)))
    return {"touched": touched, "inside": inside, "collision": collision,
            "success": touched and inside and not collision}


# ---------------------------------------------------------------------------
# training


def gen_data(cfg: Exp2Config, out_dir) -> dict:
    """Sample the training scene and write grasp points plus insertion paths to ``out_dir/train``."""
    rng = RngStream(cfg.seed, (10,))
    scene = sample_scene(rng.spawn(0))
    grasp_pts, inserts = generate_grasp_insert_datasets(scene, rng.spawn(1), cfg.grasp_per_edge, cfg.insert)
    root = Path(out_dir) / "train"
    root.mkdir(parents=True, exist_ok=True)
    body = {"scene": scene.to_dict(), "grasp": grasp_pts.tolist(),
            "inserts": [trajectory_to_dict(t) for t in inserts]}
    (root / "scene.json").write_text(json.dumps(body, sort_keys=True))
    manifest = {"spec": {"experiment": "exp2", "split": "train", "config": config_to_dict(cfg)},
                "seed": cfg.seed, "counts": {"grasp": len(grasp_pts), "inserts": len(inserts)}}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return {"grasp": len(grasp_pts), "inserts": len(inserts)}


def load_data(path):
    """(scene, grasp points, insertion trajectories) from a ``gen_data`` directory."""
    root = Path(path)
    if (root / "train").exists():
        root = root / "train"
    body = json.loads((root / "scene.json").read_text())
    return (GraspInsertScene.from_dict(body["scene"]), np.asarray(body["grasp"], dtype=np.float64),
            [trajectory_from_dict(t) for t in body["inserts"]])


def train_component(cfg: Exp2Config, scene: GraspInsertScene, grasp_pts, inserts, which: str):
    """``grasp`` / ``insert`` object-centric EBM, or the cubby-frame ``bc`` policy."""
    if which == "grasp":
        return train_ebm(grasp_pts, np.array(scene.cube_pose), "object_centric", cfg.train)
    if which == "insert":
        X = np.vstack([t.q for t in inserts])
        return train_ebm(X, np.array(scene.cubby_pose), "object_centric", cfg.train)
    if which == "bc":
        # insertion velocities expressed in the cubby frame
        P, V = [], []
        rot = frame_rotation(scene.cubby_pose)
        for t in inserts:
            P.append(frame_transform(t.q, scene.cubby_pose)[:-1])
            V.append(np.diff(t.q, axis=0) @ rot.T / t.grid.dt)
        return train_bc(np.vstack(P), np.vstack(V), cfg.bc_train)
    raise ValueError(f"unknown exp2 model {which!r}")


def train_models(cfg: Exp2Config, rng: RngStream | None = None, data=None) -> dict:
    """Grasp/insert EBMs and the insertion BC policy from one randomly posed training scene."""
    if data is None:
        rng = rng or RngStream(cfg.seed, (10,))
        scene = sample_scene(rng.spawn(0))
        grasp_pts, inserts = generate_grasp_insert_datasets(scene, rng.spawn(1), cfg.grasp_per_edge, cfg.insert)
    else:
        scene, grasp_pts, inserts = data
    grasp = train_component(cfg, scene, grasp_pts, inserts, "grasp").model
    insert = train_component(cfg, scene, grasp_pts, inserts, "insert").model
    policy, _ = train_component(cfg, scene, grasp_pts, inserts, "bc")
    return {"grasp": grasp, "insert": insert, "bc": policy, "train_scene": scene,
            "n_grasp": len(grasp_pts), "n_insert": len(inserts)}


# ---------------------------------------------------------------------------
# planning


def _grid(cfg: Exp2Config) -> TimeGrid:
    return TimeGrid(0.0, 1.0 / cfg.n_steps, cfg.n_steps)


def _base_terms(cfg: Exp2Config, scene: GraspInsertScene) -> list:
    walls = scene.wall_centers()
    oc = np.array([o[0] for o in scene.obstacles]).reshape(-1, 2)
    orad = np.array([o[1] for o in scene.obstacles]).reshape(-1)
    return [
        SphereObstacles(walls, np.full(len(walls), scene.wall_radius), eps=0.02, weight=cfg.collision_weight,
                        arm=scene.arm, spacing=0.1),
        SphereObstacles(oc, orad, eps=0.02, weight=cfg.collision_weight, arm=scene.arm, spacing=0.1),
        JointLimit(-np.pi * 1.5, np.pi * 1.5, weight=cfg.joint_limit_weight),
    ]


def _grasp_step(cfg: Exp2Config) -> int:
    return int(round(cfg.grasp_step * cfg.n_steps))


def random_surface_point(scene: GraspInsertScene, rng: RngStream) -> np.ndarray:
    h = scene.cube_size / 2
    side = int(rng.integers(0, 4))
    s = float(rng.uniform(-h, h))
    th = side * np.pi / 2
    local = np.array([h * np.cos(th) - s * np.sin(th), h * np.sin(th) + s * np.cos(th)])
    x, y, a = scene.cube_pose
    R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return R @ local + np.array([x, y])


def method_objective(method: str, cfg: Exp2Config, scene: GraspInsertScene, models: dict, target) -> Objective:
    terms = _base_terms(cfg, scene)
    k = _grasp_step(cfg)
    if method in ("gaussian", "bc_warm"):
        terms += [
            PosePotential(target, weight=cfg.potential_weight, arm=scene.arm, steps=[k]),
            PosePotential(scene.cubby_center, weight=cfg.potential_weight, arm=scene.arm, steps=[-1]),
        ]
    elif method == "ebm":
        half = int(round(cfg.grasp_window * cfg.n_steps / 2))
        grasp_steps = list(range(max(1, k - half), min(cfg.n_steps, k + half) + 1))
        insert_steps = list(range(int(round(cfg.insert_from * cfg.n_steps)), cfg.n_steps + 1))
        terms += [
            EBMFactor(ModelField(models["grasp"], np.array(scene.cube_pose)), weight=cfg.grasp_weight,
                      arm=scene.arm, steps=grasp_steps),
            EBMFactor(ModelField(models["insert"], np.array(scene.cubby_pose)), weight=cfg.insert_weight,
                      arm=scene.arm, steps=insert_steps),
        ]
    else:
        raise ValueError(f"unknown method {method!r}")
    return Objective(terms)


def bc_warm_start(cfg: Exp2Config, scene: GraspInsertScene, models: dict, target, q_goal) -> np.ndarray:
    """Flat initial mean: joint-space line to an IK grasp pose, then a BC insertion rollout."""
    grid = _grid(cfg)
    q0 = np.asarray(scene.start_q, dtype=np.float64)
    k = _grasp_step(cfg)
    try:
        qg = kin.ik(scene.arm, target, q0)
        qg = q0 + kin.wrap_angles(qg - q0)
    except IKFailure:
        qg = 0.5 * (q0 + q_goal)
    qs = [q0 + (qg - q0) * i / k for i in range(k + 1)]
    rot = frame_rotation(scene.cubby_pose)
    q = qg.copy()
    for _ in range(cfg.n_steps - k):
        p = frame_transform(kin.end_effector(scene.arm, q), scene.cubby_pose)
        v_local = models["bc"](p)[0]
        v_world = rot.T @ v_local
        q = q + grid.dt * kin.velocity_ik(scene.arm, q, v_world)
        qs.append(q.copy())
    Q = np.array(qs)
    # blend the rollout tail so the warm start ends on the goal configuration
    ramp = np.clip((np.arange(len(Q)) - k) / max(cfg.n_steps - k, 1), 0.0, 1.0)[:, None]
    Q = Q + ramp * (q_goal - Q[-1])
    V = np.gradient(Q, grid.dt, axis=0)
    return np.hstack([Q, V]).reshape(-1)


def plan_instance(args):
    """All methods on one scene; returns run records for every (method, budget)."""
    cfg, models, rep, inst = args
    rng = RngStream(cfg.seed, (20, rep, inst))
    scene = sample_scene(rng.spawn(0))
    grid = _grid(cfg)
    q0 = np.asarray(scene.start_q, dtype=np.float64)
    x0 = State.at_rest(q0)
    recs = []
    try:
        q_goal = insert_configuration(scene)
    except IKFailure as exc:
        log.warning("instance %d/%d: %s", rep, inst, exc)
        for m in METHODS:
            for b in cfg.budgets:
                recs.append(RunRecord(m, str(b), rep, inst, False, float("inf"), 0.0))
        return recs
    target = random_surface_point(scene, rng.spawn(1))
    pcfg = PlannerConfig(GPConfig(cfg.sigma, cfg.sigma, cfg.q_c, grid), temperature=cfg.temperature,
                         step_size=cfg.step_size, n_samples=cfg.n_samples, iterations=max(cfg.budgets),
                         plans_per_goal=cfg.plans_per_goal, init_scale=cfg.init_scale)
    for m in METHODS:
        objective = method_objective(m, cfg, scene, models, target)
        problem = PlanningProblem(x0, [State.at_rest(q_goal)], objective, arm=scene.arm)
        init = None
        if m == "bc_warm":
            init = bc_warm_start(cfg, scene, models, target, q_goal)[None]
        t0 = time.perf_counter()
        res = multi_stochgpmp_plan(problem, pcfg, rng.spawn(2), budgets=cfg.budgets, init_means=init,
                                   include_prior_mean=True)
        wall = time.perf_counter() - t0
        cost = objective.flat_cost_fn(grid.n_steps + 1, scene.arm.n_links)
        for b in cfg.budgets:
            M = res.snapshots[b][0]
            c = cost(M)
            p = int(np.argmin(c))
            q_traj = M[p].reshape(grid.n_steps + 1, -1)[:, : scene.arm.n_links]
            ok = evaluate_success(scene, q_traj, cfg.band)["success"]
            recs.append(RunRecord(m, str(b), rep, inst, ok, float(c[p]), wall))
    return recs


def run_experiment_2(cfg: Exp2Config, out_dir=None, threads: int = 1, models: dict | None = None) -> Report:
    """Train (unless ``models`` given), plan every instance with every method, write the report."""
    if models is None:
        models = train_models(cfg)
    jobs = [(cfg, models, r, i) for r in range(cfg.n_repetitions) for i in range(cfg.n_instances)]
    report = Report()
    for recs in parallel_map(plan_instance, jobs, threads):
        for r in recs:
            report.add(r)
    if out_dir is not None:
        report.write(Path(out_dir))
    return report

