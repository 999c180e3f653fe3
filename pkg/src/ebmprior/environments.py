"""Obstacle worlds, demonstration data and the navigation success metric.

Experiment I uses square worlds with a few disc obstacles; experiment II uses
a planar-arm scene with a cube to touch and a two-walled cubby to reach into.
Everything is a pure function of (spec, seed).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kinematics as kin
from .core import RngStream, State, TimeGrid, Trajectory, trajectory_from_dict, trajectory_to_dict
from .costs import Objective, SphereObstacles
from .ebm import frame_transform
from .errors import DegenerateEnvironment, DemoGenerationFailure, GenerationFailure, InvalidArgument
from .gp import GPConfig
from .planners import PlannerConfig, PlanningProblem, multi_stochgpmp_plan

START = (-9.0, -9.0)


@dataclass(frozen=True)
class Environment:
    centers: np.ndarray  # (k, 2)
    radii: np.ndarray  # (k,)
    env_id: int = 0
    bounds: tuple = ((-10.0, -10.0), (10.0, 10.0))

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        r = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if len(c) != len(r):
            raise InvalidArgument("one radius per obstacle center")
        if np.any(r <= 0):
            raise InvalidArgument("radii must be positive")
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        if np.any(c < lo) or np.any(c > hi):
            raise InvalidArgument("obstacle center outside the bounds")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)

    @property
    def n_obstacles(self) -> int:
        return len(self.radii)

    def in_collision(self, points) -> np.ndarray:
        """Boolean mask: points (..., 2) inside (or on) an obstacle disc."""
        p = np.asarray(points, dtype=np.float64)
        if self.n_obstacles == 0:
            return np.zeros(p.shape[:-1], dtype=bool)
        dist = np.linalg.norm(p[..., None, :] - self.centers, axis=-1)
        return np.any(dist <= self.radii, axis=-1)

    def to_dict(self) -> dict:
        return {"id": self.env_id, "bounds": [list(self.bounds[0]), list(self.bounds[1])],
                "centers": self.centers.tolist(), "radii": self.radii.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        return cls(np.asarray(d["centers"]).reshape(-1, 2), np.asarray(d["radii"]), int(d["id"]),
                   (tuple(d["bounds"][0]), tuple(d["bounds"][1])))


@dataclass
class EnvSpec:
    n_obstacles: int = 3
    center_range: tuple = (-7.0, 7.0)
    radius_range: tuple = (1.0, 2.0)
    min_separation: float | None = None  # defaults to 2 * r_max
    start: tuple = START
    start_clearance: float = 0.5
    bounds: tuple = ((-10.0, -10.0), (10.0, 10.0))
    max_retries: int = 1000

    @property
    def separation(self) -> float:
        return 2.0 * self.radius_range[1] if self.min_separation is None else self.min_separation


def generate_environment(spec: EnvSpec, rng: RngStream, env_id: int = 0) -> Environment:
    """Obstacles placed one at a time by rejection; the start cell stays free."""
    lo, hi = spec.center_range
    start = np.asarray(spec.start, dtype=np.float64)
    centers, radii = [], []
    tries = 0
    while len(centers) < spec.n_obstacles:
        tries += 1
        if tries > spec.max_retries:
            raise GenerationFailure(f"could not place {spec.n_obstacles} obstacles in env {env_id}")
        c = rng.uniform(lo, hi, 2)
        r = float(rng.uniform(*spec.radius_range))
        if np.linalg.norm(c - start) <= r + spec.start_clearance:
            continue
        if any(np.linalg.norm(c - o) < spec.separation for o in centers):
            continue
        centers.append(c)
        radii.append(r)
    return Environment(np.array(centers).reshape(-1, 2), np.array(radii), env_id, spec.bounds)


def generate_environments(spec: EnvSpec, seed: int, ids) -> list[Environment]:
    """Environments keyed by id: env ``i`` always comes from substream ``i``."""
    root = RngStream(seed, (2,))
    return [generate_environment(spec, root.spawn(int(i)), int(i)) for i in ids]


def sample_free_space_points(env: Environment, n: int, rng: RngStream) -> np.ndarray:
    """Uniform points in the bounds outside every obstacle (rejection sampling)."""
    lo, hi = np.asarray(env.bounds[0], float), np.asarray(env.bounds[1], float)
    batch = max(1024, 2 * n)
    out, drawn, kept = [], 0, 0
    while kept < n:
        pts = rng.uniform(lo, hi, (batch, 2))
        free = pts[~env.in_collision(pts)]
        drawn += batch
        kept += len(free)
        out.append(free)
        if kept / drawn < 0.01:
            raise DegenerateEnvironment(f"free-space acceptance {kept / drawn:.4f} below 1%")
    return np.concatenate(out)[:n]


def sample_goals(env: Environment, n_goals: int, rng: RngStream, extent: float = 9.0) -> list[State]:
    """Goals on the top edge (y=extent) or right edge (x=extent), at rest."""
    if n_goals < 1:
        raise InvalidArgument("n_goals must be >= 1")
    side = rng.integers(0, 2, n_goals)
    u = rng.uniform(-extent, extent, n_goals)
    goals = []
    for s, v in zip(side, u):
        q = np.array([v, extent]) if s == 0 else np.array([extent, v])
        goals.append(State.at_rest(q))
    return goals


def success_metric(traj: Trajectory, env: Environment, goal, radius: float = 1.5) -> bool:
    g = goal.q if isinstance(goal, State) else np.asarray(goal, dtype=np.float64)
    q = traj.q
    if np.linalg.norm(q[-1] - g) > radius:
        return False
    return not bool(np.any(env.in_collision(q)))


# ---------------------------------------------------------------------------
# two-obstacle corridor and homotopy classes

CORRIDOR_START = (-8.0, 0.0)
CORRIDOR_GOAL = (8.0, 0.0)


def corridor_environment(gap: float = 1.0, radius: float = 2.0) -> Environment:
    """Two discs stacked on the y axis, leaving a corridor of width ``gap`` between them."""
    y = radius + gap / 2
    return Environment(np.array([[0.0, y], [0.0, -y]]), np.array([radius, radius]), env_id=0)


def winding_angles(q, centers) -> np.ndarray:
    """Signed angle swept by the path ``q`` (T, 2) around each center."""
    q = np.asarray(q, dtype=np.float64)
    rel = q[None, :, :] - np.asarray(centers, dtype=np.float64).reshape(-1, 1, 2)
    a = np.arctan2(rel[..., 1], rel[..., 0])
    step = np.diff(a, axis=1)
    return np.sum((step + np.pi) % (2 * np.pi) - np.pi, axis=1)


def homotopy_class(q, centers) -> tuple:
    """Winding sign per obstacle; for left-to-right travel -1 passes above, +1 below."""
    return tuple(int(v) for v in np.sign(winding_angles(q, centers)))


# ---------------------------------------------------------------------------
# expert trajectories


@dataclass
class ExpertConfig:
    """Planner settings for demonstrations (inflated exploration, many iterations)."""

    n_steps: int = 64
    horizon: float = 1.0
    sigma_start: float = 1e-2
    sigma_goal: float = 1e-2
    q_c: float = 400.0
    covariance_scale: float = 4.0
    obstacle_weight: float = 100.0
    obstacle_margin: float = 0.3
    temperature: float = 1.0
    step_size: float = 0.5
    n_samples: int = 32
    iterations: int = 500
    plans_per_goal: int = 5
    max_retries: int = 3

    def planner_config(self, plans_per_goal: int | None = None) -> PlannerConfig:
        grid = TimeGrid(0.0, self.horizon / self.n_steps, self.n_steps)
        gp = GPConfig(self.sigma_start, self.sigma_goal, self.q_c * self.covariance_scale**2, grid)
        return PlannerConfig(gp, temperature=self.temperature, step_size=self.step_size,
                             n_samples=self.n_samples, iterations=self.iterations,
                             plans_per_goal=plans_per_goal or self.plans_per_goal, init_scale=1.0)


@dataclass
class Demonstration:
    kind: str  # "free_point" | "trajectory"
    payload: object  # (2,) array or Trajectory
    env_id: int
    goal: np.ndarray | None = None

    def validate(self, env: Environment, radius: float = 1.5) -> bool:
        if self.kind == "free_point":
            return not bool(env.in_collision(np.asarray(self.payload)))
        return success_metric(self.payload, env, self.goal, radius)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "env": self.env_id}
        if self.kind == "free_point":
            d["point"] = list(map(float, self.payload))
        else:
            d["trajectory"] = trajectory_to_dict(self.payload)
            d["goal"] = list(map(float, self.goal))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Demonstration":
        if d["kind"] == "free_point":
            return cls("free_point", np.asarray(d["point"], dtype=np.float64), int(d["env"]))
        return cls("trajectory", trajectory_from_dict(d["trajectory"]), int(d["env"]), np.asarray(d["goal"], float))


def expert_objective(env: Environment, cfg: ExpertConfig) -> Objective:
    return Objective([SphereObstacles(env.centers, env.radii, eps=cfg.obstacle_margin, weight=cfg.obstacle_weight)])


def generate_expert_trajectories_partial(env: Environment, goals: list, cfg: ExpertConfig, rng: RngStream,
                                         start=START) -> tuple[list[Demonstration], list[int]]:
    """Successful plan means for every goal that succeeds, plus the failed goal indices.

    All goals are optimized together; goals short of ``plans_per_goal``
    successful means are re-planned with fresh substreams, at most
    ``max_retries`` times.
    """
    x0 = State.at_rest(np.asarray(start, dtype=np.float64))
    objective = expert_objective(env, cfg)
    need = cfg.plans_per_goal
    kept: dict = {g: [] for g in range(len(goals))}
    pending = list(range(len(goals)))
    pcfg = cfg.planner_config()
    for attempt in range(cfg.max_retries + 1):
        if not pending:
            break
        problem = PlanningProblem(x0, [goals[g] for g in pending], objective)
        res = multi_stochgpmp_plan(problem, pcfg, rng.spawn(attempt))
        still = []
        for j, g in enumerate(pending):
            for p in range(pcfg.plans_per_goal):
                if len(kept[g]) >= need:
                    break
                traj = res.trajectory(j, p)
                if success_metric(traj, env, goals[g]):
                    kept[g].append(traj)
            if len(kept[g]) < need:
                still.append(g)
        pending = still
    demos = []
    for g in range(len(goals)):
        if g in pending:
            continue
        for traj in kept[g]:
            demos.append(Demonstration("trajectory", traj, env.env_id, goals[g].q.copy()))
    return demos, pending


def generate_expert_trajectories(env: Environment, goals: list, cfg: ExpertConfig, rng: RngStream,
                                 start=START) -> list[Demonstration]:
    """``plans_per_goal`` successful plan means per goal; raises if a goal keeps failing."""
    demos, failed = generate_expert_trajectories_partial(env, goals, cfg, rng, start)
    if failed:
        raise DemoGenerationFailure(failed[0], cfg.max_retries + 1)
    return demos


# ---------------------------------------------------------------------------
# dataset files


def save_dataset(path, spec: dict, seed: int, envs: list[Environment], records: dict) -> None:
    """Directory layout: ``manifest.json`` plus ``env_<id>.json`` per environment."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    counts = {str(k): len(v) for k, v in records.items()}
    manifest = {"spec": spec, "seed": seed, "counts": counts, "envs": [e.env_id for e in envs]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    for env in envs:
        body = {"environment": env.to_dict(), "records": [d.to_dict() for d in records.get(env.env_id, [])]}
        (out / f"env_{env.env_id}.json").write_text(json.dumps(body, sort_keys=True))


def load_dataset(path, validate: bool = True):
    """Returns (manifest, environments, {env_id: [Demonstration]})."""
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    envs, records = [], {}
    for eid in manifest["envs"]:
        body = json.loads((root / f"env_{eid}.json").read_text())
        env = Environment.from_dict(body["environment"])
        demos = [Demonstration.from_dict(d) for d in body["records"]]
        if validate:
            for d in demos:
                if not d.validate(env):
                    raise InvalidArgument(f"demonstration in env {eid} fails validation")
        envs.append(env)
        records[eid] = demos
    return manifest, envs, records


# ---------------------------------------------------------------------------
# experiment II scene


def _wall_spheres(length: float, y: float, radius: float) -> np.ndarray:
    n = max(2, int(np.ceil(length / radius)) + 1)
    xs = np.linspace(-length / 2, length / 2, n)
    return np.stack([xs, np.full(n, y)], axis=1)


@dataclass
class GraspInsertScene:
    """Arm, a cube to touch, a two-walled cubby to reach into, fixed obstacles.

    Poses are (x, y, heading).  The cubby frame's +x axis points into the
    cubby from its opening; the walls run along x at y = +-width/2.
    """

    cube_pose: tuple
    cubby_pose: tuple
    arm: kin.PlanarArm = field(default_factory=lambda: kin.PlanarArm((0.6, 0.5, 0.4)))
    cube_size: float = 0.12
    cubby_width: float = 0.3
    cubby_depth: float = 0.3
    wall_radius: float = 0.03
    obstacles: tuple = (((0.95, 0.0), 0.1),)
    start_q: tuple = (2.2, -1.6, -0.6)

    def __post_init__(self):
        if not self.cubby_width > self.cube_size:
            raise InvalidArgument("cubby opening must be wider than the cube")
        reach = self.arm.reach
        if np.hypot(*self.cube_pose[:2]) > reach:
            raise InvalidArgument("cube out of reach")

    def wall_centers(self) -> np.ndarray:
        """Sphere centers approximating both cubby walls, world frame."""
        w = self.cubby_width / 2 + self.wall_radius
        local = np.vstack([_wall_spheres(self.cubby_depth, w, self.wall_radius),
                           _wall_spheres(self.cubby_depth, -w, self.wall_radius)])
        x, y, th = self.cubby_pose
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        return local @ R.T + np.array([x, y])

    def collision_spheres(self) -> tuple[np.ndarray, np.ndarray]:
        walls = self.wall_centers()
        oc = np.array([o[0] for o in self.obstacles]).reshape(-1, 2)
        orad = np.array([o[1] for o in self.obstacles]).reshape(-1)
        centers = np.vstack([walls, oc])
        radii = np.concatenate([np.full(len(walls), self.wall_radius), orad])
        return centers, radii

    @property
    def cubby_center(self) -> np.ndarray:
        return np.asarray(self.cubby_pose[:2], dtype=np.float64)

    def in_cube_frame(self, points) -> np.ndarray:
        return frame_transform(points, self.cube_pose)

    def in_cubby_frame(self, points) -> np.ndarray:
        return frame_transform(points, self.cubby_pose)

    def edge_distance(self, points) -> np.ndarray:
        """Distance from points to the cube boundary (0 on an edge)."""
        p = np.abs(self.in_cube_frame(points))
        h = self.cube_size / 2
        outside = np.linalg.norm(np.maximum(p - h, 0.0), axis=-1)
        inside = np.minimum(h - p[..., 0], h - p[..., 1])
        return np.where(np.all(p <= h, axis=-1), inside, outside)

    def inside_cubby(self, points) -> np.ndarray:
        p = self.in_cubby_frame(points)
        return (np.abs(p[..., 0]) <= self.cubby_depth / 2) & (np.abs(p[..., 1]) <= self.cubby_width / 2)

    def collides(self, q, spacing: float = 0.05) -> np.ndarray:
        """Arm-body collision with walls and obstacles, per configuration."""
        pts = kin.body_points(self.arm, q, spacing)
        centers, radii = self.collision_spheres()
        dist = np.linalg.norm(pts[..., None, :] - centers, axis=-1)
        return np.any(dist <= radii, axis=(-1, -2))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arm"] = self.arm.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GraspInsertScene":
        d = dict(d)
        d["arm"] = kin.PlanarArm.from_dict(d["arm"])
        d["obstacles"] = tuple((tuple(c), r) for c, r in d["obstacles"])
        for k in ("cube_pose", "cubby_pose", "start_q"):
            d[k] = tuple(d[k])
        return cls(**d)


def sample_scene(rng: RngStream, cube_radius=(0.8, 1.05), cube_angle=(0.45, 1.2),
                 cubby_radius=(0.85, 1.05), cubby_angle=(-1.1, -0.5)) -> GraspInsertScene:
    """Random cube/cubby placement; the cubby opening faces the arm base."""
    r, a = rng.uniform(*cube_radius), rng.uniform(*cube_angle)
    cube = (r * np.cos(a), r * np.sin(a), float(rng.uniform(-np.pi, np.pi)))
    r2, a2 = rng.uniform(*cubby_radius), rng.uniform(*cubby_angle)
    cubby = (r2 * np.cos(a2), r2 * np.sin(a2), float(a2))
    return GraspInsertScene(tuple(map(float, cube)), tuple(map(float, cubby)))


def grasp_band_points(scene: GraspInsertScene, per_edge: int, rng: RngStream, band: float = 0.05) -> np.ndarray:
    """Points in bands of width ``band`` just outside each of the cube's four edges (world frame)."""
    h = scene.cube_size / 2
    pts = []
    for k in range(4):
        s = rng.uniform(-h, h, per_edge)
        o = h + rng.uniform(0.0, band, per_edge)
        local = np.stack([o, s], axis=1)
        th = k * np.pi / 2
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        pts.append(local @ R.T)
    local = np.vstack(pts)
    x, y, th = scene.cube_pose
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    return local @ R.T + np.array([x, y])


@dataclass
class InsertDataConfig:
    n_starts: int = 32
    trajs_per_start: int = 8
    n_steps: int = 32
    q_c: float = 2.0
    sigma: float = 1e-2
    wall_weight: float = 200.0
    wall_margin: float = 0.03
    iterations: int = 150
    n_samples: int = 32
    start_box: tuple = ((-0.8, -0.45), (-0.3, 0.45))  # cubby frame


def insert_trajectories(scene: GraspInsertScene, cfg: InsertDataConfig, rng: RngStream) -> list[Trajectory]:
    """End-effector point paths into the cubby (world frame), collision-free against the walls."""
    grid = TimeGrid(0.0, 1.0 / cfg.n_steps, cfg.n_steps)
    pcfg = PlannerConfig(GPConfig(cfg.sigma, cfg.sigma, cfg.q_c, grid), n_samples=cfg.n_samples,
                         iterations=cfg.iterations, plans_per_goal=cfg.trajs_per_start, init_scale=1.0)
    walls = scene.wall_centers()
    wall_r = np.full(len(walls), scene.wall_radius)
    objective = Objective([SphereObstacles(walls, wall_r, eps=cfg.wall_margin, weight=cfg.wall_weight)])
    x, y, th = scene.cubby_pose
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    lo, hi = np.asarray(cfg.start_box[0]), np.asarray(cfg.start_box[1])
    goal = State.at_rest(scene.cubby_center)
    out = []
    for i in range(cfg.n_starts):
        sub = rng.spawn(i)
        start_local = sub.uniform(lo, hi, 2)
        start = State.at_rest(start_local @ R.T + np.array([x, y]))
        res = multi_stochgpmp_plan(PlanningProblem(start, [goal], objective), pcfg, sub.spawn(1))
        for p in range(pcfg.plans_per_goal):
            traj = res.trajectory(0, p)
            d = np.linalg.norm(traj.q[:, None, :] - walls, axis=-1)
            if np.all(d > wall_r):
                out.append(traj)
    if not out:
        raise DemoGenerationFailure(0, cfg.n_starts)
    return out


def generate_grasp_insert_datasets(scene: GraspInsertScene, rng: RngStream, per_edge: int = 1000,
                                   insert_cfg: InsertDataConfig | None = None):
    """(grasp points (4*per_edge, 2), insert trajectories) in world frame for ``scene``."""
    grasp = grasp_band_points(scene, per_edge, rng.spawn(0))
    inserts = insert_trajectories(scene, insert_cfg or InsertDataConfig(), rng.spawn(1))
    return grasp, inserts
