"""Multi-modality check: Multi-StochGPMP plans around a two-disc corridor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import RngStream, State, TimeGrid
from ..costs import Objective, SphereObstacles
from ..environments import CORRIDOR_GOAL, CORRIDOR_START, corridor_environment, homotopy_class, success_metric
from ..gp import GPConfig
from ..planners import PlannerConfig, PlanningProblem, multi_stochgpmp_plan


@dataclass
class CorridorConfig:
    gap: float = 1.0
    radius: float = 2.0
    n_steps: int = 64
    q_c: float = 400.0
    sigma: float = 1e-2
    obstacle_weight: float = 100.0
    obstacle_margin: float = 0.3
    n_samples: int = 32
    step_size: float = 0.5
    iterations: int = 200
    plans: int = 5
    init_scale: float = 4.0

    def planner_config(self) -> PlannerConfig:
        grid = TimeGrid(0.0, 1.0 / self.n_steps, self.n_steps)
        return PlannerConfig(GPConfig(self.sigma, self.sigma, self.q_c, grid), temperature=1.0,
                             step_size=self.step_size, n_samples=self.n_samples, iterations=self.iterations,
                             plans_per_goal=self.plans, init_scale=self.init_scale)


def corridor_classes(seed: int, cfg: CorridorConfig | None = None) -> list:
    """Homotopy classes of the successful plans for one seed (failed plans are dropped)."""
    cfg = cfg or CorridorConfig()
    env = corridor_environment(cfg.gap, cfg.radius)
    goal = State.at_rest(np.array(CORRIDOR_GOAL))
    obj = Objective([SphereObstacles(env.centers, env.radii, eps=cfg.obstacle_margin, weight=cfg.obstacle_weight)])
    problem = PlanningProblem(State.at_rest(np.array(CORRIDOR_START)), [goal], obj, environment=env)
    res = multi_stochgpmp_plan(problem, cfg.planner_config(), RngStream(seed, (30,)))
    classes = []
    for p in range(cfg.plans):
        traj = res.trajectory(0, p)
        if success_metric(traj, env, goal):
            classes.append(homotopy_class(traj.q, env.centers))
    return classes


def multimodality_rate(seeds, cfg: CorridorConfig | None = None) -> tuple[float, list]:
    """Fraction of seeds whose successful plans cover at least two homotopy classes."""
    per_seed = [corridor_classes(s, cfg) for s in seeds]
    hits = [len(set(c)) >= 2 for c in per_seed]
    return float(np.mean(hits)), per_seed
