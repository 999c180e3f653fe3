"""Experiment configurations (dataclasses) and their JSON round trip."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..core import TimeGrid
from ..ebm import TrainConfig
from ..environments import EnvSpec, ExpertConfig, InsertDataConfig
from ..errors import ConfigInvalid
from ..gp import GPConfig
from ..planners import PlannerConfig


@dataclass
class PlanSettings:
    """StochGPMP settings used at evaluation time."""

    n_steps: int = 64
    horizon: float = 1.0
    sigma_start: float = 1e-2
    sigma_goal: float = 1e-2
    q_c: float = 400.0
    temperature: float = 1.0
    step_size: float = 0.5
    n_samples: int = 32
    plans_per_goal: int = 3
    init_scale: float = 4.0
    ebm_weight: float = 1.0
    ebm_stride: int = 4  # learned energy evaluated on every k-th support state

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.horizon / self.n_steps, self.n_steps)

    def gp(self) -> GPConfig:
        return GPConfig(self.sigma_start, self.sigma_goal, self.q_c, self.grid)

    def planner_config(self, iterations: int) -> PlannerConfig:
        return PlannerConfig(self.gp(), temperature=self.temperature, step_size=self.step_size,
                             n_samples=self.n_samples, iterations=iterations,
                             plans_per_goal=self.plans_per_goal, init_scale=self.init_scale)

    def ebm_steps(self) -> list:
        steps = list(range(0, self.n_steps + 1, self.ebm_stride))
        if steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return steps


def _exp1_train() -> TrainConfig:
    return TrainConfig(iterations=2000, hidden=128, learning_rate=3e-3, energy_reg=0.01, dsm_scale="sigma")


def _bc_train() -> TrainConfig:
    return TrainConfig(iterations=2000, hidden=128, learning_rate=1e-3)


@dataclass
class GradientSettings:
    """Secondary exp1 mode: tempered gradient descent with known obstacles."""

    enabled: bool = False
    particles: int = 4
    iterations: int = 25
    learning_rate: float = 0.05
    clip_norm: float = 50.0
    prior_weight_max: float = 1.0
    obstacle_weight: float = 10.0
    n_eval_envs: int = 8


@dataclass
class Exp1Config:
    experiment: str = "exp1"
    seed: int = 0
    n_train_envs: int = 64
    n_eval_envs: int = 32
    eval_id_offset: int = 1000
    n_goals: int = 15
    free_points: int = 1024
    budgets: tuple = (0, 5, 10, 25, 50)
    methods: tuple = ("ebm_expert", "ebm_free", "bc")
    env: EnvSpec = field(default_factory=EnvSpec)
    expert: ExpertConfig = field(default_factory=lambda: ExpertConfig(iterations=300))
    train: TrainConfig = field(default_factory=_exp1_train)
    bc_train: TrainConfig = field(default_factory=_bc_train)
    planner: PlanSettings = field(default_factory=PlanSettings)
    gradient: GradientSettings = field(default_factory=GradientSettings)

    def __post_init__(self):
        if min(self.n_train_envs, self.n_eval_envs, self.n_goals, self.free_points) < 1:
            raise ConfigInvalid("all counts must be >= 1")
        b = [int(x) for x in self.budgets]
        if b != sorted(b) or len(set(b)) != len(b) or b[0] < 0:
            raise ConfigInvalid("budgets must be distinct, non-negative and ascending")
        self.budgets = tuple(b)
        self.methods = tuple(self.methods)

    @property
    def train_ids(self) -> list:
        return list(range(self.n_train_envs))

    @property
    def eval_ids(self) -> list:
        return list(range(self.eval_id_offset, self.eval_id_offset + self.n_eval_envs))


def _exp2_train() -> TrainConfig:
    return TrainConfig(iterations=1500, hidden=64, learning_rate=3e-3, energy_reg=0.01,
                       dsm_scale="sigma", dsm_sigma=0.1)


@dataclass
class Exp2Config:
    experiment: str = "exp2"
    seed: int = 0
    n_instances: int = 10
    n_repetitions: int = 4
    n_steps: int = 80
    budgets: tuple = (50, 100)
    grasp_per_edge: int = 1000
    band: float = 0.05
    grasp_step: float = 0.5  # fraction of the horizon where the touch is expected
    grasp_window: float = 0.25  # grasp energy applied on [grasp_step +- window/2]
    insert_from: float = 0.6  # insert energy applied from this fraction on
    q_c: float = 4.0
    sigma: float = 1e-2
    temperature: float = 1.0
    step_size: float = 0.5
    n_samples: int = 32
    plans_per_goal: int = 3
    init_scale: float = 2.0
    grasp_weight: float = 1.0
    insert_weight: float = 1.0
    potential_weight: float = 100.0
    collision_weight: float = 1000.0
    joint_limit_weight: float = 10.0
    insert: InsertDataConfig = field(default_factory=InsertDataConfig)
    train: TrainConfig = field(default_factory=_exp2_train)
    bc_train: TrainConfig = field(default_factory=_bc_train)

    def __post_init__(self):
        if min(self.n_instances, self.n_repetitions, self.n_steps) < 1:
            raise ConfigInvalid("all counts must be >= 1")
        b = [int(x) for x in self.budgets]
        if b != sorted(b):
            raise ConfigInvalid("budgets must be ascending")
        self.budgets = tuple(b)


CONFIGS = {"exp1": Exp1Config, "exp2": Exp2Config}


def _build(cls, data: dict):
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    for key, value in data.items():
        if key not in names:
            raise ConfigInvalid(f"unknown {cls.__name__} key {key!r}")
        current = getattr(defaults, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            base = dataclasses.asdict(current)
            base.update(value)
            kwargs[key] = _build(type(current), base)
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict):
    kind = data.get("experiment", "exp1")
    if kind not in CONFIGS:
        raise ConfigInvalid(f"unknown experiment {kind!r}")
    return _build(CONFIGS[kind], data)


def load_config(path=None, experiment: str = "exp1"):
    if path is None:
        return CONFIGS[experiment]()
    return config_from_dict(json.loads(Path(path).read_text()))


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
