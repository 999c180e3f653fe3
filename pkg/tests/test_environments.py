import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebmprior import kinematics as kin
from ebmprior.core import RngStream, State, Trajectory, build_time_grid
from ebmprior.environments import (
    START,
    Demonstration,
    EnvSpec,
    Environment,
    ExpertConfig,
    GraspInsertScene,
    InsertDataConfig,
    corridor_environment,
    generate_environment,
    generate_environments,
    generate_expert_trajectories,
    generate_grasp_insert_datasets,
    homotopy_class,
    load_dataset,
    sample_free_space_points,
    sample_goals,
    sample_scene,
    save_dataset,
    success_metric,
    winding_angles,
)
from ebmprior.errors import DegenerateEnvironment, DemoGenerationFailure, GenerationFailure, InvalidArgument


def _line(a, b, n=20):
    t = np.linspace(0, 1, n + 1)[:, None]
    q = np.asarray(a) + t * (np.asarray(b) - np.asarray(a))
    return Trajectory(build_time_grid(0, 1 / n, n), np.hstack([q, np.zeros_like(q)]))


@given(st.integers(0, 2**32))
def test_generated_environment_invariants(seed):
    spec = EnvSpec()
    env = generate_environment(spec, RngStream(seed), 5)
    assert env.n_obstacles == 3 and env.env_id == 5
    assert np.all((env.centers >= -7) & (env.centers <= 7))
    assert np.all((env.radii >= 1) & (env.radii <= 2))
    for i in range(3):
        for j in range(i):
            assert np.linalg.norm(env.centers[i] - env.centers[j]) >= 4.0
    assert not env.in_collision(np.array(START))


def test_environment_determinism_and_speed():
    t0 = time.perf_counter()
    a = generate_environments(EnvSpec(), 3, range(512))
    assert time.perf_counter() - t0 < 1.0
    b = generate_environments(EnvSpec(), 3, [7, 100])
    np.testing.assert_array_equal(a[7].centers, b[0].centers)
    np.testing.assert_array_equal(a[100].radii, b[1].radii)


def test_generation_failure():
    spec = EnvSpec(n_obstacles=30, max_retries=200)
    with pytest.raises(GenerationFailure):
        generate_environment(spec, RngStream(0))


def test_environment_validation():
    with pytest.raises(InvalidArgument):
        Environment(np.array([[0.0, 0.0]]), np.array([-1.0]))
    with pytest.raises(InvalidArgument):
        Environment(np.array([[20.0, 0.0]]), np.array([1.0]))


def test_free_space_points():
    env = generate_environment(EnvSpec(), RngStream(1))
    pts = sample_free_space_points(env, 1024, RngStream(2))
    assert pts.shape == (1024, 2)
    d = np.linalg.norm(pts[:, None] - env.centers, axis=-1)
    assert np.all(d > env.radii)
    empty = Environment(np.zeros((0, 2)), np.zeros(0))
    assert sample_free_space_points(empty, 10, RngStream(0)).shape == (10, 2)
    blocked = Environment(np.zeros((1, 2)), np.array([14.2]))
    with pytest.raises(DegenerateEnvironment):
        sample_free_space_points(blocked, 10, RngStream(0))


def test_goals_on_segments():
    env = generate_environment(EnvSpec(), RngStream(1))
    goals = sample_goals(env, 15, RngStream(3))
    assert len(goals) == 15
    for g in goals:
        x, y = g.q
        on_top = y == 9 and -9 <= x <= 9
        on_right = x == 9 and -9 <= y <= 9
        assert on_top or on_right
        assert not np.any(g.qdot)
    again = sample_goals(env, 15, RngStream(3))
    assert all(np.array_equal(a.q, b.q) for a, b in zip(goals, again))


def test_success_metric_examples():
    env = Environment(np.array([[0.0, 0.0]]), np.array([1.0]))
    assert not success_metric(_line([-5, 0], [5, 0]), env, [5, 0])
    empty = Environment(np.zeros((0, 2)), np.zeros(0))
    assert success_metric(_line([3, 3], [3, 3]), empty, [3, 3])
    assert success_metric(_line([0, 0], [4, 0]), empty, [5, 0], radius=1.5)
    assert not success_metric(_line([0, 0], [3, 0]), empty, [5, 0], radius=1.5)


def test_expert_trajectories_succeed():
    env = generate_environment(EnvSpec(), RngStream(4))
    goals = sample_goals(env, 2, RngStream(5))
    cfg = ExpertConfig(iterations=80, plans_per_goal=2)
    demos = generate_expert_trajectories(env, goals, cfg, RngStream(6))
    assert len(demos) == 4
    for d in demos:
        assert d.payload.grid.n_steps == 64
        assert d.validate(env)


def test_expert_failure_raises():
    # goal buried inside an obstacle can never succeed
    env = Environment(np.array([[9.0, 9.0]]), np.array([1.0]))
    cfg = ExpertConfig(iterations=5, plans_per_goal=1, max_retries=1)
    with pytest.raises(DemoGenerationFailure) as err:
        generate_expert_trajectories(env, [State.at_rest(np.array([9.0, 9.0]))], cfg, RngStream(0))
    assert err.value.attempts == 2


def test_dataset_roundtrip_and_validation(tmp_path):
    env = generate_environment(EnvSpec(), RngStream(1), env_id=3)
    pts = sample_free_space_points(env, 8, RngStream(2))
    recs = {3: [Demonstration("free_point", p, 3) for p in pts]}
    save_dataset(tmp_path / "a", {"k": 1}, 0, [env], recs)
    save_dataset(tmp_path / "b", {"k": 1}, 0, [env], recs)
    for f in ("manifest.json", "env_3.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    manifest, envs, back = load_dataset(tmp_path / "a")
    assert manifest["counts"] == {"3": 8}
    np.testing.assert_array_equal(np.array([d.payload for d in back[3]]), pts)
    # a point moved inside an obstacle must fail validation on load
    bad = {3: [Demonstration("free_point", env.centers[0], 3)]}
    save_dataset(tmp_path / "c", {}, 0, [env], bad)
    with pytest.raises(InvalidArgument):
        load_dataset(tmp_path / "c")


def test_corridor_classes():
    env = corridor_environment()
    t = np.linspace(0, 1, 50)
    above = np.stack([-8 + 16 * t, 6 * np.sin(np.pi * t)], axis=1)
    between = np.stack([-8 + 16 * t, 0 * t], axis=1)
    assert homotopy_class(above, env.centers) == (-1, -1)
    assert homotopy_class(above * [1, -1], env.centers) == (1, 1)
    assert homotopy_class(between, env.centers) == (1, -1)
    # a full loop around an obstacle sweeps 2 pi
    th = np.linspace(0, 2 * np.pi, 100)
    loop = env.centers[0] + 3 * np.stack([np.cos(th), np.sin(th)], axis=1)
    assert winding_angles(loop, env.centers[:1])[0] == pytest.approx(2 * np.pi)


@given(st.integers(0, 2**32))
def test_scene_invariants(seed):
    scene = sample_scene(RngStream(seed))
    assert scene.cubby_width > scene.cube_size
    assert np.hypot(*scene.cube_pose[:2]) <= scene.arm.reach
    assert scene.inside_cubby(scene.cubby_center)
    assert scene.edge_distance(np.array(scene.cube_pose[:2]) + [0, 0]) == pytest.approx(scene.cube_size / 2)
    assert not scene.collides(np.array(scene.start_q))
    assert GraspInsertScene.from_dict(scene.to_dict()) == scene


def test_grasp_insert_datasets():
    scene = sample_scene(RngStream(2))
    cfg = InsertDataConfig(n_starts=3, trajs_per_start=2, iterations=40)
    grasp, inserts = generate_grasp_insert_datasets(scene, RngStream(3), per_edge=50, insert_cfg=cfg)
    assert grasp.shape == (200, 2)
    assert np.all(scene.edge_distance(grasp) <= 0.05 + 1e-12)
    assert inserts
    walls = scene.wall_centers()
    for t in inserts:
        assert np.all(np.linalg.norm(t.q[:, None] - walls, axis=-1) > scene.wall_radius)
        np.testing.assert_allclose(t.q[-1], scene.cubby_center, atol=0.05)


def test_wall_spheres_cover_walls():
    scene = GraspInsertScene((0.9, 0.3, 0.0), (0.9, -0.5, 0.0), kin.PlanarArm((0.6, 0.5, 0.4)))
    w = scene.wall_centers()
    gaps = np.linalg.norm(np.diff(w[: len(w) // 2], axis=0), axis=1)
    assert np.all(gaps <= 2 * scene.wall_radius + 1e-12)
