import numpy as np
import pytest
from fd import central_diff
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ebmprior import kinematics as kin
from ebmprior.core import RngStream
from ebmprior.errors import IKFailure, InvalidArgument

angles = st.floats(-np.pi, np.pi)


def test_fk_examples():
    arm = kin.PlanarArm((1.0, 1.0))
    np.testing.assert_allclose(kin.end_effector(arm, [0.0, 0.0]), [2.0, 0.0])
    np.testing.assert_allclose(kin.end_effector(arm, [np.pi / 2, 0.0]), [0.0, 2.0], atol=1e-15)
    joints, heading = kin.fk(arm, [np.pi / 2, -np.pi / 2])
    np.testing.assert_allclose(joints, [[0, 0], [0, 1], [1, 1]], atol=1e-15)
    assert heading == pytest.approx(0.0)


def test_arm_validation():
    with pytest.raises(InvalidArgument):
        kin.PlanarArm(())
    with pytest.raises(InvalidArgument):
        kin.PlanarArm((1.0, -0.5))
    with pytest.raises(InvalidArgument):
        kin.fk(kin.PlanarArm((1.0,)), [0.0, 0.0])


@given(arrays(np.float64, 3, elements=angles), st.integers(-3, 3), st.integers(0, 2))
def test_fk_periodic_and_within_reach(q, k, j):
    arm = kin.PlanarArm((0.6, 0.5, 0.4), (0.3, -0.2, 0.5))
    ee = kin.end_effector(arm, q)
    q2 = q.copy()
    q2[j] += 2 * np.pi * k
    np.testing.assert_allclose(kin.end_effector(arm, q2), ee, atol=1e-12)
    assert np.linalg.norm(ee - [0.3, -0.2]) <= arm.reach + 1e-12


def test_jacobian_examples():
    J = kin.jacobian(kin.PlanarArm((1.0,)), [0.0])
    np.testing.assert_allclose(J, [[0.0], [1.0]])
    # folded 2-link arm: the end-effector sits on the base joint, so column 0 vanishes
    J = kin.jacobian(kin.PlanarArm((1.0, 1.0)), [0.0, np.pi])
    np.testing.assert_allclose(J[:, 0], 0.0, atol=1e-15)


def test_jacobian_fd_100_configs():
    arm = kin.PlanarArm((0.6, 0.5, 0.4), (0.1, 0.2, 0.3))
    rng = RngStream(0)
    for _ in range(100):
        q = rng.uniform(-np.pi, np.pi, 3)
        fd = np.stack([central_diff(lambda x: kin.end_effector(arm, x)[i], q, h=1e-6) for i in range(2)])
        assert np.max(np.abs(kin.jacobian(arm, q) - fd)) <= 1e-7


def test_point_jacobians_fd():
    arm = kin.PlanarArm((0.6, 0.5, 0.4))
    links, fracs = kin.body_point_layout(arm, 0.2)
    q = np.array([0.4, -1.1, 0.7])
    pts, J = kin.point_jacobians(arm, q, links, fracs)
    for p in range(len(links)):
        fd = np.stack([central_diff(lambda x: kin.point_jacobians(arm, x, links, fracs)[0][p, i], q)
                       for i in range(2)])
        np.testing.assert_allclose(J[p], fd, atol=1e-7)


def test_ik_examples():
    arm = kin.PlanarArm((1.0, 1.0))
    q = kin.ik(arm, [2.0, 0.0], [0.1, 0.1], tol=1e-4)
    assert np.linalg.norm(kin.end_effector(arm, q) - [2, 0]) <= 1e-4
    np.testing.assert_allclose(q, [0.0, 0.0], atol=2e-2)
    q = kin.ik(arm, [0.0, 0.0], [0.3, 2.5])
    assert np.linalg.norm(kin.end_effector(arm, q)) <= 1e-6
    assert abs(abs(q[1]) - np.pi) <= 1e-5  # analytic solution is the folded elbow
    with pytest.raises(IKFailure) as err:
        kin.ik(arm, [3.0, 0.0], [0.0, 0.0])
    assert err.value.residual == pytest.approx(1.0)


@given(arrays(np.float64, 3, elements=angles), arrays(np.float64, 3, elements=st.floats(-0.3, 0.3)))
def test_ik_roundtrip(q_true, perturb):
    arm = kin.PlanarArm((0.6, 0.5, 0.4))
    target = kin.end_effector(arm, q_true)
    q = kin.ik(arm, target, q_true + perturb)
    assert np.linalg.norm(kin.end_effector(arm, q) - target) <= 1e-6
    assert np.all(q > -np.pi) and np.all(q <= np.pi)


def test_body_points_examples():
    one = kin.PlanarArm((1.0,))
    assert len(kin.body_points(one, [0.3], 0.5)) == 3
    assert len(kin.body_points(one, [0.3], 2.0)) == 2
    with pytest.raises(InvalidArgument):
        kin.body_points(one, [0.0], 0.0)


@given(arrays(np.float64, 3, elements=angles), st.floats(0.05, 1.0))
def test_body_points_on_links(q, spacing):
    arm = kin.PlanarArm((0.6, 0.5, 0.4))
    joints, _ = kin.fk(arm, q)
    links, fracs = kin.body_point_layout(arm, spacing)
    pts = kin.body_points(arm, q, spacing)
    for p, k in zip(pts, links):
        a, b = joints[k], joints[k + 1]
        # distance from p to segment ab
        t = np.clip((p - a) @ (b - a) / ((b - a) @ (b - a)), 0, 1)
        assert np.linalg.norm(a + t * (b - a) - p) <= 1e-12
    for k, length in enumerate(arm.link_lengths):
        f = np.sort(fracs[links == k])
        assert f[0] == 0 and f[-1] == 1
        assert np.max(np.diff(f)) * length <= spacing + 1e-12


def test_velocity_ik():
    arm = kin.PlanarArm((1.0, 1.0))
    q = np.array([0.3, 0.9])
    v = np.array([0.2, -0.1])
    qd = kin.velocity_ik(arm, q, v, damping=1e-6)
    np.testing.assert_allclose(kin.jacobian(arm, q) @ qd, v, atol=1e-9)
