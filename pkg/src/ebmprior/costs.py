"""Elementary trajectory cost terms and their weighted sum.

Terms work on batches of trajectories given as states arrays of shape
``(B, N+1, 2d)``.  Task-space terms take an optional ``arm``; without one the
configuration itself is the task-space point (planar navigation).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import kinematics as kin
from .core import Trajectory
from .errors import InvalidArgument, UnsupportedTerm
from .gp import GPPrior


# ---------------------------------------------------------------------------
# scalar building blocks


def joint_limit_cost(traj: Trajectory, q_min, q_max) -> float:
    return float(JointLimit(q_min, q_max).values(traj.states[None])[0])


def sphere_obstacle_cost(points, centers, radii, eps: float = 0.1) -> float:
    """Penetration penalty of ``points`` (..., 2|3) against spheres."""
    pts = np.asarray(points, dtype=np.float64)
    pts = pts.reshape(-1, pts.shape[-1])
    val, _ = _sphere_penalty(pts, np.asarray(centers, dtype=np.float64), np.asarray(radii, dtype=np.float64), eps)
    return float(val.sum())


def sphere_obstacle_point_grad(points, centers, radii, eps: float = 0.1) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    shape = pts.shape
    _, g = _sphere_penalty(pts.reshape(-1, shape[-1]), np.asarray(centers, float), np.asarray(radii, float), eps)
    return g.reshape(shape)


def pose_potential(point, target) -> float:
    diff = np.asarray(point, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return 0.5 * float(diff @ diff)


def smoothness_cost(traj: Trajectory) -> float:
    return float(Smoothness().values(traj.states[None])[0])


def gp_factor_cost(prior: GPPrior, traj: Trajectory) -> float:
    if traj.grid != prior.grid or traj.dim != prior.dim:
        raise InvalidArgument("trajectory grid/dimension does not match the prior")
    return float(GPFactor(prior).values(traj.states[None])[0])


def _sphere_penalty(pts: np.ndarray, centers: np.ndarray, radii: np.ndarray, eps: float, with_grad: bool = True):
    """Per-point penalty (M,) and, optionally, its gradient (M, k)."""
    if centers.size == 0:
        return np.zeros(pts.shape[0]), (np.zeros_like(pts) if with_grad else None)
    if len(centers) > 4:
        # only points inside the bounding ball of all inflated spheres can be penalized
        mid = centers.mean(axis=0)
        reach = np.max(np.linalg.norm(centers - mid, axis=1) + radii) + eps
        near = np.einsum("mk,mk->m", pts - mid, pts - mid) < reach**2
        if not np.all(near):
            val = np.zeros(pts.shape[0])
            grad = np.zeros_like(pts) if with_grad else None
            if np.any(near):
                v, g = _dense_penalty(pts[near], centers, radii, eps, with_grad)
                val[near] = v
                if with_grad:
                    grad[near] = g
            return val, grad
    return _dense_penalty(pts, centers, radii, eps, with_grad)


def _dense_penalty(pts, centers, radii, eps, with_grad):
    # squared distances through the expansion |p|^2 - 2 p.c + |c|^2 (no (M, C, k) temporary)
    d2 = np.einsum("mk,mk->m", pts, pts)[:, None] - 2.0 * (pts @ centers.T) + np.einsum("ck,ck->c", centers, centers)
    dist = np.sqrt(np.maximum(d2, 0.0))
    pen = np.maximum(radii + eps - dist, 0.0)
    val = np.einsum("mc,mc->m", pen, pen)
    if not with_grad:
        return val, None
    scale = np.divide(-2.0 * pen, dist, out=np.zeros_like(dist), where=dist > 0)
    return val, scale.sum(axis=1)[:, None] * pts - scale @ centers


# ---------------------------------------------------------------------------
# terms


class EnergyField(Protocol):
    """Learned energy over task-space points ``(B, T, k)``; ``energy_batch``
    returns ``(B, T)`` (per-step) or ``(B,)`` (whole path)."""

    def energy_batch(self, points: np.ndarray) -> np.ndarray: ...

    def grad_batch(self, points: np.ndarray) -> np.ndarray: ...


def _steps(steps, T: int) -> np.ndarray:
    if steps is None:
        return np.arange(T)
    idx = np.atleast_1d(np.asarray(steps, dtype=int))
    return np.where(idx < 0, idx + T, idx)


class CostTerm:
    kind = "abstract"
    weight: float = 1.0

    def values(self, S: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grads(self, S: np.ndarray) -> np.ndarray:
        raise UnsupportedTerm(f"{self.kind} has no gradient support")


def _task_points(arm, S: np.ndarray, d: int, idx: np.ndarray):
    """End-effector (or particle) positions at steps ``idx`` and their Jacobians."""
    q = S[:, idx, :d]
    if arm is None:
        return q, None
    pts, J = kin.point_jacobians(arm, q, np.array([arm.n_links - 1]), np.array([1.0]))
    return pts[..., 0, :], J[..., 0, :, :]


@dataclass
class JointLimit(CostTerm):
    q_min: np.ndarray
    q_max: np.ndarray
    weight: float = 1.0
    kind = "joint_limit"

    def __post_init__(self):
        self.q_min = np.asarray(self.q_min, dtype=np.float64)
        self.q_max = np.asarray(self.q_max, dtype=np.float64)
        if np.any(self.q_min > self.q_max):
            raise InvalidArgument("q_min exceeds q_max")

    def _q(self, S):
        d = S.shape[-1] // 2
        if self.q_min.size not in (1, d):
            raise InvalidArgument("joint limits do not match the configuration dimension")
        return S[..., :d]

    def values(self, S):
        q = self._q(S)
        return np.sum(np.maximum(q - self.q_max, 0) + np.maximum(self.q_min - q, 0), axis=(-1, -2))

    def grads(self, S):
        q = self._q(S)
        g = np.zeros_like(S)
        d = q.shape[-1]
        g[..., :d] = (q > self.q_max).astype(float) - (q < self.q_min).astype(float)
        return g


@dataclass
class SphereObstacles(CostTerm):
    centers: np.ndarray
    radii: np.ndarray
    eps: float = 0.1
    weight: float = 1.0
    arm: kin.PlanarArm | None = None
    spacing: float = 0.1
    kind = "sphere_obstacle"

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if np.any(self.radii <= 0):
            raise InvalidArgument("obstacle radii must be positive")
        if self.arm is not None:
            self._layout = kin.body_point_layout(self.arm, self.spacing)

    def _points(self, S, with_jac: bool = True):
        d = S.shape[-1] // 2
        q = S[..., :d]
        if self.arm is None:
            return q[..., None, :], None
        if not with_jac:
            return kin.body_points(self.arm, q, self.spacing), None
        return kin.point_jacobians(self.arm, q, *self._layout)

    def values(self, S):
        pts, _ = self._points(S, with_jac=False)
        val, _ = _sphere_penalty(pts.reshape(-1, 2), self.centers, self.radii, self.eps, with_grad=False)
        return val.reshape(pts.shape[:-1]).sum(axis=(-1, -2))

    def grads(self, S):
        pts, J = self._points(S)
        _, gp = _sphere_penalty(pts.reshape(-1, 2), self.centers, self.radii, self.eps)
        gp = gp.reshape(pts.shape)
        d = S.shape[-1] // 2
        g = np.zeros_like(S)
        if J is None:
            g[..., :d] = gp[..., 0, :]
        else:
            g[..., :d] = np.einsum("btpk,btpkn->btn", gp, J)
        return g


@dataclass
class PosePotential(CostTerm):
    target: np.ndarray
    weight: float = 1.0
    arm: kin.PlanarArm | None = None
    steps: Sequence[int] | None = (-1,)
    kind = "pose_potential"

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)

    def values(self, S):
        d = S.shape[-1] // 2
        idx = _steps(self.steps, S.shape[1])
        x, _ = _task_points(self.arm, S, d, idx)
        return 0.5 * np.sum((x - self.target) ** 2, axis=(-1, -2))

    def grads(self, S):
        d = S.shape[-1] // 2
        idx = _steps(self.steps, S.shape[1])
        x, J = _task_points(self.arm, S, d, idx)
        gx = x - self.target
        g = np.zeros_like(S)
        gq = gx if J is None else np.einsum("btk,btkn->btn", gx, J)
        np.add.at(g, (slice(None), idx, slice(0, d)), gq)
        return g


@dataclass
class Smoothness(CostTerm):
    weight: float = 1.0
    kind = "smoothness"

    def values(self, S):
        d = S.shape[-1] // 2
        q = S[..., :d]
        T = q.shape[-2] - 1
        return np.sum(np.diff(q, axis=-2) ** 2, axis=(-1, -2)) / T

    def grads(self, S):
        d = S.shape[-1] // 2
        q = S[..., :d]
        T = q.shape[-2] - 1
        diff = np.diff(q, axis=-2)  # q_{k+1} - q_k
        gq = np.zeros_like(q)
        gq[..., :-1, :] -= 2 * diff
        gq[..., 1:, :] += 2 * diff
        g = np.zeros_like(S)
        g[..., :d] = gq / T
        return g


@dataclass
class GPFactor(CostTerm):
    """Negative log of the GP prior; unbounded above, minimum 0 at the mean."""

    prior: GPPrior
    weight: float = 1.0
    kind = "gp_factor"

    def values(self, S):
        V = S.reshape(S.shape[0], -1) - self.prior.mean_flat
        return 0.5 * np.einsum("ij,jk,ik->i", V, self.prior.precision, V)

    def grads(self, S):
        V = S.reshape(S.shape[0], -1) - self.prior.mean_flat
        return (V @ self.prior.precision).reshape(S.shape)


@dataclass
class EBMFactor(CostTerm):
    """Learned energy summed over the selected steps.  Bounded below only if
    the underlying energy is."""

    field: EnergyField
    weight: float = 1.0
    arm: kin.PlanarArm | None = None
    steps: Sequence[int] | None = None
    kind = "ebm_factor"

    def values(self, S):
        d = S.shape[-1] // 2
        idx = _steps(self.steps, S.shape[1])
        x, _ = _task_points(self.arm, S, d, idx)
        e = self.field.energy_batch(x)
        return e.sum(axis=-1) if e.ndim == 2 else e

    def grads(self, S):
        d = S.shape[-1] // 2
        idx = _steps(self.steps, S.shape[1])
        x, J = _task_points(self.arm, S, d, idx)
        gx = self.field.grad_batch(x)
        g = np.zeros_like(S)
        gq = gx if J is None else np.einsum("btk,btkn->btn", gx, J)
        np.add.at(g, (slice(None), idx, slice(0, d)), gq)
        return g


# ---------------------------------------------------------------------------
# objective


@dataclass
class Objective:
    terms: list
    names: list = field(default=None)

    def __post_init__(self):
        if not self.terms:
            raise InvalidArgument("an objective needs at least one term")
        for t in self.terms:
            if t.weight < 0:
                raise InvalidArgument("term weights must be non-negative")
        if self.names is None:
            seen: dict = {}
            names = []
            for t in self.terms:
                k = seen.get(t.kind, 0)
                names.append(t.kind if k == 0 else f"{t.kind}_{k}")
                seen[t.kind] = k + 1
            self.names = names

    @staticmethod
    def _batch(X) -> np.ndarray:
        if isinstance(X, Trajectory):
            return X.states[None]
        return np.asarray(X, dtype=np.float64)

    def term_values(self, S) -> np.ndarray:
        """Weighted per-term values, shape (n_terms, B)."""
        S = self._batch(S)
        return np.stack([t.weight * t.values(S) for t in self.terms])

    def batch_values(self, S) -> np.ndarray:
        return self.term_values(S).sum(axis=0)

    def batch_grads(self, S) -> np.ndarray:
        S = self._batch(S)
        g = np.zeros_like(S)
        for t in self.terms:
            if t.weight == 0:
                continue
            g += t.weight * t.grads(S)
        return g

    def flat_cost_fn(self, grid_len: int, d: int):
        """Adapter to the planners' ``(B, n) -> (B,)`` cost convention."""

        def cost(X):
            X = np.asarray(X)
            return self.batch_values(X.reshape(X.shape[0], grid_len, 2 * d))

        return cost


def evaluate(objective: Objective, traj: Trajectory) -> tuple[float, dict]:
    vals = objective.term_values(traj.states[None])[:, 0]
    breakdown = {name: float(v) for name, v in zip(objective.names, vals)}
    total = 0.0
    for v in breakdown.values():
        total += v
    return total, breakdown


def gradient(objective: Objective, traj: Trajectory) -> np.ndarray:
    return objective.batch_grads(traj.states[None])[0].reshape(-1)
