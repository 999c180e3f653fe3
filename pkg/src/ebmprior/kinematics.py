"""Planar serial-chain arm: forward kinematics, Jacobians, body points, IK.

All functions accept a single configuration ``(n,)`` or a batch ``(..., n)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IKFailure, InvalidArgument


@dataclass(frozen=True)
class PlanarArm:
    link_lengths: tuple
    base_pose: tuple = (0.0, 0.0, 0.0)  # x, y, heading

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.link_lengths)
        if len(lengths) < 1 or min(lengths) <= 0:
            raise InvalidArgument("an arm needs at least one link, all of positive length")
        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "base_pose", tuple(float(v) for v in self.base_pose))

    @property
    def n_links(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    def to_dict(self) -> dict:
        return {"links": list(self.link_lengths), "base": list(self.base_pose)}

    @classmethod
    def from_dict(cls, data: dict) -> "PlanarArm":
        return cls(tuple(data["links"]), tuple(data.get("base", (0.0, 0.0, 0.0))))


def _check(arm: PlanarArm, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != arm.n_links:
        raise InvalidArgument(f"expected {arm.n_links} joint angles, got {q.shape[-1]}")
    return q


def fk(arm: PlanarArm, q) -> tuple[np.ndarray, np.ndarray]:
    """Joint positions ``(..., n+1, 2)`` (base first, end-effector last) and
    end-effector heading ``(...)``."""
    q = _check(arm, q)
    bx, by, bth = arm.base_pose
    headings = bth + np.cumsum(q, axis=-1)
    lengths = np.asarray(arm.link_lengths)
    steps = np.stack([lengths * np.cos(headings), lengths * np.sin(headings)], axis=-1)
    base = np.broadcast_to(np.array([bx, by]), q.shape[:-1] + (1, 2))
    joints = np.concatenate([base, base + np.cumsum(steps, axis=-2)], axis=-2)
    return joints, headings[..., -1]


def end_effector(arm: PlanarArm, q) -> np.ndarray:
    return fk(arm, q)[0][..., -1, :]


def _rot90(v: np.ndarray) -> np.ndarray:
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def point_jacobians(arm: PlanarArm, q, links: np.ndarray, fracs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positions ``(..., P, 2)`` and Jacobians ``(..., P, 2, n)`` of points
    located at fraction ``fracs[p]`` along link ``links[p]`` (0-based)."""
    q = _check(arm, q)
    joints, _ = fk(arm, q)
    links = np.asarray(links, dtype=int)
    fracs = np.asarray(fracs, dtype=np.float64)
    start = joints[..., links, :]
    end = joints[..., links + 1, :]
    pts = start + fracs[:, None] * (end - start)
    # column j moves every point on links >= j about joint j
    lever = pts[..., :, None, :] - joints[..., None, :-1, :]  # (..., P, n, 2)
    cols = _rot90(lever)
    mask = (np.arange(arm.n_links)[None, :] <= links[:, None]).astype(np.float64)
    J = np.swapaxes(cols * mask[..., None], -1, -2)  # (..., P, 2, n)
    return pts, J


def jacobian(arm: PlanarArm, q) -> np.ndarray:
    """End-effector Jacobian ``(..., 2, n)``."""
    _, J = point_jacobians(arm, q, np.array([arm.n_links - 1]), np.array([1.0]))
    return J[..., 0, :, :]


def body_point_layout(arm: PlanarArm, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Link indices and fractions of collision points, endpoints included."""
    if not spacing > 0:
        raise InvalidArgument("spacing must be positive")
    links, fracs = [], []
    for k, length in enumerate(arm.link_lengths):
        m = max(1, int(np.ceil(length / spacing - 1e-12)))
        for i in range(m + 1):
            links.append(k)
            fracs.append(i / m)
    return np.array(links), np.array(fracs)


def body_points(arm: PlanarArm, q, spacing: float) -> np.ndarray:
    links, fracs = body_point_layout(arm, spacing)
    joints, _ = fk(arm, q)
    start = joints[..., links, :]
    end = joints[..., links + 1, :]
    return start + fracs[:, None] * (end - start)


def wrap_angles(q) -> np.ndarray:
    """Wrap to (-pi, pi]."""
    q = np.asarray(q, dtype=np.float64)
    return np.pi - np.mod(np.pi - q, 2 * np.pi)


def ik(
    arm: PlanarArm,
    target,
    q_init,
    max_iters: int = 500,
    tol: float = 1e-6,
    damping: float = 1e-2,
    max_step: float = np.pi / 8,
) -> np.ndarray:
    """Damped least-squares position IK for the end-effector."""
    target = np.asarray(target, dtype=np.float64)
    q = np.array(_check(arm, q_init), dtype=np.float64)
    bx, by, _ = arm.base_pose
    dist = float(np.hypot(target[0] - bx, target[1] - by))
    longest = max(arm.link_lengths)
    inner = max(0.0, 2 * longest - arm.reach)
    if dist > arm.reach + tol or dist < inner - tol:
        raise IKFailure(max(dist - arm.reach, inner - dist), "target outside the reachable annulus")
    err = target - end_effector(arm, q)
    for _ in range(max_iters):
        if np.linalg.norm(err) <= tol:
            return wrap_angles(q)
        J = jacobian(arm, q)
        dq = J.T @ np.linalg.solve(J @ J.T + damping**2 * np.eye(2), err)
        norm = np.max(np.abs(dq))
        if norm > max_step:
            dq *= max_step / norm
        q = q + dq
        err = target - end_effector(arm, q)
    if np.linalg.norm(err) <= tol:
        return wrap_angles(q)
    raise IKFailure(float(np.linalg.norm(err)))


def velocity_ik(arm: PlanarArm, q, ee_velocity, damping: float = 1e-2) -> np.ndarray:
    J = jacobian(arm, q)
    return J.T @ np.linalg.solve(J @ J.T + damping**2 * np.eye(2), np.asarray(ee_velocity, dtype=np.float64))
