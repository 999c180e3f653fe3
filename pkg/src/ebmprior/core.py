"""Shared domain types, small dense linear algebra and the RNG stream.

Trajectories are stored as an ``(N+1, 2d)`` array of states where each row is
``[q; qdot]``.  Flattening is row-major, so the flat vector is the per-step
interleaving ``[q_0, qdot_0, q_1, qdot_1, ...]`` that the precision blocks use.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FactorizationError, InvalidArgument


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgument(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidArgument(f"n_steps must be an integer >= 1, got {self.n_steps}")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.n_steps

    def __len__(self) -> int:
        return self.n_steps + 1


def build_time_grid(t0: float, dt: float, n_steps: int) -> TimeGrid:
    return TimeGrid(float(t0), float(dt), int(n_steps))


@dataclass(frozen=True)
class State:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        qdot = np.asarray(self.qdot, dtype=np.float64).reshape(-1)
        if q.shape != qdot.shape or q.size < 1:
            raise InvalidArgument("q and qdot must share a dimension >= 1")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise InvalidArgument("state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)

    @property
    def dim(self) -> int:
        return self.q.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    @classmethod
    def from_vector(cls, x) -> "State":
        x = np.asarray(x, dtype=np.float64)
        d = x.size // 2
        return cls(x[:d], x[d:])

    @classmethod
    def at_rest(cls, q) -> "State":
        q = np.asarray(q, dtype=np.float64)
        return cls(q, np.zeros_like(q))


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray  # (N+1, 2d), rows [q; qdot]

    def __post_init__(self):
        s = np.array(self.states, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] % 2 or s.shape[1] == 0:
            raise InvalidArgument(f"states must be (N+1, 2d), got shape {s.shape}")
        if s.shape[0] != self.grid.n_steps + 1:
            raise InvalidArgument(
                f"expected {self.grid.n_steps + 1} states for the grid, got {s.shape[0]}"
            )
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def dim(self) -> int:
        return self.states.shape[1] // 2

    @property
    def q(self) -> np.ndarray:
        return self.states[:, : self.dim]

    @property
    def qdot(self) -> np.ndarray:
        return self.states[:, self.dim :]

    def state(self, i: int) -> State:
        return State.from_vector(self.states[i])

    def __len__(self) -> int:
        return self.states.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.states, other.states)

    __hash__ = None

    @classmethod
    def from_states(cls, grid: TimeGrid, states: Sequence[State]) -> "Trajectory":
        return cls(grid, np.stack([s.vector() for s in states]))


def flatten(traj: Trajectory) -> np.ndarray:
    return traj.states.reshape(-1).copy()


def unflatten(vec, grid: TimeGrid, d: int) -> Trajectory:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != (grid.n_steps + 1) * 2 * d:
        raise InvalidArgument(f"vector of size {vec.size} does not fit grid with d={d}")
    return Trajectory(grid, vec.reshape(grid.n_steps + 1, 2 * d))


# --------------------------------------------------------------------------
# dense linear algebra


def cholesky_spd(M) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == M`` (left-looking, column by column).

    Raises FactorizationError with the offending pivot index when ``M`` is not
    positive definite.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgument(f"expected a square matrix, got shape {M.shape}")
    n = M.shape[0]
    L = np.zeros_like(M)
    for j in range(n):
        row = L[j, :j]
        pivot = M[j, j] - row @ row
        if not pivot > 0.0:
            raise FactorizationError(j, float(pivot))
        ljj = np.sqrt(pivot)
        L[j, j] = ljj
        if j + 1 < n:
            L[j + 1 :, j] = (M[j + 1 :, j] - L[j + 1 :, :j] @ row) / ljj
    return L


def solve_triangular(L, b, transpose: bool = False) -> np.ndarray:
    """Solve ``L x = b`` (or ``L.T x = b``) for lower-triangular ``L``.

    ``b`` may be a vector or an ``(n, m)`` matrix of right-hand sides.
    """
    L = np.asarray(L, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = L.shape[0]
    if L.shape != (n, n) or b.shape[0] != n:
        raise InvalidArgument(f"dimension mismatch: L {L.shape}, b {b.shape}")
    x = np.array(b, dtype=np.float64, copy=True)
    if not transpose:
        for i in range(n):
            if i:
                x[i] -= L[i, :i] @ x[:i]
            x[i] /= L[i, i]
    else:
        for i in range(n - 1, -1, -1):
            if i + 1 < n:
                x[i] -= L[i + 1 :, i] @ x[i + 1 :]
            x[i] /= L[i, i]
    return x


def spd_solve(M, b) -> np.ndarray:
    L = cholesky_spd(M)
    return solve_triangular(L, solve_triangular(L, b), transpose=True)


# --------------------------------------------------------------------------
# random streams


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(seed, key...)``.

    Backed by the counter-based Philox generator; ``spawn`` derives an
    independent child stream for a sub-index (environment, goal, plan, ...), so
    parallel units never share state.
    """

    seed: int
    key: tuple = ()
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed)
        self.key = tuple(int(k) for k in self.key)
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(keys))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size=None, replace=True):
        return self._gen.choice(n, size=size, replace=replace)


# --------------------------------------------------------------------------
# serialization


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {"t0": traj.grid.t0, "dt": traj.grid.dt, "states": traj.states.tolist()}


def trajectory_from_dict(data: dict) -> Trajectory:
    states = np.asarray(data["states"], dtype=np.float64)
    grid = build_time_grid(data["t0"], data["dt"], states.shape[0] - 1)
    return Trajectory(grid, states)


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(json.dumps(trajectory_to_dict(traj)))


def load_trajectory(path) -> Trajectory:
    return trajectory_from_dict(json.loads(Path(path).read_text()))
