"""Energy networks, their training and the behavioural-cloning baseline.

The networks are small fully-connected softplus MLPs with hand-written
reverse-mode derivatives.  Denoising score matching needs the parameter
gradient of an input gradient; that is done with a forward tangent pass
(along the residual direction) followed by a reverse sweep through both the
primal and the tangent computations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import RngStream, Trajectory, build_time_grid
from .errors import InvalidArgument, LangevinDivergence, TrainingDiverged

CONDITIONINGS = ("plain", "obstacle_concat", "phase_concat", "object_centric", "plain_trajectory")


# ---------------------------------------------------------------------------
# MLP


def _act(kind: str, a: np.ndarray, order: int = 2):
    """Activation value and its first/second derivatives (None above ``order``)."""
    if kind == "softplus":
        e = np.exp(-np.abs(a))
        val = np.maximum(a, 0.0) + np.log1p(e)
        if order == 0:
            return val, None, None
        inv = 1.0 / (1.0 + e)
        s = np.where(a >= 0, inv, e * inv)  # logistic
        return val, s, (s * (1.0 - s) if order > 1 else None)
    if kind == "tanh":
        t = np.tanh(a)
        d = 1.0 - t**2
        return t, d, -2.0 * t * d
    if kind == "linear":
        return a, np.ones_like(a), np.zeros_like(a)
    raise InvalidArgument(f"unknown activation {kind!r}")


@dataclass
class Mlp:
    weights: list  # W_l has shape (out, in)
    biases: list
    activation: str = "softplus"

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def params(self) -> list:
        return list(self.weights) + list(self.biases)

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)


def init_mlp(sizes: Sequence[int], rng: RngStream, activation: str = "softplus") -> Mlp:
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal((n_out, n_in)) * np.sqrt(1.0 / n_in))
        biases.append(np.zeros(n_out))
    return Mlp(weights, biases, activation)


def zero_mlp(sizes: Sequence[int], activation: str = "softplus") -> Mlp:
    return Mlp(
        [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
        [np.zeros(o) for o in sizes[1:]],
        activation,
    )


def mlp_forward(net: Mlp, X: np.ndarray, order: int = 2):
    """Output ``(B, m)`` and the cache of pre-activations/activations.

    ``order`` limits which activation derivatives are cached (0: none).
    """
    h = np.asarray(X, dtype=np.float64)
    hs, pre, d1, d2 = [h], [], [], []
    L = len(net.weights)
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        a = h @ W.T + b
        pre.append(a)
        if l < L - 1:
            h, s1, s2 = _act(net.activation, a, order)
            hs.append(h)
            d1.append(s1)
            d2.append(s2)
        else:
            h = a
    return h, {"h": hs, "a": pre, "d1": d1, "d2": d2}


def mlp_backward(net: Mlp, cache: dict, G: np.ndarray, params: bool = True):
    """Reverse sweep for output adjoint ``G`` (B, m).

    Returns ``(input_grad, (dW list, db list))``; parameter grads are skipped
    when ``params`` is False.
    """
    L = len(net.weights)
    g = G
    dWs, dbs = [None] * L, [None] * L
    for l in range(L - 1, -1, -1):
        if params:
            dWs[l] = g.T @ cache["h"][l]
            dbs[l] = g.sum(axis=0)
        g = g @ net.weights[l]
        if l > 0:
            g = g * cache["d1"][l - 1]
    return g, (dWs, dbs)


def mlp_input_grad(net: Mlp, X: np.ndarray, order: int = 2):
    """Scalar-output net: values (B,) and input gradients (B, in)."""
    out, cache = mlp_forward(net, X, max(order, 1))
    g, _ = mlp_backward(net, cache, np.ones_like(out), params=False)
    return out[:, 0], g, cache


def mlp_score_param_grad(net: Mlp, cache: dict, R: np.ndarray):
    """Gradient w.r.t. parameters of ``sum_b R_b . grad_x E(x_b)`` (scalar net).

    ``cache`` is the forward cache at the evaluation points; ``R`` (B, in) is
    held fixed.
    """
    Ws = net.weights
    L = len(Ws)
    d1, d2, a, h = cache["d1"], cache["d2"], cache["a"], cache["h"]
    # forward tangent along R
    t = [R @ Ws[0].T]
    u = []
    for l in range(L - 1):
        u.append(d1[l] * t[l])
        t.append(u[l] @ Ws[l + 1].T)
    dW = [np.zeros_like(W) for W in Ws]
    db = [np.zeros_like(W[:, 0]) for W in Ws]
    a_bar = [np.zeros_like(x) for x in a]
    # reverse through the tangent chain
    t_bar = np.ones_like(t[-1])
    for l in range(L - 1, 0, -1):
        dW[l] += t_bar.T @ u[l - 1]
        u_bar = t_bar @ Ws[l]
        t_bar = u_bar * d1[l - 1]
        a_bar[l - 1] += u_bar * t[l - 1] * d2[l - 1]
    dW[0] += t_bar.T @ R
    # reverse through the primal chain (the output pre-activation carries no adjoint)
    up = np.zeros_like(a[-1])
    for l in range(L - 1, -1, -1):
        if l < L - 1:
            a_bar[l] += (up @ Ws[l + 1]) * d1[l]
        up = a_bar[l]
        dW[l] += up.T @ h[l]
        db[l] += up.sum(axis=0)
    return dW, db


# ---------------------------------------------------------------------------
# energy model


def canonical_obstacles(centers, origin=(0.0, 0.0)) -> np.ndarray:
    """Obstacle centers (..., K, 2) sorted by polar angle about a fixed origin."""
    c = np.asarray(centers, dtype=np.float64)
    c = c.reshape(c.shape[:-1] + (2,)) if c.shape[-1] == 2 else c.reshape(c.shape[:-1] + (-1, 2))
    rel = c - np.asarray(origin)
    ang = np.arctan2(rel[..., 1], rel[..., 0])
    order = np.argsort(ang, axis=-1, kind="stable")
    return np.take_along_axis(c, order[..., None], axis=-2)


def frame_transform(points, frame) -> np.ndarray:
    """Express ``points`` (..., 2) in a planar frame ``(x, y, theta)``."""
    x, y, th = (float(v) for v in frame)
    p = np.asarray(points, dtype=np.float64) - np.array([x, y])
    c, s = np.cos(th), np.sin(th)
    return np.stack([c * p[..., 0] + s * p[..., 1], -s * p[..., 0] + c * p[..., 1]], axis=-1)


def frame_rotation(frame) -> np.ndarray:
    th = float(frame[2])
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, s], [-s, c]])


@dataclass
class EnergyModel:
    net: Mlp
    conditioning: str
    state_dim: int
    context_dim: int
    norm_mean: np.ndarray
    norm_std: np.ndarray

    def __post_init__(self):
        if self.conditioning not in CONDITIONINGS:
            raise InvalidArgument(f"unknown conditioning {self.conditioning!r}")
        self.norm_mean = np.asarray(self.norm_mean, dtype=np.float64)
        self.norm_std = np.asarray(self.norm_std, dtype=np.float64)

    @property
    def input_dim(self) -> int:
        return self.net.sizes[0]

    # raw <-> normalized network input
    def normalize(self, Z):
        return (np.asarray(Z, dtype=np.float64) - self.norm_mean) / self.norm_std

    def denormalize(self, Z):
        return np.asarray(Z, dtype=np.float64) * self.norm_std + self.norm_mean


def _context_block(model: EnergyModel, context, n: int) -> np.ndarray | None:
    kind = model.conditioning
    if kind in ("plain", "plain_trajectory", "object_centric"):
        return None
    if context is None or np.size(context) % max(model.context_dim, 1):
        raise InvalidArgument(f"context does not fit the {model.conditioning} layout")
    if kind == "obstacle_concat":
        c = np.asarray(context, dtype=np.float64).reshape(-1, model.context_dim // 2, 2)
        c = canonical_obstacles(c).reshape(-1, model.context_dim)
    else:  # phase_concat
        c = np.asarray(context, dtype=np.float64).reshape(-1, 1)
    if c.shape[0] == 1:
        c = np.broadcast_to(c, (n, c.shape[1]))
    if c.shape != (n, model.context_dim):
        raise InvalidArgument(f"context of shape {c.shape} does not fit {n} inputs")
    return c


def _raw_inputs(model: EnergyModel, X, context):
    """Raw network inputs (M, in) and the per-row 2x2 (or None) frame rotation."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    if X.shape[-1] != model.state_dim:
        raise InvalidArgument(f"expected state dimension {model.state_dim}, got {X.shape[-1]}")
    rot = None
    if model.conditioning == "object_centric":
        if context is None:
            context = (0.0, 0.0, 0.0)
        X = frame_transform(X, context)
        rot = frame_rotation(context)
    c = _context_block(model, context, X.shape[0])
    Z = X if c is None else np.hstack([X, c])
    if Z.shape[1] != model.input_dim:
        raise InvalidArgument(f"input layout {Z.shape[1]} does not match the network ({model.input_dim})")
    return Z, rot


def energy_batch(model: EnergyModel, X, context=None) -> np.ndarray:
    Z, _ = _raw_inputs(model, X, context)
    out, _ = mlp_forward(model.net, model.normalize(Z), order=0)
    return out[:, 0]


def energy_and_grad(model: EnergyModel, X, context=None):
    """Energies (M,) and state gradients (M, state_dim) in raw coordinates."""
    Z, rot = _raw_inputs(model, X, context)
    e, g, _ = mlp_input_grad(model.net, model.normalize(Z), order=1)
    gx = g[:, : model.state_dim] / model.norm_std[: model.state_dim]
    if rot is not None:
        gx = gx @ rot
    return e, gx


def energy(model: EnergyModel, x, context=None) -> float:
    return float(energy_batch(model, np.asarray(x)[None], context)[0])


def grad_input(model: EnergyModel, x, context=None) -> np.ndarray:
    return energy_and_grad(model, np.asarray(x)[None], context)[1][0]


# ---------------------------------------------------------------------------
# losses on normalized inputs


def cd_loss(net: Mlp, positives, negatives, reg: float = 0.0, with_grad: bool = False):
    """``mean E(pos) - mean E(neg) + reg * mean(E^2)`` over both batches."""
    P = np.asarray(positives, dtype=np.float64)
    N = np.asarray(negatives, dtype=np.float64)
    if len(P) == 0 or len(N) == 0:
        raise InvalidArgument("contrastive divergence needs non-empty batches")
    X = np.vstack([P, N])
    out, cache = mlp_forward(net, X, order=1)
    e = out[:, 0]
    nb, nn = len(P), len(N)
    loss = e[:nb].mean() - e[nb:].mean() + reg * np.mean(e**2)
    if not with_grad:
        return float(loss)
    coef = np.concatenate([np.full(nb, 1.0 / nb), np.full(nn, -1.0 / nn)]) + 2 * reg * e / len(e)
    _, (dW, db) = mlp_backward(net, cache, coef[:, None])
    return float(loss), dW + db


def dsm_loss(net: Mlp, positives, sigma: float, rng: RngStream | None = None, noise=None,
             state_dim: int | None = None, with_grad: bool = False, grad_scale: float = 1.0):
    """``mean ||eps - c * grad_x E(x + sigma eps)||^2`` over the state coordinates.

    ``c = grad_scale``.  With ``c = 1`` the energy gradient itself regresses
    the noise; ``c = sigma`` is the sigma^2-weighted score-matching form, whose
    optimum keeps ``E`` on the same scale as ``-log p``.  Context coordinates
    (beyond ``state_dim``) are left un-noised and excluded from the score.
    """
    if not sigma > 0:
        raise InvalidArgument("sigma must be positive")
    P = np.asarray(positives, dtype=np.float64)
    ds = P.shape[1] if state_dim is None else state_dim
    eps = rng.normal((len(P), ds)) if noise is None else np.asarray(noise, dtype=np.float64)
    Xn = P.copy()
    Xn[:, :ds] += sigma * eps
    _, g, cache = mlp_input_grad(net, Xn)
    resid = eps - grad_scale * g[:, :ds]
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    if not with_grad:
        return loss
    R = np.zeros_like(Xn)
    R[:, :ds] = -2.0 * grad_scale * resid / len(P)
    dW, db = mlp_score_param_grad(net, cache, R)
    return loss, dW + db


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params: list, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# sampling


def langevin_sample(model: EnergyModel, context, init_batch, steps: int, step_size: float,
                    rng: RngStream, bounds=None) -> np.ndarray:
    """Unadjusted Langevin chain in raw state coordinates, clamped to ``bounds``."""
    if steps < 1:
        raise InvalidArgument("steps must be >= 1")
    if not step_size > 0:
        raise InvalidArgument("step_size must be positive")
    x = np.array(init_batch, dtype=np.float64)
    lo, hi = (None, None) if bounds is None else (np.asarray(bounds[0]), np.asarray(bounds[1]))
    for k in range(steps):
        _, g = energy_and_grad(model, x, context)
        if not np.all(np.isfinite(g)):
            raise LangevinDivergence(k)
        x = x - 0.5 * step_size * g + np.sqrt(step_size) * rng.normal(x.shape)
        if lo is not None:
            x = np.clip(x, lo, hi)
    return x


def _langevin_normalized(net: Mlp, Z: np.ndarray, ds: int, steps: int, step_size: float,
                         rng: RngStream, lo, hi) -> np.ndarray:
    Z = Z.copy()
    for k in range(steps):
        _, g, _ = mlp_input_grad(net, Z, order=1)
        if not np.all(np.isfinite(g)):
            raise LangevinDivergence(k)
        Z[:, :ds] += -0.5 * step_size * g[:, :ds] + np.sqrt(step_size) * rng.normal((len(Z), ds))
        Z[:, :ds] = np.clip(Z[:, :ds], lo, hi)
    return Z


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    iterations: int = 3000
    hidden: int = 512
    n_hidden: int = 2
    dsm_sigma: float = 0.1
    dsm_beta: float = 1.0
    dsm_scale: str = "literal"  # or "sigma": residual eps - sigma * grad E
    energy_reg: float = 0.1
    negatives: str = "uniform"  # or "langevin"
    langevin_steps: int = 20
    langevin_step_size: float = 1e-2
    domain_padding: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "iterations", "hidden", "dsm_sigma"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.dsm_beta < 0 or self.energy_reg < 0:
            raise InvalidArgument("dsm_beta and energy_reg must be non-negative")
        if self.dsm_scale not in ("literal", "sigma"):
            raise InvalidArgument(f"unknown dsm_scale {self.dsm_scale!r}")
        if self.negatives not in ("uniform", "langevin"):
            raise InvalidArgument(f"unknown negative sampler {self.negatives!r}")


@dataclass
class TrainResult:
    model: EnergyModel
    history: list = field(default_factory=list)  # (iteration, total, cd, dsm)


def _layout_dataset(states, contexts, conditioning: str):
    """Raw training inputs (M, in), state dim, context dim."""
    X = np.asarray(states, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise InvalidArgument("empty dataset")
    ds = X.shape[1]
    if conditioning in ("plain", "plain_trajectory"):
        return X, ds, 0
    if conditioning == "object_centric":
        frames = np.asarray(contexts, dtype=np.float64).reshape(-1, 3)
        if frames.shape[0] == 1:
            frames = np.broadcast_to(frames, (len(X), 3))
        Xf = np.empty_like(X)
        for f in np.unique(frames, axis=0):
            m = np.all(frames == f, axis=1)
            Xf[m] = frame_transform(X[m], f)
        return Xf, ds, 0
    if conditioning == "obstacle_concat":
        C = np.asarray(contexts, dtype=np.float64).reshape(len(X), -1, 2)
        C = canonical_obstacles(C).reshape(len(X), -1)
        return np.hstack([X, C]), ds, C.shape[1]
    C = np.asarray(contexts, dtype=np.float64).reshape(-1, 1)
    return np.hstack([X, C]), ds, 1


def _normalization(Z: np.ndarray, ds: int, conditioning: str):
    mean = Z.mean(axis=0)
    std = Z.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    if conditioning == "obstacle_concat":
        # obstacle coordinates share the state's statistics
        k = (Z.shape[1] - ds) // ds
        mean[ds:] = np.tile(mean[:ds], k)
        std[ds:] = np.tile(std[:ds], k)
    return mean, std


def train_ebm(states, contexts, conditioning: str, cfg: TrainConfig, domain=None,
              callback=None) -> TrainResult:
    """Minimize ``CD + dsm_beta * DSM`` with Adam.

    ``domain`` is a ``(low, high)`` box in raw state units for uniform
    negatives; by default the data range padded by ``cfg.domain_padding``.
    """
    Z, ds, dc = _layout_dataset(states, contexts, conditioning)
    mean, std = _normalization(Z, ds, conditioning)
    Zn = (Z - mean) / std
    if domain is None:
        lo, hi = Zn[:, :ds].min(axis=0), Zn[:, :ds].max(axis=0)
        pad = cfg.domain_padding * (hi - lo)
        lo, hi = lo - pad, hi + pad
    else:
        lo = (np.asarray(domain[0], dtype=np.float64) - mean[:ds]) / std[:ds]
        hi = (np.asarray(domain[1], dtype=np.float64) - mean[:ds]) / std[:ds]
    rng = RngStream(cfg.seed, (1,))
    sizes = [Z.shape[1]] + [cfg.hidden] * cfg.n_hidden + [1]
    net = init_mlp(sizes, rng.spawn(0))
    opt = Adam(net.params, lr=cfg.learning_rate)
    model = EnergyModel(net, conditioning, ds, dc, mean, std)
    history = []
    bs = min(cfg.batch_size, len(Zn))
    for it in range(cfg.iterations):
        step_rng = rng.spawn(1, it)
        idx = step_rng.integers(0, len(Zn), bs)
        pos = Zn[idx]
        neg = pos.copy()
        neg[:, :ds] = step_rng.uniform(lo, hi, (bs, ds))
        if cfg.negatives == "langevin":
            neg = _langevin_normalized(net, neg, ds, cfg.langevin_steps, cfg.langevin_step_size,
                                       step_rng.spawn(0), lo, hi)
        cd, g = cd_loss(net, pos, neg, cfg.energy_reg, with_grad=True)
        total = cd
        dsm = 0.0
        if cfg.dsm_beta > 0:
            scale = cfg.dsm_sigma if cfg.dsm_scale == "sigma" else 1.0
            dsm, gd = dsm_loss(net, pos, cfg.dsm_sigma, step_rng.spawn(1), state_dim=ds, with_grad=True,
                               grad_scale=scale)
            g = [a + cfg.dsm_beta * b for a, b in zip(g, gd)]
            total = cd + cfg.dsm_beta * dsm
        if not np.isfinite(total) or not all(np.all(np.isfinite(x)) for x in g):
            raise TrainingDiverged(it)
        opt.step(g)
        history.append((it, float(total), float(cd), float(dsm)))
        if callback is not None:
            callback(it, total)
    return TrainResult(model, history)


# ---------------------------------------------------------------------------
# energy fields for the planner


class ModelField:
    """Adapter exposing a model (with fixed context) to the EBMFactor cost."""

    def __init__(self, model: EnergyModel, context=None, weight: float = 1.0):
        self.model = model
        self.context = context
        self.weight = weight

    def energy_batch(self, points):
        P = np.asarray(points, dtype=np.float64)
        e = energy_batch(self.model, P.reshape(-1, P.shape[-1]), self.context)
        return self.weight * e.reshape(P.shape[:-1])

    def grad_batch(self, points):
        P = np.asarray(points, dtype=np.float64)
        _, g = energy_and_grad(self.model, P.reshape(-1, P.shape[-1]), self.context)
        return self.weight * g.reshape(P.shape)


class PhaseField:
    """Phase-conditioned energy over a path: step ``k`` of ``T`` gets phase k/(T-1)."""

    def __init__(self, model: EnergyModel, weight: float = 1.0):
        if model.conditioning != "phase_concat":
            raise InvalidArgument("PhaseField needs a phase-conditioned model")
        self.model = model
        self.weight = weight

    def _phases(self, P):
        T = P.shape[-2]
        alpha = np.arange(T) / (T - 1)
        return np.broadcast_to(alpha, P.shape[:-1]).reshape(-1)

    def energy_batch(self, points):
        P = np.asarray(points, dtype=np.float64)
        e = energy_batch(self.model, P.reshape(-1, P.shape[-1]), self._phases(P))
        return self.weight * e.reshape(P.shape[:-1])

    def grad_batch(self, points):
        P = np.asarray(points, dtype=np.float64)
        _, g = energy_and_grad(self.model, P.reshape(-1, P.shape[-1]), self._phases(P))
        return self.weight * g.reshape(P.shape)


class ComposedEnergy:
    """Weighted sum of energy fields over a shared input space."""

    def __init__(self, factors: list):
        if not factors:
            raise InvalidArgument("nothing to compose")
        dims = {f[0].state_dim for f in factors}
        if len(dims) != 1:
            raise InvalidArgument("composed energies must share an input dimension")
        self.state_dim = dims.pop()
        self.fields = [ModelField(m, c, w) for m, c, w in factors]

    def energy_batch(self, points):
        return sum(f.energy_batch(points) for f in self.fields)

    def grad_batch(self, points):
        return sum(f.grad_batch(points) for f in self.fields)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.energy_batch(x[None])[0]

    def grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.grad_batch(x[None])[0]


def compose_energies(factors: list) -> ComposedEnergy:
    """``factors`` is a list of ``(model, context, weight)``."""
    return ComposedEnergy(factors)


def phase_trajectory_energy(model: EnergyModel, traj, weights=(1.0, 1.0), with_grad: bool = False):
    """Sum of phase-conditioned state energies plus ``sum_k ||x_k - x_{k+1}||^2``.

    ``traj`` is a Trajectory (its configurations are the states) or an
    ``(N+1, k)`` array.  The smoothing part equals ``N * smoothness_cost``.
    """
    X = traj.q if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    w_e, w_s = weights
    field_ = PhaseField(model)
    e = field_.energy_batch(X[None])[0]
    diff = np.diff(X, axis=0)
    value = w_e * e.sum() + w_s * np.sum(diff**2)
    if not with_grad:
        return float(value)
    g = w_e * field_.grad_batch(X[None])[0]
    g[:-1] -= 2 * w_s * diff
    g[1:] += 2 * w_s * diff
    return float(value), g


# ---------------------------------------------------------------------------
# behavioural cloning


@dataclass
class BcPolicy:
    net: Mlp
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.net.sizes[-1]

    def __call__(self, q, context=None) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        X = q if context is None else np.hstack([q, np.broadcast_to(np.asarray(context, float).reshape(1, -1), (len(q), np.size(context)))])
        out, _ = mlp_forward(self.net, (X - self.in_mean) / self.in_std, order=0)
        return out * self.out_std + self.out_mean


def train_bc(inputs, velocities, cfg: TrainConfig) -> tuple[BcPolicy, list]:
    """MSE regression of velocities on ``[q; context]`` inputs."""
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(velocities, dtype=np.float64)
    if len(X) == 0 or len(X) != len(Y):
        raise InvalidArgument("inputs and velocities must be non-empty and aligned")
    im, isd = X.mean(0), np.where(X.std(0) > 1e-8, X.std(0), 1.0)
    om, osd = Y.mean(0), np.where(Y.std(0) > 1e-8, Y.std(0), 1.0)
    Xn, Yn = (X - im) / isd, (Y - om) / osd
    rng = RngStream(cfg.seed, (2,))
    net = init_mlp([X.shape[1]] + [cfg.hidden] * cfg.n_hidden + [Y.shape[1]], rng.spawn(0))
    opt = Adam(net.params, lr=cfg.learning_rate)
    bs = min(cfg.batch_size, len(Xn))
    history = []
    for it in range(cfg.iterations):
        idx = rng.spawn(1, it).integers(0, len(Xn), bs)
        out, cache = mlp_forward(net, Xn[idx], order=1)
        err = out - Yn[idx]
        loss = float(np.mean(np.sum(err**2, axis=1)))
        if not np.isfinite(loss):
            raise TrainingDiverged(it)
        _, (dW, db) = mlp_backward(net, cache, 2 * err / bs)
        opt.step(dW + db)
        history.append((it, loss))
    return BcPolicy(net, im, isd, om, osd), history


def rollout_bc(policy: BcPolicy, q0, context, n_steps: int, dt: float) -> Trajectory:
    """Euler integration ``q_{t+1} = q_t + dt f(q_t)``; each state stores its commanded velocity."""
    q = np.asarray(q0, dtype=np.float64).copy()
    qs, vs = [], []
    for _ in range(n_steps + 1):
        v = policy(q, context)[0]
        qs.append(q.copy())
        vs.append(v)
        q = q + dt * v
    return Trajectory(build_time_grid(0.0, dt, n_steps), np.hstack([np.array(qs), np.array(vs)]))


# ---------------------------------------------------------------------------
# checkpoints


def _net_to_dict(net: Mlp) -> dict:
    return {
        "layers": net.sizes,
        "activation": net.activation,
        "weights": [w.reshape(-1).tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_dict(data: dict) -> Mlp:
    sizes = data["layers"]
    weights = [np.asarray(w, dtype=np.float64).reshape(o, i) for w, i, o in zip(data["weights"], sizes[:-1], sizes[1:])]
    biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
    return Mlp(weights, biases, data["activation"])


def model_to_dict(model: EnergyModel) -> dict:
    d = _net_to_dict(model.net)
    d.update(
        conditioning=model.conditioning,
        state_dim=model.state_dim,
        context_dim=model.context_dim,
        normalization={"mean": model.norm_mean.tolist(), "std": model.norm_std.tolist()},
    )
    return d


def model_from_dict(data: dict) -> EnergyModel:
    return EnergyModel(
        _net_from_dict(data),
        data["conditioning"],
        int(data["state_dim"]),
        int(data["context_dim"]),
        np.asarray(data["normalization"]["mean"]),
        np.asarray(data["normalization"]["std"]),
    )


def policy_to_dict(policy: BcPolicy) -> dict:
    d = _net_to_dict(policy.net)
    d.update(
        conditioning="bc",
        normalization={
            "in_mean": policy.in_mean.tolist(),
            "in_std": policy.in_std.tolist(),
            "out_mean": policy.out_mean.tolist(),
            "out_std": policy.out_std.tolist(),
        },
    )
    return d


def policy_from_dict(data: dict) -> BcPolicy:
    n = data["normalization"]
    return BcPolicy(
        _net_from_dict(data),
        np.asarray(n["in_mean"]),
        np.asarray(n["in_std"]),
        np.asarray(n["out_mean"]),
        np.asarray(n["out_std"]),
    )


def save_checkpoint(obj, path) -> None:
    data = model_to_dict(obj) if isinstance(obj, EnergyModel) else policy_to_dict(obj)
    Path(path).write_text(json.dumps(data))


def load_checkpoint(path):
    data = json.loads(Path(path).read_text())
    return policy_from_dict(data) if data.get("conditioning") == "bc" else model_from_dict(data)
