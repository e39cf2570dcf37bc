"""Direct latent adaptation: reward, random-feature critic, TD learning with
replay, and the adaptor that integrates the latent noise online.

Critic:   V(X, u) = v . tanh(Gamma [X; u])   (Gamma fixed after Glorot init)
Adaptor:  dz_j/dt = w_j . de/dt,   dw_j/dt = (v . Lambda_j) e
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nn

Z_CLIP = 3.0


class CriticDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    Q: tuple = (2.0, 2.0)
    R: tuple = (0.01, 0.01)
    gamma: float = 2.0
    eta_v: float = 5.0
    eta_w: float = 0.5

    def __post_init__(self):
        if min(self.Q) <= 0 or min(self.R) <= 0:
            raise ValueError("Q and R diagonals must be positive")
        if self.gamma <= 0 or self.eta_v <= 0 or self.eta_w <= 0:
            raise ValueError("gamma and learning rates must be positive")


def reward(x_tilde, u, cfg: RewardConfig) -> float:
    """exp(-(Q |x~|_1 + R |u|_1)), always in (0, 1]."""
    cost = np.dot(cfg.Q, np.abs(x_tilde)) + np.dot(cfg.R, np.abs(u))
    return float(np.exp(-cost))


@dataclass
class CriticNet:
    v: np.ndarray                 # (l_c,)
    gamma_mat: np.ndarray         # (l_c, n_in), frozen
    input_scale: np.ndarray       # (n_in,) divides [X; u] before Gamma
    n_action: int = 2

    @property
    def n_features(self) -> int:
        return self.v.size

    def features(self, X, u) -> np.ndarray:
        return np.tanh(self.gamma_mat @ (np.concatenate([X, u]) / self.input_scale))

    def action_columns(self) -> np.ndarray:
        """Gamma's u-block with the input scaling folded in, shape (l_c, n)."""
        return self.gamma_mat[:, -self.n_action:] / self.input_scale[-self.n_action:]


def make_critic(n_state: int, n_action: int, n_features: int = 48, seed=None,
                input_scale=None) -> CriticNet:
    gamma = nn.glorot_init([n_state + n_action, n_features], seed).weights[0]
    scale = np.ones(n_state + n_action) if input_scale is None else np.asarray(input_scale, float)
    return CriticNet(np.zeros(n_features), gamma, scale, n_action)


def critic_value(c: CriticNet, X, u) -> float:
    return float(c.v @ c.features(X, u))


def critic_grad_u(c: CriticNet, X, u) -> np.ndarray:
    a = c.features(X, u)
    return c.action_columns().T @ ((1 - a * a) * c.v)


def td_error(r: float, a, a_dot, v, gamma: float) -> float:
    return float(r + v @ a_dot - gamma * (v @ a))


@dataclass
class Snapshot:
    t: float
    a: np.ndarray
    a_dot: np.ndarray
    r: float


@dataclass
class ReplayBuffer:
    capacity: int = 64
    items: deque = field(default=None)

    def __post_init__(self):
        if self.items is None:
            self.items = deque(maxlen=self.capacity)

    def add(self, snap: Snapshot):
        if self.items and snap.t < self.items[-1].t:
            raise ValueError("snapshots must be time-ordered")
        self.items.append(snap)

    def __len__(self):
        return len(self.items)

    def matrices(self):
        """Stacked (A, A_dot, r) with one row per snapshot."""
        a = np.array([s.a for s in self.items])
        ad = np.array([s.a_dot for s in self.items])
        r = np.array([s.r for s in self.items])
        return a, ad, r


def update_critic(v, buffer: ReplayBuffer, snap: Snapshot, cfg: RewardConfig, dt: float):
    """Euler step of the replay-augmented TD law; replayed errors use the current v.

    The replay sum is averaged over the buffer so the step stays stable for any
    capacity at control-rate dt.
    """
    delta = td_error(snap.r, snap.a, snap.a_dot, v, cfg.gamma)
    grad = snap.a * delta
    if len(buffer):
        a, ad, r = buffer.matrices()
        deltas = r + ad @ v - cfg.gamma * (a @ v)
        grad = grad + a.T @ deltas / len(buffer)
    return v + dt * cfg.eta_v * grad, delta


def rank_check(buffer: ReplayBuffer, n_features: int | None = None, tol: float | None = None):
    """Rank condition on recorded features: returns ``(satisfied, lambda_min(Pi))``."""
    if not len(buffer):
        return False, 0.0
    a, _, _ = buffer.matrices()
    l_c = a.shape[1] if n_features is None else n_features
    rank = np.linalg.matrix_rank(a, tol=tol)
    lam = float(np.linalg.eigvalsh(a.T @ a)[0])
    return bool(rank == l_c), max(lam, 0.0) if rank == l_c else lam


def lambda_j(critic: CriticNet, a, du_dz, eta_w: float) -> np.ndarray:
    """Lambda for every latent dimension, shape (l_z, l_c).

    ``du_dz`` is the (n, l_z) sensitivity of the torque to the latent noise,
    i.e. the generator Jacobian contracted with the kernel.
    """
    return eta_w * ((1 - a * a)[:, None] * (critic.action_columns() @ du_dz)).T


def torque_sensitivity(jac_z, kernel_vec, n_channels: int = 2) -> np.ndarray:
    """Contract a coefficient Jacobian (n*(2H+1), l_z) with the kernel -> (n, l_z)."""
    l_z = jac_z.shape[1]
    return np.einsum("ckz,k->cz", jac_z.reshape(n_channels, -1, l_z), kernel_vec)


def update_adaptor(w, v, lambdas, e, dt: float):
    """w_j <- w_j + dt (v . Lambda_j) e; ``w`` has shape (l_z, n)."""
    return w + dt * np.outer(lambdas @ v, e)


@dataclass
class LatentIntegrator:
    """Integrated adaptor law z_j = w_j.e - w_j(0).e(0) - int (v.Lambda_j) |e|^2."""
    offset: np.ndarray            # w_j(0) . e(0)
    integral: np.ndarray
    prev_integrand: np.ndarray | None = None

    @classmethod
    def start(cls, w0, e0) -> "LatentIntegrator":
        return cls(np.asarray(w0) @ np.asarray(e0), np.zeros(np.shape(w0)[0]))


def latent_update(state: LatentIntegrator, w, e, v_lambda, dt: float, clip: float = Z_CLIP):
    """Advance the running integral (trapezoidal) and return ``(z, state)``.

    ``v_lambda`` is the vector of v . Lambda_j at the current sample.
    """
    f = np.asarray(v_lambda) * float(np.dot(e, e))
    integral = state.integral
    if state.prev_integrand is not None:
        integral = integral + 0.5 * dt * (state.prev_integrand + f)
    z = np.asarray(w) @ np.asarray(e) - state.offset - integral
    if clip is not None:
        z = np.clip(z, -clip, clip)
    return z, LatentIntegrator(state.offset, integral, f)


@dataclass
class DirectConfig:
    reward: RewardConfig = field(default_factory=RewardConfig)
    n_features: int = 48
    replay_capacity: int = 64
    replay_every: int = 50
    state_scale: tuple = (1.0, 1.0, 5.0, 5.0, 1.0, 1.0, 5.0, 5.0)
    action_scale: tuple = (50.0, 50.0)
    seed: int = 0


class DirectAdapter:
    """Online critic + adaptor loop driving the generator's latent input."""

    def __init__(self, cfg: DirectConfig, latent_dim: int, n: int = 2):
        self.cfg = cfg
        scale = np.concatenate([cfg.state_scale, cfg.action_scale])
        self.critic = make_critic(4 * n, n, cfg.n_features, cfg.seed, scale)
        self.w = np.zeros((latent_dim, n))
        self.buffer = ReplayBuffer(cfg.replay_capacity)
        self.integrator = None
        self.prev_a = None
        self.steps = 0
        self.z = np.zeros(latent_dim)
        self.last = {}

    def step(self, X, u, e, du_dz, dt: float) -> np.ndarray:
        """Consume one control sample and return the latent noise for the next one."""
        cfg = self.cfg.reward
        n = e.size
        a = self.critic.features(X, u)
        a_dot = np.zeros_like(a) if self.prev_a is None else (a - self.prev_a) / dt
        self.prev_a = a
        r = reward(X[:n], u, cfg)
        snap = Snapshot(self.steps * dt, a, a_dot, r)
        v_before = self.critic.v
        self.critic.v, delta = update_critic(v_before, self.buffer, snap, cfg, dt)
        if not np.all(np.isfinite(self.critic.v)):
            raise CriticDivergence(f"critic weights became non-finite at step {self.steps}")
        if self.steps > 0 and self.steps % self.cfg.replay_every == 0:
            self.buffer.add(snap)
        lam = lambda_j(self.critic, a, du_dz, cfg.eta_w)
        if self.integrator is None:
            self.integrator = LatentIntegrator.start(self.w, e)
        v_lam = lam @ self.critic.v
        self.w = update_adaptor(self.w, self.critic.v, lam, e, dt)
        self.z, self.integrator = latent_update(self.integrator, self.w, e, v_lam, dt)
        self.steps += 1
        self.last = {"r": r, "V": float(v_before @ a), "td": delta,
                     "z_norm": float(np.linalg.norm(self.z))}
        return self.z
