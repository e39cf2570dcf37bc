"""Indirect adaptation: joint state/parameter EKF, dataset D3 and the adaptor
network that decodes estimated parameters into the generator's latent noise.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import cgan, nn, tfs
from .plant import UNCERTAIN_FIELDS, PlantParams

log = logging.getLogger(__name__)

N_THETA = len(UNCERTAIN_FIELDS)
N_AUG = 4 + N_THETA


class IdentifierDivergence(RuntimeError):
    pass


# --- EKF ----------------------------------------------------------------------

@dataclass(frozen=True)
class EkfConfig:
    state_var: float = 1e-9          # per step at 1 kHz
    theta_var: float = 1e-8
    meas_sigma: float = 1e-4
    fd_step: float = 1e-6
    init_state_var: float = 1e-4
    init_theta_rel: float = 0.3      # prior std as a fraction of the nominal value
    # estimates are projected onto [floor, ceiling] x nominal, the prior uncertainty box
    theta_floor_rel: float = 0.5
    theta_ceiling_rel: float = 1.5
    g: float = 9.8

    def __post_init__(self):
        if min(self.state_var, self.theta_var, self.meas_sigma, self.fd_step) <= 0:
            raise ValueError("noise levels and finite-difference step must be positive")


@dataclass
class EkfEstimate:
    mean: np.ndarray          # [q(2), qdot(2), theta(8)]
    cov: np.ndarray           # (12, 12)
    Qk: np.ndarray
    Rk: np.ndarray
    floor: np.ndarray         # lower clip on theta
    ceiling: np.ndarray | None = None

    @property
    def theta(self) -> np.ndarray:
        return self.mean[4:]

    def copy(self) -> "EkfEstimate":
        return EkfEstimate(self.mean.copy(), self.cov.copy(), self.Qk, self.Rk, self.floor,
                           self.ceiling)


def ekf_init(q0, qdot0, theta0, cfg: EkfConfig | None = None,
             nominal: PlantParams | None = None) -> EkfEstimate:
    cfg = cfg or EkfConfig()
    nominal = nominal or PlantParams()
    theta0 = np.asarray(theta0, dtype=float)
    scale = nominal.theta()
    cov = np.diag(np.r_[np.full(4, cfg.init_state_var), (cfg.init_theta_rel * scale) ** 2])
    Qk = np.diag(np.r_[np.full(4, cfg.state_var), np.full(N_THETA, cfg.theta_var)])
    Rk = np.eye(2) * cfg.meas_sigma ** 2
    return EkfEstimate(np.r_[q0, qdot0, theta0].astype(float), cov, Qk, Rk,
                       cfg.theta_floor_rel * scale, cfg.theta_ceiling_rel * scale)


def augmented_dynamics(x, u, g: float = 9.8) -> np.ndarray:
    """d/dt of the augmented state; ``x`` is (12,) or (12, B), theta is constant."""
    x = np.asarray(x, dtype=float)
    q1, q2, v1, v2 = x[0], x[1], x[2], x[3]
    m1, m2, l1, l2, fs1, fs2, fv1, fv2 = x[4:12]
    e1 = (m1 + m2) * l1 ** 2
    e2 = m2 * l2 ** 2
    e3 = m2 * l1 * l2
    e4 = g / l1
    c2, s2 = np.cos(q2), np.sin(q2)
    g12 = e3 * e4 * np.cos(q1 + q2)
    h1 = -e3 * (2 * v1 * v2 + v2 ** 2) * s2 + e4 * e1 * np.cos(q1) + g12 + fs1 * np.sign(v1) + fv1 * v1
    h2 = e3 * v1 ** 2 * s2 + g12 + fs2 * np.sign(v2) + fv2 * v2
    m11, m12, m22 = e1 + e2 + 2 * e3 * c2, e2 + e3 * c2, e2
    r1, r2 = u[0] - h1, u[1] - h2
    det = m11 * m22 - m12 * m12
    a1 = (m22 * r1 - m12 * r2) / det
    a2 = (m11 * r2 - m12 * r1) / det
    zero = np.zeros_like(x[4:12])
    return np.concatenate([np.stack([v1, v2, a1, a2]), zero])


def transition(x, u, dt: float, g: float = 9.8) -> np.ndarray:
    """Discrete prediction: Euler step plus the dt^2/2 acceleration term on the angles."""
    f = augmented_dynamics(x, u, g)
    out = x + dt * f
    out[:2] += 0.5 * dt * dt * f[2:4]
    return out


def transition_jacobian(x, u, dt: float, h: float = 1e-6, g: float = 9.8) -> np.ndarray:
    """Jacobian of :func:`transition` by central differences, one batched evaluation."""
    n = x.size
    steps = h * np.maximum(1.0, np.abs(x))
    pert = np.diag(steps)
    batch = np.hstack([x[:, None] + pert, x[:, None] - pert])
    f = transition(batch, u, dt, g)
    return (f[:, :n] - f[:, n:]) / (2 * steps)


_H = np.hstack([np.eye(2), np.zeros((2, N_AUG - 2))])


def ekf_step(est: EkfEstimate, u, y, dt: float, cfg: EkfConfig | None = None) -> EkfEstimate:
    """One predict/update cycle with an angle measurement ``y``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = cfg or EkfConfig()
    u = np.asarray(u, dtype=float)
    x = est.mean
    F = transition_jacobian(x, u, dt, cfg.fd_step, cfg.g)
    x_pred = transition(x, u, dt, cfg.g)
    P = F @ est.cov @ F.T + est.Qk
    S = _H @ P @ _H.T + est.Rk
    K = np.linalg.solve(S, _H @ P).T
    x_new = x_pred + K @ (np.asarray(y, dtype=float) - x_pred[:2])
    # Joseph form keeps P symmetric positive semidefinite under rounding
    A = np.eye(N_AUG) - K @ _H
    P = A @ P @ A.T + K @ est.Rk @ K.T
    P = 0.5 * (P + P.T)
    x_new[4:] = np.clip(x_new[4:], est.floor, est.ceiling)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(P))):
        raise IdentifierDivergence("non-finite EKF estimate")
    if np.min(np.diag(P)) <= 0:
        w, v = np.linalg.eigh(P)
        if w[-1] <= 0:
            raise IdentifierDivergence("covariance lost positive definiteness")
        P = (v * np.maximum(w, 1e-12 * w[-1])) @ v.T
    return EkfEstimate(x_new, P, est.Qk, est.Rk, est.floor, est.ceiling)


# --- dataset D3 ------------------------------------------------------------------

@dataclass
class Episode:
    """Closed-loop record seen by the identifier: time, applied torque, measured angles."""
    t: np.ndarray
    u: np.ndarray             # (N, 2)
    y: np.ndarray             # (N, 2)
    label: np.ndarray
    target: np.ndarray        # flattened C_uss
    theta_true: np.ndarray | None = None


@dataclass
class DatasetD3:
    theta_hat: np.ndarray     # (N, 8)
    labels: np.ndarray
    targets: np.ndarray
    theta_true: np.ndarray | None = None
    n_x: int = 3
    n_u: int = 8
    excluded: int = 0

    def __post_init__(self):
        if not len(self.theta_hat) == len(self.labels) == len(self.targets):
            raise ValueError("D3 columns disagree in length")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "DatasetD3":
        tt = None if self.theta_true is None else self.theta_true[idx]
        return DatasetD3(self.theta_hat[idx], self.labels[idx], self.targets[idx], tt,
                         self.n_x, self.n_u)

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({"n_x": self.n_x, "n_u": self.n_u, "excluded": self.excluded}) + "\n")
            for i in range(len(self)):
                rec = {"theta_hat": self.theta_hat[i].tolist(), "label": self.labels[i].tolist(),
                       "target": self.targets[i].tolist()}
                if self.theta_true is not None:
                    rec["theta_true"] = self.theta_true[i].tolist()
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "DatasetD3":
        with open(path) as fh:
            head = json.loads(fh.readline())
            recs = [json.loads(line) for line in fh if line.strip()]
        tt = np.array([r["theta_true"] for r in recs]) if recs and "theta_true" in recs[0] else None
        return cls(np.array([r["theta_hat"] for r in recs]), np.array([r["label"] for r in recs]),
                   np.array([r["target"] for r in recs]), tt, head["n_x"], head["n_u"],
                   head.get("excluded", 0))


def run_identifier(ep: Episode, cfg: EkfConfig | None = None, nominal: PlantParams | None = None,
                   stride: int = 1) -> EkfEstimate:
    """Run the EKF along an episode (every ``stride``-th sample) from the nominal prior."""
    nominal = nominal or PlantParams()
    est = ekf_init(ep.y[0], np.zeros(2), nominal.theta(), cfg, nominal)
    for k in range(stride, len(ep.t), stride):
        dt = ep.t[k] - ep.t[k - stride]
        est = ekf_step(est, ep.u[k - stride], ep.y[k], dt, cfg)
    return est


def build_d3(episodes, cfg: EkfConfig | None = None, nominal: PlantParams | None = None,
             stride: int = 1, n_x: int = 3, n_u: int = 8) -> DatasetD3:
    """Terminal EKF estimates paired with each episode's label and target."""
    rows, excluded = [], 0
    for i, ep in enumerate(episodes):
        try:
            est = run_identifier(ep, cfg, nominal, stride)
        except (IdentifierDivergence, np.linalg.LinAlgError) as exc:
            excluded += 1
            log.warning("episode %d excluded: %s", i, exc)
            continue
        rows.append((est.theta.copy(), ep.label, ep.target, ep.theta_true))
    if not rows:
        raise IdentifierDivergence("every identifier episode diverged")
    tt = None if any(r[3] is None for r in rows) else np.array([r[3] for r in rows])
    return DatasetD3(np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
                     np.array([r[2] for r in rows]), tt, n_x, n_u, excluded)


# --- adaptor ---------------------------------------------------------------------

def adaptor_weight(n_u: int, n_channels: int = 2) -> np.ndarray:
    """Diagonal of P for flattened coefficients, repeated per channel."""
    return np.tile(np.diag(tfs.quadratic_weight(n_u)), n_channels)


def adaptor_loss(c_uss, c_hat, p_diag) -> float | np.ndarray:
    """trace((C - C^) P (C - C^)^T) on flattened rows; batched over leading axes."""
    diff = np.asarray(c_uss, dtype=float) - np.asarray(c_hat, dtype=float)
    return np.sum(diff * diff * p_diag, axis=-1)


@dataclass
class AdaptorConfig:
    hidden: int = 32
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0


@dataclass
class AdaptorIndirect:
    net: nn.Mlp
    theta_norm: cgan.NormStats
    latent_dim: int

    def to_dict(self) -> dict:
        return {"net": self.net.to_dict(), "theta_norm": self.theta_norm.to_dict(),
                "latent_dim": self.latent_dim}

    @classmethod
    def from_dict(cls, d) -> "AdaptorIndirect":
        return cls(nn.Mlp.from_dict(d["net"]), cgan.NormStats.from_dict(d["theta_norm"]),
                   d["latent_dim"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "AdaptorIndirect":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def make_adaptor(model: cgan.CganModel, nominal: PlantParams | None = None,
                 config: AdaptorConfig | None = None, uncertainty: float = 0.5) -> AdaptorIndirect:
    """Fresh adaptor; theta is normalized by the uniform prior around the nominal plant."""
    config = config or AdaptorConfig()
    nominal = nominal or PlantParams()
    n_label = model.label_norm.mean.size
    net = nn.glorot_init([N_THETA + n_label, config.hidden, model.latent_dim], config.seed)
    scale = nominal.theta() * uncertainty / np.sqrt(3.0)
    return AdaptorIndirect(net, cgan.NormStats(nominal.theta(), scale), model.latent_dim)


def _adaptor_input(adaptor: AdaptorIndirect, model: cgan.CganModel, theta_hat, labels):
    return np.hstack([adaptor.theta_norm.apply(np.atleast_2d(theta_hat)),
                      model.label_norm.apply(np.atleast_2d(labels))])


def adaptor_batch_loss(adaptor: AdaptorIndirect, model: cgan.CganModel, theta_hat, labels,
                       targets, p_diag=None, grad: bool = True):
    """Mean loss over a batch and, optionally, gradients for the adaptor parameters.

    The chain runs dLoss/dC^ through the frozen generator (to its z inputs) and
    then through the adaptor.
    """
    if p_diag is None:
        p_diag = adaptor_weight(model.n_u, model.n_channels)
    x = _adaptor_input(adaptor, model, theta_hat, labels)
    z, c_ad = nn.forward(adaptor.net, x)
    y_norm = model.label_norm.apply(np.atleast_2d(labels))
    out, c_gen = nn.forward(model.generator, np.hstack([z, y_norm]))
    c_hat = model.target_norm.invert(out)
    losses = adaptor_loss(np.atleast_2d(targets), c_hat, p_diag)
    m = len(losses)
    loss = float(losses.mean())
    if not grad:
        return loss, None
    d_chat = -2.0 * (np.atleast_2d(targets) - c_hat) * p_diag / m
    _, g_in = nn.backward(model.generator, c_gen, d_chat * model.target_norm.std)
    grads, _ = nn.backward(adaptor.net, c_ad, g_in[:, :model.latent_dim])
    return loss, grads


@dataclass
class AdaptorCurve:
    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,loss\n")
            for e, l in zip(self.epoch, self.loss):
                fh.write(f"{e},{l:.8g}\n")


def train_adaptor(d3: DatasetD3, adaptor: AdaptorIndirect, model: cgan.CganModel,
                  config: AdaptorConfig | None = None):
    """Adam on the mean adaptor loss with the generator frozen; returns ``(adaptor, curve)``.

    Epoch 0 of the curve is the loss before any update.
    """
    config = config or AdaptorConfig()
    if len(d3) == 0:
        raise ValueError("empty D3")
    rng = np.random.default_rng(config.seed + 1)
    opt = nn.adam_init(adaptor.net)
    p_diag = adaptor_weight(model.n_u, model.n_channels)
    curve = AdaptorCurve()
    full = lambda: adaptor_batch_loss(adaptor, model, d3.theta_hat, d3.labels, d3.targets,
                                      p_diag, grad=False)[0]
    curve.epoch.append(0)
    curve.loss.append(full())
    n = len(d3)
    bs = min(config.batch_size, n)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            _, grads = adaptor_batch_loss(adaptor, model, d3.theta_hat[idx], d3.labels[idx],
                                          d3.targets[idx], p_diag)
            try:
                nn.adam_step(adaptor.net, grads, opt, lr=config.lr)
            except ValueError as exc:
                raise cgan.TrainingDivergence(f"adaptor training diverged at epoch {epoch}") from exc
        loss = full()
        if not np.isfinite(loss):
            raise cgan.TrainingDivergence(f"non-finite adaptor loss at epoch {epoch}")
        curve.epoch.append(epoch)
        curve.loss.append(loss)
    return adaptor, curve


def indirect_z(adaptor: AdaptorIndirect, model: cgan.CganModel, theta_hat, label,
               clip: float = 3.0) -> np.ndarray:
    x = _adaptor_input(adaptor, model, theta_hat, label)[0]
    return np.clip(nn.predict(adaptor.net, x), -clip, clip)
