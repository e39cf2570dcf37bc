"""Conditional GAN over steady-state torque coefficients.

The generator maps ``[z, label]`` to the flattened TFS coefficients of the
steady-state torque; the label is the flattened desired-trajectory
coefficients followed by the fundamental frequency. Both are z-score
normalized inside the model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn, tfs
from .plant import PlantParams, inverse_dynamics, sample_uncertain_params

log = logging.getLogger(__name__)

N_JOINTS = 2
REFERENCE_OMEGA = 2 * np.pi
# high-harmonic torque coefficients vary by ~1e-5 N m across the dataset; z-scoring them to
# unit spread would make closed-loop noise look out of distribution
TARGET_REL_FLOOR = 1e-2


class TrainingDivergence(RuntimeError):
    pass


# --- trajectories and labels ---------------------------------------------------

def reference_trajectory(n_x: int = 3) -> tfs.TfsCoefficients:
    """x_d(t) = [pi/4 + 0.2 cos(2 pi t), sin(2 pi t)]."""
    c = np.zeros((N_JOINTS, 2 * n_x + 1))
    c[0, 0] = 2 * (np.pi / 4)
    c[0, 1] = 0.2
    c[1, n_x + 1] = 1.0
    return tfs.TfsCoefficients(c, REFERENCE_OMEGA, n_x)


@dataclass(frozen=True)
class TrajectoryFamily:
    """x_d,i(t) = a_i + b_i cos(w t + phi_i) with uniformly drawn a, b, phi, w.

    Defaults bracket the reference trajectory (a = [pi/4, 0], b = [0.2, 1],
    phi = [0, -pi/2], w = 2 pi).
    """
    offset: tuple = ((np.pi / 4 - 0.2, np.pi / 4 + 0.2), (-0.2, 0.2))
    amplitude: tuple = ((0.1, 0.3), (0.7, 1.2))
    phase: tuple = ((-0.5, 0.5), (-np.pi / 2 - 0.5, -np.pi / 2 + 0.5))
    omega: tuple = (0.8 * 2 * np.pi, 1.2 * 2 * np.pi)

    def sample(self, rng: np.random.Generator, n_x: int = 3) -> tfs.TfsCoefficients:
        w = rng.uniform(*self.omega)
        c = np.zeros((N_JOINTS, 2 * n_x + 1))
        for i in range(N_JOINTS):
            a = rng.uniform(*self.offset[i])
            b = rng.uniform(*self.amplitude[i])
            phi = rng.uniform(*self.phase[i])
            c[i, 0] = 2 * a
            # b cos(wt + phi) = b cos(phi) cos(wt) - b sin(phi) sin(wt)
            c[i, 1] = b * np.cos(phi)
            c[i, n_x + 1] = -b * np.sin(phi)
        return tfs.TfsCoefficients(c, w, n_x)


def make_label(c_xd: tfs.TfsCoefficients) -> np.ndarray:
    return np.concatenate([c_xd.flat(), [c_xd.omega]])


def split_label(label, n_x: int) -> tfs.TfsCoefficients:
    label = np.asarray(label, dtype=float)
    return tfs.TfsCoefficients(label[:-1].reshape(N_JOINTS, 2 * n_x + 1), float(label[-1]), n_x)


def steady_state_torque(c_xd: tfs.TfsCoefficients, params: PlantParams, t) -> np.ndarray:
    """Exact inverse-dynamics torque along the desired trajectory, shape (2, len(t))."""
    q, qd, qdd = (tfs.decode(c_xd, t, k) for k in range(3))
    return inverse_dynamics(q, qd, qdd, params)


# --- dataset ------------------------------------------------------------------

@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, floor: float = 1e-8, rel_floor: float = 0.0) -> "NormStats":
        """Per-dimension z-scoring; spreads below ``rel_floor`` x the largest are raised to it."""
        std = x.std(axis=0)
        std = np.maximum(std, rel_floor * std.max(initial=0.0))
        return cls(x.mean(axis=0), np.where(std > floor, std, 1.0))

    def apply(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


@dataclass
class DatasetD2:
    labels: np.ndarray          # (N, 2*(2n_x+1) + 1)
    targets: np.ndarray         # (N, 2*(2n_u+1))
    thetas: np.ndarray          # (N, 8) ground-truth parameters (bookkeeping only)
    n_x: int
    n_u: int
    label_norm: NormStats = None
    target_norm: NormStats = None
    skipped: int = 0

    def __post_init__(self):
        if self.labels.shape[1] != N_JOINTS * (2 * self.n_x + 1) + 1:
            raise ValueError("label width disagrees with n_x")
        if self.targets.shape[1] != N_JOINTS * (2 * self.n_u + 1):
            raise ValueError("target width disagrees with n_u")
        if self.label_norm is None:
            self.label_norm = NormStats.fit(self.labels)
        if self.target_norm is None:
            self.target_norm = NormStats.fit(self.targets, rel_floor=TARGET_REL_FLOOR)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "DatasetD2":
        """Rows ``idx`` sharing this dataset's normalization."""
        return DatasetD2(self.labels[idx], self.targets[idx], self.thetas[idx], self.n_x,
                         self.n_u, self.label_norm, self.target_norm)

    def target_coeffs(self, i: int) -> tfs.TfsCoefficients:
        return tfs.TfsCoefficients(self.targets[i].reshape(N_JOINTS, -1),
                                   float(self.labels[i, -1]), self.n_u)

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({"header": {
                "n_x": self.n_x, "n_u": self.n_u, "skipped": self.skipped,
                "label_norm": self.label_norm.to_dict(),
                "target_norm": self.target_norm.to_dict()}}) + "\n")
            for lab, tgt, th in zip(self.labels, self.targets, self.thetas):
                fh.write(json.dumps({"label": lab.tolist(), "target": tgt.tolist(),
                                     "theta": th.tolist()}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "DatasetD2":
        with open(path) as fh:
            header = json.loads(fh.readline())["header"]
            rows = [json.loads(line) for line in fh if line.strip()]
        return cls(np.array([r["label"] for r in rows]), np.array([r["target"] for r in rows]),
                   np.array([r["theta"] for r in rows]), header["n_x"], header["n_u"],
                   NormStats.from_dict(header["label_norm"]),
                   NormStats.from_dict(header["target_norm"]), header.get("skipped", 0))


def generate_dataset(nominal: PlantParams, uncertainty: float = 0.5,
                     family: TrajectoryFamily | None = None, n_samples: int = 2000,
                     seed=0, n_x: int = 3, n_u: int = 8,
                     samples_per_period: int = tfs.SAMPLES_PER_PERIOD) -> DatasetD2:
    """Sample plants and trajectories, and encode their inverse-dynamics torque."""
    family = family or TrajectoryFamily()
    rng = np.random.default_rng(seed)
    labels, targets, thetas = [], [], []
    skipped = 0
    for i in range(n_samples):
        params = sample_uncertain_params(nominal, uncertainty, rng) if uncertainty > 0 else nominal
        c_xd = family.sample(rng, n_x)
        t = tfs.sample_times(c_xd.omega, samples_per_period)
        u = steady_state_torque(c_xd, params, t)
        if not np.all(np.isfinite(u)):
            skipped += 1
            log.warning("sample %d: non-finite inverse dynamics, skipped", i)
            continue
        c_u = tfs.encode(u.T, c_xd.omega, n_u)
        labels.append(make_label(c_xd))
        targets.append(c_u.flat())
        thetas.append(params.theta())
    if len(labels) < 0.9 * n_samples:
        raise RuntimeError(f"dataset yield too low: {len(labels)}/{n_samples}")
    ds = DatasetD2(np.array(labels), np.array(targets), np.array(thetas), n_x, n_u)
    ds.skipped = skipped
    return ds


# --- model --------------------------------------------------------------------

@dataclass
class CganConfig:
    latent_dim: int = 2
    gen_hidden: tuple = (64, 64)
    dis_hidden: tuple = (64, 64)
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 600
    instance_noise: float = 0.0
    seed: int = 0


@dataclass
class CganModel:
    generator: nn.Mlp
    discriminator: nn.Mlp
    latent_dim: int
    n_x: int
    n_u: int
    label_norm: NormStats
    target_norm: NormStats
    n_channels: int = N_JOINTS

    @property
    def coeff_dim(self) -> int:
        return self.n_channels * (2 * self.n_u + 1)

    def to_dict(self) -> dict:
        return {"generator": self.generator.to_dict(),
                "discriminator": self.discriminator.to_dict(),
                "latent_dim": self.latent_dim, "n_x": self.n_x, "n_u": self.n_u,
                "n_channels": self.n_channels, "label_norm": self.label_norm.to_dict(),
                "target_norm": self.target_norm.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "CganModel":
        return cls(nn.Mlp.from_dict(d["generator"]), nn.Mlp.from_dict(d["discriminator"]),
                   d["latent_dim"], d["n_x"], d["n_u"], NormStats.from_dict(d["label_norm"]),
                   NormStats.from_dict(d["target_norm"]), d.get("n_channels", N_JOINTS))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "CganModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_model(data: DatasetD2, config: CganConfig) -> CganModel:
    rng = np.random.default_rng(config.seed)
    n_label = data.labels.shape[1]
    n_target = data.targets.shape[1]
    gen = nn.glorot_init([config.latent_dim + n_label, *config.gen_hidden, n_target], rng)
    dis_widths = [n_target + n_label, *config.dis_hidden, 1]
    dis = nn.glorot_init(dis_widths, rng,
                         ["leaky_relu"] * len(config.dis_hidden) + ["sigmoid"])
    return CganModel(gen, dis, config.latent_dim, data.n_x, data.n_u,
                     data.label_norm, data.target_norm)


@dataclass
class TrainingCurve:
    epoch: list = field(default_factory=list)
    loss_g: list = field(default_factory=list)
    loss_d: list = field(default_factory=list)
    real_score: list = field(default_factory=list)
    fake_score: list = field(default_factory=list)

    def append(self, *row):
        for name, value in zip(("epoch", "loss_g", "loss_d", "real_score", "fake_score"), row):
            getattr(self, name).append(float(value))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,loss_G,loss_D,mean_real_score,mean_fake_score\n")
            for row in zip(self.epoch, self.loss_g, self.loss_d, self.real_score, self.fake_score):
                fh.write(f"{int(row[0])},{row[1]:.8g},{row[2]:.8g},{row[3]:.8g},{row[4]:.8g}\n")


_EPS = 1e-12


def train_cgan(data: DatasetD2, config: CganConfig | None = None, model: CganModel | None = None):
    """Alternating minibatch training; returns ``(model, curve)``.

    Discriminator loss is the mean of the two binary cross-entropy terms, so
    both losses sit at log 2 at the adversarial equilibrium.
    """
    config = config or CganConfig()
    if len(data) == 0:
        raise ValueError("empty dataset")
    model = model or build_model(data, config)
    gen, dis = model.generator, model.discriminator
    rng = np.random.default_rng(config.seed + 1)
    y_all = data.label_norm.apply(data.labels)
    x_all = data.target_norm.apply(data.targets)
    n = len(data)
    bs = min(config.batch_size, n)
    opt_g, opt_d = nn.adam_init(gen), nn.adam_init(dis)
    adam = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    n_target = x_all.shape[1]
    noise = config.instance_noise
    curve = TrainingCurve()
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, n - bs + 1, bs):
            idx = perm[start:start + bs]
            x, y = x_all[idx], y_all[idx]
            m = len(idx)
            # discriminator step
            z = rng.standard_normal((m, config.latent_dim))
            fake = nn.predict(gen, np.hstack([z, y]))
            d_real, c_real = nn.forward(dis, np.hstack([x + noise * rng.standard_normal(x.shape), y]))
            d_fake, c_fake = nn.forward(dis, np.hstack([fake + noise * rng.standard_normal(x.shape), y]))
            loss_d = -0.5 * (np.mean(np.log(d_real + _EPS)) + np.mean(np.log(1 - d_fake + _EPS)))
            g_real, _ = nn.backward(dis, c_real, -0.5 / m / (d_real + _EPS))
            g_fake, _ = nn.backward(dis, c_fake, 0.5 / m / (1 - d_fake + _EPS))
            try:
                nn.adam_step(dis, [a + b for a, b in zip(g_real, g_fake)], opt_d, **adam)
            except ValueError as exc:
                raise TrainingDivergence(f"discriminator diverged at epoch {epoch}") from exc
            # generator step (non-saturating)
            z = rng.standard_normal((m, config.latent_dim))
            fake, c_gen = nn.forward(gen, np.hstack([z, y]))
            d_gen, c_dg = nn.forward(dis, np.hstack([fake + noise * rng.standard_normal(x.shape), y]))
            loss_g = -np.mean(np.log(d_gen + _EPS))
            _, g_in = nn.backward(dis, c_dg, -1.0 / m / (d_gen + _EPS))
            grads_g, _ = nn.backward(gen, c_gen, g_in[:, :n_target])
            try:
                nn.adam_step(gen, grads_g, opt_g, **adam)
            except ValueError as exc:
                raise TrainingDivergence(f"generator diverged at epoch {epoch}") from exc
            sums += (loss_g, loss_d, d_real.mean(), d_fake.mean())
            batches += 1
        sums /= max(batches, 1)
        if not np.all(np.isfinite(sums)):
            raise TrainingDivergence(f"non-finite loss at epoch {epoch}")
        curve.append(epoch, *sums)
    return model, curve


# --- inference ------------------------------------------------------------------

def _gen_input(model: CganModel, z, label) -> np.ndarray:
    return np.concatenate([np.asarray(z, dtype=float), model.label_norm.apply(label)])


def generated_coeffs(model: CganModel, z, label) -> tfs.TfsCoefficients:
    """De-normalized TFS coefficients of the generated steady-state torque."""
    out = nn.predict(model.generator, _gen_input(model, z, label))
    flat = model.target_norm.invert(out)
    return tfs.TfsCoefficients(flat.reshape(model.n_channels, -1), float(label[-1]), model.n_u)


def steady_state_policy(model: CganModel, z, label, t) -> np.ndarray:
    return tfs.decode(generated_coeffs(model, z, label), t)


def generator_jacobian_z(model: CganModel, z, label) -> np.ndarray:
    """d(flattened de-normalized coefficients)/dz, shape (coeff_dim, latent_dim)."""
    jac = nn.jacobian(model.generator, _gen_input(model, z, label),
                      columns=slice(0, model.latent_dim))
    return jac * model.target_norm.std[:, None]


def discriminator_score(model: CganModel, c_u: tfs.TfsCoefficients | np.ndarray, label) -> float:
    flat = c_u.flat() if isinstance(c_u, tfs.TfsCoefficients) else np.asarray(c_u, float)
    x = np.concatenate([model.target_norm.apply(flat), model.label_norm.apply(label)])
    return float(nn.predict(model.discriminator, x)[0])


def discriminator_scores(model: CganModel, targets, labels) -> np.ndarray:
    """Batched scores for raw (de-normalized) target rows and label rows."""
    x = np.hstack([model.target_norm.apply(targets), model.label_norm.apply(labels)])
    return nn.predict(model.discriminator, x)[:, 0]


def sample_generated(model: CganModel, labels, rng) -> np.ndarray:
    """Raw generated targets for each label row with z drawn from the prior."""
    labels = np.atleast_2d(labels)
    z = rng.standard_normal((len(labels), model.latent_dim))
    out = nn.predict(model.generator, np.hstack([z, model.label_norm.apply(labels)]))
    return model.target_norm.invert(out)


# --- fault detection ------------------------------------------------------------

@dataclass
class FaultDetectorState:
    """Moving one-period control window scored by the discriminator.

    Scores are refreshed every ``stride`` seconds and low-pass filtered with
    time constant ``tau``. Verdicts count only once the tracking error has
    stayed below ``steady_tol`` for a full period; after that the detector stays
    armed.
    """
    lo: float = 0.45
    hi: float = 0.55
    tau: float = 1.0
    stride: float = 0.02
    steady_tol: float = 0.5
    times: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    filtered: float | None = None
    raw: float | None = None
    last_score_t: float = -np.inf
    calm_since: float | None = None
    armed: bool = False

    def __post_init__(self):
        if not self.lo < 0.5 < self.hi:
            raise ValueError("ideal band must straddle 1/2")


def fault_step(det: FaultDetectorState, model: CganModel, u_sample, label, t: float,
               dt: float, e_norm: float = 0.0):
    """Feed one control sample; returns ``(filtered_score, flag, status)``.

    ``status`` is ``"warming-up"`` until the first full window, then ``"ok"`` or
    ``"fault"``.
    """
    omega = float(label[-1])
    period = 2 * np.pi / omega
    det.times.append(t)
    det.samples.append(np.asarray(u_sample, dtype=float))
    while det.times and det.times[0] < t - period - 2 * dt:
        det.times.pop(0)
        det.samples.pop(0)
    if e_norm < det.steady_tol:
        if det.calm_since is None:
            det.calm_since = t
        if t - det.calm_since >= period:
            det.armed = True
    else:
        det.calm_since = None
    if det.times[-1] - det.times[0] < period - 1.5 * dt:
        return None, False, "warming-up"
    if t - det.last_score_t >= det.stride - 1e-12:
        ts = tfs.sample_times(omega, tfs.SAMPLES_PER_PERIOD, t - period)
        u = np.array(det.samples)
        window = np.column_stack([np.interp(ts, det.times, u[:, i]) for i in range(u.shape[1])])
        c_u = tfs.encode(window, omega, model.n_u, t0=ts[0])
        det.raw = discriminator_score(model, c_u, label)
        det.last_score_t = t
        if det.filtered is None:
            det.filtered = det.raw
    det.filtered += dt / det.tau * (det.raw - det.filtered)
    flag = det.armed and not (det.lo <= det.filtered <= det.hi)
    return det.filtered, flag, "fault" if flag else "ok"
