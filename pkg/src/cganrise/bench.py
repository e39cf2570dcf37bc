"""Closed-loop experiment runner, scenario catalog and tracking metrics."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import cgan, ekf_indirect, rise, rl_direct, tfs
from .plant import DisturbanceSpec, PlantDivergence, PlantParams, PlantState, inverse_dynamics, \
    sample_uncertain_params, step_rk4

log = logging.getLogger(__name__)

VARIANTS = ("direct", "indirect", "baseline", "oracle", "fixed-z")
LEARNED_VARIANTS = ("direct", "indirect", "fixed-z")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str                 # "payload" or "disturbance"
    value: object = None      # payload fraction, or a DisturbanceSpec (None switches it off)

    def __post_init__(self):
        if self.kind not in ("payload", "disturbance"):
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    name: str
    true_params: PlantParams
    trajectory: tfs.TfsCoefficients
    duration: float = 30.0
    events: tuple = ()
    variant: str = "direct"
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec.none)
    q0: tuple = (0.0, 0.0)
    dt: float = 1e-3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        times = [ev.time for ev in self.events]
        if times != sorted(times) or any(not 0 <= s <= self.duration for s in times):
            raise ValueError("events must be time-ordered within the duration")
        if self.dt <= 0 or self.duration <= 0:
            raise ValueError("dt and duration must be positive")

    def with_variant(self, variant: str) -> "Scenario":
        return replace(self, variant=variant)

    @property
    def label(self) -> np.ndarray:
        return cgan.make_label(self.trajectory)


@dataclass
class Models:
    cgan: cgan.CganModel | None = None
    adaptor: ekf_indirect.AdaptorIndirect | None = None


@dataclass
class BenchConfig:
    gains: rise.RiseGains = field(default_factory=rise.RiseGains)
    direct: rl_direct.DirectConfig = field(default_factory=rl_direct.DirectConfig)
    ekf: ekf_indirect.EkfConfig = field(default_factory=ekf_indirect.EkfConfig)
    ekf_stride: int = 2
    bias_u0: bool = True
    baseline_beta_rate: float = 5.0
    baseline_beta_max: float = 50.0
    fault_detector: bool = False
    detector: dict = field(default_factory=dict)


@dataclass
class EpisodeTrace:
    columns: list
    data: np.ndarray
    scenario: str = ""
    variant: str = ""
    seed: int = 0
    terminated: str = ""

    def col(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def cols(self, *names) -> np.ndarray:
        return np.column_stack([self.col(n) for n in names])

    @property
    def t(self) -> np.ndarray:
        return self.col("t")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            w.writerows(np.where(np.isfinite(self.data), self.data, np.nan).tolist())

    @classmethod
    def from_csv(cls, path) -> "EpisodeTrace":
        with open(path) as fh:
            rows = list(csv.reader(fh))
        return cls(rows[0], np.array(rows[1:], dtype=float))


BASE_COLUMNS = ["t", "q1", "q2", "qd1", "qd2", "xd1", "xd2", "u1", "u2", "uss1", "uss2",
                "ureg1", "ureg2", "xt1", "xt2", "e1", "e2", "reward", "V", "td", "z1", "z2",
                "z_norm", "lambda_min_pi", "rank_ok", "beta", "d_score", "fault_flag"]
EKF_COLUMNS = [f"theta_hat{i}" for i in range(1, 9)] + ["P_trace"]


def _true_feedforward(traj, params, t):
    q, qd, qdd = (tfs.decode(traj, t, k) for k in range(3))
    return inverse_dynamics(q, qd, qdd, params)


def run_episode(scenario: Scenario, models: Models | None = None, config: BenchConfig | None = None,
                seed: int = 0) -> EpisodeTrace:
    """Simulate one closed-loop episode and return its full trace.

    The applied torque is u = u_ss_hat + u_reg - u(0), where u(0) is the raw
    command at t = 0 (disabled by ``config.bias_u0 = False``). Plant divergence
    propagates as :class:`PlantDivergence`.
    """
    models = models or Models()
    cfg = config or BenchConfig()
    variant = scenario.variant
    model = models.cgan
    if variant in LEARNED_VARIANTS and model is None:
        raise ValueError(f"variant {variant!r} needs a trained CGAN")
    if variant == "indirect" and models.adaptor is None:
        raise ValueError("indirect variant needs a trained adaptor")
    rng = np.random.default_rng(seed)
    dt = scenario.dt
    n_steps = int(round(scenario.duration / dt))
    traj = scenario.trajectory
    label = scenario.label
    omega = traj.omega
    gains = cfg.gains
    lam0 = np.asarray(gains.lambda0, dtype=float)

    params = scenario.true_params
    dist = scenario.disturbance
    events = list(scenario.events)
    state = PlantState(np.array(scenario.q0, float), np.zeros(2), 0.0)
    rise_state = rise.RiseState.zeros(2)
    beta = gains.beta
    z = np.zeros(model.latent_dim) if model is not None else np.zeros(2)

    adapter = None
    if variant == "direct":
        adapter = rl_direct.DirectAdapter(replace(cfg.direct, seed=cfg.direct.seed + seed),
                                          model.latent_dim)
    est = None
    ekf_cfg = cfg.ekf
    if variant == "indirect":
        nominal = PlantParams()
        est = ekf_indirect.ekf_init(state.q, state.qdot, nominal.theta(), ekf_cfg, nominal)
        z = ekf_indirect.indirect_z(models.adaptor, model, est.theta, label)
    detector = None
    if cfg.fault_detector and model is not None:
        detector = cgan.FaultDetectorState(**cfg.detector)

    coeff_cache = {}
    times = np.arange(n_steps + 1) * dt
    # trajectory, kernel and exact feedforward tabulated once per episode
    xd_tab, xd_dot_tab = tfs.decode(traj, times), tfs.decode(traj, times, 1)
    ker_tab = tfs.kernel(omega, model.n_u, times) if model is not None else None
    ff_cache = {}

    def oracle_ff(k):
        if params not in ff_cache:
            ff_cache.clear()
            ff_cache[params] = _true_feedforward(traj, params, times)
        return ff_cache[params][:, k]

    def policy_coeffs(zz):
        key = tuple(np.round(zz, 12))
        if key not in coeff_cache:
            if len(coeff_cache) > 4:
                coeff_cache.clear()
            coeff_cache[key] = cgan.generated_coeffs(model, zz, label)
        return coeff_cache[key]

    cols = BASE_COLUMNS + (EKF_COLUMNS if est is not None else [])
    data = np.full((n_steps + 1, len(cols)), np.nan)
    bias = np.zeros(2)
    y_prev_u = None
    u = np.zeros(2)
    terminated = ""
    k_ekf = max(1, int(cfg.ekf_stride))

    for k in range(n_steps + 1):
        t = k * dt
        while events and events[0].time <= t + 1e-12:
            ev = events.pop(0)
            if ev.kind == "payload":
                params = params.with_payload(float(ev.value))
            else:
                dist = ev.value if ev.value is not None else DisturbanceSpec.none()
            log.debug("event %s at t=%.3f", ev.kind, t)

        xd, xd_dot = xd_tab[:, k], xd_dot_tab[:, k]
        x_t = state.q - xd
        x_t_dot = state.qdot - xd_dot
        e = rise.filtered_error(x_t, x_t_dot, lam0)

        if variant == "oracle":
            u_ss = oracle_ff(k)
        elif variant == "baseline":
            u_ss = np.zeros(2)
        else:
            u_ss = policy_coeffs(z).coeffs @ ker_tab[:, k]

        if variant == "baseline" and k > 0:
            beta = rise.baseline_adaptive_beta(e, beta, cfg.baseline_beta_rate,
                                               cfg.baseline_beta_max, dt)
        u_reg, rise_state = rise.rise_step(rise_state, e, gains, dt, beta)
        raw = u_ss + u_reg
        if k == 0 and cfg.bias_u0:
            bias = raw.copy()
        u = raw - bias

        row = data[k]
        row[:28] = [t, *state.q, *state.qdot, *xd, *u, *u_ss, *u_reg, *x_t, *e,
                    np.nan, np.nan, np.nan, *z[:2], np.linalg.norm(z), np.nan, np.nan,
                    beta, np.nan, np.nan]

        if adapter is not None:
            X = np.concatenate([x_t, x_t_dot, xd, xd_dot])
            jac = cgan.generator_jacobian_z(model, z, label)
            du_dz = rl_direct.torque_sensitivity(jac, ker_tab[:, k],
                                                 model.n_channels)
            z = adapter.step(X, u, e, du_dz, dt).copy()
            row[17:20] = adapter.last["r"], adapter.last["V"], adapter.last["td"]
            if adapter.steps % cfg.direct.replay_every == 1 and len(adapter.buffer):
                ok, lam = rl_direct.rank_check(adapter.buffer)
                adapter.last["rank"] = (ok, lam)
            ok, lam = adapter.last.get("rank", (False, 0.0))
            row[23:25] = lam, float(ok)
        else:
            row[17] = rl_direct.reward(x_t, u, cfg.direct.reward)

        if est is not None:
            if k > 0 and k % k_ekf == 0:
                y = state.q + ekf_cfg.meas_sigma * rng.standard_normal(2)
                est = ekf_indirect.ekf_step(est, y_prev_u, y, k_ekf * dt, ekf_cfg)
                z = ekf_indirect.indirect_z(models.adaptor, model, est.theta, label)
            if k % k_ekf == 0:
                y_prev_u = u.copy()
            row[28:36] = est.theta
            row[36] = np.trace(est.cov)

        if detector is not None:
            score, flag, _ = cgan.fault_step(detector, model, u, label, t, dt,
                                             float(np.linalg.norm(x_t)))
            row[26] = np.nan if score is None else score
            row[27] = float(flag)

        if k == n_steps:
            break
        state = step_rk4(state, u, params, dist, dt, step=k)

    return EpisodeTrace(cols, data, scenario.name, variant, seed, terminated)


# --- metrics --------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    IAE: float
    CE: float
    IAR: float
    J_p: float
    t_f: float
    Q: tuple = (2.0, 2.0)
    R1: tuple = (0.01, 0.01)
    R2: tuple = (0.002, 0.002)

    def to_dict(self) -> dict:
        return {"IAE": self.IAE, "CE": self.CE, "IAR": self.IAR, "J_p": self.J_p, "t_f": self.t_f}


def _trapz(y, t):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t))) if len(t) > 1 else 0.0


def compute_metrics(trace: EpisodeTrace, Q=(2.0, 2.0), R1=(0.01, 0.01), R2=(0.002, 0.002)) -> Metrics:
    """IAE, CE and IAR as trapezoidal integrals; u' by backward difference (0 at the start)."""
    t = trace.t
    x_t = trace.cols("xt1", "xt2")
    u = trace.cols("u1", "u2")
    u_dot = np.zeros_like(u)
    if len(t) > 1:
        u_dot[1:] = np.diff(u, axis=0) / np.diff(t)[:, None]
    iae = _trapz(np.abs(x_t) @ np.asarray(Q, float), t)
    ce = _trapz(np.abs(u) @ np.asarray(R1, float), t)
    iar = _trapz(np.abs(u_dot) @ np.asarray(R2, float), t)
    return Metrics(iae, ce, iar, iae + ce + iar, float(t[-1] - t[0]) if len(t) else 0.0,
                   tuple(Q), tuple(R1), tuple(R2))


def metrics_record(trace: EpisodeTrace, metrics: Metrics) -> dict:
    return {"scenario": trace.scenario, "variant": trace.variant, **metrics.to_dict(),
            "seed": trace.seed}


def comparison_table(records) -> dict:
    """Rows are metric names, columns are variants (one record per variant)."""
    table = {}
    for name in ("IAE", "CE", "IAR", "J_p"):
        table[name] = {r["variant"]: r[name] for r in records}
    return table


def write_comparison_csv(records, path):
    variants = [r["variant"] for r in records]
    table = comparison_table(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", *variants])
        for name, row in table.items():
            w.writerow([name, *(f"{row[v]:.6g}" for v in variants)])


def write_metrics_json(records, path):
    with open(path, "w") as fh:
        json.dump(records if len(records) != 1 else records[0], fh, indent=2)


# --- scenarios ------------------------------------------------------------------

BASE_SCENARIOS = ("sim1", "sim2", "fault-demo")
DEFAULT_PLANT_SPREAD = 0.0


def true_plant(seed: int, spread: float = DEFAULT_PLANT_SPREAD,
               nominal: PlantParams | None = None) -> PlantParams:
    """Hidden plant used by the simulation scenarios: a seeded draw around nominal
    (the nominal plant itself when ``spread`` is 0)."""
    return sample_uncertain_params(nominal or PlantParams(), spread,
                                   np.random.default_rng([seed, 7]))


def scenario_catalog(seed: int = 0, spread: float = DEFAULT_PLANT_SPREAD,
                     variants=VARIANTS) -> list:
    """All base scenarios crossed with the requested controller variants.

    sim1 and sim2 run on a seeded uncertain plant; the fault demo runs on the
    nominal plant so its healthy phase matches the generator's training center.
    """
    traj = cgan.reference_trajectory()
    plant = true_plant(seed, spread)
    base = [
        Scenario("sim1", plant, traj, 30.0, (Event(22.0, "payload", 0.25),)),
        Scenario("sim2", plant, traj, 30.0, (), disturbance=DisturbanceSpec.benchmark()),
        Scenario("fault-demo", PlantParams(), traj, 30.0, (Event(18.0, "payload", 0.60),)),
    ]
    return [s.with_variant(v) for s in base for v in variants]


def find_scenario(name: str, variant: str = "direct", seed: int = 0, **kw) -> Scenario:
    for s in scenario_catalog(seed, **kw):
        if s.name == name and s.variant == variant:
            return s
    raise KeyError(f"unknown scenario {name!r}; catalog: {', '.join(BASE_SCENARIOS)}")


def steady_error(trace: EpisodeTrace, t0: float, t1: float) -> float:
    """max ||x~||_inf over [t0, t1]."""
    t = trace.t
    mask = (t >= t0) & (t <= t1)
    return float(np.max(np.abs(trace.cols("xt1", "xt2")[mask])))


# --- identifier episodes ----------------------------------------------------------

def collect_episodes(data: cgan.DatasetD2, duration: float = 10.0, seed: int = 0,
                     ekf: ekf_indirect.EkfConfig | None = None,
                     gains: rise.RiseGains | None = None, dt: float = 1e-3,
                     nominal: PlantParams | None = None) -> list:
    """Closed-loop runs on each record's plant and trajectory for the identifier.

    Each run uses exact feedforward plus RISE so the arm follows the record's
    trajectory; the episode keeps only the applied torque and noisy angle
    measurements (plus the hidden truth for bookkeeping).
    """
    ekf = ekf or ekf_indirect.EkfConfig()
    nominal = nominal or PlantParams()
    rng = np.random.default_rng([seed, 11])
    cfg = BenchConfig(gains=gains or rise.RiseGains())
    episodes = []
    for i in range(len(data)):
        params = nominal.with_theta(data.thetas[i])
        traj = cgan.split_label(data.labels[i], data.n_x)
        sc = Scenario(f"d1-{i}", params, traj, duration, (), "oracle", dt=dt,
                      q0=tuple(tfs.decode(traj, 0.0)))
        tr = run_episode(sc, config=cfg, seed=seed)
        y = tr.cols("q1", "q2") + ekf.meas_sigma * rng.standard_normal((len(tr.t), 2))
        episodes.append(ekf_indirect.Episode(tr.t, tr.cols("u1", "u2"), y, data.labels[i],
                                             data.targets[i], data.thetas[i]))
    return episodes


# --- empirical region of attraction ---------------------------------------------

def is_stabilizing(k: float, initial_error: float, duration: float = 6.0, tol: float = 0.05,
                   window: float = 1.0, direction=(1.0, 1.0), gains: rise.RiseGains | None = None,
                   params: PlantParams | None = None, dt: float = 1e-3) -> bool:
    """Oracle-feedforward RISE run from x~(0) = initial_error * direction/|direction|.

    Stabilizing means the run stays bounded and ||x~||_inf over the last
    ``window`` seconds is below ``tol``.
    """
    traj = cgan.reference_trajectory()
    d = np.asarray(direction, float)
    q0 = tfs.decode(traj, 0.0) + initial_error * d / np.linalg.norm(d)
    g = replace(gains or rise.RiseGains(), k=float(k))
    sc = Scenario("roa", params or PlantParams(), traj, duration, (), "oracle", q0=tuple(q0), dt=dt)
    try:
        tr = run_episode(sc, config=BenchConfig(gains=g))
    except PlantDivergence:
        return False
    return steady_error(tr, duration - window, duration) < tol


def min_stabilizing_k(initial_error: float, k_lo: float = 0.05, k_hi: float = 50.0,
                      iters: int = 10, **kw) -> float:
    """Bisection (in log k) for the smallest stabilizing gain; assumes monotonicity in k.

    Returns ``k_lo`` if even that stabilizes and ``inf`` if ``k_hi`` does not.
    """
    if is_stabilizing(k_lo, initial_error, **kw):
        return k_lo
    if not is_stabilizing(k_hi, initial_error, **kw):
        return np.inf
    lo, hi = np.log(k_lo), np.log(k_hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if is_stabilizing(np.exp(mid), initial_error, **kw):
            hi = mid
        else:
            lo = mid
    return float(np.exp(hi))
