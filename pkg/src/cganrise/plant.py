"""Planar two-link manipulator with friction, payload and external disturbance.

Joint angles are measured from the horizontal. The equations of motion are

    M(q) qdd + h(q, qd) + d + tau_f = u

with eta1 = (m1 + m2) l1^2, eta2 = m2 l2^2, eta3 = m2 l1 l2, eta4 = g / l1 and
tau_f = Fs sgn(qd) + Fv qd. A payload scales m2 by ``1 + payload_fraction``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

UNCERTAIN_FIELDS = ("m1", "m2", "l1", "l2", "Fs1", "Fs2", "Fv1", "Fv2")
DIVERGENCE_LIMIT = 1e6


class PlantDivergence(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class PlantParams:
    m1: float = 7.0
    m2: float = 4.0
    l1: float = 0.5
    l2: float = 0.5
    Fs1: float = 0.8
    Fs2: float = 0.8
    Fv1: float = 4.0
    Fv2: float = 4.0
    g: float = 9.8
    payload_fraction: float = 0.0

    def __post_init__(self):
        if min(self.m1, self.m2, self.l1, self.l2) <= 0:
            raise ValueError("masses and lengths must be positive")
        if min(self.Fs1, self.Fs2, self.Fv1, self.Fv2) < 0:
            raise ValueError("friction coefficients must be non-negative")
        if self.g <= 0:
            raise ValueError("gravity must be positive")
        if self.payload_fraction <= -1:
            raise ValueError("payload_fraction must exceed -1")

    @property
    def m2_eff(self) -> float:
        return self.m2 * (1.0 + self.payload_fraction)

    @property
    def eta(self) -> np.ndarray:
        m2 = self.m2_eff
        return np.array([(self.m1 + m2) * self.l1 ** 2, m2 * self.l2 ** 2,
                         m2 * self.l1 * self.l2, self.g / self.l1])

    def theta(self) -> np.ndarray:
        """The eight uncertain physical parameters, in UNCERTAIN_FIELDS order."""
        return np.array([getattr(self, f) for f in UNCERTAIN_FIELDS])

    def with_theta(self, theta) -> "PlantParams":
        return replace(self, **dict(zip(UNCERTAIN_FIELDS, map(float, theta))))

    def with_payload(self, fraction: float) -> "PlantParams":
        return replace(self, payload_fraction=float(fraction))

    def to_dict(self) -> dict:
        return asdict(self)


TABLE_II = PlantParams()


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float))


@dataclass(frozen=True)
class DisturbanceSpec:
    """Sum of sinusoids per joint: d_i(t) = sum_k A_ik sin(w_ik t + phi_ik).

    ``kind`` is ``"none"``, ``"benchmark_sinusoid"`` (d = [-80 sin 10t, 30 cos 10t])
    or ``"custom"`` with explicit ``amplitude``, ``frequency`` and ``phase`` tables
    of shape (2, K).
    """
    kind: str = "none"
    amplitude: tuple = ()
    frequency: tuple = ()
    phase: tuple = ()

    @classmethod
    def none(cls) -> "DisturbanceSpec":
        return cls("none")

    @classmethod
    def benchmark(cls) -> "DisturbanceSpec":
        return cls("benchmark_sinusoid", ((-80.0,), (30.0,)), ((10.0,), (10.0,)),
                   ((0.0,), (np.pi / 2,)))

    def __post_init__(self):
        if self.kind not in ("none", "benchmark_sinusoid", "custom"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind != "none":
            a = np.asarray(self.amplitude, dtype=float)
            if a.shape != np.shape(self.frequency) or a.shape != np.shape(self.phase) \
                    or a.ndim != 2 or a.shape[0] != 2:
                raise ValueError("amplitude/frequency/phase tables must share shape (2, K)")
            object.__setattr__(self, "_cache", tuple(np.asarray(x, dtype=float) for x in
                                                     (self.amplitude, self.frequency, self.phase)))

    def _tables(self):
        return self._cache

    def __call__(self, t: float, order: int = 0) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(2)
        a, w, p = self._tables()
        if order:
            a = a * w ** order
        return (a * np.sin(w * t + p + order * np.pi / 2)).sum(axis=1)

    def bounds(self) -> tuple[float, float, float]:
        """Upper bounds (c_d0, c_d1, c_d2) on |d|, |d'|, |d''| (Euclidean)."""
        if self.kind == "none":
            return 0.0, 0.0, 0.0
        a, w, _ = self._tables()
        return tuple(float(np.linalg.norm(np.sum(np.abs(a) * w ** k, axis=1)))
                     for k in range(3))


def inertia(q, params: PlantParams) -> np.ndarray:
    e1, e2, e3, _ = params.eta
    c2 = np.cos(q[1])
    m12 = e2 + e3 * c2
    return np.array([[e1 + e2 + 2 * e3 * c2, m12], [m12, e2]])


def bias_torque(q, qdot, params: PlantParams) -> np.ndarray:
    """Coriolis, gravity and friction torques (everything except M qdd, d, u)."""
    e1, e2, e3, e4 = params.eta
    s2 = np.sin(q[1])
    g12 = e3 * e4 * np.cos(q[0] + q[1])
    h1 = -e3 * (2 * qdot[0] * qdot[1] + qdot[1] ** 2) * s2 + e4 * e1 * np.cos(q[0]) + g12
    h2 = e3 * qdot[0] ** 2 * s2 + g12
    fric = (np.array([params.Fs1, params.Fs2]) * np.sign(qdot)
            + np.array([params.Fv1, params.Fv2]) * qdot)
    return np.array([h1, h2]) + fric


def forward_dynamics(state: PlantState, u, params: PlantParams, d=None) -> np.ndarray:
    q, qdot = state.q, state.qdot
    u = np.asarray(u, dtype=float)
    d = np.zeros(2) if d is None else np.asarray(d, dtype=float)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))
            and np.all(np.isfinite(u)) and np.all(np.isfinite(d))):
        raise ValueError("non-finite input to forward_dynamics")
    return _accel(q, qdot, u, d, params)


def _accel(q, qdot, u, d, params):
    m = inertia(q, params)
    rhs = u - d - bias_torque(q, qdot, params)
    # closed-form 2x2 solve
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return np.array([m[1, 1] * rhs[0] - m[0, 1] * rhs[1],
                     m[0, 0] * rhs[1] - m[1, 0] * rhs[0]]) / det


def _accel_coefs(params: PlantParams) -> tuple:
    e1, e2, e3, e4 = (float(v) for v in params.eta)
    return e1, e2, e3, e4, params.Fs1, params.Fs2, params.Fv1, params.Fv2


def _sign(x: float) -> float:
    return (x > 0) - (x < 0)


def _accel_fast(q1, q2, v1, v2, u1, u2, coef):
    """Scalar twin of :func:`_accel` with the disturbance already folded into u."""
    e1, e2, e3, e4, fs1, fs2, fv1, fv2 = coef
    c2, s2 = math.cos(q2), math.sin(q2)
    g12 = e3 * e4 * math.cos(q1 + q2)
    h1 = -e3 * (2 * v1 * v2 + v2 * v2) * s2 + e4 * e1 * math.cos(q1) + g12 \
        + fs1 * _sign(v1) + fv1 * v1
    h2 = e3 * v1 * v1 * s2 + g12 + fs2 * _sign(v2) + fv2 * v2
    m11, m12 = e1 + e2 + 2 * e3 * c2, e2 + e3 * c2
    r1, r2 = u1 - h1, u2 - h2
    det = m11 * e2 - m12 * m12
    return (e2 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det


def inverse_dynamics(q, qdot, qddot, params: PlantParams) -> np.ndarray:
    """Torque realizing ``qddot``; vectorized over trailing time axis if given (2, N)."""
    q, qdot, qddot = (np.asarray(a, dtype=float) for a in (q, qdot, qddot))
    e1, e2, e3, e4 = params.eta
    c2, s2 = np.cos(q[1]), np.sin(q[1])
    g12 = e3 * e4 * np.cos(q[0] + q[1])
    u1 = ((e1 + e2 + 2 * e3 * c2) * qddot[0] + (e2 + e3 * c2) * qddot[1]
          - e3 * (2 * qdot[0] * qdot[1] + qdot[1] ** 2) * s2 + e4 * e1 * np.cos(q[0]) + g12
          + params.Fs1 * np.sign(qdot[0]) + params.Fv1 * qdot[0])
    u2 = ((e2 + e3 * c2) * qddot[0] + e2 * qddot[1] + e3 * qdot[0] ** 2 * s2 + g12
          + params.Fs2 * np.sign(qdot[1]) + params.Fv2 * qdot[1])
    return np.array([u1, u2])


def mechanical_energy(state: PlantState, params: PlantParams) -> float:
    """Kinetic plus gravitational potential energy (point masses at link tips)."""
    e1, e2, e3, e4 = params.eta
    kinetic = 0.5 * state.qdot @ inertia(state.q, params) @ state.qdot
    # dV/dq1 = e4 e1 cos q1 + e3 e4 cos(q1+q2), dV/dq2 = e3 e4 cos(q1+q2)
    potential = e4 * e1 * np.sin(state.q[0]) + e3 * e4 * np.sin(state.q[0] + state.q[1])
    return float(kinetic + potential)


def step_rk4(state: PlantState, control, params: PlantParams,
             disturbance: DisturbanceSpec | None = None, dt: float = 1e-3,
             step: int | None = None) -> PlantState:
    """Advance one classical RK4 step with the control held over the step.

    ``control`` is a torque vector or a callable ``control(state) -> torque``
    evaluated once at the start of the step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(control(state) if callable(control) else control, dtype=float)
    dist = disturbance if disturbance is not None and disturbance.kind != "none" else None
    t = state.t
    coef = _accel_coefs(params)
    u1, u2 = float(u[0]), float(u[1])

    def f(tt, q1, q2, v1, v2):
        d1, d2 = dist(tt).tolist() if dist is not None else (0.0, 0.0)
        return _accel_fast(q1, q2, v1, v2, u1 - d1, u2 - d2, coef)

    # classical RK4 on (q, qd) written out in scalars: this loop dominates run time
    q1, q2 = float(state.q[0]), float(state.q[1])
    w1, w2 = float(state.qdot[0]), float(state.qdot[1])
    h = dt / 2
    try:
        a1 = f(t, q1, q2, w1, w2)
        v2 = (w1 + h * a1[0], w2 + h * a1[1])
        a2 = f(t + h, q1 + h * w1, q2 + h * w2, *v2)
        v3 = (w1 + h * a2[0], w2 + h * a2[1])
        a3 = f(t + h, q1 + h * v2[0], q2 + h * v2[1], *v3)
        v4 = (w1 + dt * a3[0], w2 + dt * a3[1])
        a4 = f(t + dt, q1 + dt * v3[0], q2 + dt * v3[1], *v4)
    except (ValueError, OverflowError, ZeroDivisionError) as exc:
        raise PlantDivergence(f"plant state blew up at t={t:.4f}s: {exc}", step) from exc
    q_new = (q1 + dt / 6 * (w1 + 2 * v2[0] + 2 * v3[0] + v4[0]),
             q2 + dt / 6 * (w2 + 2 * v2[1] + 2 * v3[1] + v4[1]))
    qd_new = (w1 + dt / 6 * (a1[0] + 2 * a2[0] + 2 * a3[0] + a4[0]),
              w2 + dt / 6 * (a1[1] + 2 * a2[1] + 2 * a3[1] + a4[1]))
    # NaN fails every comparison, so "not <=" also catches non-finite values
    if not all(abs(x) <= DIVERGENCE_LIMIT for x in q_new + qd_new):
        raise PlantDivergence(f"plant state blew up at t={t + dt:.4f}s", step)
    return PlantState(q_new, qd_new, t + dt)


def sample_uncertain_params(nominal: PlantParams, fraction: float, seed=None) -> PlantParams:
    """Draw the eight uncertain parameters uniformly within +-fraction of nominal."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    if fraction == 0:
        return nominal
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = nominal.theta() * rng.uniform(1 - fraction, 1 + fraction, len(UNCERTAIN_FIELDS))
    return nominal.with_theta(theta)
