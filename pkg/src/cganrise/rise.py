"""RISE regulator, filtered errors and stability-gain calculators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RiseGains:
    k: float = 20.0
    alpha: float = 5.0
    beta: float = 0.0
    lambda0: tuple = (4.0, 2.0)

    def __post_init__(self):
        if self.k <= 0 or self.alpha <= 0 or self.beta < 0:
            raise ValueError("need k > 0, alpha > 0, beta >= 0")
        if min(self.lambda0) <= 0:
            raise ValueError("lambda0 must be positive")


@dataclass
class RiseState:
    integral: np.ndarray
    prev_integrand: np.ndarray | None = None
    prev_e: np.ndarray | None = None

    @classmethod
    def zeros(cls, n: int = 2) -> "RiseState":
        return cls(np.zeros(n))


def filtered_error(x_tilde, x_tilde_dot, lambda0) -> np.ndarray:
    """e = x~' + Lambda0 x~ for second-order plants (lambda_1 = 1)."""
    return np.asarray(x_tilde_dot, dtype=float) + np.asarray(lambda0, dtype=float) * x_tilde


def error_manifold(e, e_dot, alpha: float) -> np.ndarray:
    return np.asarray(e_dot, dtype=float) + alpha * np.asarray(e, dtype=float)


def rise_step(state: RiseState, e, gains: RiseGains, dt: float, beta: float | None = None):
    """Advance the RISE law by one sample and return ``(u_reg, state)``.

    The first call only records the integrand; later calls accumulate the
    integral of alpha (k+1) e + beta sgn(e) with the trapezoidal rule.
    ``beta`` overrides ``gains.beta`` (used by the adaptive-beta baseline).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = np.asarray(e, dtype=float)
    b = gains.beta if beta is None else beta
    f = gains.alpha * (gains.k + 1) * e + b * np.sign(e)
    integral = state.integral
    if state.prev_integrand is not None:
        integral = integral + 0.5 * dt * (state.prev_integrand + f)
    u = -(gains.k + 1) * e - integral
    return u, RiseState(integral, f, e)


def baseline_adaptive_beta(e, beta: float, rate: float, beta_max: float, dt: float) -> float:
    """Stand-in adaptive-gain law: beta' = rate * |e|_1, clipped to [0, beta_max]."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    return float(np.clip(beta + dt * rate * np.sum(np.abs(e)), 0.0, beta_max))


# --- bounding function rho and stability calculators -------------------------

@dataclass(frozen=True)
class AffineRho:
    """rho(x) = c0 + c1 x."""
    c0: float = 0.0
    c1: float = 1.0

    def __post_init__(self):
        if self.c0 < 0 or self.c1 < 0:
            raise ValueError("rho must be non-negative and non-decreasing")

    def __call__(self, x: float) -> float:
        return self.c0 + self.c1 * x

    def inverse(self, y: float) -> float:
        if self.c1 == 0:
            return np.inf if y >= self.c0 else 0.0
        return max(0.0, (y - self.c0) / self.c1)


@dataclass(frozen=True)
class TabulatedRho:
    """Monotone piecewise-linear rho through (xs, ys); extrapolates the end slopes."""
    xs: tuple
    ys: tuple

    def __post_init__(self):
        xs, ys = np.asarray(self.xs, float), np.asarray(self.ys, float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise ValueError("need matching 1-D tables of length >= 2")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) < 0) or ys[0] < 0:
            raise ValueError("rho table must be increasing in x and non-decreasing, non-negative in y")

    def __call__(self, x: float) -> float:
        xs, ys = np.asarray(self.xs, float), np.asarray(self.ys, float)
        if x > xs[-1]:
            return float(ys[-1] + (ys[-1] - ys[-2]) / (xs[-1] - xs[-2]) * (x - xs[-1]))
        return float(np.interp(x, xs, ys))

    def inverse(self, y: float) -> float:
        xs, ys = np.asarray(self.xs, float), np.asarray(self.ys, float)
        if y > ys[-1]:
            slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
            return np.inf if slope == 0 else float(xs[-1] + (y - ys[-1]) / slope)
        if y <= ys[0]:
            return float(xs[0])
        return float(np.interp(y, ys, xs))


@dataclass(frozen=True)
class StabilityBounds:
    c_d1: float = 0.0
    c_d2: float = 0.0
    delta3_dot: float = 0.0
    delta3_ddot: float = 0.0
    c_M1: float = 0.0
    c_M1_dot: float = 0.0
    c_M2: float = 0.0
    epsilon: float = 0.5
    alpha_bar: float = 1.0
    g_upper: float = 1.0
    g_lower: float = 1.0
    eta_v: float = 1.0
    rho: object = field(default_factory=AffineRho)

    def __post_init__(self):
        consts = (self.c_d1, self.c_d2, self.delta3_dot, self.delta3_ddot, self.c_M1,
                  self.c_M1_dot, self.c_M2)
        if min(consts) < 0:
            raise ValueError("bounding constants must be non-negative")
        if self.g_upper <= 0 or self.g_lower <= 0 or self.eta_v <= 0:
            raise ValueError("g bounds and eta_v must be positive")

    def lyapunov_ratio(self) -> float:
        """alpha_max / alpha_min of the Lyapunov sandwich bound."""
        a_min = 0.5 * min(1.0, 1.0 / self.eta_v, 1.0 / self.g_upper)
        a_max = max(1.0, 1.0 / self.eta_v, 1.0 / (2.0 * self.g_lower))
        return a_max / a_min


def _check_eps(bounds: StabilityBounds):
    if not 0 < bounds.epsilon < bounds.alpha_bar <= 1:
        raise ValueError("need 0 < epsilon < alpha_bar <= 1")


def min_gain_beta(bounds: StabilityBounds, alpha: float) -> float:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return (bounds.delta3_dot + bounds.c_d1 + bounds.c_M1
            + (bounds.delta3_ddot + bounds.c_d2 + bounds.c_M1_dot + bounds.c_M2) / alpha)


def min_gain_k(bounds: StabilityBounds, xi0_norm: float, ub_xi: float = 0.0,
               alpha_ratio: float | None = None) -> float:
    """Smallest k whose region of attraction contains the initial extended error."""
    _check_eps(bounds)
    ratio = bounds.lyapunov_ratio() if alpha_ratio is None else alpha_ratio
    arg = max(np.sqrt(ratio) * xi0_norm, ub_xi)
    return bounds.rho(arg) ** 2 / (4.0 * (bounds.alpha_bar - bounds.epsilon))


@dataclass
class UltimateBounds:
    ok: bool
    ub_xi: float | None = None
    ub_v: float | None = None
    roa_radius: float | None = None
    failure: str = ""

    def to_dict(self) -> dict:
        return {"ok": self.ok, "UB_xi": self.ub_xi, "UB_v": self.ub_v,
                "RoA": self.roa_radius, "failure": self.failure}


def ultimate_bounds(bounds: StabilityBounds, k: float, beta: float, beta_d: float,
                    gamma: float, delta4: float, delta4_dot: float, p: int,
                    lambda_min_pi: float, a_dot_bar: float,
                    alpha_ratio: float | None = None) -> UltimateBounds:
    """Region-of-attraction radius and ultimate bounds on xi and the critic error."""
    _check_eps(bounds)
    margin = 2 * gamma ** 2 * lambda_min_pi - 2 * gamma * p * a_dot_bar - a_dot_bar
    if margin <= 0:
        return UltimateBounds(False, failure=(
            f"replay excitation condition violated: 2g^2 lmin(Pi) - 2 g p a' - a' = {margin:.4g} <= 0"))
    ratio = bounds.lyapunov_ratio() if alpha_ratio is None else alpha_ratio
    root = np.sqrt(ratio)
    ub_xi = root * abs(beta - beta_d) / bounds.epsilon
    num = gamma * delta4 + delta4_dot
    ub_v = root * max(num / gamma, 2 * gamma * p * num / margin)
    roa = bounds.rho.inverse(2 * np.sqrt(k * (bounds.alpha_bar - bounds.epsilon))) / root
    return UltimateBounds(True, float(ub_xi), float(ub_v), float(roa))
