"""Truncated Fourier series (TFS) codec for periodic signals.

A signal with ``n`` channels is stored as a coefficient matrix ``C`` of shape
``(n, 2*H + 1)`` and evaluated as ``C @ kernel(omega, H, t)`` where the kernel
is ``[0.5, cos(wt), ..., cos(Hwt), sin(wt), ..., sin(Hwt)]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SAMPLES_PER_PERIOD = 200


@dataclass(frozen=True)
class TfsCoefficients:
    coeffs: np.ndarray
    omega: float
    n_harmonics: int

    def __post_init__(self):
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "coeffs", coeffs)
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.n_harmonics < 0:
            raise ValueError("n_harmonics must be non-negative")
        if coeffs.shape[1] != 2 * self.n_harmonics + 1:
            raise ValueError(
                f"expected {2 * self.n_harmonics + 1} columns, got {coeffs.shape[1]}")

    @property
    def n_channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega

    def flat(self) -> np.ndarray:
        return self.coeffs.ravel()

    def to_dict(self) -> dict:
        return {"omega": self.omega, "n_harmonics": self.n_harmonics,
                "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TfsCoefficients":
        return cls(np.asarray(d["coeffs"], dtype=float), float(d["omega"]),
                   int(d["n_harmonics"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "TfsCoefficients":
        return cls.from_dict(json.loads(s))


def kernel(omega: float, n_harmonics: int, t) -> np.ndarray:
    """Evaluate the TFS kernel.

    Scalar ``t`` gives a vector of length ``2*n_harmonics + 1``; an array of
    times gives a matrix with one column per time.
    """
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    if n_harmonics < 0:
        raise ValueError("n_harmonics must be non-negative")
    t = np.asarray(t, dtype=float)
    j = np.arange(1, n_harmonics + 1).reshape((-1,) + (1,) * t.ndim)
    phase = j * omega * t
    half = np.full((1,) + t.shape, 0.5)
    return np.concatenate([half, np.cos(phase), np.sin(phase)], axis=0)


def kernel_derivative(omega: float, n_harmonics: int, t, order: int = 1) -> np.ndarray:
    """Time derivative of the kernel of the given order (the DC entry drops out)."""
    if order == 0:
        return kernel(omega, n_harmonics, t)
    t = np.asarray(t, dtype=float)
    j = np.arange(1, n_harmonics + 1).reshape((-1,) + (1,) * t.ndim)
    jw = j * omega
    phase = jw * t
    # d^k/dt^k cos = jw^k cos(phase + k pi/2), same shift for sin
    shift = order * np.pi / 2
    scale = jw ** order
    zero = np.zeros((1,) + t.shape)
    return np.concatenate([zero, scale * np.cos(phase + shift),
                           scale * np.sin(phase + shift)], axis=0)


def decode(c: TfsCoefficients, t, order: int = 0) -> np.ndarray:
    """Evaluate the signal (or its ``order``-th derivative) at time(s) ``t``.

    Returns shape ``(n_channels,)`` for scalar t, else ``(n_channels, len(t))``.
    """
    return c.coeffs @ kernel_derivative(c.omega, c.n_harmonics, t, order)


def sample_times(omega: float, n_samples: int = SAMPLES_PER_PERIOD, t0: float = 0.0) -> np.ndarray:
    """Uniform sample times over one period, right endpoint excluded."""
    return t0 + np.arange(n_samples) * (2.0 * np.pi / omega) / n_samples


def encode(samples, omega: float, n_harmonics: int, dt: float | None = None,
           t0: float = 0.0, rtol: float = 1e-6) -> TfsCoefficients:
    """Project one period of uniformly sampled data onto the kernel basis.

    ``samples`` has shape ``(n_samples, n_channels)`` (or is 1-D for a single
    channel); sample ``k`` is taken at ``t0 + k*dt``. The window must span exactly
    one period, i.e. ``n_samples * dt == 2*pi/omega``. For periodic data the
    trapezoidal inner product reduces to a plain sum over the open window.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    n = s.shape[0]
    period = 2.0 * np.pi / omega
    if dt is None:
        dt = period / n
    if abs(n * dt - period) > rtol * period:
        raise ValueError(f"window {n * dt:.6g}s does not span one period {period:.6g}s")
    if n < 2 * (2 * n_harmonics + 1):
        raise ValueError(f"need at least {2 * (2 * n_harmonics + 1)} samples, got {n}")
    t = t0 + np.arange(n) * dt
    phi = kernel(omega, n_harmonics, t)
    # <s, cos> * 2/N; DC row carries an extra factor 2 to undo the 0.5 kernel weight
    coeffs = (2.0 / n) * (phi @ s).T
    coeffs[:, 0] *= 2.0
    return TfsCoefficients(coeffs, omega, n_harmonics)


def quadratic_weight(n_harmonics: int) -> np.ndarray:
    """Diagonal weight W with (1/T) int |C phi|^2 dt = trace(C W C^T).

    The 0.5 DC kernel weight makes the first entry 0.25.
    """
    w = np.full(2 * n_harmonics + 1, 0.5)
    w[0] = 0.25
    return np.diag(w)


def mean_square(c: TfsCoefficients) -> np.ndarray:
    """Per-channel time-averaged square over one period."""
    w = np.diag(quadratic_weight(c.n_harmonics))
    return (c.coeffs ** 2) @ w
