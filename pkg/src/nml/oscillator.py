"""Closed-form solutions of first-order relaxation and damped harmonic oscillators.

Oscillators are written as ``x'' + 2γx' + ω²x = f(t)`` with ``x'(0) = 0``; forcing
enters through trapezoidal convolution with the Green's function.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels

CRITICAL_BAND = 1e-9
_SPLIT = 20.0  # beyond s*t > _SPLIT the hyperbolic terms are evaluated as exponentials


class Regime(enum.Enum):
    OVERDAMPED = "overdamped"
    CRITICAL = "critical"
    UNDERDAMPED = "underdamped"


@dataclass(frozen=True)
class OscillatorParams:
    gamma: float
    omega: float

    def __post_init__(self):
        if self.gamma < 0 or self.omega < 0:
            raise ValueError("gamma and omega must be non-negative")

    @property
    def discriminant(self) -> float:
        return self.gamma**2 - self.omega**2

    @property
    def regime(self) -> Regime:
        d = self.discriminant
        band = CRITICAL_BAND * max(self.gamma**2, self.omega**2)
        if abs(d) <= band:
            return Regime.CRITICAL
        return Regime.OVERDAMPED if d > 0 else Regime.UNDERDAMPED

    @property
    def frequency(self) -> float:
        """sqrt(|γ² - ω²|); the damped angular frequency when underdamped."""
        return float(np.sqrt(abs(self.discriminant)))

    def half_period(self) -> float:
        if self.regime is not Regime.UNDERDAMPED:
            raise ValueError("half period is defined only in the underdamped regime")
        return float(np.pi / self.frequency)

    def first_zero(self) -> float:
        """Time of the first zero of the homogeneous solution (underdamped only)."""
        self.half_period()  # raises outside the underdamped regime
        s = self.frequency
        return float((np.pi - np.arctan2(s, self.gamma)) / s)


@dataclass(frozen=True)
class ForcingSeries:
    """Forcing samples ``values[i] = f(t0 + i*dt)``."""

    values: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("forcing needs a non-empty 1-d series")
        if not self.dt > 0:
            raise ValueError("forcing dt must be positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("forcing values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def t_end(self) -> float:
        return self.t0 + (self.values.size - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    def __call__(self, t):
        return np.interp(t, self.times, self.values)


class SupportError(ValueError):
    """Requested time lies outside the forcing support."""


def _check_support(forcing: ForcingSeries, t: np.ndarray) -> None:
    if forcing.t0 != 0.0:
        raise SupportError("forcing must start at t = 0")
    if np.any(t < 0) or np.any(t > forcing.t_end + 1e-9 * max(forcing.dt, forcing.t_end)):
        raise SupportError(f"t outside forcing support [0, {forcing.t_end}]")


# ------------------------------------------------------------- first order


def first_order(lam: float, x0: float, forcing: ForcingSeries | None, t, rule: str = "trapezoid"):
    """Solve ``x' + λx = f`` from ``x(0) = x0``.

    ``rule="riemann"`` applies the per-step update ``J ← e^{-λΔt}J + Δt f_k``,
    which is what an online accumulator computes.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    x = np.exp(-lam * t_arr) * x0
    if forcing is not None:
        x = x + _decay_integral(lam, forcing, t_arr, rule)
    return x if x.ndim else float(x)


def _decay_integral(lam, forcing, t, rule):
    _check_support(forcing, t)
    dt, f = forcing.dt, forcing.values
    if rule == "trapezoid":
        nodes = _kernels.trapz_decay_conv(f, dt, lam)
    elif rule == "riemann":
        nodes = _kernels.decayed_cumsum(f, np.exp(-lam * dt), dt)[: f.size]
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    k = np.minimum(np.floor(t / dt + 1e-9).astype(np.int64), f.size - 1)
    tk = k * dt
    h = np.clip(t - tk, 0.0, None)
    decay = np.exp(-lam * h)
    if rule == "trapezoid":
        partial = 0.5 * h * (decay * f[k] + forcing(t))
    else:
        partial = h * f[k] * np.where(h > 0, 1.0, 0.0)
    return decay * nodes[k] + partial


# ---------------------------------------------------------- harmonic oscillator


def _hyperbolic_parts(gamma: float, s: float, t: np.ndarray):
    """e^{-γt}cosh(st) and e^{-γt}sinh(st)/s without overflow or cancellation."""
    st = s * t
    small = st < _SPLIT
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(-gamma * t)
        ch_small = e * np.cosh(np.where(small, st, 0.0))
        sh_small = e * np.where(small, np.sinh(np.where(small, st, 0.0)) / s if s > 0 else t, 0.0)
        grow = np.exp((s - gamma) * t)
        fall = np.exp(-(s + gamma) * t)
        ch_big = 0.5 * (grow + fall)
        sh_big = 0.5 * (grow - fall) / s if s > 0 else np.zeros_like(t)
    return np.where(small, ch_small, ch_big), np.where(small, sh_small, sh_big)


def homogeneous(params: OscillatorParams, x0: float, t):
    """Free oscillator from ``x(0) = x0``, ``x'(0) = 0``."""
    t_arr = np.asarray(t, dtype=np.float64)
    g = params.gamma
    regime = params.regime
    s = params.frequency
    if regime is Regime.CRITICAL:
        x = np.exp(-g * t_arr) * (1.0 + g * t_arr)
    elif regime is Regime.OVERDAMPED:
        ch, sh_over_s = _hyperbolic_parts(g, s, t_arr)
        x = ch + g * sh_over_s
    else:
        e = np.exp(-g * t_arr)
        x = e * (np.cos(s * t_arr) + g * np.sin(s * t_arr) / s)
    x = x * x0
    return x if x.ndim else float(x)


def green(params: OscillatorParams, t):
    """Impulse response Θ(t) e^{-γt} sinh(st)/s (sin / t·e^{-γt} in the other regimes)."""
    t_arr = np.asarray(t, dtype=np.float64)
    g = params.gamma
    tp = np.clip(t_arr, 0.0, None)
    regime = params.regime
    s = params.frequency
    if regime is Regime.CRITICAL:
        G = tp * np.exp(-g * tp)
    elif regime is Regime.OVERDAMPED:
        G = _hyperbolic_parts(g, s, tp)[1]
    else:
        G = np.exp(-g * tp) * np.sin(s * tp) / s
    G = np.where(t_arr > 0, G, 0.0)
    return G if G.ndim else float(G)


def driven(params: OscillatorParams, x0: float, forcing: ForcingSeries, t, rule: str = "trapezoid"):
    """Homogeneous response plus ∫₀ᵗ G(t-τ) f(τ) dτ over the forcing grid."""
    t_arr = np.asarray(t, dtype=np.float64)
    _check_support(forcing, t_arr)
    xh = np.asarray(homogeneous(params, x0, t_arr))
    if rule not in ("trapezoid", "riemann"):
        raise ValueError(f"unknown quadrature rule {rule!r}")
    dt, f = forcing.dt, forcing.values
    kf = t_arr / dt
    on_grid = np.all(np.abs(kf - np.round(kf)) < 1e-9)
    if on_grid:
        G = np.asarray(green(params, forcing.times))
        conv = _kernels.green_conv(G, f, dt, trapezoid=(rule == "trapezoid"))
        conv_t = conv[np.round(kf).astype(np.int64)]
    else:
        conv_t = np.array([_conv_point(params, forcing, float(tt), rule) for tt in t_arr.ravel()])
        conv_t = conv_t.reshape(t_arr.shape)
    x = xh + conv_t
    return x if x.ndim else float(x)


def _conv_point(params, forcing, t, rule):
    dt, f = forcing.dt, forcing.values
    k = min(int(np.floor(t / dt + 1e-9)), f.size - 1)
    tau = dt * np.arange(k + 1)
    G = np.asarray(green(params, t - tau))
    if rule == "riemann":
        return float(dt * np.dot(G[:k], f[:k]) + (t - tau[k]) * G[k] * f[k])
    w = np.full(k + 1, dt)
    if k > 0:
        w[0] = w[-1] = 0.5 * dt
    else:
        w[0] = 0.0
    # last partial panel [τ_k, t]; G(0) = 0 at its right end
    h = t - tau[k]
    return float(np.dot(w * G, f[: k + 1]) + 0.5 * h * G[k] * f[k])
