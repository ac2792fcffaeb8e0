"""Closed-form trajectories of symmetry-tied parameter combinations.

Continuous time is ``t = η(1−α)·n``, which is ``η·n`` for plain SGD. Forcing
series are indexed by optimizer step and live on that grid.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .oscillator import ForcingSeries, OscillatorParams, driven, first_order, homogeneous
from .optim import HyperParams, TrajectoryLog


class Method(str, enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"
    MOMENTUM = "momentum"
    ITO = "ito"


@dataclass(frozen=True)
class Prediction:
    times: np.ndarray
    values: np.ndarray
    method: Method
    source: str  # which logged series fed the prediction


class CoverageError(ValueError):
    """The forcing series does not reach the requested time or step."""


def _step_forcing(series, dt: float, t, scale: float = 1.0) -> ForcingSeries:
    """Per-step series on the optimizer grid, extended one panel by holding the last value."""
    f = np.asarray(series, dtype=np.float64)
    if f.size == 0:
        f = np.zeros(1)
    t_max = float(np.max(t)) if np.size(t) else 0.0
    if t_max > f.size * dt * (1 + 1e-12):
        raise CoverageError(f"series of {f.size} steps covers t <= {f.size * dt}, asked for {t_max}")
    return ForcingSeries(scale * np.append(f, f[-1]), dt)


# -------------------------------------------------------------------- SGD


def translation_sgd(s0: float, lam: float, t):
    return s0 * np.exp(-lam * np.asarray(t, dtype=np.float64))


def scale_sgd(n0: float, hyper: HyperParams, gradnorm, t, rule: str = "trapezoid"):
    """e^{−2λt}n0 + η∫e^{−2λ(t−τ)}|g_A(τ)|²dτ.

    ``rule="riemann"`` reproduces the online accumulator's sum exactly.
    """
    forcing = _step_forcing(gradnorm, hyper.dt, t, hyper.eta)
    return first_order(2.0 * hyper.lam, n0, forcing, t, rule=rule)


def rescale_sgd(d0: float, hyper: HyperParams, signed_gradnorm, t, rule: str = "trapezoid"):
    """Same law as :func:`scale_sgd` with the signed |g_A1|² − |g_A2|² series."""
    return scale_sgd(d0, hyper, signed_gradnorm, t, rule)


def stationary_angular_speed(hyper: HyperParams) -> float:
    if hyper.lam <= 0 or hyper.eta <= 0:
        raise ValueError("a stationary angular speed needs eta > 0 and lam > 0")
    return float(np.sqrt(2.0 * hyper.lam / hyper.eta))


def discrete_exact(kind: str, initial: float, hyper: HyperParams, series, n):
    """Unrolled SGD recursion for the conserved quantity at step(s) ``n``."""
    n_arr = np.asarray(n, dtype=np.int64)
    if np.any(n_arr < 0):
        raise ValueError("step must be non-negative")
    q = 1.0 - hyper.eta * hyper.lam
    if kind == "translation":
        out = initial * q ** n_arr.astype(np.float64)
    elif kind in ("scale", "rescale"):
        f = np.asarray(series, dtype=np.float64)
        if np.max(n_arr, initial=0) > f.size:
            raise CoverageError(f"series has {f.size} steps, asked for step {np.max(n_arr)}")
        sums = _kernels.decayed_cumsum(f, q * q, hyper.eta**2)
        out = q ** (2.0 * n_arr) * initial + sums[n_arr]
    else:
        raise ValueError(f"unknown symmetry kind {kind!r}")
    return out if out.ndim else float(out)


# --------------------------------------------------------------- momentum


def _inertia(hyper: HyperParams) -> float:
    """η(1−α)(1+β), twice the effective mass of the momentum flow."""
    return hyper.eta * (1.0 - hyper.alpha) * (1.0 + hyper.beta)


def translation_params(hyper: HyperParams) -> OscillatorParams:
    m = _inertia(hyper)
    return OscillatorParams((1.0 - hyper.beta) / m, float(np.sqrt(2.0 * hyper.lam / m)))


def scale_params(hyper: HyperParams) -> OscillatorParams:
    m = _inertia(hyper)
    return OscillatorParams((1.0 - hyper.beta) / m, float(np.sqrt(4.0 * hyper.lam / m)))


def translation_momentum(s0: float, hyper: HyperParams, t):
    return homogeneous(translation_params(hyper), s0, t)


def _velocity_forcing(velocity, hyper: HyperParams, t) -> ForcingSeries:
    """f = 2|dθ/dt|² with dθ/dt ≈ −v/(1−α); v after step i sits at t_{i+1}, and v(0) = 0."""
    v = np.asarray(velocity, dtype=np.float64)
    f = np.concatenate([[0.0], 2.0 * v / (1.0 - hyper.alpha) ** 2])
    t_max = float(np.max(t)) if np.size(t) else 0.0
    if t_max > (f.size - 1) * hyper.dt * (1 + 1e-12):
        raise CoverageError(f"velocity series covers t <= {(f.size - 1) * hyper.dt}, asked for {t_max}")
    return ForcingSeries(f, hyper.dt)


def scale_momentum(n0: float, hyper: HyperParams, velocity, t, rule: str = "trapezoid"):
    """Driven oscillator for |θ_A|² under momentum, forced by the velocity-norm series."""
    return driven(scale_params(hyper), n0, _velocity_forcing(velocity, hyper, t), t, rule=rule)


def rescale_momentum(d0: float, hyper: HyperParams, signed_velocity, t, rule: str = "trapezoid"):
    return scale_momentum(d0, hyper, signed_velocity, t, rule)


# -------------------------------------------------------------------- Itô


def ito_scale_ode(n0: float, hyper: HyperParams, gradnorm, trace, t, sample_dt: float | None = None):
    """First-order law forced by η(|ḡ_A|² + trace), trace = per-batch gradient covariance trace on A.

    ``gradnorm`` and ``trace`` share a uniform grid of spacing ``sample_dt``
    (the optimizer step by default).
    """
    if trace is None:
        raise ValueError("the Itô prediction needs a noise-trace series")
    g = np.asarray(gradnorm, dtype=np.float64)
    tr = np.asarray(trace, dtype=np.float64)
    if g.shape != tr.shape:
        raise ValueError("gradnorm and trace series must align")
    if sample_dt is None:
        forcing = _step_forcing(g + tr, hyper.dt, t, hyper.eta)
    else:
        forcing = ForcingSeries(hyper.eta * (g + tr), sample_dt)
    return first_order(2.0 * hyper.lam, n0, forcing, t)


# ---------------------------------------------------------- whole-log view


def predict_log(log: TrajectoryLog, methods=tuple(Method)) -> dict[Method, np.ndarray]:
    """Predictions aligned with ``log.conserved``; NaN where a method does not apply.

    Continuous, discrete and Itô predictions describe plain SGD runs; the
    oscillator prediction applies to every run (plain SGD is its β=α=0 case).
    """
    hyper = log.hyper
    t, steps = log.times, log.steps
    q0 = log.conserved[0]
    out: dict[Method, np.ndarray] = {}
    for m in map(Method, methods):
        P = np.full(log.conserved.shape, np.nan)
        for d, kind in enumerate(log.kinds):
            P[:, d] = _predict_one(m, kind, q0[d], hyper, log, d, t, steps)
        out[m] = P
    return out


def _predict_one(method, kind, q0, hyper, log, d, t, steps):
    nan = np.full(t.shape, np.nan)
    if method is Method.MOMENTUM:
        if kind == "translation":
            return translation_momentum(q0, hyper, t)
        return scale_momentum(q0, hyper, log.velocity[:, d], t)
    if hyper.momentum:
        return nan
    if method is Method.CONTINUOUS:
        if kind == "translation":
            return translation_sgd(q0, hyper.lam, t)
        return scale_sgd(q0, hyper, log.forcing[:, d], t)
    if method is Method.DISCRETE:
        return discrete_exact(kind, q0, hyper, log.forcing[:, d] if kind != "translation" else None, steps)
    if kind == "translation" or log.noise_steps.size < 2:
        return nan
    spacing = np.diff(log.noise_steps)
    if not np.all(spacing == spacing[0]):
        raise ValueError("noise statistics must be logged on a uniform step grid")
    t_noise = log.noise_steps[-1] * hyper.dt
    inside = t <= t_noise * (1 + 1e-12)
    res = nan.copy()
    res[inside] = ito_scale_ode(
        q0, hyper, log.noise_drift[:, d], log.noise_trace[:, d], t[inside], sample_dt=spacing[0] * hyper.dt
    )
    return res


def relative_error(pred: np.ndarray, empirical: np.ndarray, magnitude: np.ndarray) -> np.ndarray:
    """|pred − emp| normalized by the constituent magnitude of the conserved quantity."""
    return np.abs(pred - empirical) / np.maximum(magnitude, 1e-300)
