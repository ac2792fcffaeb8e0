"""Continuous-time learning dynamics, integrated with fixed steps or solved exactly on quadratics."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from . import tensor as T
from .oscillator import OscillatorParams, homogeneous
from .optim import HyperParams
from .symmetry import SymmetryDescriptor, conserved_series


class FlowKind(str, enum.Enum):
    GRADIENT = "gradient"
    WEIGHT_DECAY = "weight-decay"
    MOMENTUM = "momentum"
    MODIFIED_LOSS = "modified-loss"
    MODIFIED_EQUATION = "modified-equation"
    MODIFIED_MOMENTUM = "modified-momentum"


class Integrator(str, enum.Enum):
    RK4 = "rk4"
    EULER = "euler"


class FlowDivergence(FloatingPointError):
    def __init__(self, time: float):
        super().__init__(f"flow state became non-finite at t = {time:.6g}")
        self.time = time


@dataclass(frozen=True)
class FlowSpec:
    kind: FlowKind
    hyper: HyperParams
    h: float
    horizon: float
    integrator: Integrator = Integrator.RK4

    def __post_init__(self):
        object.__setattr__(self, "kind", FlowKind(self.kind))
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not self.h > 0:
            raise ValueError("step h must be positive")
        if self.horizon < self.h:
            raise ValueError("horizon must be at least one step")

    @property
    def n_steps(self) -> int:
        n = self.horizon / self.h
        if abs(n - round(n)) > 1e-9 * n:
            raise ValueError("horizon must be a whole number of steps")
        return int(round(n))


@dataclass
class FlowTrajectory:
    times: np.ndarray
    states: np.ndarray
    conserved: np.ndarray  # (n_samples, n_descriptors)


def _field(kind: FlowKind, graph: T.Graph, batch, hyper: HyperParams):
    """Right-hand side f(state) of the first-order system for ``kind``."""
    eta, lam, beta = hyper.eta, hyper.lam, hyper.beta

    def grad(th):
        return graph.loss_and_grad(th, batch)[1]

    if kind is FlowKind.GRADIENT:
        return lambda th: -grad(th)
    if kind is FlowKind.WEIGHT_DECAY:
        return lambda th: -grad(th) - lam * th
    if kind is FlowKind.MOMENTUM:
        return lambda th: -(grad(th) + lam * th) / (1.0 - beta)
    if kind is FlowKind.MODIFIED_LOSS:

        def f(th):
            H = graph.hessian_operator(th, batch)
            return -H.grad - 0.5 * eta * H(H.grad)

        return f
    if kind is FlowKind.MODIFIED_EQUATION:

        def f(th):
            # regularized gradient u = g + λθ, regularized Hessian H + λI
            H = graph.hessian_operator(th, batch)
            u = H.grad + lam * th
            return -u - 0.5 * eta * (H(u) + lam * u)

        return f
    # second order: m θ'' + (1−β)θ' + λθ = −g as a system in (θ, θ')
    m = 0.5 * hyper.eta * (1.0 - hyper.alpha) * (1.0 + beta)
    n = graph.layout.size

    def f(state):
        th, u = state[:n], state[n:]
        return np.concatenate([u, (-grad(th) - lam * th - (1.0 - beta) * u) / m])

    return f


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _euler(f, y, h):
    return y + h * f(y)


def integrate(
    model,
    batch,
    spec: FlowSpec,
    descriptors: Sequence[SymmetryDescriptor] = (),
    theta0=None,
    sample_every: int = 1,
) -> FlowTrajectory:
    """Integrate a flow from ``theta0`` (the network's parameters by default) over the full batch.

    ``model`` is a built network or a bare :class:`~nml.tensor.Graph`.
    """
    graph = model if isinstance(model, T.Graph) else model.graph
    if theta0 is None:
        if isinstance(model, T.Graph):
            raise ValueError("a bare graph needs theta0")
        theta0 = model.theta
    th0 = np.array(theta0, dtype=np.float64)
    n = th0.size
    f = _field(spec.kind, graph, batch, spec.hyper)
    second_order = spec.kind is FlowKind.MODIFIED_MOMENTUM
    y = np.concatenate([th0, np.zeros(n)]) if second_order else th0
    step = _rk4 if spec.integrator is Integrator.RK4 else _euler

    times, states = [0.0], [th0.copy()]
    for k in range(1, spec.n_steps + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                y = step(f, y, spec.h)
        except (T.NumericalError, FloatingPointError):
            raise FlowDivergence(k * spec.h) from None
        if not np.all(np.isfinite(y)):
            raise FlowDivergence(k * spec.h)
        if k % sample_every == 0 or k == spec.n_steps:
            times.append(k * spec.h)
            states.append(y[:n].copy())
    S = np.array(states)
    C = conserved_series(descriptors, S) if descriptors else np.zeros((len(times), 0))
    return FlowTrajectory(np.array(times), S, C)


# ------------------------------------------------------------- quadratics


class QuadraticModel(str, enum.Enum):
    GD = "gd"
    GRADIENT = "gradient"
    MODIFIED_LOSS = "modified-loss"
    MOMENTUM = "momentum"
    MODIFIED_MOMENTUM = "modified-momentum"


def _spd_eig(A) -> tuple[np.ndarray, np.ndarray]:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0, atol=1e-12 * np.abs(A).max()):
        raise ValueError("A must be a symmetric square matrix")
    lam, Q = np.linalg.eigh(A)
    if lam.min() <= 0:
        raise ValueError("A must be positive definite")
    return lam, Q


def quadratic_exact(A, w0, hyper: HyperParams, t: float, model: str = "gradient") -> np.ndarray:
    """Exact state at time ``t`` for L = ½wᵀAw (weight decay folded in as A + λI).

    The GD model returns the discrete iterate at step ⌊t/η⌋.
    """
    model = QuadraticModel(model)
    A = np.asarray(A, dtype=np.float64)
    Al = A + hyper.lam * np.eye(A.shape[0])
    lam, Q = _spd_eig(Al)
    c = Q.T @ np.asarray(w0, dtype=np.float64)
    eta = hyper.eta
    if model is QuadraticModel.GD:
        n = int(np.floor(t / eta + 1e-9))
        return np.linalg.matrix_power(np.eye(A.shape[0]) - eta * Al, n) @ np.asarray(w0, dtype=np.float64)
    if model is QuadraticModel.GRADIENT:
        x = np.exp(-lam * t) * c
    elif model is QuadraticModel.MODIFIED_LOSS:
        x = np.exp(-(lam + 0.5 * eta * lam**2) * t) * c
    elif model is QuadraticModel.MOMENTUM:
        x = np.exp(-lam * t / (1.0 - hyper.beta)) * c
    else:
        m = 0.5 * eta * (1.0 - hyper.alpha) * (1.0 + hyper.beta)
        x = np.array(
            [homogeneous(OscillatorParams((1.0 - hyper.beta) / (2 * m), np.sqrt(li / m)), ci, t) for li, ci in zip(lam, c)]
        )
    return Q @ x


def rotation_demo(eta: float, n: int) -> tuple[float, float, float]:
    """Radii after ``n`` Euler steps of x' = Jx (J a quarter turn) from (1, 0).

    Returns the discrete radius, the exact flow radius at t = ηn, and the radius of
    the modified flow x' = (J − (η/2)J²)x.
    """
    if not 0 < eta <= 0.5:
        raise ValueError("eta must lie in (0, 0.5]")
    if n < 0:
        raise ValueError("n must be non-negative")
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    x = np.array([1.0, 0.0])
    for _ in range(n):
        x = x + eta * (J @ x)
    t = eta * n
    x0 = np.array([1.0, 0.0])
    flow = expm(J * t) @ x0
    modified = expm((J - 0.5 * eta * (J @ J)) * t) @ x0
    return float(np.linalg.norm(x)), float(np.linalg.norm(flow)), float(np.linalg.norm(modified))
