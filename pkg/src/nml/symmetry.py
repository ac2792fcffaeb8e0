"""Symmetry groups of a built network and the geometric identities they imply.

Every check works on flat parameter vectors in the network's layout. Residuals
are normalized so tolerances do not depend on network size.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .net import HOMOGENEOUS, Network

DELTA = 1e-30


class Kind(str, enum.Enum):
    TRANSLATION = "translation"
    SCALE = "scale"
    RESCALE = "rescale"


@dataclass(frozen=True, eq=False)
class SymmetryDescriptor:
    kind: Kind
    set_a: np.ndarray
    set_b: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    label: str = ""

    def __post_init__(self):
        a = np.asarray(self.set_a, dtype=np.int64).ravel()
        b = np.asarray(self.set_b, dtype=np.int64).ravel()
        kind = Kind(self.kind)
        if a.size == 0:
            raise ValueError("symmetry index set must be nonempty")
        if kind is Kind.RESCALE:
            if b.size == 0:
                raise ValueError("rescale descriptor needs a nonempty second set")
            if np.intersect1d(a, b).size:
                raise ValueError("rescale index sets must be disjoint")
        elif b.size:
            raise ValueError(f"{kind.value} descriptor takes a single index set")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "set_a", a)
        object.__setattr__(self, "set_b", b)

    @property
    def support(self) -> np.ndarray:
        return np.union1d(self.set_a, self.set_b)

    def _check(self, n: int) -> None:
        top = max(self.set_a.max(), self.set_b.max() if self.set_b.size else -1)
        if top >= n or min(self.set_a.min(), self.set_b.min() if self.set_b.size else 0) < 0:
            raise IndexError(f"descriptor {self.label!r} indexes outside a store of size {n}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "label": self.label, "set_a": _ranges(self.set_a)}
        if self.set_b.size:
            d["set_b"] = _ranges(self.set_b)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SymmetryDescriptor":
        return cls(Kind(d["kind"]), _unranges(d["set_a"]), _unranges(d.get("set_b", [])), d.get("label", ""))


def _ranges(idx: np.ndarray) -> list[list[int]]:
    """Compress sorted indices into half-open [start, stop) runs with a stride."""
    idx = np.sort(idx)
    runs: list[list[int]] = []
    i = 0
    while i < idx.size:
        if i + 1 < idx.size:
            step = int(idx[i + 1] - idx[i])
            j = i + 1
            while j + 1 < idx.size and idx[j + 1] - idx[j] == step:
                j += 1
            runs.append([int(idx[i]), int(idx[j]) + 1, step])
            i = j + 1
        else:
            runs.append([int(idx[i]), int(idx[i]) + 1, 1])
            i += 1
    return runs


def _unranges(runs) -> np.ndarray:
    parts = [np.arange(a, b, s) for a, b, s in runs]
    return np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, dtype=np.int64)


def descriptors_to_json(descriptors: Iterable[SymmetryDescriptor]) -> str:
    return json.dumps([d.to_dict() for d in descriptors], indent=1)


def descriptors_from_json(text: str) -> list[SymmetryDescriptor]:
    return [SymmetryDescriptor.from_dict(d) for d in json.loads(text)]


# -------------------------------------------------------------- enumeration


def _row(layout: T.ParamLayout, name: str, k: int) -> np.ndarray:
    n_out, n_in = layout.shapes[layout.names.index(name)]
    return layout.index(name, k * n_in + np.arange(n_in))


def _col(layout: T.ParamLayout, name: str, j: int) -> np.ndarray:
    n_out, n_in = layout.shapes[layout.names.index(name)]
    return layout.index(name, np.arange(n_out) * n_in + j)


def enumerate_groups(network: Network, include_nonhomogeneous: bool = False) -> list[SymmetryDescriptor]:
    """All translation, scale and rescale groups of ``network``.

    ``include_nonhomogeneous`` also emits rescale descriptors for hidden neurons
    whose activation is not positively homogeneous (tanh). Those groups are not
    symmetries and exist only as negative controls.
    """
    layout = network.layout
    dense = network.dense
    out: list[SymmetryDescriptor] = []
    for m, info in enumerate(dense):
        nxt = dense[m + 1] if m + 1 < len(dense) else None

        if info.bn is not None:
            for k in range(info.n_out):
                a = _row(layout, info.weight, k)
                if info.bias:
                    a = np.append(a, layout.index(info.bias, k))
                out.append(SymmetryDescriptor(Kind.SCALE, a, label=f"scale:{info.weight[:-7]}.unit{k}"))

        hidden = nxt is not None and info.activation is not None and info.activation != "softmax-head"
        if hidden and (info.activation in HOMOGENEOUS or include_nonhomogeneous):
            for k in range(info.n_out):
                if info.bn is not None:
                    a1 = np.array([layout.index(f"{info.bn}.gamma", k), layout.index(f"{info.bn}.beta", k)])
                else:
                    a1 = _row(layout, info.weight, k)
                    if info.bias:
                        a1 = np.append(a1, layout.index(info.bias, k))
                a2 = _col(layout, nxt.weight, k)
                out.append(SymmetryDescriptor(Kind.RESCALE, a1, a2, label=f"rescale:{info.weight[:-7]}.unit{k}"))

        if nxt is None and network.has_softmax_head:
            prefix = info.weight[:-7]
            for j in range(info.n_in):
                out.append(
                    SymmetryDescriptor(Kind.TRANSLATION, _col(layout, info.weight, j), label=f"translation:{prefix}.col{j}")
                )
            if info.bias:
                out.append(
                    SymmetryDescriptor(
                        Kind.TRANSLATION, layout.index(info.bias, np.arange(info.n_out)), label=f"translation:{prefix}.bias"
                    )
                )
    return out


# ---------------------------------------------------- fields and invariants


def generator(descriptor: SymmetryDescriptor, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    descriptor._check(theta.size)
    out = np.zeros_like(theta)
    a = descriptor.set_a
    if descriptor.kind is Kind.TRANSLATION:
        out[a] = 1.0
    elif descriptor.kind is Kind.SCALE:
        out[a] = theta[a]
    else:
        out[a] = theta[a]
        out[descriptor.set_b] = -theta[descriptor.set_b]
    return out


def conserved_quantity(descriptor: SymmetryDescriptor, theta) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    descriptor._check(theta.size)
    a = theta[descriptor.set_a]
    if descriptor.kind is Kind.TRANSLATION:
        return float(a.sum())
    if descriptor.kind is Kind.SCALE:
        return float(a @ a)
    b = theta[descriptor.set_b]
    return float(a @ a - b @ b)


def magnitude(descriptor: SymmetryDescriptor, theta) -> float:
    """Scale of the terms that make up the conserved quantity.

    Used as the denominator of relative errors, since a rescale difference or a
    translation sum can cross zero while its constituents stay large.
    """
    theta = np.asarray(theta, dtype=np.float64)
    a = theta[descriptor.set_a]
    if descriptor.kind is Kind.TRANSLATION:
        return float(np.abs(a).sum())
    if descriptor.kind is Kind.SCALE:
        return float(a @ a)
    b = theta[descriptor.set_b]
    return float(a @ a + b @ b)


def conserved_series(descriptors: Sequence[SymmetryDescriptor], thetas: np.ndarray) -> np.ndarray:
    """Conserved quantities for a stack of states, shape (n_states, n_descriptors)."""
    thetas = np.atleast_2d(thetas)
    return np.array([[conserved_quantity(d, th) for d in descriptors] for th in thetas])


def _restrict(descriptor: SymmetryDescriptor, vec: np.ndarray, signed: bool) -> np.ndarray:
    out = np.zeros_like(vec)
    out[descriptor.set_a] = vec[descriptor.set_a]
    if descriptor.set_b.size:
        out[descriptor.set_b] = -vec[descriptor.set_b] if signed else vec[descriptor.set_b]
    return out


# -------------------------------------------------------------- residuals


def _point(network: Network, batch, theta, point):
    if point is not None:
        return point
    return network.graph.hessian_operator(network.theta if theta is None else theta, batch)


def _theta(network, theta):
    return network.theta if theta is None else np.asarray(theta, dtype=np.float64)


def gradient_residual(network: Network, batch, descriptor, theta=None, point=None) -> float:
    """|⟨g, generator⟩| / (‖g‖·‖generator‖ + δ)."""
    th = _theta(network, theta)
    if point is None:
        g = network.graph.loss_and_grad(th, batch)[1]
    else:
        g = point.grad
    gen = generator(descriptor, th)
    return float(abs(g @ gen) / (np.linalg.norm(g) * np.linalg.norm(gen) + DELTA))


def hessian_residual(network: Network, batch, descriptor, theta=None, point=None) -> float:
    """Norm of H·gen (+ the kind's gradient term), relative to ‖g‖ + ‖H·gen‖."""
    th = _theta(network, theta)
    P = _point(network, batch, th, point)
    gen = generator(descriptor, th)
    hg = P(gen)
    if descriptor.kind is Kind.TRANSLATION:
        r = hg
    else:
        r = hg + _restrict(descriptor, P.grad, signed=True)
    return float(np.linalg.norm(r) / (np.linalg.norm(P.grad) + np.linalg.norm(hg) + DELTA))


def quadratic_form_residual(network: Network, batch, descriptor, theta=None, point=None) -> float:
    """|θ_Aᵀ H θ_A| / (‖θ_A‖·‖H θ_A‖ + δ) for scale groups."""
    if descriptor.kind is not Kind.SCALE:
        raise ValueError("quadratic form residual is defined for scale groups")
    th = _theta(network, theta)
    P = _point(network, batch, th, point)
    gen = generator(descriptor, th)
    hg = P(gen)
    return float(abs(gen @ hg) / (np.linalg.norm(gen) * np.linalg.norm(hg) + DELTA))


def act(descriptor: SymmetryDescriptor, theta, alpha: float) -> np.ndarray:
    """Group action ψ(θ, α)."""
    th = np.array(theta, dtype=np.float64)
    descriptor._check(th.size)
    if descriptor.kind is Kind.TRANSLATION:
        th[descriptor.set_a] += alpha
        return th
    if alpha <= 0:
        raise ValueError(f"{descriptor.kind.value} symmetry needs a positive group element, got {alpha}")
    th[descriptor.set_a] *= alpha
    if descriptor.kind is Kind.RESCALE:
        th[descriptor.set_b] /= alpha
    return th


def transport(descriptor: SymmetryDescriptor, g, alpha: float) -> np.ndarray:
    """The diagonal map T_α with g(θ) = T_α g(ψ(θ, α))."""
    out = np.array(g, dtype=np.float64)
    if descriptor.kind is Kind.TRANSLATION:
        return out
    out[descriptor.set_a] *= alpha
    if descriptor.kind is Kind.RESCALE:
        out[descriptor.set_b] /= alpha
    return out


def equivariance_check(network: Network, batch, descriptor, alpha: float, theta=None, base=None):
    """Return (|L(θ) − L(ψ)|, ‖g(θ) − T_α g(ψ)‖).

    ``base`` may carry a precomputed ``(loss, grad)`` at θ.
    """
    th = _theta(network, theta)
    moved = act(descriptor, th, alpha)
    L0, g0 = base if base is not None else network.graph.loss_and_grad(th, batch)
    L1, g1 = network.graph.loss_and_grad(moved, batch)
    return float(abs(L0 - L1)), float(np.linalg.norm(g0 - transport(descriptor, g1, alpha)))


def theorem_condition(network: Network, batch, descriptor, theta=None, point=None) -> float:
    """⟨θ, (∂α∂θψ) g⟩ normalized like gradient_residual; identically 0 for translation."""
    if descriptor.kind is Kind.TRANSLATION:
        return 0.0
    th = _theta(network, theta)
    g = point.grad if point is not None else network.graph.loss_and_grad(th, batch)[1]
    gen = generator(descriptor, th)
    a, b = descriptor.set_a, descriptor.set_b
    val = th[a] @ g[a] - (th[b] @ g[b] if b.size else 0.0)
    return float(abs(val) / (np.linalg.norm(g) * np.linalg.norm(gen) + DELTA))


@dataclass(frozen=True)
class NoiseCheck:
    batch_residuals: np.ndarray
    covariance_residual: float

    @property
    def max_residual(self) -> float:
        return float(max(self.batch_residuals.max(), self.covariance_residual))


def batch_gradients(network: Network, batches: Sequence, theta=None) -> np.ndarray:
    th = _theta(network, theta)
    return np.stack([network.graph.loss_and_grad(th, b)[1] for b in batches])


def noise_lowrank_check(network: Network, batches: Sequence, descriptor, theta=None, grads=None) -> NoiseCheck:
    """Per-batch gradient residuals and ‖Σ̂·gen‖ / (‖Σ̂‖_F ‖gen‖ + δ).

    Σ̂ is never formed: with deviations D (K×P), Σ̂·v = Dᵀ(Dv)/(K−1) and
    ‖Σ̂‖_F = ‖DDᵀ‖_F/(K−1).
    """
    if len(batches) < 2:
        raise ValueError("noise check needs at least two batches")
    th = _theta(network, theta)
    G = batch_gradients(network, batches, th) if grads is None else np.asarray(grads)
    gen = generator(descriptor, th)
    gnorm = np.linalg.norm(gen)
    per = np.abs(G @ gen) / (np.linalg.norm(G, axis=1) * gnorm + DELTA)
    D = G - G.mean(axis=0)
    k1 = G.shape[0] - 1
    sv = D.T @ (D @ gen) / k1
    fro = np.linalg.norm(D @ D.T) / k1
    cov = float(np.linalg.norm(sv) / (fro * gnorm + DELTA))
    return NoiseCheck(per, cov)


# ------------------------------------------------------------ bulk checking


@dataclass
class CheckSummary:
    label: str
    kind: str
    gradient: float
    hessian: float
    theorem: float
    loss_gap: float
    gradient_gap: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sample_alphas(kind: Kind, rng: np.random.Generator, n: int) -> np.ndarray:
    if kind is Kind.TRANSLATION:
        return rng.uniform(-3.0, 3.0, size=n)
    return np.exp(rng.uniform(np.log(0.2), np.log(5.0), size=n))


def check_all(network: Network, batch, descriptors, n_alpha: int = 20, seed: int = 0, theta=None) -> list[CheckSummary]:
    """Every residual for every descriptor at one point, sharing one HVP graph."""
    th = _theta(network, theta)
    P = network.graph.hessian_operator(th, batch)
    base = (P.loss, P.grad)
    rng = np.random.default_rng(seed)
    out = []
    for d in descriptors:
        gaps = [equivariance_check(network, batch, d, a, th, base) for a in sample_alphas(d.kind, rng, n_alpha)]
        lg, gg = (max(x) for x in zip(*gaps)) if gaps else (0.0, 0.0)
        out.append(
            CheckSummary(
                d.label,
                d.kind.value,
                gradient_residual(network, batch, d, th, P),
                hessian_residual(network, batch, d, th, P),
                theorem_condition(network, batch, d, th, P),
                lg,
                gg,
            )
        )
    return out
