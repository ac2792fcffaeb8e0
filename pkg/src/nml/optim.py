"""Discrete SGD and momentum with the per-step statistics the predictors consume.

The trainer owns all mutable state (parameters, velocity, sampler position,
RNG, accumulators, logs), so a checkpoint taken at any step resumes bitwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from . import _kernels
from . import tensor as T
from .symmetry import Kind, SymmetryDescriptor

CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, message: str, log: "TrajectoryLog | None" = None):
        super().__init__(f"diverged at step {step}: {message}")
        self.step = step
        self.log = log


class StepMismatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class HyperParams:
    eta: float
    lam: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be non-negative")
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def momentum(self) -> bool:
        return self.alpha > 0 or self.beta > 0

    @property
    def dt(self) -> float:
        """Continuous time per optimizer step: η(1−α), which is η for plain SGD."""
        return self.eta * (1.0 - self.alpha)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ------------------------------------------------------------------ steps


def _finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite {what}")
    return x


def sgd_step(theta, g, hyper: HyperParams) -> np.ndarray:
    """θ − η(g + λθ), i.e. (1 − ηλ)θ − ηg written so momentum with α=β=0 matches bitwise."""
    theta = np.asarray(theta, dtype=np.float64)
    return _finite(theta - hyper.eta * (g + hyper.lam * theta), "SGD update")


def momentum_step(theta, v, g, hyper: HyperParams) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    v_new = hyper.beta * v + (1.0 - hyper.alpha) * (g + hyper.lam * theta)
    return _finite(theta - hyper.eta * v_new, "momentum update"), _finite(v_new, "velocity")


# ------------------------------------------------------------ accumulators


class DescriptorMap:
    """Sparse evaluation of all descriptor statistics at once.

    Row d of ``M`` is the indicator of A (plus −1 on A2 for rescale groups);
    translation rows act on x and the others on x², giving sums, squared
    norms and squared-norm differences in one product.
    """

    def __init__(self, descriptors: Sequence[SymmetryDescriptor], n_params: int):
        rows, cols, vals = [], [], []
        for i, d in enumerate(descriptors):
            d._check(n_params)
            rows += [i] * (d.set_a.size + d.set_b.size)
            cols += list(d.set_a) + list(d.set_b)
            vals += [1.0] * d.set_a.size + [-1.0] * d.set_b.size
        self.M = sparse.csr_matrix((vals, (rows, cols)), shape=(len(descriptors), n_params))
        self.linear = np.array([d.kind is Kind.TRANSLATION for d in descriptors], dtype=bool)
        self.descriptors = list(descriptors)

    def __len__(self) -> int:
        return len(self.descriptors)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.linear, self.M @ x, self.M @ (x * x))


@dataclass
class Accumulator:
    """Online exponentially weighted integrals plus the raw per-step series.

    ``forcing[i]`` holds ⟨g_i, 1_A⟩ (translation) or the signed squared norm
    |g_A|² / |g_A1|² − |g_A2|² of the batch gradient used at step i;
    ``velocity[i]`` holds the same statistic of the post-update buffer.
    """

    eta: float
    lam: float
    dt: float
    n: int
    step: int = 0
    integral: np.ndarray = None
    forcing: list = field(default_factory=list)
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if self.integral is None:
            self.integral = np.zeros(self.n)

    @property
    def decay(self) -> float:
        return float(np.exp(-2.0 * self.lam * self.dt))

    def accumulate(self, dmap: DescriptorMap, g, theta, v, step: int) -> None:
        if step != self.step:
            raise StepMismatchError(f"accumulator is at step {self.step}, got step {step}")
        f = dmap(g)
        self.integral = self.decay * self.integral + self.dt * self.eta * np.where(dmap.linear, 0.0, f)
        self.forcing.append(f)
        if v is not None:
            self.velocity.append(dmap(v))
        self.step += 1

    def forcing_array(self) -> np.ndarray:
        return np.array(self.forcing).reshape(len(self.forcing), self.n)

    def velocity_array(self) -> np.ndarray:
        return np.array(self.velocity).reshape(len(self.velocity), self.n)

    def replay(self, linear=None) -> np.ndarray:
        """Integral trajectory recomputed offline from ``forcing``; row k is the value after k steps.

        Columns flagged in ``linear`` (translation groups) carry no integral.
        """
        F = self.forcing_array()
        out = np.zeros((F.shape[0] + 1, self.n))
        for d in range(self.n):
            if linear is None or not linear[d]:
                out[:, d] = _kernels.decayed_cumsum(F[:, d], self.decay, self.dt * self.eta)
        return out


def accumulate(acc: Accumulator, dmap: DescriptorMap, g, theta, v, step: int) -> Accumulator:
    acc.accumulate(dmap, g, theta, v, step)
    return acc


# -------------------------------------------------------------------- logs


@dataclass
class TrajectoryLog:
    hyper: HyperParams
    labels: list[str]
    kinds: list[str]
    steps: np.ndarray
    times: np.ndarray
    conserved: np.ndarray  # (n_logged, n_descriptors), from post-update parameters
    magnitude: np.ndarray  # constituent scale of each conserved quantity
    integrals: np.ndarray  # accumulator integral at each logged step
    losses: np.ndarray  # batch loss at every step
    forcing: np.ndarray  # (n_steps, n_descriptors)
    velocity: np.ndarray  # (n_steps, n_descriptors), statistic of the post-update buffer
    noise_steps: np.ndarray
    noise_drift: np.ndarray  # |mean batch gradient|² statistic at noise_steps
    noise_trace: np.ndarray  # batch-gradient covariance trace statistic at noise_steps
    checkpoints: list[str] = field(default_factory=list)

    @property
    def initial(self) -> np.ndarray:
        return self.conserved[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "steps": self.steps,
            "times": self.times,
            "conserved": self.conserved,
            "magnitude": self.magnitude,
            "integrals": self.integrals,
            "losses": self.losses,
            "forcing": self.forcing,
            "velocity": self.velocity,
            "noise_steps": self.noise_steps,
            "noise_drift": self.noise_drift,
            "noise_trace": self.noise_trace,
        }

    def save(self, path: str | Path) -> None:
        meta = {"hyper": self.hyper.to_dict(), "labels": self.labels, "kinds": self.kinds, "checkpoints": self.checkpoints}
        np.savez(path, meta=np.array(json.dumps(meta)), **self.arrays())

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryLog":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k: z[k] for k in z.files if k != "meta"}
        return cls(HyperParams(**meta["hyper"]), meta["labels"], meta["kinds"], checkpoints=meta["checkpoints"], **arrays)


# ----------------------------------------------------------------- trainer


class Trainer:
    """Shuffled-epoch SGD or momentum over an in-memory dataset."""

    def __init__(
        self,
        network,
        dataset,
        hyper: HyperParams,
        descriptors: Sequence[SymmetryDescriptor],
        log_every: int = 1,
        noise_batches: int = 0,
        theta0=None,
    ):
        X, y = dataset
        if len(X) == 0:
            raise ValueError("dataset is empty")
        if log_every < 1:
            raise ValueError("log_every must be >= 1")
        if hyper.batch_size > len(X):
            raise ValueError("batch_size exceeds dataset size")
        self.network = network
        self.graph: T.Graph = network.graph
        self.X, self.y = np.asarray(X, dtype=np.float64), np.asarray(y)
        self.hyper = hyper
        self.descriptors = list(descriptors)
        self.dmap = DescriptorMap(self.descriptors, self.graph.layout.size)
        self.log_every = log_every
        self.noise_batches = noise_batches

        self.theta = np.array(network.theta if theta0 is None else theta0, dtype=np.float64)
        self.v = np.zeros_like(self.theta)
        self.step = 0
        self.rng = np.random.default_rng(hyper.seed)
        self.noise_rng = np.random.default_rng([hyper.seed, 1])
        self.perm = np.zeros(0, dtype=np.int64)
        self.pos = 0
        self.acc = Accumulator(hyper.eta, hyper.lam, hyper.dt, len(self.descriptors))
        self.losses: list[float] = []
        self._log_steps: list[int] = []
        self._log_q: list[np.ndarray] = []
        self._log_mag: list[np.ndarray] = []
        self._log_int: list[np.ndarray] = []
        self._noise_steps: list[int] = []
        self._noise_drift: list[np.ndarray] = []
        self._noise_trace: list[np.ndarray] = []
        self.checkpoints: list[str] = []
        self._record()

    @property
    def steps_per_epoch(self) -> int:
        return len(self.X) // self.hyper.batch_size

    # -- sampling

    def _next_batch(self):
        S = self.hyper.batch_size
        if self.pos + S > self.perm.size:
            self.perm = self.rng.permutation(len(self.X))
            self.pos = 0
        idx = self.perm[self.pos : self.pos + S]
        self.pos += S
        return self.X[idx], self.y[idx]

    # -- logging

    def _magnitudes(self) -> np.ndarray:
        M = abs(self.dmap.M)
        return np.where(self.dmap.linear, M @ np.abs(self.theta), M @ (self.theta * self.theta))

    def _record(self) -> None:
        self._log_steps.append(self.step)
        self._log_q.append(self.dmap(self.theta))
        self._log_mag.append(self._magnitudes())
        self._log_int.append(self.acc.integral.copy())
        if self.noise_batches >= 2:
            self._record_noise()

    def _record_noise(self) -> None:
        K, S = self.noise_batches, self.hyper.batch_size
        G = np.stack(
            [
                self.graph.loss_and_grad(self.theta, (self.X[i], self.y[i]))[1]
                for i in (self.noise_rng.choice(len(self.X), S, replace=False) for _ in range(K))
            ]
        )
        mean = G.mean(axis=0)
        D = G - mean
        trace = np.stack([self.dmap(d) for d in D]).sum(axis=0) / (K - 1)
        # |mean|² overestimates |ḡ|² by trace/K
        drift = self.dmap(mean) - np.where(self.dmap.linear, 0.0, trace / K)
        self._noise_steps.append(self.step)
        self._noise_drift.append(drift)
        self._noise_trace.append(np.where(self.dmap.linear, 0.0, trace))

    # -- stepping

    def train_step(self) -> None:
        hyper = self.hyper
        batch = self._next_batch()
        try:
            loss, g = self.graph.loss_and_grad(self.theta, batch)
        except (T.NumericalError, FloatingPointError) as exc:
            raise DivergenceError(self.step, str(exc), self.log()) from None
        try:
            if hyper.momentum:
                theta, v_new = momentum_step(self.theta, self.v, g, hyper)
                self.acc.accumulate(self.dmap, g, self.theta, v_new, self.step)
                self.v = v_new
            else:
                # the buffer a momentum step with α=β=0 would hold
                u = g + hyper.lam * self.theta
                self.acc.accumulate(self.dmap, g, self.theta, u, self.step)
                theta = sgd_step(self.theta, g, hyper)
        except FloatingPointError as exc:
            raise DivergenceError(self.step, str(exc), self.log()) from None
        self.theta = theta
        self.losses.append(loss)
        self.step += 1
        if self.step % self.log_every == 0:
            self._record()

    def train(self, epochs: int | None = None, steps: int | None = None, checkpoint_dir=None, checkpoint_every: int = 0):
        """Advance to ``epochs`` complete epochs (or to absolute step ``steps``)."""
        target = steps if steps is not None else epochs * self.steps_per_epoch
        while self.step < target:
            self.train_step()
            if checkpoint_dir is not None and checkpoint_every and self.step % checkpoint_every == 0:
                path = Path(checkpoint_dir) / f"checkpoint-{self.step}.npz"
                self.save_checkpoint(path)
                self.checkpoints.append(path.name)
        self.network.theta = self.theta.copy()
        return self.log()

    def log(self) -> TrajectoryLog:
        n_d = len(self.descriptors)
        steps = np.array(self._log_steps, dtype=np.int64)
        return TrajectoryLog(
            hyper=self.hyper,
            labels=[d.label for d in self.descriptors],
            kinds=[d.kind.value for d in self.descriptors],
            steps=steps,
            times=steps * self.hyper.dt,
            conserved=np.array(self._log_q).reshape(-1, n_d),
            magnitude=np.array(self._log_mag).reshape(-1, n_d),
            integrals=np.array(self._log_int).reshape(-1, n_d),
            losses=np.array(self.losses),
            forcing=self.acc.forcing_array(),
            velocity=self.acc.velocity_array(),
            noise_steps=np.array(self._noise_steps, dtype=np.int64),
            noise_drift=np.array(self._noise_drift).reshape(-1, n_d),
            noise_trace=np.array(self._noise_trace).reshape(-1, n_d),
            checkpoints=list(self.checkpoints),
        )

    # -- persistence

    def state_dict(self) -> dict[str, np.ndarray]:
        n_d = len(self.descriptors)
        meta = {
            "version": CHECKPOINT_VERSION,
            "hyper": self.hyper.to_dict(),
            "step": self.step,
            "pos": self.pos,
            "acc_step": self.acc.step,
            "rng": self.rng.bit_generator.state,
            "noise_rng": self.noise_rng.bit_generator.state,
            "log_every": self.log_every,
            "noise_batches": self.noise_batches,
            "labels": [d.label for d in self.descriptors],
            "checkpoints": self.checkpoints,
        }
        return {
            "meta": np.array(json.dumps(meta)),
            "theta": self.theta,
            "v": self.v,
            "perm": self.perm,
            "integral": self.acc.integral,
            "forcing": self.acc.forcing_array(),
            "velocity": self.acc.velocity_array(),
            "losses": np.array(self.losses),
            "log_steps": np.array(self._log_steps, dtype=np.int64),
            "log_q": np.array(self._log_q).reshape(-1, n_d),
            "log_mag": np.array(self._log_mag).reshape(-1, n_d),
            "log_int": np.array(self._log_int).reshape(-1, n_d),
            "noise_steps": np.array(self._noise_steps, dtype=np.int64),
            "noise_drift": np.array(self._noise_drift).reshape(-1, n_d),
            "noise_trace": np.array(self._noise_trace).reshape(-1, n_d),
        }

    def save_checkpoint(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, **self.state_dict())

    def load_checkpoint(self, path: str | Path) -> None:
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
            if HyperParams(**meta["hyper"]) != self.hyper:
                raise ValueError("checkpoint hyperparameters differ from this run")
            if meta["labels"] != [d.label for d in self.descriptors]:
                raise ValueError("checkpoint descriptors differ from this run")
            if meta["log_every"] != self.log_every or meta["noise_batches"] != self.noise_batches:
                raise ValueError("checkpoint logging settings differ from this run")
            self.theta = z["theta"].copy()
            self.v = z["v"].copy()
            self.perm = z["perm"].copy()
            self.step, self.pos = meta["step"], meta["pos"]
            self.rng.bit_generator.state = meta["rng"]
            self.noise_rng.bit_generator.state = meta["noise_rng"]
            self.acc.integral = z["integral"].copy()
            self.acc.step = meta["acc_step"]
            self.acc.forcing = list(z["forcing"])
            self.acc.velocity = list(z["velocity"])
            self.losses = [float(x) for x in z["losses"]]
            self._log_steps = [int(s) for s in z["log_steps"]]
            self._log_q = list(z["log_q"])
            self._log_mag = list(z["log_mag"])
            self._log_int = list(z["log_int"])
            self._noise_steps = [int(s) for s in z["noise_steps"]]
            self._noise_drift = list(z["noise_drift"])
            self._noise_trace = list(z["noise_trace"])
            self.checkpoints = list(meta["checkpoints"])


def run(
    network,
    dataset,
    hyper: HyperParams,
    epochs: int,
    descriptors: Sequence[SymmetryDescriptor],
    log_every: int = 1,
    noise_batches: int = 0,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
) -> TrajectoryLog:
    trainer = Trainer(network, dataset, hyper, descriptors, log_every, noise_batches)
    return trainer.train(epochs=epochs, checkpoint_dir=checkpoint_dir, checkpoint_every=checkpoint_every)
