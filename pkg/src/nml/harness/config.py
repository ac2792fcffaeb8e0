"""Experiment configuration: one versioned JSON document per run."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .. import net
from ..optim import HyperParams
from ..symmetry import SymmetryDescriptor
from . import data

DEFAULT_TOLERANCES = {"gradient": 1e-8, "hessian": 1e-7, "theorem": 1e-8, "loss_gap": 1e-9, "noise": 1e-8}
BUNDLED = ("vgg16", "vgg16_bn")


class ConfigError(ValueError):
    pass


def config_schema() -> dict:
    return json.loads(resources.files("nml.specs").joinpath("config.schema.json").read_text())


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        try:
            jsonschema.validate(d, config_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config {where}: {exc.message}") from None
        cfg = cls(json.loads(json.dumps(d)), Path(base_dir))
        cfg._check_paths()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(d, path.parent)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.raw))

    def _resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def _check_paths(self) -> None:
        ds = self.raw["dataset"]
        paths = []
        if "csv" in ds:
            paths.append(ds["csv"]["path"])
        if "idx" in ds:
            paths += [ds["idx"]["images"], ds["idx"]["labels"]]
        if isinstance(self.raw["arch"], str) and self.raw["arch"] not in BUNDLED:
            paths.append(self.raw["arch"])
        for p in paths:
            if not self._resolve(p).is_file():
                raise ConfigError(f"referenced file does not exist: {p}")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = self.to_dict()
        d["hyper"]["seed"] = seed
        d.setdefault("init", {})["seed"] = seed
        return ExperimentConfig(d, self.base_dir)

    # -- typed views

    @property
    def name(self) -> str:
        return self.raw.get("name", "run")

    @property
    def hyper(self) -> HyperParams:
        return HyperParams(**self.raw["hyper"])

    @property
    def epochs(self) -> int:
        return self.raw["epochs"]

    @property
    def log_every(self) -> int:
        return self.raw.get("log_every", 1)

    @property
    def checkpoint_every(self) -> int:
        return self.raw.get("checkpoint_every", 0)

    @property
    def noise_batches(self) -> int:
        return self.raw.get("noise_batches", 0)

    @property
    def predictions(self) -> list[str]:
        return self.raw.get("predictions", ["continuous", "discrete", "momentum"])

    @property
    def check(self) -> dict:
        c = self.raw.get("check", {})
        return {
            "batches": c.get("batches", 4),
            "batch_size": c.get("batch_size", 64),
            "n_alpha": c.get("n_alpha", 20),
            "include_nonhomogeneous": c.get("include_nonhomogeneous", False),
            "tolerances": {**DEFAULT_TOLERANCES, **c.get("tolerances", {})},
        }

    def arch(self) -> net.ArchSpec:
        a = self.raw["arch"]
        if isinstance(a, str):
            return net.bundled_spec(a) if a in BUNDLED else net.load_spec(self._resolve(a))
        m = a["mlp"]
        return net.mlp_spec(
            m["widths"],
            activation=m.get("activation", "relu"),
            batchnorm=m.get("batchnorm", False),
            head=m.get("head", "softmax-head"),
            bn_eps=m.get("bn_eps", 0.0),
        )

    def network(self) -> net.Network:
        init = self.raw.get("init", {})
        return net.build(self.arch(), seed=init.get("seed", 0), bias_std=init.get("bias_std", 0.0))

    def dataset(self):
        ds = self.raw["dataset"]
        if "synthetic" in ds:
            s = ds["synthetic"]
            X, y = data.synthetic(s["clusters"], s["dim"], s["n"], s.get("seed", 0), s.get("spread", 2.0), s.get("noise", 1.0))
        elif "csv" in ds:
            X, y = data.load_csv(self._resolve(ds["csv"]["path"]), ds["csv"].get("label_column", "label"))
        else:
            i = ds["idx"]
            X, y = data.load_idx(self._resolve(i["images"]), self._resolve(i["labels"]), i.get("limit"))
        return X, y

    def select(self, descriptors: list[SymmetryDescriptor]) -> list[SymmetryDescriptor]:
        f = self.raw.get("descriptors", "all")
        if f == "all":
            return descriptors
        if isinstance(f, str):
            return [d for d in descriptors if d.kind.value == f]
        pattern = re.compile(f["label"])
        return [d for d in descriptors if pattern.search(d.label)]
