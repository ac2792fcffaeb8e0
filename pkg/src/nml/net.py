"""Architecture specs, seeded network construction and the static symmetry census."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import tensor as T

HOMOGENEOUS = {"relu", "leaky", "linear"}
ACTIVATIONS = HOMOGENEOUS | {"tanh", "softmax-head"}
SPEC_VERSION = 1


class SpecError(ValueError):
    """An architecture spec is malformed or inconsistent."""


@dataclass(frozen=True)
class Layer:
    type: str  # dense | activation | batchnorm | conv-meta | pool | flatten
    out: int | None = None
    in_: int | None = None
    bias: bool = True
    fn: str | None = None
    slope: float = 0.01
    eps: float = 0.0
    features: int | None = None
    channels: int | None = None
    kernel: int = 3

    @classmethod
    def from_dict(cls, d: dict) -> "Layer":
        d = dict(d)
        kind = d.pop("type")
        if "in" in d:
            d["in_"] = d.pop("in")
        return cls(type=kind, **d)

    def to_dict(self) -> dict:
        keys = {
            "dense": ("out", "in_", "bias"),
            "activation": ("fn", "slope"),
            "batchnorm": ("features", "eps"),
            "conv-meta": ("channels", "kernel"),
            "pool": (),
            "flatten": ("features",),
        }[self.type]
        out: dict[str, Any] = {"type": self.type}
        for k in keys:
            v = getattr(self, k)
            if v is None or (k == "slope" and self.fn != "leaky") or (k == "eps" and v == 0.0):
                continue
            out["in" if k == "in_" else k] = v
        return out


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    num_classes: int
    layers: tuple[Layer, ...]
    name: str = "net"
    census_adjustment: dict = field(default_factory=lambda: {"scale": 0, "rescale": 0})

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        try:
            jsonschema.validate(d, arch_schema())
        except jsonschema.ValidationError as exc:
            raise SpecError(f"invalid arch spec: {exc.message}") from None
        spec = cls(
            input_dim=int(d["input_dim"]),
            num_classes=int(d["num_classes"]),
            layers=tuple(Layer.from_dict(x) for x in d["layers"]),
            name=d.get("name", "net"),
            census_adjustment={"scale": 0, "rescale": 0, **d.get("census_adjustment", {})},
        )
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {
            "version": SPEC_VERSION,
            "name": self.name,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "layers": [layer.to_dict() for layer in self.layers],
            "census_adjustment": dict(self.census_adjustment),
        }

    @property
    def executable(self) -> bool:
        return not any(layer.type in ("conv-meta", "pool", "flatten") for layer in self.layers)

    def validate(self) -> None:
        if not self.layers:
            raise SpecError("spec has no layers")
        heads = [i for i, l in enumerate(self.layers) if l.type == "activation" and l.fn == "softmax-head"]
        if len(heads) > 1:
            raise SpecError("softmax-head appears more than once")
        if heads and heads[0] != len(self.layers) - 1:
            raise SpecError("softmax-head must be the last layer")
        width = self.input_dim
        spatial = False
        for i, layer in enumerate(self.layers):
            if layer.type == "dense":
                if layer.out is None or layer.out < 1:
                    raise SpecError(f"layer {i}: dense needs out >= 1")
                if layer.in_ is not None and layer.in_ != width:
                    raise SpecError(f"layer {i}: dense in={layer.in_} but incoming width is {width}")
                if spatial:
                    raise SpecError(f"layer {i}: dense after conv-meta needs a flatten layer")
                width = layer.out
            elif layer.type == "conv-meta":
                if not layer.channels:
                    raise SpecError(f"layer {i}: conv-meta needs channels")
                width, spatial = layer.channels, True
            elif layer.type == "flatten":
                if not layer.features:
                    raise SpecError(f"layer {i}: flatten needs features")
                width, spatial = layer.features, False
            elif layer.type == "batchnorm":
                if layer.features is not None and layer.features != width:
                    raise SpecError(f"layer {i}: batchnorm features={layer.features} but width is {width}")
                if layer.eps < 0:
                    raise SpecError(f"layer {i}: batchnorm eps must be >= 0")
            elif layer.type == "activation":
                if layer.fn not in ACTIVATIONS:
                    raise SpecError(f"layer {i}: unknown activation {layer.fn!r}")
            elif layer.type != "pool":
                raise SpecError(f"layer {i}: unknown layer type {layer.type!r}")
        if width != self.num_classes:
            raise SpecError(f"output width {width} != num_classes {self.num_classes}")


def arch_schema() -> dict:
    return json.loads(resources.files("nml.specs").joinpath("arch.schema.json").read_text())


def load_spec(path: str | Path) -> ArchSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: not valid JSON ({exc})") from None
    return ArchSpec.from_dict(data)


def bundled_spec(name: str) -> ArchSpec:
    """Load one of the shipped specs: ``vgg16`` or ``vgg16_bn``."""
    text = resources.files("nml.specs").joinpath(f"{name}_tinyimagenet.json").read_text()
    return ArchSpec.from_dict(json.loads(text))


def mlp_spec(
    widths: list[int],
    activation: str = "relu",
    batchnorm: bool = False,
    head: str = "softmax-head",
    bn_eps: float = 0.0,
) -> ArchSpec:
    """Fully connected spec ``widths[0] -> ... -> widths[-1]``."""
    layers: list[Layer] = []
    for i, w in enumerate(widths[1:]):
        layers.append(Layer("dense", out=w))
        if i < len(widths) - 2:
            if batchnorm:
                layers.append(Layer("batchnorm", eps=bn_eps))
            layers.append(Layer("activation", fn=activation))
    if head:
        layers.append(Layer("activation", fn=head))
    spec = ArchSpec(input_dim=widths[0], num_classes=widths[-1], layers=tuple(layers), name="mlp")
    spec.validate()
    return spec


# ----------------------------------------------------------------- building


@dataclass(frozen=True)
class DenseInfo:
    """Structural facts about one dense layer of an executable network."""

    index: int
    weight: str
    bias: str | None
    n_in: int
    n_out: int
    bn: str | None  # name prefix of a batchnorm directly after this layer
    activation: str | None  # activation applied to this layer's outputs
    input_from_homogeneous: bool  # inputs are outputs of a hidden homogeneous unit


@dataclass
class Network:
    spec: ArchSpec
    layout: T.ParamLayout
    graph: T.Graph
    theta: np.ndarray
    dense: list[DenseInfo]

    @property
    def has_softmax_head(self) -> bool:
        last = self.spec.layers[-1]
        return last.type == "activation" and last.fn == "softmax-head"

    def loss(self, batch, theta=None) -> float:
        return self.graph.loss(self.theta if theta is None else theta, batch)

    def loss_and_grad(self, batch, theta=None):
        return self.graph.loss_and_grad(self.theta if theta is None else theta, batch)


def _structure(spec: ArchSpec):
    names: list[str] = []
    shapes: list[tuple[int, ...]] = []
    dense: list[DenseInfo] = []
    width = spec.input_dim
    prev_homogeneous = False
    layers = spec.layers
    for i, layer in enumerate(layers):
        if layer.type == "dense":
            w, b = f"dense{i}.weight", (f"dense{i}.bias" if layer.bias else None)
            names.append(w)
            shapes.append((layer.out, width))
            if b:
                names.append(b)
                shapes.append((layer.out,))
            bn = None
            act = None
            j = i + 1
            if j < len(layers) and layers[j].type == "batchnorm":
                bn = f"bn{j}"
                j += 1
            if j < len(layers) and layers[j].type == "activation":
                act = layers[j].fn
            elif j < len(layers) and layers[j].type == "dense":
                act = "linear"
            dense.append(DenseInfo(i, w, b, width, layer.out, bn, act, prev_homogeneous))
            width = layer.out
            prev_homogeneous = act in HOMOGENEOUS
        elif layer.type == "batchnorm":
            names += [f"bn{i}.gamma", f"bn{i}.beta"]
            shapes += [(width,), (width,)]
    return T.ParamLayout(tuple(names), tuple(shapes)), dense


def _make_forward(spec: ArchSpec):
    layers = spec.layers
    head = layers[-1].type == "activation" and layers[-1].fn == "softmax-head"

    def fn(p: dict[str, T.Tensor], batch) -> T.Tensor:
        x, y = batch
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != spec.input_dim:
            raise T.ShapeError(f"batch inputs have shape {x.shape}, expected (n, {spec.input_dim})")
        h: T.Tensor = T.Tensor(x)
        for i, layer in enumerate(layers):
            if layer.type == "dense":
                h = T.matmul(h, T.transpose(p[f"dense{i}.weight"]))
                if layer.bias:
                    h = T.add(h, p[f"dense{i}.bias"])
            elif layer.type == "batchnorm":
                h = T.batchnorm(h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], eps=layer.eps)
            elif layer.fn == "relu":
                h = T.relu(h)
            elif layer.fn == "leaky":
                h = T.leaky_relu(h, layer.slope)
            elif layer.fn == "tanh":
                h = T.tanh(h)
        if head:
            return T.softmax_cross_entropy(h, y)
        return T.mse_onehot(h, y)

    return fn


def init_params(layout: T.ParamLayout, seed: int, bias_std: float = 0.0) -> np.ndarray:
    """Kaiming-normal (fan-in) weights; zero (or N(0, bias_std²)) biases; BN gamma=1, beta=0."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in zip(layout.names, layout.shapes):
        if name.endswith(".weight"):
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / shape[1]), size=shape)
        elif name.endswith(".gamma"):
            arrays[name] = np.ones(shape)
        elif bias_std > 0:
            arrays[name] = rng.normal(0.0, bias_std, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return layout.pack(arrays)


def build(spec: ArchSpec, seed: int = 0, bias_std: float = 0.0) -> Network:
    spec.validate()
    if not spec.executable:
        raise SpecError("spec contains census-only layers (conv-meta/pool/flatten)")
    layout, dense = _structure(spec)
    graph = T.Graph(layout, _make_forward(spec))
    return Network(spec, layout, graph, init_params(layout, seed, bias_std), dense)


# ------------------------------------------------------------------ census


@dataclass(frozen=True)
class SymmetryCensus:
    n_scale: int
    n_rescale: int
    n_translation: int
    n_params: int
    breakdown: dict[str, int]
    # independent translation generators actually present: head fan-in columns + bias
    n_translation_groups: int = 0

    def to_dict(self) -> dict:
        return {
            "n_params": self.n_params,
            "n_scale": self.n_scale,
            "n_rescale": self.n_rescale,
            "n_translation": self.n_translation,
            "n_translation_groups": self.n_translation_groups,
            "breakdown": dict(self.breakdown),
        }


def census(spec: ArchSpec) -> SymmetryCensus:
    """Count symmetry groups using the VGG counting conventions.

    scale: one per channel/feature of an affine layer feeding a batchnorm.
    rescale: one per conv channel passing a homogeneous activation into a later
    affine map, plus one per input unit of every dense layer fed by hidden
    homogeneous units. translation: one per softmax input (class) plus the head
    bias. Spec-level adjustment constants are added as separate entries.
    """
    layers = spec.layers
    breakdown = {
        "scale:bn-fed": 0,
        "scale:adjustment": int(spec.census_adjustment.get("scale", 0)),
        "rescale:conv-channels": 0,
        "rescale:dense-inputs": 0,
        "rescale:adjustment": int(spec.census_adjustment.get("rescale", 0)),
        "translation:softmax-inputs": 0,
        "translation:bias": 0,
    }
    n_params = 0
    width = spec.input_dim
    prev_homogeneous = False
    head_fan_in = 0
    head_bias = False
    for i, layer in enumerate(layers):
        nxt = layers[i + 1] if i + 1 < len(layers) else None
        if layer.type in ("dense", "conv-meta"):
            out = layer.out if layer.type == "dense" else layer.channels
            if layer.type == "dense":
                n_params += width * out + (out if layer.bias else 0)
                if prev_homogeneous:
                    breakdown["rescale:dense-inputs"] += width
                head_fan_in, head_bias = width, layer.bias
            else:
                n_params += width * out * layer.kernel**2 + out
                j = i + 1
                while j < len(layers) and layers[j].type == "batchnorm":
                    j += 1
                act = layers[j].fn if j < len(layers) and layers[j].type == "activation" else None
                later_affine = any(l.type in ("dense", "conv-meta") for l in layers[j:])
                if act in HOMOGENEOUS and later_affine:
                    breakdown["rescale:conv-channels"] += out
            if nxt is not None and nxt.type == "batchnorm":
                breakdown["scale:bn-fed"] += out
            width = out
            # a bare affine -> affine link is a linear (homogeneous) unit
            prev_homogeneous = nxt is not None and nxt.type == "dense"
        elif layer.type == "batchnorm":
            n_params += 2 * width
            prev_homogeneous = nxt is not None and nxt.type == "dense"
        elif layer.type == "activation":
            if layer.fn == "softmax-head":
                breakdown["translation:softmax-inputs"] += width
                breakdown["translation:bias"] += 1 if head_bias else 0
            else:
                prev_homogeneous = layer.fn in HOMOGENEOUS
        elif layer.type == "flatten":
            width = layer.features
    n_scale = breakdown["scale:bn-fed"] + breakdown["scale:adjustment"]
    n_rescale = (
        breakdown["rescale:conv-channels"]
        + breakdown["rescale:dense-inputs"]
        + breakdown["rescale:adjustment"]
    )
    n_translation = breakdown["translation:softmax-inputs"] + breakdown["translation:bias"]
    n_groups = (head_fan_in + (1 if head_bias else 0)) if n_translation else 0
    return SymmetryCensus(n_scale, n_rescale, n_translation, n_params, breakdown, n_groups)
