"""
Multi-branch network graph: architecture description, parameters, and the
reverse-mode forward/backward passes over branches and the dense head.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

import config
from errors import ConfigError, ShapeError, StaleCacheError
from layers import CONV_KINDS, Layer, LayerKind, LayerSpec, make_layer

logger = logging.getLogger(__name__)

OUTPUT_LAYER = "head.out"
_HEAD_KINDS = (LayerKind.CONCAT, LayerKind.DENSE, LayerKind.RELU, LayerKind.DROPOUT)


class InputKind(str, Enum):
    SIGNALS_1D = "signals1d"
    SCALEOGRAMS_2D = "scaleograms2d"


class BranchSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    input_kind: InputKind
    channels: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    @model_validator(mode="after")
    def _check(self):
        if not self.name or "." in self.name:
            raise ValueError(f"branch name must be nonempty without dots, got '{self.name}'")
        if not self.layers:
            raise ValueError(f"branch '{self.name}' has no layers")
        if not self.channels or any(not 0 <= c < config.N_CHANNELS for c in self.channels):
            raise ValueError(f"branch '{self.name}' channels must be indices in [0, {config.N_CHANNELS})")
        if self.input_kind is InputKind.SCALEOGRAMS_2D:
            allowed = set(config.FORCE_CHANNELS + config.TORQUE_CHANNELS)
            if not set(self.channels) <= allowed:
                raise ValueError(f"2D branch '{self.name}' may only use force/torque channels, got {self.channels}")
        if any(spec.kind is LayerKind.CONCAT for spec in self.layers):
            raise ValueError(f"branch '{self.name}' cannot contain Concat")
        return self

    @property
    def conv_depth(self) -> int:
        return sum(1 for spec in self.layers if spec.kind in CONV_KINDS)


class ArchitectureSpec(BaseModel):
    """Branches, dense head (the C-way output layer is appended automatically) and input sizes."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    branches: tuple[BranchSpec, ...]
    head: tuple[LayerSpec, ...] = ()
    n_classes: int = Field(ge=2)
    signal_length: int = Field(default=800, gt=0)
    scaleogram_height: int = Field(default=128, gt=0)
    parameter_cap: int = Field(default=config.PARAMETER_CAP, gt=0)
    preset: str | None = None
    action_kind: str | None = None

    @model_validator(mode="after")
    def _check(self):
        if not self.branches:
            raise ValueError("architecture needs at least one branch")
        names = [b.name for b in self.branches]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate branch names: {names}")
        for j, spec in enumerate(self.head):
            if spec.kind not in _HEAD_KINDS:
                raise ValueError(f"head layer {j} ({spec.kind.value}) not allowed; use Dense/Relu/Dropout")
            if spec.kind is LayerKind.CONCAT and j != 0:
                raise ValueError("Concat may only open the head")
        widths = [spec.units for spec in self.head if spec.kind is LayerKind.DENSE]
        if any(b > a for a, b in zip(widths, widths[1:])):
            raise ValueError(f"head Dense widths must be non-increasing, got {widths}")
        if widths and widths[-1] < 16:
            raise ValueError(f"last hidden Dense must have >= 16 units, got {widths[-1]}")
        return self

    def branch(self, name: str) -> BranchSpec:
        for b in self.branches:
            if b.name == name:
                return b
        raise ConfigError(f"no branch named '{name}'; branches: {[b.name for b in self.branches]}")

    def input_shape(self, branch: BranchSpec) -> tuple[int, ...]:
        if branch.input_kind is InputKind.SIGNALS_1D:
            return (len(branch.channels), self.signal_length)
        return (len(branch.channels), self.scaleogram_height, self.signal_length)

    @property
    def signal_channels(self) -> tuple[int, ...]:
        return _union(b.channels for b in self.branches if b.input_kind is InputKind.SIGNALS_1D)

    @property
    def scaleogram_channels(self) -> tuple[int, ...]:
        return _union(b.channels for b in self.branches if b.input_kind is InputKind.SCALEOGRAMS_2D)


def _union(groups) -> tuple[int, ...]:
    return tuple(sorted(set(itertools.chain.from_iterable(groups))))


@dataclass(frozen=True, eq=False)
class ModelInputs:
    """
    Batched model inputs. `signal_channels` / `scaleogram_channels` name the
    record channel held by each row / plane.
    """

    signals: np.ndarray | None = None
    signal_channels: tuple[int, ...] = ()
    scaleograms: np.ndarray | None = None
    scaleogram_channels: tuple[int, ...] = ()

    @property
    def batch_size(self) -> int:
        for arr in (self.signals, self.scaleograms):
            if arr is not None:
                return arr.shape[0]
        return 0

    def take(self, idx) -> "ModelInputs":
        return ModelInputs(
            signals=None if self.signals is None else self.signals[idx],
            signal_channels=self.signal_channels,
            scaleograms=None if self.scaleograms is None else self.scaleograms[idx],
            scaleogram_channels=self.scaleogram_channels,
        )

    def single(self, i: int) -> "ModelInputs":
        return self.take(slice(i, i + 1))

    def branch_input(self, branch: BranchSpec) -> np.ndarray:
        if branch.input_kind is InputKind.SIGNALS_1D:
            arr, available, what = self.signals, self.signal_channels, "signals"
        else:
            arr, available, what = self.scaleograms, self.scaleogram_channels, "scaleograms"
        if arr is None:
            raise ShapeError(f"branch '{branch.name}' needs {what} but none were given")
        missing = [c for c in branch.channels if c not in available]
        if missing:
            raise ShapeError(f"branch '{branch.name}' needs {what} for channels {missing}; inputs hold {list(available)}")
        rows = [available.index(c) for c in branch.channels]
        return arr[:, rows]


class ModelGraph:
    """Architecture + named parameters + class map; `version` changes whenever parameters do."""

    def __init__(self, arch: ArchitectureSpec, class_map: Mapping[int, str], params=None, seed=None,
                 dtype=np.float32, extras: dict | None = None):
        self.arch = arch
        self.class_map = {int(k): str(v) for k, v in dict(class_map).items()}
        if len(self.class_map) != arch.n_classes:
            raise ConfigError(f"class map has {len(self.class_map)} classes, architecture expects {arch.n_classes}")
        self.dtype = np.dtype(dtype)
        self.extras = dict(extras or {})
        self.version = 0
        self.branch_layers: dict[str, list[Layer]] = {}
        self.head_layers: list[Layer] = []
        self.shapes: dict[str, tuple[int, ...]] = {}
        self._build(params, seed)

    def _build(self, params, seed):
        rng = np.random.default_rng(seed if seed is not None else config.DEFAULT_SEED)
        fresh: dict[str, np.ndarray] = {}
        merged = 0
        for branch in self.arch.branches:
            shape = self.arch.input_shape(branch)
            layers = []
            for j, spec in enumerate(branch.layers):
                layer = make_layer(spec, f"{branch.name}.{j}.{spec.kind.value.lower()}")
                for key, value in layer.init_params(shape, rng, self.dtype).items():
                    fresh[f"{layer.name}.{key}"] = value
                shape = layer.output_shape(shape)
                self.shapes[layer.name] = shape
                layers.append(layer)
            if len(shape) != 1:
                raise ShapeError(f"branch '{branch.name}' output {shape} is not flat; end it with GlobalMaxPool or Flatten")
            self.branch_layers[branch.name] = layers
            merged += shape[0]

        shape = (merged,)
        head_specs = [s for s in self.arch.head if s.kind is not LayerKind.CONCAT]
        named = [(f"head.{j}.{s.kind.value.lower()}", s) for j, s in enumerate(head_specs)]
        named.append((OUTPUT_LAYER, LayerSpec.dense(self.arch.n_classes)))
        for name, spec in named:
            layer = make_layer(spec, name)
            for key, value in layer.init_params(shape, rng, self.dtype).items():
                fresh[f"{layer.name}.{key}"] = value
            shape = layer.output_shape(shape)
            self.shapes[layer.name] = shape
            self.head_layers.append(layer)

        if params is None:
            self.params = fresh
        else:
            missing = set(fresh) - set(params)
            extra = set(params) - set(fresh)
            if missing or extra:
                raise ShapeError(f"parameter names do not match architecture (missing {sorted(missing)}, unexpected {sorted(extra)})")
            for name, value in params.items():
                if tuple(value.shape) != fresh[name].shape:
                    raise ShapeError(f"parameter '{name}' has shape {value.shape}, expected {fresh[name].shape}")
            self.params = {name: np.asarray(params[name], dtype=self.dtype) for name in fresh}

        count = self.parameter_count
        if count > self.arch.parameter_cap:
            raise ConfigError(f"model has {count} parameters, above the cap of {self.arch.parameter_cap}")

    # --- Introspection ---
    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def n_classes(self) -> int:
        return self.arch.n_classes

    @property
    def class_names(self) -> list[str]:
        return [self.class_map[k] for k in sorted(self.class_map)]

    def layer(self, name: str) -> Layer:
        for layer in itertools.chain(*self.branch_layers.values(), self.head_layers):
            if layer.name == name:
                return layer
        raise ConfigError(f"no layer named '{name}'")

    def layer_params(self, layer: Layer) -> dict[str, np.ndarray]:
        prefix = layer.name + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    # --- Mutation ---
    def set_params(self, params: Mapping[str, np.ndarray]):
        for name, value in params.items():
            if name not in self.params or self.params[name].shape != np.shape(value):
                raise ShapeError(f"cannot set parameter '{name}' with shape {np.shape(value)}")
            self.params[name] = np.asarray(value, dtype=self.dtype)
        self.version += 1

    def touch(self):
        """Marks in-place parameter updates."""
        self.version += 1

    def copy(self) -> "ModelGraph":
        return ModelGraph(self.arch, self.class_map, params={k: v.copy() for k, v in self.params.items()},
                          dtype=self.dtype, extras=dict(self.extras))

    def astype(self, dtype) -> "ModelGraph":
        return ModelGraph(self.arch, self.class_map, params={k: v.astype(dtype) for k, v in self.params.items()},
                          dtype=dtype, extras=dict(self.extras))


# --- Forward / backward ---
@dataclass(eq=False)
class ForwardCache:
    model_id: int
    version: int
    training: bool
    layer_caches: dict[str, object]
    activations: dict[str, np.ndarray]
    branch_widths: list[int]
    batch_size: int


@dataclass(eq=False)
class Gradients:
    """`params` mirrors model.params; `activations` holds dLoss/d(output) of every layer."""

    params: dict[str, np.ndarray]
    activations: dict[str, np.ndarray] = field(default_factory=dict)


def forward(model: ModelGraph, inputs: ModelInputs, training: bool = False, rng=None) -> tuple[np.ndarray, ForwardCache]:
    """Runs every branch, concatenates their flat outputs and applies the head; returns logits [B, C]."""
    caches: dict[str, object] = {}
    activations: dict[str, np.ndarray] = {}
    outputs, widths = [], []
    for branch in model.arch.branches:
        x = np.asarray(inputs.branch_input(branch), dtype=model.dtype)
        expected = model.arch.input_shape(branch)
        if tuple(x.shape[1:]) != expected:
            raise ShapeError(f"branch '{branch.name}' expects per-sample input {expected}, got {tuple(x.shape[1:])}")
        for layer in model.branch_layers[branch.name]:
            x, caches[layer.name] = layer.forward(x, model.layer_params(layer), training, rng)
            activations[layer.name] = x
        outputs.append(x)
        widths.append(x.shape[1])

    x = np.concatenate(outputs, axis=1) if len(outputs) > 1 else outputs[0]
    for layer in model.head_layers:
        x, caches[layer.name] = layer.forward(x, model.layer_params(layer), training, rng)
        activations[layer.name] = x
    cache = ForwardCache(
        model_id=id(model),
        version=model.version,
        training=training,
        layer_caches=caches,
        activations=activations,
        branch_widths=widths,
        batch_size=x.shape[0],
    )
    return x, cache


def backward(model: ModelGraph, cache: ForwardCache, d_logits) -> Gradients:
    """Reverse pass; gradients for every parameter and every layer output."""
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCacheError("forward cache does not belong to the current model parameters; rerun forward")
    d = np.asarray(d_logits, dtype=model.dtype)
    if d.shape != (cache.batch_size, model.n_classes):
        raise ShapeError(f"d_logits must be [{cache.batch_size}, {model.n_classes}], got {d.shape}")

    grads: dict[str, np.ndarray] = {}
    d_act: dict[str, np.ndarray] = {}

    def run(layers, d, first_needs_dx):
        for idx in range(len(layers) - 1, -1, -1):
            layer = layers[idx]
            d_act[layer.name] = d
            need_dx = idx > 0 or first_needs_dx
            d, layer_grads = layer.backward(d, cache.layer_caches[layer.name], model.layer_params(layer), need_dx)
            for key, value in layer_grads.items():
                grads[f"{layer.name}.{key}"] = value
        return d

    d = run(model.head_layers, d, True)
    offsets = np.cumsum([0] + cache.branch_widths)
    for i, branch in enumerate(model.arch.branches):
        run(model.branch_layers[branch.name], d[:, offsets[i]:offsets[i + 1]], False)
    return Gradients(params=grads, activations=d_act)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_batch(model: ModelGraph, inputs: ModelInputs, chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Class ids [B] and probabilities [B, C]; ties resolve to the lowest class id."""
    n = inputs.batch_size
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.n_classes))
    probs = []
    for start in range(0, n, chunk):
        logits, _ = forward(model, inputs.take(slice(start, start + chunk)))
        probs.append(softmax(logits))
    probs = np.concatenate(probs, axis=0)
    return probs.argmax(axis=1), probs


def predict(model: ModelGraph, inputs: ModelInputs) -> tuple[int, np.ndarray]:
    if inputs.batch_size != 1:
        raise ShapeError(f"predict takes a single record, got a batch of {inputs.batch_size}; use predict_batch")
    ids, probs = predict_batch(model, inputs)
    return int(ids[0]), probs[0]
