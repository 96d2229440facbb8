"""
Architecture presets per action kind, and the design-rule linter they must pass.

Design rules: conv kernels 20-100 samples with stride 10-50% of the kernel
(time axis for 2D convs), filters doubling with depth, dropout 20-40%,
GlobalMaxPool closing every conv branch, dense taper down to >= 16 units,
parameter count under the cap.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import config
from errors import ConfigError
from layers import CONV_KINDS, LayerKind, LayerSpec, as_pair
from model_graph import ArchitectureSpec, BranchSpec, InputKind, ModelGraph
from records import ActionKind

KERNEL_RANGE = (20, 100)
STRIDE_FRACTION = (0.1, 0.5)
DROPOUT_RANGE = (0.2, 0.4)
MIN_DENSE_UNITS = 16


class Preset(str, Enum):
    FF_ANN = "ff-ann"
    CNN1D = "cnn1d"
    CNN2D = "cnn2d"
    HYBRID_ALL = "hybrid-all"
    HYBRID_UNIT_MEASURE = "hybrid-unit-measure"
    HYBRID_SPECIFIC = "hybrid-specific"

    @classmethod
    def parse(cls, value) -> "Preset":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "").replace("-", "")
        for preset in cls:
            if preset.value.replace("-", "") == key or preset.name.lower().replace("_", "") == key:
                return preset
        raise ConfigError(f"unknown preset '{value}'; expected one of {[p.value for p in cls]}")

    @property
    def uses_scaleograms(self) -> bool:
        return self not in (Preset.FF_ANN, Preset.CNN1D)


@dataclass(frozen=True)
class KindTuning:
    kernel: int
    stride: int
    dropout: float
    filters: int = 16
    kernel2: int = 20
    stride2: int = 4
    # How many top-ranked channels the Specific strategy keeps per input kind.
    key_signals: int = 3
    key_scaleograms: int = 2


# Slower actions (levers, dials) get wider kernels.
KIND_TUNING: dict[ActionKind, KindTuning] = {
    ActionKind.BUTTON: KindTuning(kernel=40, stride=8, dropout=0.3, key_signals=2, key_scaleograms=1),
    ActionKind.SWITCH: KindTuning(kernel=50, stride=10, dropout=0.3),
    ActionKind.KNOB: KindTuning(kernel=60, stride=12, dropout=0.4, key_signals=2, key_scaleograms=1),
    ActionKind.FLAP: KindTuning(kernel=80, stride=16, dropout=0.3),
    ActionKind.LDG: KindTuning(kernel=100, stride=20, dropout=0.3, key_signals=6, key_scaleograms=3),
    ActionKind.SBRAKE: KindTuning(kernel=80, stride=16, dropout=0.35),
}


# --- Building blocks ---
def conv1d_stack(t: KindTuning) -> tuple[LayerSpec, ...]:
    return (
        LayerSpec.conv1d(t.filters, t.kernel, t.stride),
        LayerSpec.relu(),
        LayerSpec.conv1d(2 * t.filters, t.kernel2, t.stride2),
        LayerSpec.relu(),
        LayerSpec.dropout(t.dropout),
        LayerSpec.global_max_pool(),
    )


def conv2d_stack(t: KindTuning) -> tuple[LayerSpec, ...]:
    # The leading pool shrinks the [128, N] scaleogram before any convolution.
    return (
        LayerSpec.maxpool2d((4, 4)),
        LayerSpec.conv2d(8, (8, t.kernel2), (4, t.stride2)),
        LayerSpec.relu(),
        LayerSpec.conv2d(16, (3, t.kernel2), (1, t.stride2)),
        LayerSpec.relu(),
        LayerSpec.dropout(t.dropout),
        LayerSpec.global_max_pool(),
    )


def dense_head(widths: Sequence[int], dropout: float) -> tuple[LayerSpec, ...]:
    layers = [LayerSpec.concat()]
    for i, units in enumerate(widths):
        layers += [LayerSpec.dense(units), LayerSpec.relu()]
        if i == 0:
            layers.append(LayerSpec.dropout(dropout))
    return tuple(layers)


def _branch_1d(name, channels, t):
    return BranchSpec(name=name, input_kind=InputKind.SIGNALS_1D, channels=tuple(channels), layers=conv1d_stack(t))


def _branch_2d(name, channels, t):
    return BranchSpec(name=name, input_kind=InputKind.SCALEOGRAMS_2D, channels=tuple(channels), layers=conv2d_stack(t))


_UNIT_BRANCHES = (("forces", config.FORCE_CHANNELS), ("torques", config.TORQUE_CHANNELS), ("positions", config.POSITION_CHANNELS))
_SCALEOGRAM_UNITS = (("force_scaleograms", config.FORCE_CHANNELS), ("torque_scaleograms", config.TORQUE_CHANNELS))
_SCALEOGRAM_ALLOWED = frozenset(config.FORCE_CHANNELS + config.TORQUE_CHANNELS)


def _within(channels, keep) -> tuple[int, ...]:
    return tuple(c for c in channels if c in keep)


def _top_ranked(ranking: Sequence[int], keep, count: int) -> tuple[int, ...]:
    return tuple(sorted([c for c in ranking if c in keep][:count]))


def preset_architecture(action_kind, preset, n_classes: int, channel_groups: Sequence[Sequence[int]] | None = None,
                        signal_length: int = 800, parameter_cap: int = config.PARAMETER_CAP,
                        channels: Sequence[int] | None = None, ranking: Sequence[int] | None = None) -> ArchitectureSpec:
    """
    Architecture for one action kind and preset.

    `channels` restricts every branch to the channels the pipeline keeps
    (the "Selected" data mode); branches left without channels are dropped.
    `channel_groups` (e.g. from correlation grouping) replaces the per-unit
    split of the 1D-CNN preset with one branch per group. The Specific hybrid
    combines the best-ranked signals with the best-ranked force/torque
    scaleograms, so it needs a `ranking` (most important channel first),
    usually from `metrics.rank_channels` on the training split.
    """
    kind = ActionKind.parse(action_kind)
    preset = Preset.parse(preset)
    t = KIND_TUNING[kind]
    keep = tuple(range(config.N_CHANNELS)) if channels is None else tuple(sorted(set(channels)))
    keep_2d = tuple(c for c in keep if c in _SCALEOGRAM_ALLOWED)

    if preset is Preset.FF_ANN:
        branches = (BranchSpec(name="signals", input_kind=InputKind.SIGNALS_1D, channels=keep,
                               layers=(LayerSpec.flatten(),)),)
        head = dense_head((128, 64, 16), t.dropout)
    else:
        head = dense_head((64, 32, 16), t.dropout)
        units_1d = [(name, _within(chans, keep)) for name, chans in _UNIT_BRANCHES]
        units_2d = [(name, _within(chans, keep)) for name, chans in _SCALEOGRAM_UNITS]
        if preset is Preset.CNN1D:
            if channel_groups:
                groups = [g for g in (_within(g, keep) for g in channel_groups) if g]
                units_1d = [(f"group{i}", g) for i, g in enumerate(groups)]
            branches = [_branch_1d(name, chans, t) for name, chans in units_1d if chans]
        elif preset is Preset.CNN2D:
            branches = [_branch_2d("scaleograms", keep_2d, t)] if keep_2d else []
        elif preset is Preset.HYBRID_ALL:
            branches = [_branch_1d("signals", keep, t)] + ([_branch_2d("scaleograms", keep_2d, t)] if keep_2d else [])
        elif preset is Preset.HYBRID_UNIT_MEASURE:
            branches = [_branch_1d(name, chans, t) for name, chans in units_1d if chans]
            branches += [_branch_2d(name, chans, t) for name, chans in units_2d if chans]
        else:
            if ranking is None:
                raise ConfigError(f"{preset.value} picks its channels from a channel ranking; none was given")
            key_signals = _top_ranked(ranking, keep, t.key_signals)
            key_scaleograms = _top_ranked(ranking, keep_2d, t.key_scaleograms)
            branches = [_branch_1d("key_signals", key_signals, t)] if key_signals else []
            if key_scaleograms:
                branches.append(_branch_2d("key_scaleograms", key_scaleograms, t))
        if preset.uses_scaleograms and not any(b.input_kind is InputKind.SCALEOGRAMS_2D for b in branches):
            raise ConfigError(f"{preset.value} needs force or torque channels for scaleograms; kept channels are {list(keep)}")
        branches = tuple(branches)

    return ArchitectureSpec(
        branches=branches,
        head=head,
        n_classes=n_classes,
        signal_length=signal_length,
        parameter_cap=parameter_cap,
        preset=preset.value,
        action_kind=kind.value,
    )


def build_preset(action_kind, preset, class_map: Mapping[int, str], seed: int = config.DEFAULT_SEED,
                 channel_groups=None, **kwargs) -> ModelGraph:
    arch = preset_architecture(action_kind, preset, len(class_map), channel_groups=channel_groups, **kwargs)
    return ModelGraph(arch, class_map, seed=seed)


# --- Linter ---
def _check_time_conv(where: str, kernel: int, stride: int, problems: list[str]):
    lo, hi = KERNEL_RANGE
    if not lo <= kernel <= hi:
        problems.append(f"{where}: kernel {kernel} outside [{lo}, {hi}]")
    if not STRIDE_FRACTION[0] * kernel - 1e-9 <= stride <= STRIDE_FRACTION[1] * kernel + 1e-9:
        problems.append(f"{where}: stride {stride} not within 10-50% of kernel {kernel}")


def lint_architecture(arch: ArchitectureSpec) -> list[str]:
    """Returns human-readable rule violations; an empty list means the architecture conforms."""
    problems: list[str] = []
    for branch in arch.branches:
        prev_filters = None
        for j, spec in enumerate(branch.layers):
            where = f"{branch.name}.{j}"
            if spec.kind is LayerKind.CONV1D:
                _check_time_conv(where, spec.kernel, spec.stride or 1, problems)
            elif spec.kind is LayerKind.CONV2D:
                _check_time_conv(where, as_pair(spec.kernel)[1], as_pair(spec.stride or 1)[1], problems)
            if spec.kind in CONV_KINDS:
                if prev_filters is not None and spec.filters != 2 * prev_filters:
                    problems.append(f"{where}: {spec.filters} filters, expected {2 * prev_filters} (doubling)")
                prev_filters = spec.filters
            if spec.kind is LayerKind.DROPOUT:
                _check_dropout(where, spec.rate, problems)
        if branch.conv_depth and branch.layers[-1].kind is not LayerKind.GLOBAL_MAX_POOL:
            problems.append(f"{branch.name}: conv branch must end with GlobalMaxPool")

    widths = []
    for j, spec in enumerate(arch.head):
        if spec.kind is LayerKind.DROPOUT:
            _check_dropout(f"head.{j}", spec.rate, problems)
        if spec.kind is LayerKind.DENSE:
            widths.append(spec.units)
    if any(w < MIN_DENSE_UNITS for w in widths) or any(b > a for a, b in zip(widths, widths[1:])):
        problems.append(f"head: dense taper {widths} must be non-increasing and >= {MIN_DENSE_UNITS}")

    unbounded = arch.model_copy(update={"parameter_cap": 2 ** 62})
    count = ModelGraph(unbounded, {i: str(i) for i in range(arch.n_classes)}).parameter_count
    if count > arch.parameter_cap:
        problems.append(f"{count} parameters exceed the cap of {arch.parameter_cap}")
    return problems


def _check_dropout(where, rate, problems):
    lo, hi = DROPOUT_RANGE
    if not lo - 1e-9 <= rate <= hi + 1e-9:
        problems.append(f"{where}: dropout {rate} outside [{lo}, {hi}]")
