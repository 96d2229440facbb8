import pytest

from errors import ConfigError
from layers import LayerSpec
from model_graph import BranchSpec, InputKind
from presets import Preset, build_preset, lint_architecture, preset_architecture
from records import ActionKind

TWO_CLASSES = {0: "Success", 1: "Fail"}
RANKING = (2, 5, 0, 1, 3, 4, 6, 7, 8)


@pytest.mark.parametrize("kind", list(ActionKind))
@pytest.mark.parametrize("preset", list(Preset))
def test_every_preset_follows_the_design_rules(kind, preset):
    arch = preset_architecture(kind, preset, 3, ranking=RANKING)
    assert lint_architecture(arch) == []
    model = build_preset(kind, preset, {0: "a", 1: "b", 2: "c"}, seed=1, ranking=RANKING)
    assert model.parameter_count <= arch.parameter_cap
    assert arch.preset == preset.value
    assert arch.action_kind == kind.value


def test_cnn1d_parameter_count_by_hand():
    model = build_preset("Button", "cnn1d", TWO_CLASSES)
    per_branch = (16 * 3 * 40 + 16) + (32 * 16 * 20 + 32)
    head = (96 * 64 + 64) + (64 * 32 + 32) + (32 * 16 + 16) + (16 * 2 + 2)
    assert model.parameter_count == 3 * per_branch + head
    assert [b.name for b in model.arch.branches] == ["forces", "torques", "positions"]
    assert model.shapes["forces.0.conv1d"] == (16, 96)
    assert model.shapes["forces.2.conv1d"] == (32, 20)


def test_ff_ann_parameter_count_by_hand():
    model = build_preset(ActionKind.BUTTON, Preset.FF_ANN, TWO_CLASSES)
    expected = (7200 * 128 + 128) + (128 * 64 + 64) + (64 * 16 + 16) + (16 * 2 + 2)
    assert model.parameter_count == expected


def test_scaleogram_branch_shapes():
    model = build_preset("Ldg", "cnn2d", TWO_CLASSES)
    branch = model.arch.branch("scaleograms")
    assert branch.channels == (0, 1, 2, 3, 4, 5)
    assert model.shapes["scaleograms.0.maxpool2d"] == (6, 32, 200)
    assert model.shapes["scaleograms.1.conv2d"] == (8, 7, 46)
    assert model.shapes["scaleograms.3.conv2d"] == (16, 5, 7)


def test_hybrid_presets_branch_layout():
    unit = preset_architecture("Switch", "hybrid-unit-measure", 2)
    assert [b.name for b in unit.branches] == [
        "forces", "torques", "positions", "force_scaleograms", "torque_scaleograms",
    ]
    specific = preset_architecture("Knob", "hybrid-specific", 3, ranking=RANKING)
    assert specific.branch("key_signals").channels == (2, 5)
    assert specific.branch("key_scaleograms").channels == (2,)
    assert specific.scaleogram_channels == (2,)


def test_specific_hybrid_follows_the_ranking():
    arch = preset_architecture("Switch", "hybrid-specific", 2, ranking=(7, 3, 8, 1, 0, 2, 4, 5, 6))
    assert arch.branch("key_signals").channels == (3, 7, 8)
    assert arch.branch("key_scaleograms").channels == (1, 3)
    flipped = preset_architecture("Switch", "hybrid-specific", 2, ranking=(4, 0, 5, 1, 2, 3, 6, 7, 8))
    assert flipped.branch("key_signals").channels == (0, 4, 5)
    assert flipped.branch("key_scaleograms").channels == (0, 4)
    # Only kept channels can be picked.
    kept = preset_architecture("Switch", "hybrid-specific", 2, ranking=(7, 3, 8, 1, 0, 2, 4, 5, 6), channels=(0, 1, 7))
    assert kept.branch("key_signals").channels == (0, 1, 7)
    assert kept.branch("key_scaleograms").channels == (0, 1)
    with pytest.raises(ConfigError, match="ranking"):
        preset_architecture("Switch", "hybrid-specific", 2)


def test_selected_channels_restrict_every_preset():
    chans = (0, 2, 4)
    cnn1d = preset_architecture("Button", "cnn1d", 2, channels=chans)
    assert [(b.name, b.channels) for b in cnn1d.branches] == [("forces", (0, 2)), ("torques", (4,))]
    ff = preset_architecture("Button", "ff-ann", 2, channels=chans)
    assert ff.branch("signals").channels == chans
    unit = preset_architecture("Button", "hybrid-unit-measure", 2, channels=chans)
    assert [b.name for b in unit.branches] == ["forces", "torques", "force_scaleograms", "torque_scaleograms"]
    assert preset_architecture("Button", "cnn2d", 2, channels=chans).scaleogram_channels == chans
    grouped = preset_architecture("Button", "cnn1d", 2, channels=chans, channel_groups=[[0, 1], [3], [2, 4]])
    assert [(b.name, b.channels) for b in grouped.branches] == [("group0", (0,)), ("group1", (2, 4))]
    with pytest.raises(ConfigError, match="scaleograms"):
        preset_architecture("Button", "hybrid-all", 2, channels=(6, 7, 8))


def test_channel_groups_replace_unit_branches():
    arch = preset_architecture("Flap", "cnn1d", 2, channel_groups=[[0, 1, 2, 3], [4], [5, 6, 7, 8]])
    assert [b.name for b in arch.branches] == ["group0", "group1", "group2"]
    assert arch.branch("group1").channels == (4,)


def test_preset_parsing():
    assert Preset.parse("hybrid_all") is Preset.HYBRID_ALL
    assert Preset.parse("CNN1D") is Preset.CNN1D
    assert Preset.parse("HybridUnitMeasure") is Preset.HYBRID_UNIT_MEASURE
    assert not Preset.CNN1D.uses_scaleograms
    assert Preset.HYBRID_SPECIFIC.uses_scaleograms
    with pytest.raises(ConfigError):
        Preset.parse("resnet")


def test_linter_reports_violations():
    good = preset_architecture("Button", "cnn1d", 2)
    bad_branch = BranchSpec(
        name="bad",
        input_kind=InputKind.SIGNALS_1D,
        channels=(0,),
        layers=(
            LayerSpec.conv1d(8, 10, 8),
            LayerSpec.relu(),
            LayerSpec.conv1d(12, 20, 4),
            LayerSpec.dropout(0.5),
            LayerSpec.global_max_pool(),
            LayerSpec.dense(16),
        ),
    )
    arch = good.model_copy(update={"branches": (bad_branch,), "parameter_cap": 1000})
    problems = lint_architecture(arch)
    text = "\n".join(problems)
    assert "kernel 10" in text
    assert "stride 8" in text
    assert "expected 16 (doubling)" in text
    assert "dropout 0.5" in text
    assert "GlobalMaxPool" in text
    assert "exceed the cap of 1000" in text
