import hashlib
import struct

import numpy as np
import pytest

import config
from checkpoint import load_model, model_from_bytes, model_to_bytes, save_model
from errors import CheckpointError, ChecksumError, FormatVersionError
from layers import LayerSpec
from model_graph import ArchitectureSpec, BranchSpec, InputKind, ModelGraph, ModelInputs, predict_batch


def _model():
    arch = ArchitectureSpec(
        branches=(BranchSpec(name="forces", input_kind=InputKind.SIGNALS_1D, channels=(0, 1, 2),
                             layers=(LayerSpec.conv1d(4, 5, 2), LayerSpec.relu(), LayerSpec.global_max_pool())),),
        head=(LayerSpec.concat(), LayerSpec.dense(16), LayerSpec.relu()),
        n_classes=2,
        signal_length=30,
        preset="cnn1d",
        action_kind="Button",
    )
    return ModelGraph(arch, {0: "Success", 1: "Fail"}, seed=5, extras={"action_kind": "Button", "note": [1, 2]})


def _reseal(body: bytes) -> bytes:
    return body + hashlib.sha256(body).digest()


def test_save_and_load_preserve_everything(tmp_path):
    model = _model()
    path = save_model(model, tmp_path / "nested" / "model.bin")
    back = load_model(path)
    assert back.arch == model.arch
    assert back.class_map == model.class_map
    assert back.extras == model.extras
    for name, value in model.params.items():
        np.testing.assert_array_equal(back.params[name], value)
    inputs = ModelInputs(signals=np.random.default_rng(0).normal(size=(3, 3, 30)), signal_channels=(0, 1, 2))
    np.testing.assert_array_equal(predict_batch(back, inputs)[1], predict_batch(model, inputs)[1])


def test_serialization_is_deterministic():
    assert model_to_bytes(_model()) == model_to_bytes(_model())


def test_corruption_is_detected():
    raw = bytearray(model_to_bytes(_model()))
    raw[-40] ^= 0xFF
    with pytest.raises(ChecksumError):
        model_from_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        model_from_bytes(model_to_bytes(_model())[:-10])
    with pytest.raises(ChecksumError):
        model_from_bytes(b"WRCK")


def test_wrong_magic():
    raw = model_to_bytes(_model())
    with pytest.raises(CheckpointError) as info:
        model_from_bytes(b"ABCD" + raw[4:])
    assert type(info.value) is CheckpointError


def test_future_format_version():
    raw = model_to_bytes(_model())
    body = raw[:-32]
    magic, _, header_len = struct.unpack_from("<4sHI", body)
    bumped = struct.pack("<4sHI", magic, config.MODEL_FORMAT_VERSION + 1, header_len) + body[10:]
    with pytest.raises(FormatVersionError):
        model_from_bytes(_reseal(bumped))


def test_unreadable_header_mentions_format_version():
    header = b'{"architecture": {"branches": "nope"}}'
    body = struct.pack("<4sHI", config.MODEL_MAGIC, config.MODEL_FORMAT_VERSION, len(header)) + header
    with pytest.raises(CheckpointError, match="format version"):
        model_from_bytes(_reseal(body))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "absent.bin")
