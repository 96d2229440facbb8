import numpy as np
import pytest
from pydantic import ValidationError

from errors import ConfigError, ShapeError, StaleCacheError
from layers import LayerSpec
from model_graph import (
    ArchitectureSpec,
    BranchSpec,
    InputKind,
    ModelGraph,
    ModelInputs,
    backward,
    forward,
    predict,
    predict_batch,
    softmax,
)

CLASS_MAP = {0: "Success", 1: "MidState", 2: "Fail"}


def _arch(**kw):
    branches = (
        BranchSpec(name="sig", input_kind=InputKind.SIGNALS_1D, channels=(0, 1),
                   layers=(LayerSpec.conv1d(4, 5, 2), LayerSpec.relu(), LayerSpec.global_max_pool())),
        BranchSpec(name="img", input_kind=InputKind.SCALEOGRAMS_2D, channels=(2,),
                   layers=(LayerSpec.conv2d(3, (3, 5), (1, 2)), LayerSpec.relu(), LayerSpec.global_max_pool())),
    )
    defaults = dict(branches=branches, head=(LayerSpec.concat(), LayerSpec.dense(16), LayerSpec.relu()),
                    n_classes=3, signal_length=40, scaleogram_height=8)
    defaults.update(kw)
    return ArchitectureSpec(**defaults)


def _inputs(batch=2, seed=0):
    rng = np.random.default_rng(seed)
    return ModelInputs(
        signals=rng.normal(size=(batch, 3, 40)),
        signal_channels=(0, 1, 5),
        scaleograms=rng.random(size=(batch, 1, 8, 40)),
        scaleogram_channels=(2,),
    )


def _model(dtype=np.float64, seed=3):
    return ModelGraph(_arch(), CLASS_MAP, seed=seed, dtype=dtype)


# --- Construction ---
def test_parameter_names_and_count():
    model = _model()
    assert sorted(model.params) == sorted([
        "sig.0.conv1d.w", "sig.0.conv1d.b",
        "img.0.conv2d.w", "img.0.conv2d.b",
        "head.0.dense.w", "head.0.dense.b",
        "head.out.w", "head.out.b",
    ])
    assert model.parameter_count == (4 * 2 * 5 + 4) + (3 * 1 * 3 * 5 + 3) + (7 * 16 + 16) + (16 * 3 + 3)
    assert model.class_names == ["Success", "MidState", "Fail"]
    assert model.shapes["sig.0.conv1d"] == (4, 18)
    assert model.shapes["img.0.conv2d"] == (3, 6, 18)


def test_same_seed_same_parameters():
    a, b = _model(seed=11), _model(seed=11)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])


def test_construction_errors():
    with pytest.raises(ConfigError, match="cap"):
        ModelGraph(_arch(parameter_cap=100), CLASS_MAP)
    with pytest.raises(ConfigError):
        ModelGraph(_arch(), {0: "Success", 1: "Fail"})
    open_branch = BranchSpec(name="raw", input_kind=InputKind.SIGNALS_1D, channels=(0,),
                             layers=(LayerSpec.conv1d(2, 3),))
    with pytest.raises(ShapeError, match="not flat"):
        ModelGraph(_arch(branches=(open_branch,)), CLASS_MAP)


def test_architecture_validation():
    with pytest.raises(ValidationError):
        _arch(head=(LayerSpec.dense(16), LayerSpec.dense(32)))
    with pytest.raises(ValidationError):
        _arch(head=(LayerSpec.dense(8),))
    with pytest.raises(ValidationError):
        _arch(head=(LayerSpec.dense(16), LayerSpec.concat()))
    with pytest.raises(ValidationError):
        _arch(head=(LayerSpec.conv1d(2, 3),))
    with pytest.raises(ValidationError):
        _arch(n_classes=1)
    with pytest.raises(ValidationError):
        BranchSpec(name="a.b", input_kind=InputKind.SIGNALS_1D, channels=(0,), layers=(LayerSpec.flatten(),))
    with pytest.raises(ValidationError):
        BranchSpec(name="pos", input_kind=InputKind.SCALEOGRAMS_2D, channels=(7,), layers=(LayerSpec.flatten(),))


def test_input_channel_unions():
    arch = _arch()
    assert arch.signal_channels == (0, 1)
    assert arch.scaleogram_channels == (2,)
    assert arch.input_shape(arch.branch("img")) == (1, 8, 40)
    with pytest.raises(ConfigError):
        arch.branch("nope")


# --- Forward / backward ---
@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(seed):
    model = _model(seed=seed)
    inputs = _inputs(seed=seed + 10)
    g = np.random.default_rng(seed + 20).normal(size=(2, 3))
    logits, cache = forward(model, inputs)
    grads = backward(model, cache, g)

    rng = np.random.default_rng(seed + 30)
    eps = 1e-6
    for name, value in model.params.items():
        flat = value.reshape(-1)
        for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            keep = flat[i]
            flat[i] = keep + eps
            up = np.sum(forward(model, inputs)[0] * g)
            flat[i] = keep - eps
            down = np.sum(forward(model, inputs)[0] * g)
            flat[i] = keep
            numeric = (up - down) / (2 * eps)
            assert grads.params[name].reshape(-1)[i] == pytest.approx(numeric, rel=1e-5, abs=1e-7), name


def test_activation_gradients_are_recorded():
    model = _model()
    logits, cache = forward(model, _inputs())
    grads = backward(model, cache, np.ones_like(logits))
    assert grads.activations["sig.1.relu"].shape == cache.activations["sig.1.relu"].shape
    assert grads.activations["img.0.conv2d"].shape == (2, 3, 6, 18)
    np.testing.assert_array_equal(grads.activations["head.out"], np.ones_like(logits))


def test_stale_cache_is_rejected():
    model = _model()
    logits, cache = forward(model, _inputs())
    model.touch()
    with pytest.raises(StaleCacheError):
        backward(model, cache, np.zeros_like(logits))
    logits, cache = forward(model, _inputs())
    model.set_params({"head.out.b": np.ones(3)})
    with pytest.raises(StaleCacheError):
        backward(model, cache, np.zeros_like(logits))
    other = model.copy()
    logits, cache = forward(model, _inputs())
    with pytest.raises(StaleCacheError):
        backward(other, cache, np.zeros_like(logits))


def test_forward_input_errors():
    model = _model()
    bad = ModelInputs(signals=np.zeros((1, 1, 40)), signal_channels=(0,),
                      scaleograms=np.zeros((1, 1, 8, 40)), scaleogram_channels=(2,))
    with pytest.raises(ShapeError, match="channels"):
        forward(model, bad)
    short = ModelInputs(signals=np.zeros((1, 2, 30)), signal_channels=(0, 1),
                        scaleograms=np.zeros((1, 1, 8, 30)), scaleogram_channels=(2,))
    with pytest.raises(ShapeError):
        forward(model, short)
    no_images = ModelInputs(signals=np.zeros((1, 2, 40)), signal_channels=(0, 1))
    with pytest.raises(ShapeError, match="scaleograms"):
        forward(model, no_images)


# --- Prediction ---
def test_predict_batch_chunks_agree():
    model = _model(dtype=np.float32)
    inputs = _inputs(batch=5)
    ids, probs = predict_batch(model, inputs, chunk=2)
    ids_all, probs_all = predict_batch(model, inputs, chunk=64)
    np.testing.assert_array_equal(ids, ids_all)
    np.testing.assert_allclose(probs, probs_all, rtol=1e-5)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    class_id, single = predict(model, inputs.single(3))
    assert class_id == ids[3]
    with pytest.raises(ShapeError):
        predict(model, inputs)


def test_softmax_is_stable():
    p = softmax(np.array([[1000.0, 1000.0, -1000.0]]))
    np.testing.assert_allclose(p, [[0.5, 0.5, 0.0]])
