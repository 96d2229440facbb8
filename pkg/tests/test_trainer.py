import numpy as np
import pandas as pd
import pytest

from errors import DataError, DivergenceError
from layers import LayerSpec
from model_graph import ArchitectureSpec, BranchSpec, InputKind, ModelGraph, ModelInputs
from trainer import AdamConfig, LabeledInputs, TrainConfig, evaluate, softmax_cross_entropy, train


def _linear_model(seed=0):
    arch = ArchitectureSpec(
        branches=(BranchSpec(name="signals", input_kind=InputKind.SIGNALS_1D, channels=(0,),
                             layers=(LayerSpec.flatten(),)),),
        n_classes=2,
        signal_length=10,
    )
    return ModelGraph(arch, {0: "Success", 1: "Fail"}, seed=seed)


def _toy_data(n=40, seed=0, augmented=False):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    signals = rng.normal(size=(n, 1, 10)) * 0.5 + np.where(labels == 1, 1.0, -1.0)[:, None, None]
    return LabeledInputs(
        inputs=ModelInputs(signals=signals.astype(np.float32), signal_channels=(0,)),
        labels=labels,
        record_ids=tuple(f"r{i}" for i in range(n)),
        augmented=np.full(n, augmented),
    )


def test_cross_entropy_value_and_gradient():
    loss, d = softmax_cross_entropy(np.zeros((4, 3)), [0, 1, 2, 0])
    assert loss == pytest.approx(np.log(3))
    np.testing.assert_allclose(d.sum(axis=1), 0.0, atol=1e-12)

    rng = np.random.default_rng(0)
    logits, targets = rng.normal(size=(3, 4)), np.array([1, 0, 3])
    _, d = softmax_cross_entropy(logits, targets)
    eps = 1e-6
    for i in range(3):
        for j in range(4):
            up, down = logits.copy(), logits.copy()
            up[i, j] += eps
            down[i, j] -= eps
            numeric = (softmax_cross_entropy(up, targets)[0] - softmax_cross_entropy(down, targets)[0]) / (2 * eps)
            assert d[i, j] == pytest.approx(numeric, abs=1e-7)


def test_training_reduces_loss_and_separates_classes():
    model = _linear_model()
    cfg = TrainConfig(optimizer=AdamConfig(lr=0.05), batch_size=8, epochs=30, patience=30, seed=1)
    model, history = train(model, _toy_data(), _toy_data(seed=1), cfg)
    frame = history.to_frame()
    assert frame["train_loss"].iloc[-1] < frame["train_loss"].iloc[0]
    result = evaluate(model, _toy_data(seed=2))
    assert result.accuracy == 1.0
    assert result.macro_f1 == 1.0


def test_best_epoch_weights_are_restored():
    cfg = TrainConfig(optimizer=AdamConfig(lr=0.01), batch_size=8, epochs=12, patience=3, seed=4)
    val = _toy_data(n=20, seed=5)
    model, history = train(_linear_model(), _toy_data(), val, cfg)
    assert 1 <= history.best_epoch <= history.epochs_run
    best_row = history.rows[history.best_epoch - 1]
    assert evaluate(model, val).macro_f1 == pytest.approx(best_row["val_macro_f1"])
    scores = [row["val_macro_f1"] for row in history.rows]
    assert best_row["val_macro_f1"] == max(scores)
    if history.epochs_run < cfg.epochs:
        assert history.epochs_run == history.best_epoch + cfg.patience


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=3, batch_size=8, seed=9)
    a, _ = train(_linear_model(), _toy_data(), None, cfg)
    b, _ = train(_linear_model(), _toy_data(), None, cfg)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])


def test_without_validation_the_last_epoch_wins():
    _, history = train(_linear_model(), _toy_data(), None, TrainConfig(epochs=4, batch_size=16))
    assert history.epochs_run == 4
    assert history.best_epoch == 4
    assert history.to_frame()["val_macro_f1"].isna().all()


def test_divergence_is_reported():
    data = _toy_data()
    broken = LabeledInputs(
        inputs=ModelInputs(signals=np.full((4, 1, 10), np.inf, dtype=np.float32), signal_channels=(0,)),
        labels=np.array([0, 1, 0, 1]),
    )
    with pytest.raises(DivergenceError) as info:
        train(_linear_model(), broken, data, TrainConfig(epochs=2))
    assert info.value.last_finite_epoch == 0


def test_training_input_checks():
    with pytest.raises(DataError, match="augmented"):
        train(_linear_model(), _toy_data(), _toy_data(augmented=True), TrainConfig(epochs=1))
    with pytest.raises(DataError):
        train(_linear_model(), _toy_data().take([]), None, TrainConfig(epochs=1))
    with pytest.raises(DataError):
        evaluate(_linear_model(), _toy_data().take([]))


def test_history_csv(tmp_path):
    _, history = train(_linear_model(), _toy_data(), _toy_data(seed=3), TrainConfig(epochs=2, patience=5))
    path = history.to_csv(tmp_path / "out" / "history.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["epoch", "train_loss", "train_accuracy", "val_loss", "val_macro_f1"]
    assert list(frame["epoch"]) == [1, 2]
