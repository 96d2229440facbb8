import numpy as np
import pytest

from errors import DataError
from helpers import make_record
from metrics import (
    ConfusionMatrix,
    RankMethod,
    compute_correlation_matrix,
    f1_scores,
    group_correlated_channels,
    rank_channels,
    select_channels,
)
from records import ActionKind, Dataset


def _dataset_from(channel_sets):
    records = [make_record(f"r{i}", channels=ch) for i, ch in enumerate(channel_sets)]
    return Dataset(tuple(records), {0: "Success"}, ActionKind.BUTTON)


# --- F1 ---
def test_f1_with_a_never_predicted_class():
    cm = ConfusionMatrix(np.array([[5, 0], [5, 0]]), ("Success", "Fail"))
    per_class, macro = f1_scores(cm)
    assert per_class[0] == pytest.approx(2 / 3)
    assert per_class[1] == 0.0
    assert macro == pytest.approx(1 / 3)
    assert cm.accuracy() == 0.5


def test_f1_perfect_and_from_predictions():
    cm = ConfusionMatrix.from_predictions([0, 1, 2, 2], [0, 1, 2, 2], ("a", "b", "c"))
    assert cm.to_list() == [[1, 0, 0], [0, 1, 0], [0, 0, 2]]
    per_class, macro = f1_scores(cm)
    np.testing.assert_allclose(per_class, 1.0)
    assert macro == 1.0
    np.testing.assert_allclose(cm.recall(), 1.0)


def test_f1_of_empty_matrix_is_an_error():
    with pytest.raises(DataError):
        f1_scores(ConfusionMatrix(np.zeros((2, 2), dtype=int), ("a", "b")))


def test_f1_worked_examples():
    per_class, macro = f1_scores(ConfusionMatrix(np.array([[8, 2], [1, 9]]), ("Success", "Fail")))
    np.testing.assert_allclose(per_class, [16 / 19, 6 / 7])
    assert per_class[0] == pytest.approx(0.842, abs=1e-3)
    assert per_class[1] == pytest.approx(0.857, abs=1e-3)
    assert macro == pytest.approx((16 / 19 + 6 / 7) / 2)

    per_class, macro = f1_scores(ConfusionMatrix(np.array([[0, 5], [5, 0]]), ("Success", "Fail")))
    np.testing.assert_array_equal(per_class, [0.0, 0.0])
    assert macro == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_f1_follows_a_relabeling_of_classes(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    counts = rng.integers(0, 20, size=(k, k))
    counts[0, 0] += 1
    perm = rng.permutation(k)
    names = tuple(f"c{i}" for i in range(k))
    per_class, macro = f1_scores(ConfusionMatrix(counts, names))
    permuted, macro_permuted = f1_scores(ConfusionMatrix(counts[np.ix_(perm, perm)], tuple(names[i] for i in perm)))
    np.testing.assert_allclose(permuted, per_class[perm], rtol=0, atol=1e-12)
    assert macro_permuted == pytest.approx(macro, abs=1e-12)


def test_confusion_matrix_validation():
    with pytest.raises(DataError):
        ConfusionMatrix(np.zeros((2, 3)), ("a", "b"))
    with pytest.raises(DataError):
        ConfusionMatrix(np.array([[1, -1], [0, 0]]), ("a", "b"))


# --- Correlation and ranking ---
def test_correlation_handles_linear_and_constant_channels():
    rng = np.random.default_rng(0)
    sets = []
    for _ in range(3):
        ch = rng.normal(size=(9, 200))
        ch[1] = 2.0 * ch[0] + 1.0
        ch[2] = -ch[0]
        ch[8] = 4.2
        sets.append(ch)
    corr, constant = compute_correlation_matrix(_dataset_from(sets))
    assert constant == ["dpz"]
    assert corr[0, 1] == pytest.approx(1.0)
    assert corr[0, 2] == pytest.approx(-1.0)
    assert corr[8, 8] == 1.0
    assert np.all(corr[8, :8] == 0.0)
    np.testing.assert_array_equal(corr, corr.T)
    assert np.all(np.abs(corr) <= 1.0)


def test_rank_by_energy_and_ties():
    rng = np.random.default_rng(1)
    ch = rng.normal(size=(9, 300)) * np.array([1, 1, 5, 1, 1, 1, 1, 1, 3.0])[:, None]
    d = _dataset_from([ch])
    order = rank_channels(d, RankMethod.MAX_ENERGY)
    assert order[:2] == [2, 8]
    assert select_channels(d, "MaxEnergy", 2) == [2, 8]

    flat = _dataset_from([np.ones((9, 50))])
    assert rank_channels(flat, RankMethod.MAX_ENERGY) == list(range(9))
    with pytest.raises(DataError):
        select_channels(flat, RankMethod.MAX_ENERGY, 0)


def test_rank_by_principal_component():
    rng = np.random.default_rng(2)
    ch = rng.normal(size=(9, 500)) * 0.01
    ch[4] += rng.normal(size=500) * 10.0
    order = rank_channels(_dataset_from([ch]), RankMethod.PCA_VARIANCE)
    assert order[0] == 4


def test_group_correlated_channels():
    corr = np.eye(9)
    corr[0, 1] = corr[1, 0] = 0.9
    corr[1, 2] = corr[2, 1] = -0.75
    corr[6, 7] = corr[7, 6] = 0.69
    groups = group_correlated_channels(corr, threshold=0.7)
    assert groups == [[0, 1, 2], [3], [4], [5], [6], [7], [8]]
    assert [6, 7] in group_correlated_channels(corr, threshold=0.6)
