"""Metrics against brute-force oracles; fusion arithmetic by hand."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vburst.errors import DataError
from vburst.evaluation import (
    PredictionSet,
    accuracy,
    confusion_matrix,
    format_confusion,
    fuse_labels,
    read_predictions,
    save_confusion_csv,
    uar,
    write_predictions,
)
from vburst.labels import N_CLASSES


def brute_force_uar(y_true, y_pred):
    recalls = []
    for c in range(N_CLASSES):
        mask = y_true == c
        if mask.sum() == 0:
            continue
        recalls.append(np.mean(y_pred[mask] == c))
    return float(np.mean(recalls))


def make_pset(probs, ids=None, labels=None):
    probs = np.asarray(probs, dtype=np.float64)
    if ids is None:
        ids = [f"r{i}" for i in range(probs.shape[0])]
    return PredictionSet(ids=list(ids), probs=probs, labels=labels)


@given(st.integers(0, 2**32 - 1))
def test_confusion_matrix_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 300))
    y_true = rng.integers(0, N_CLASSES, n)
    y_pred = rng.integers(0, N_CLASSES, n)
    cm = confusion_matrix(y_true, y_pred)
    ref = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        ref[t, p] += 1
    np.testing.assert_array_equal(cm, ref)


@pytest.mark.filterwarnings("ignore:classes absent")
@given(st.integers(0, 2**32 - 1))
def test_uar_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 400))
    y_true = rng.integers(0, N_CLASSES, n)
    y_pred = rng.integers(0, N_CLASSES, n)
    got = uar(confusion_matrix(y_true, y_pred))
    assert abs(got - brute_force_uar(y_true, y_pred)) <= 1e-12


def test_uar_perfect_and_absent_classes():
    y = np.repeat(np.arange(N_CLASSES), 3)
    assert uar(confusion_matrix(y, y)) == 1.0
    # class 7 absent from truth: excluded from the mean, with a warning
    y_true = np.array([0, 0, 1, 1])
    y_pred = np.array([0, 1, 1, 1])
    with pytest.warns(UserWarning, match="absent"):
        got = uar(confusion_matrix(y_true, y_pred))
    assert got == pytest.approx((0.5 + 1.0) / 2)


def test_accuracy():
    assert accuracy(np.array([0, 1, 2, 3]), np.array([0, 1, 2, 2])) == 0.75


def test_fusion_mean_hand_example():
    a = np.zeros((2, 8)); b = np.zeros((2, 8))
    a[0, 0], a[0, 1] = 0.6, 0.4
    b[0, 0], b[0, 1] = 0.2, 0.8
    a[1, 2], b[1, 3] = 1.0, 1.0
    fused = fuse_labels([make_pset(a), make_pset(b)])
    np.testing.assert_allclose(fused.probs[0, 0], 0.4, atol=1e-12)
    np.testing.assert_allclose(fused.probs[0, 1], 0.6, atol=1e-12)
    assert fused.labels[0] == 1
    np.testing.assert_allclose(fused.probs[1, 2], 0.5, atol=1e-12)
    # exact tie between classes 2 and 3 resolves to the lower index
    assert fused.labels[1] == 2


def test_fusion_vote_hand_example():
    rows = np.eye(8)
    a = make_pset(rows[[0, 1, 2]])
    b = make_pset(rows[[0, 1, 3]])
    c = make_pset(rows[[0, 4, 3]])
    fused = fuse_labels([a, b, c], method="vote")
    assert fused.labels[0] == 0
    assert fused.labels[1] == 1  # 2 votes of 3
    assert fused.labels[2] == 3
    np.testing.assert_allclose(fused.probs[2, 3], 2 / 3, atol=1e-12)


def test_fusion_of_identical_sets_is_bit_identical():
    rng = np.random.default_rng(33)
    probs = rng.dirichlet(np.ones(8), size=20)
    base = make_pset(probs)
    fused = fuse_labels([base, base, base])
    assert np.array_equal(fused.probs, base.probs)
    assert np.array_equal(fused.labels, base.labels)


def test_fusion_rejects_mismatched_ids():
    probs = np.full((2, 8), 0.125)
    a = make_pset(probs, ids=["x", "y"])
    b = make_pset(probs, ids=["x", "z"])
    with pytest.raises(DataError):
        fuse_labels([a, b])


def test_prediction_set_validation():
    bad = np.full((2, 8), 0.2)
    with pytest.raises(DataError):
        make_pset(bad)
    with pytest.raises(DataError):
        PredictionSet(ids=["a"], probs=np.full((2, 8), 0.125))


def test_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(34)
    probs = rng.dirichlet(np.ones(8), size=15)
    pset = make_pset(probs)
    write_predictions(tmp_path / "p.csv", pset)
    text = (tmp_path / "p.csv").read_text()
    assert text.splitlines()[0] == "id,label," + ",".join(f"p{i}" for i in range(8))
    back = read_predictions(tmp_path / "p.csv")
    assert back.ids == pset.ids
    assert np.array_equal(back.labels, pset.labels)
    assert np.max(np.abs(back.probs - pset.probs)) <= 5e-7  # 6 decimal places


def test_read_label_is_authoritative(tmp_path):
    probs = np.zeros((1, 8))
    probs[0, 5] = 1.0
    pset = make_pset(probs)
    write_predictions(tmp_path / "p.csv", pset)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    parts = lines[1].split(",")
    parts[1] = "Cry"  # disagree with argmax on purpose
    (tmp_path / "p.csv").write_text("\n".join([lines[0], ",".join(parts)]) + "\n")
    back = read_predictions(tmp_path / "p.csv")
    assert np.array_equal(back.labels, [0])  # Cry's index wins over argmax


def test_write_rejects_comma_in_id(tmp_path):
    pset = make_pset(np.full((1, 8), 0.125), ids=["a,b"])
    with pytest.raises(DataError):
        write_predictions(tmp_path / "p.csv", pset)


def test_confusion_rendering(tmp_path):
    y = np.repeat(np.arange(N_CLASSES), 2)
    cm = confusion_matrix(y, y)
    text = format_confusion(cm)
    assert "Cry" in text and "Scream" in text
    save_confusion_csv(tmp_path / "cm.csv", cm)
    lines = (tmp_path / "cm.csv").read_text().splitlines()
    assert len(lines) == N_CLASSES + 1
    assert lines[1].startswith("Cry,2")
