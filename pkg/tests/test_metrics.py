import numpy as np
import pytest

from satmamba.harness.metrics import (
    MetricsError,
    MetricsRow,
    confusion_matrix,
    damage_scores,
    f1_from_confusion,
    iou_from_confusion,
    read_metrics_csv,
    segmentation_scores,
    write_metrics_csv,
)
from satmamba.ndgrad import Rng


def brute_force_confusion(pred, label, k):
    """Independent per-pixel triple loop."""
    counts = np.zeros((k, k), dtype=np.int64)
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            counts[int(label[i, j]), int(pred[i, j])] += 1
    return counts


def brute_force_iou(pred_maps, label_maps, k):
    counts = sum(brute_force_confusion(p, y, k) for p, y in zip(pred_maps, label_maps))
    ious = []
    for c in range(k):
        tp = counts[c, c]
        fp = counts[:, c].sum() - tp
        fn = counts[c, :].sum() - tp
        ious.append(1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn))
    return np.array(ious)


def test_perfect_prediction_scores_one():
    label = Rng(1).integers(0, 4, (8, 8))
    scores = segmentation_scores([label], [label], 4)
    assert scores["miou"] == 1.0
    assert all(v == 1.0 for v in scores["iou_per_class"])


def test_disjoint_single_class_maps_score_zero():
    pred = np.zeros((8, 8))
    label = np.ones((8, 8))
    counts = confusion_matrix(pred, label, 2)
    iou = iou_from_confusion(counts)
    assert iou[0] == 0.0 and iou[1] == 0.0


def test_matches_brute_force_on_random_maps():
    rng = Rng(7)
    preds, labels = [], []
    for _ in range(50):
        preds.append(rng.integers(0, 5, (8, 8)))
        labels.append(rng.integers(0, 5, (8, 8)))
    scores = segmentation_scores(preds, labels, 5)
    expected = brute_force_iou(preds, labels, 5)
    assert np.array_equal(np.asarray(scores["iou_per_class"]), expected)
    assert scores["miou"] == expected.mean()


def test_absent_class_is_vacuously_correct():
    pred = np.zeros((4, 4))
    label = np.zeros((4, 4))
    iou = iou_from_confusion(confusion_matrix(pred, label, 3))
    assert iou[0] == 1.0 and iou[1] == 1.0 and iou[2] == 1.0


def test_label_out_of_range_rejected():
    with pytest.raises(MetricsError, match="outside"):
        confusion_matrix(np.zeros((2, 2)), np.full((2, 2), 9), 4)


def test_f1_from_confusion_hand_case():
    # one class: tp=3, fp=1, fn=2 -> F1 = 2*3 / (2*3+1+2) = 6/9
    counts = np.array([[5, 1], [2, 3]])
    f1 = f1_from_confusion(counts)
    assert f1[1] == pytest.approx(6 / 9)


def test_damage_scores_protocol():
    rng = Rng(3)
    loc_p = [rng.integers(0, 2, (8, 8)) for _ in range(4)]
    loc_y = [rng.integers(0, 2, (8, 8)) for _ in range(4)]
    dmg_p = [rng.integers(0, 5, (8, 8)) for _ in range(4)]
    dmg_y = [rng.integers(0, 5, (8, 8)) for _ in range(4)]
    s = damage_scores(loc_p, loc_y, dmg_p, dmg_y)
    # overall is a convex combination of its parts
    lo, hi = sorted((s["f1_loc"], s["f1_clf"]))
    assert lo - 1e-12 <= s["f1_overall"] <= hi + 1e-12
    assert s["f1_overall"] == pytest.approx(0.3 * s["f1_loc"] + 0.7 * s["f1_clf"])
    # harmonic mean by hand
    per = s["damage_f1_per_class"]
    assert s["f1_clf"] == pytest.approx(4 / sum(1 / v for v in per))


def test_no_change_degenerate_is_vacuously_correct():
    """All-background damage predictions on an all-background reference."""
    empty = [np.zeros((8, 8))] * 3
    loc_y = [np.zeros((8, 8))] * 3
    s = damage_scores(empty, loc_y, empty, empty)
    assert s["f1_clf"] == 1.0   # all four damage classes vacuous
    assert s["f1_loc"] == 1.0
    assert s["f1_overall"] == 1.0


def test_csv_roundtrip(tmp_path):
    rows = [MetricsRow(epoch=0, split="train", loss=0.5, wall_s=1.25),
            MetricsRow(epoch=1, split="test", iou_per_class=[0.5, 1.0],
                       miou=0.75)]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    parsed = read_metrics_csv(path)
    assert parsed[0][0] == "0" and parsed[0][2] == "0.5"
    assert parsed[1][3] == "0.5;1" and parsed[1][4] == "0.75"
