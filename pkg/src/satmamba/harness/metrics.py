"""Segmentation and damage-assessment scoring, plus the metrics CSV.

IoU and F1 are micro-accumulated from one confusion matrix over the
whole split. A class absent from both prediction and reference scores
1.0 (vacuously correct), matching challenge-style protocols. The
overall damage score combines localization and classification as
0.3 * F1_loc + 0.7 * F1_clf, with F1_clf the harmonic mean of the four
damage-class F1s.

CSV columns, in order: epoch, split, loss, iou_per_class (semicolon
separated), miou, f1_loc, f1_clf, f1_overall, wall_s. Unused fields are
left empty. wall_s is the only nondeterministic column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CSV_HEADER = "epoch,split,loss,iou_per_class,miou,f1_loc,f1_clf,f1_overall,wall_s"

F1_LOC_WEIGHT = 0.3
F1_CLF_WEIGHT = 0.7


class MetricsError(ValueError):
    pass


@dataclass
class MetricsRow:
    epoch: int
    split: str
    loss: float = None
    iou_per_class: list = None
    miou: float = None
    f1_loc: float = None
    f1_clf: float = None
    f1_overall: float = None
    wall_s: float = None

    def to_csv(self) -> str:
        def num(v):
            return "" if v is None else f"{v:.9g}"

        iou = "" if self.iou_per_class is None else ";".join(
            f"{v:.9g}" for v in self.iou_per_class)
        return ",".join([str(self.epoch), self.split, num(self.loss), iou,
                         num(self.miou), num(self.f1_loc), num(self.f1_clf),
                         num(self.f1_overall), num(self.wall_s)])


def write_metrics_csv(path, rows):
    lines = [CSV_HEADER] + [r.to_csv() for r in rows]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list:
    lines = open(path).read().strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise MetricsError(f"{path}: unexpected CSV header")
    return [line.split(",") for line in lines[1:]]


def confusion_matrix(pred: np.ndarray, label: np.ndarray, n_classes: int) -> np.ndarray:
    """counts[i, j] = pixels with reference class i predicted as class j."""
    pred = np.asarray(pred).astype(np.int64).reshape(-1)
    label = np.asarray(label).astype(np.int64).reshape(-1)
    if pred.shape != label.shape:
        raise MetricsError(f"prediction {pred.shape} vs label {label.shape}")
    if label.min() < 0 or label.max() >= n_classes:
        raise MetricsError(f"label values outside [0, {n_classes})")
    if pred.min() < 0 or pred.max() >= n_classes:
        raise MetricsError(f"prediction values outside [0, {n_classes})")
    return np.bincount(label * n_classes + pred,
                       minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def iou_from_confusion(counts: np.ndarray) -> np.ndarray:
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    out = np.ones_like(tp)
    nz = denom > 0
    out[nz] = tp[nz] / denom[nz]
    return out


def f1_from_confusion(counts: np.ndarray) -> np.ndarray:
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    out = np.ones_like(tp)
    nz = denom > 0
    out[nz] = 2 * tp[nz] / denom[nz]
    return out


def segmentation_scores(preds, labels, n_classes: int) -> dict:
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, y in zip(preds, labels):
        counts += confusion_matrix(p, y, n_classes)
    iou = iou_from_confusion(counts)
    return {"iou_per_class": iou.tolist(), "miou": float(iou.mean())}


def damage_scores(loc_preds, loc_labels, dmg_preds, dmg_labels,
                  n_damage_classes: int = 5) -> dict:
    """xView2-style scoring for paired localization + damage outputs."""
    loc_counts = np.zeros((2, 2), dtype=np.int64)
    for p, y in zip(loc_preds, loc_labels):
        loc_counts += confusion_matrix(p, y, 2)
    f1_loc = float(f1_from_confusion(loc_counts)[1])

    dmg_counts = np.zeros((n_damage_classes, n_damage_classes), dtype=np.int64)
    for p, y in zip(dmg_preds, dmg_labels):
        dmg_counts += confusion_matrix(p, y, n_damage_classes)
    per_class = f1_from_confusion(dmg_counts)[1:]  # skip background
    if np.any(per_class == 0):
        f1_clf = 0.0
    else:
        f1_clf = float(len(per_class) / np.sum(1.0 / per_class))
    f1_overall = F1_LOC_WEIGHT * f1_loc + F1_CLF_WEIGHT * f1_clf
    return {"f1_loc": f1_loc, "damage_f1_per_class": per_class.tolist(),
            "f1_clf": f1_clf, "f1_overall": float(f1_overall)}
