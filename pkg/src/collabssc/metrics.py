"""Geometric IoU, per-class IoU, mIoU and cIoU over semantic grids.

An undefined per-class IoU (the class is absent from both grids) is
reported as ``nan``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .voxelgrid import CLASSES, SemanticGrid, SemanticLabel

UNDEFINED = math.nan
MIOU_MODES = ("exclude", "score0")


def _check(pred: SemanticGrid, gt: SemanticGrid) -> None:
    if pred.spec != gt.spec:
        raise ValueError("prediction and ground truth use different grid specs")


def geometric_iou(pred: SemanticGrid, gt: SemanticGrid) -> float:
    _check(pred, gt)
    p = pred.labels != 0
    g = gt.labels != 0
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def class_iou(pred: SemanticGrid, gt: SemanticGrid, c: SemanticLabel) -> float:
    if SemanticLabel(c) == SemanticLabel.Empty:
        raise ValueError("Empty is not a semantic class")
    _check(pred, gt)
    p = pred.labels == c
    g = gt.labels == c
    union = np.count_nonzero(p | g)
    if union == 0:
        return UNDEFINED
    return np.count_nonzero(p & g) / union


def aggregate(
    per_class: Mapping[SemanticLabel, float], zero_union: str = "exclude"
) -> tuple[float, float]:
    """(mIoU, cIoU) from per-class IoUs.

    mIoU averages the defined classes (``exclude``) or scores undefined ones
    as 0 (``score0``). cIoU is the mean of Road and Car, undefined if either is.
    """
    if zero_union not in MIOU_MODES:
        raise ValueError(f"zero_union must be one of {MIOU_MODES}")
    values = [per_class[c] for c in CLASSES if c in per_class]
    if zero_union == "score0":
        values = [0.0 if math.isnan(v) else v for v in values]
    else:
        values = [v for v in values if not math.isnan(v)]
    miou = sum(values) / len(values) if values else UNDEFINED
    road = per_class.get(SemanticLabel.Road, UNDEFINED)
    car = per_class.get(SemanticLabel.Car, UNDEFINED)
    ciou = (road + car) / 2
    return miou, ciou


@dataclass(frozen=True)
class MetricsReport:
    iou: float
    per_class_iou: dict[SemanticLabel, float]
    miou: float
    ciou: float


def evaluate(pred: SemanticGrid, gt: SemanticGrid, zero_union: str = "exclude") -> MetricsReport:
    _check(pred, gt)
    # one joint histogram gives every class's intersection and union
    joint = np.bincount(
        pred.labels.ravel().astype(np.int64) * 7 + gt.labels.ravel(), minlength=49
    ).reshape(7, 7)
    per_class = {}
    for c in CLASSES:
        inter = joint[c, c]
        union = joint[c, :].sum() + joint[:, c].sum() - inter
        per_class[c] = inter / union if union else UNDEFINED
    occ_both = joint[1:, 1:].sum()
    occ_any = joint.sum() - joint[0, 0]
    iou = occ_both / occ_any if occ_any else 1.0
    miou, ciou = aggregate(per_class, zero_union)
    return MetricsReport(float(iou), {c: float(v) for c, v in per_class.items()}, float(miou), float(ciou))
