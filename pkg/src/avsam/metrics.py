"""Segmentation and localization metrics: IoU, F-beta, pooled pixel AP, cIoU, AUC.

Conventions pinned here and relied on by the report format:
  - IoU of two empty masks is 1.0 (vacuous truth); empty pred vs nonempty gt is 0.0.
  - cIoU counts samples with IoU strictly greater than 0.5.
  - AUC is the mean success ratio over the 20 thresholds 0.00, 0.05, ..., 0.95,
    again with strict inequality.
  - AP pools every pixel of the evaluation set, sorts by score descending with a
    deterministic stable sort, and accumulates (R_k - R_{k-1}) * P_k at positives.
  - F-beta uses beta^2 = 0.3 by default; beta^2 = 1 recovers the plain F1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    """Shape mismatches, non-binary masks, undefined metrics."""


AUC_THRESHOLDS = np.linspace(0.0, 0.95, 20)


def _check_binary_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    for name, m in (("pred", pred), ("gt", gt)):
        vals = np.unique(m)
        if not np.isin(vals, (0, 1)).all():
            raise MetricError(f"{name} mask is not binary (values {vals[:8]})")
    return pred.astype(bool), gt.astype(bool)


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    pred, gt = _check_binary_pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def f_score(pred: np.ndarray, gt: np.ndarray, beta_sq: float = 0.3) -> float:
    """F-beta from precision and recall; 0.0 whenever a denominator vanishes."""
    pred, gt = _check_binary_pair(pred, gt)
    tp = float(np.logical_and(pred, gt).sum())
    fp = float(np.logical_and(pred, ~gt).sum())
    fn = float(np.logical_and(~pred, gt).sum())
    if tp + fp == 0 or tp + fn == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return float((1.0 + beta_sq) * precision * recall / denom)


@dataclass
class ThresholdCurve:
    thresholds: np.ndarray
    success_ratio: np.ndarray

    def __post_init__(self):
        diffs = np.diff(self.success_ratio)
        if (diffs > 1e-12).any():
            raise MetricError("success ratio must be non-increasing in the threshold")

    @property
    def auc(self) -> float:
        return float(self.success_ratio.mean())


def threshold_curve(ious: list[float] | np.ndarray) -> ThresholdCurve:
    vals = np.asarray(ious, dtype=np.float64)
    if vals.size == 0:
        raise MetricError("cannot build a threshold curve from an empty IoU list")
    if ((vals < 0) | (vals > 1)).any():
        raise MetricError("IoU values must lie in [0, 1]")
    ratios = np.array([(vals > t).mean() for t in AUC_THRESHOLDS])
    return ThresholdCurve(thresholds=AUC_THRESHOLDS.copy(), success_ratio=ratios)


def ciou_auc(ious: list[float] | np.ndarray) -> tuple[float, float]:
    """(fraction of samples with IoU > 0.5, mean success ratio over the grid)."""
    curve = threshold_curve(ious)
    vals = np.asarray(ious, dtype=np.float64)
    return float((vals > 0.5).mean()), curve.auc


def pixel_ap(scores: list[np.ndarray], gts: list[np.ndarray]) -> float:
    """Pooled pixel-wise average precision over the whole evaluation set.

    Raises if the pooled ground truth has no positive pixel; an undefined AP is
    an error, never silently 0.
    """
    if len(scores) != len(gts) or not scores:
        raise MetricError("scores and gts must be equal-length, non-empty lists")
    flat_scores = []
    flat_labels = []
    for s, g in zip(scores, gts):
        s = np.asarray(s, dtype=np.float64)
        g = np.asarray(g)
        if s.shape != g.shape:
            raise MetricError(f"shape mismatch: scores {s.shape} vs gt {g.shape}")
        if not np.isfinite(s).all():
            raise MetricError("scores contain non-finite values")
        flat_scores.append(s.ravel())
        flat_labels.append(g.ravel().astype(bool))
    pooled = np.concatenate(flat_scores)
    labels = np.concatenate(flat_labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("AP undefined: no positive pixels in the evaluation set")
    order = np.argsort(-pooled, kind="stable")
    hits = labels[order]
    cum_tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    precision = cum_tp / ranks
    # (R_k - R_{k-1}) is 1/n_pos exactly at positives, 0 elsewhere.
    return float(precision[hits].sum() / n_pos)


def per_image_ap(scores: list[np.ndarray], gts: list[np.ndarray]) -> float:
    """Mean of per-image APs, skipping images without positives."""
    aps = []
    for s, g in zip(scores, gts):
        if np.asarray(g).astype(bool).sum() == 0:
            continue
        aps.append(pixel_ap([s], [g]))
    if not aps:
        raise MetricError("AP undefined: no image has positive pixels")
    return float(np.mean(aps))


@dataclass
class SampleMetrics:
    id: str
    iou: float
    fscore: float


@dataclass
class MetricReport:
    miou: float
    fscore: float
    beta_sq: float
    ap: float
    ciou: float
    auc: float
    per_sample: list[SampleMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "fscore": self.fscore,
            "beta_sq": self.beta_sq,
            "ap": self.ap,
            "ciou": self.ciou,
            "auc": self.auc,
            "per_sample": [
                {"id": s.id, "iou": s.iou, "fscore": s.fscore} for s in self.per_sample
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def summarize(
    ids: list[str],
    score_maps: list[np.ndarray],
    gt_masks: list[np.ndarray],
    beta_sq: float = 0.3,
    threshold: float = 0.5,
    pooled_ap: bool = True,
) -> MetricReport:
    """Assemble the full report from per-sample score maps and ground truth.

    ``score_maps`` hold probabilities in [0, 1]; prediction masks are
    ``score > threshold``. Samples are ordered by id for a deterministic report.
    """
    if not (len(ids) == len(score_maps) == len(gt_masks)) or not ids:
        raise MetricError("ids, score_maps and gt_masks must be equal-length, non-empty")
    order = np.argsort(np.asarray(ids, dtype=object), kind="stable")
    ids = [ids[i] for i in order]
    score_maps = [np.asarray(score_maps[i], dtype=np.float64) for i in order]
    gt_masks = [np.asarray(gt_masks[i]) for i in order]

    per_sample = []
    ious = []
    for sid, s, g in zip(ids, score_maps, gt_masks):
        pred = (s > threshold).astype(np.uint8)
        sample_iou = iou(pred, g)
        per_sample.append(SampleMetrics(id=sid, iou=sample_iou, fscore=f_score(pred, g, beta_sq)))
        ious.append(sample_iou)
    ciou, auc = ciou_auc(ious)
    ap_fn = pixel_ap if pooled_ap else per_image_ap
    return MetricReport(
        miou=float(np.mean(ious)),
        fscore=float(np.mean([s.fscore for s in per_sample])),
        beta_sq=beta_sq,
        ap=ap_fn(score_maps, gt_masks),
        ciou=ciou,
        auc=auc,
        per_sample=per_sample,
    )
