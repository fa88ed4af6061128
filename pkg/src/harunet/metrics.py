"""Pixel Dice, panoptic quality and aggregated Jaccard index for instance maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .errors import DimensionError


@dataclass
class MatchResult:
    pairs: List[tuple]  # (gt id, pred id, IoU)
    unmatched_gt: List[int]
    unmatched_pred: List[int]


@dataclass
class MetricReport:
    ids: List[str]
    per_image: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def means(self) -> Dict[str, float]:
        return {k: float(np.mean(v)) if v else float("nan") for k, v in self.per_image.items()}

    def table(self) -> str:
        names = list(self.per_image)
        width = max([len(i) for i in self.ids] + [5])
        lines = [f"{'image':<{width}}  " + "  ".join(f"{n:>8}" for n in names)]
        for row, image_id in enumerate(self.ids):
            lines.append(f"{image_id:<{width}}  " + "  ".join(f"{self.per_image[n][row]:8.4f}" for n in names))
        lines.append(f"{'mean':<{width}}  " + "  ".join(f"{self.means[n]:8.4f}" for n in names))
        return "\n".join(lines) + "\n"

    def key_values(self) -> str:
        """One line per metric: ``name<TAB>v1,v2,...<TAB>mean``."""
        return "".join(
            f"{n}\t{','.join(repr(float(v)) for v in vals)}\t{self.means[n]!r}\n"
            for n, vals in self.per_image.items()
        )

    def write(self, table_path, kv_path=None) -> None:
        table_path = Path(table_path)
        table_path.write_text(self.table())
        kv = Path(kv_path) if kv_path is not None else table_path.with_suffix(".kv")
        kv.write_text(self.key_values())


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"prediction shape {a.shape} != ground truth shape {b.shape}")


def dice_metric(pred: np.ndarray, gt: np.ndarray) -> float:
    """``2TP / (2TP + FP + FN)`` over foreground pixels; 1.0 when both are empty."""
    p, g = np.asarray(pred) > 0, np.asarray(gt) > 0
    _same_shape(p, g)
    tp = np.count_nonzero(p & g)
    fp = np.count_nonzero(p & ~g)
    fn = np.count_nonzero(~p & g)
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def _overlaps(pred: np.ndarray, gt: np.ndarray):
    """Instance ids, sizes and the gt×pred intersection table."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    _same_shape(pred, gt)
    gt_ids = np.unique(gt[gt > 0])
    pred_ids = np.unique(pred[pred > 0])
    gi = np.searchsorted(gt_ids, gt)
    pi = np.searchsorted(pred_ids, pred)
    both = (gt > 0) & (pred > 0)
    inter = np.zeros((len(gt_ids), len(pred_ids)), dtype=np.int64)
    np.add.at(inter, (gi[both], pi[both]), 1)
    gt_area = np.array([np.count_nonzero(gt == i) for i in gt_ids], dtype=np.int64)
    pred_area = np.array([np.count_nonzero(pred == i) for i in pred_ids], dtype=np.int64)
    return gt_ids, pred_ids, inter, gt_area, pred_area


def match_instances(pred: np.ndarray, gt: np.ndarray, iou_threshold: float = 0.5) -> MatchResult:
    """Pairs with IoU strictly above the threshold (unique for thresholds >= 0.5)."""
    gt_ids, pred_ids, inter, ga, pa = _overlaps(pred, gt)
    union = ga[:, None] + pa[None, :] - inter
    iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    gi, pj = np.nonzero(iou > iou_threshold)
    pairs = [(int(gt_ids[i]), int(pred_ids[j]), float(iou[i, j])) for i, j in zip(gi, pj)]
    matched_g = {p[0] for p in pairs}
    matched_p = {p[1] for p in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched_gt=[int(i) for i in gt_ids if i not in matched_g],
        unmatched_pred=[int(j) for j in pred_ids if j not in matched_p],
    )


def pq(pred: np.ndarray, gt: np.ndarray, iou_threshold: float = 0.5) -> float:
    """Detection F1 times the mean IoU of matched pairs; 1.0 when both maps are empty."""
    m = match_instances(pred, gt, iou_threshold)
    tp, fp, fn = len(m.pairs), len(m.unmatched_pred), len(m.unmatched_gt)
    if tp + fp + fn == 0:
        return 1.0
    if tp == 0:
        return 0.0
    f1 = 2.0 * tp / (2.0 * tp + fp + fn)
    # fsum keeps the result independent of pair order, hence of instance ids
    return f1 * math.fsum(p[2] for p in m.pairs) / tp


def aji(pred: np.ndarray, gt: np.ndarray) -> float:
    """Aggregated Jaccard index.

    Ground-truth instances are visited in ascending id order; each takes the
    still-unused predicted instance of highest Jaccard (lower id on ties), or
    none if nothing unused overlaps it. Unused predictions add their area to
    the denominator.
    """
    gt_ids, pred_ids, inter, ga, pa = _overlaps(pred, gt)
    if len(gt_ids) == 0 and len(pred_ids) == 0:
        return 1.0
    union = ga[:, None] + pa[None, :] - inter
    jac = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    used = np.zeros(len(pred_ids), dtype=bool)
    num = den = 0
    for i in range(len(gt_ids)):
        cand = np.where(used, -1.0, jac[i])
        j = int(np.argmax(cand)) if len(cand) else -1
        if j >= 0 and cand[j] > 0:
            used[j] = True
            num += inter[i, j]
            den += union[i, j]
        else:
            den += ga[i]
    den += pa[~used].sum()
    return float(num / den) if den else 0.0


def evaluate_dataset(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray],
                     ids: Sequence[str] = None) -> MetricReport:
    if len(preds) != len(gts):
        raise DimensionError(f"{len(preds)} predictions for {len(gts)} ground-truth maps")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(preds))]
    report = MetricReport(ids=ids, per_image={"dice": [], "aji": [], "pq": []})
    for p, g in zip(preds, gts):
        report.per_image["dice"].append(dice_metric(p, g))
        report.per_image["aji"].append(aji(p, g))
        report.per_image["pq"].append(pq(p, g))
    return report
