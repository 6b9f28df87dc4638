"""Evaluation metrics for saliency-style defect segmentation.

All threshold-sweep measures (max F, max E, mAP, PR/ROC curves) use the 256
evenly spaced thresholds k/255, k = 0..255, binarizing as pred >= t.
F-measure uses beta^2 = 0.3, the standard salient-object-detection weight.
Everything is pure numpy over (pred in [0,1], binary gt) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "THRESHOLDS",
    "MetricReport",
    "mae",
    "iou",
    "max_f_measure",
    "max_e_measure",
    "s_measure",
    "mean_average_precision",
    "pr_roc_curves",
    "evaluate_pairs",
]

THRESHOLDS = np.arange(256) / 255.0
F_BETA_SQ = 0.3
E_EPS = 1e-8


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred/gt shapes differ: {pred.shape} vs {gt.shape}")
    if pred.min() < 0 or pred.max() > 1:
        raise ValueError("pred must lie in [0,1]")
    uniq = np.unique(gt)
    if not np.all(np.isin(uniq, (0, 1))):
        raise ValueError("gt must be strictly binary (0/1)")
    return pred, gt.astype(bool)


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute pixel error."""
    pred, gt = _check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def iou(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> float:
    """Intersection over union of the binarized prediction; empty union -> 1."""
    pred, gt = _check_pair(pred, gt)
    b = pred >= threshold
    union = np.count_nonzero(b | gt)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(b & gt) / union)


def _confusion_sweep(pred: np.ndarray, gt: np.ndarray):
    """TP/FP/FN/TN counts at every threshold (vectorized over thresholds)."""
    p = pred.reshape(-1)
    g = gt.reshape(-1)
    binarized = p[None, :] >= THRESHOLDS[:, None]
    tp = (binarized & g).sum(axis=1)
    fp = (binarized & ~g).sum(axis=1)
    fn = (~binarized & g).sum(axis=1)
    tn = (~binarized & ~g).sum(axis=1)
    return tp, fp, fn, tn


def max_f_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """Max over thresholds of (1+b^2)PR / (b^2 P + R); zero denominators -> 0."""
    pred, gt = _check_pair(pred, gt)
    tp, fp, fn, _ = _confusion_sweep(pred, gt)
    best = 0.0
    for k in range(256):
        if tp[k] + fp[k] == 0 or tp[k] + fn[k] == 0:
            continue
        p = tp[k] / (tp[k] + fp[k])
        r = tp[k] / (tp[k] + fn[k])
        if p + r == 0 or (F_BETA_SQ * p + r) == 0:
            continue
        f = (1 + F_BETA_SQ) * p * r / (F_BETA_SQ * p + r)
        best = max(best, f)
    return float(best)


def _e_measure_single(b: np.ndarray, g: np.ndarray) -> float:
    """Enhanced-alignment value for one binarized map against binary gt."""
    b = b.astype(np.float64)
    g = g.astype(np.float64)
    if g.sum() == 0:
        # degenerate gt: score the complement agreement
        phi = 1.0 - 2.0 * b  # 1 where b==0, -1 where b==1
        return float(((1 + phi) ** 2 / 4).mean())
    if g.sum() == g.size:
        phi = 2.0 * b - 1.0
        return float(((1 + phi) ** 2 / 4).mean())
    ba = b - b.mean()
    ga = g - g.mean()
    phi = 2 * ba * ga / (ba**2 + ga**2 + E_EPS)
    return float(((1 + phi) ** 2 / 4).mean())


def max_e_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """Max over the 256 thresholds of the enhanced-alignment measure."""
    pred, gt = _check_pair(pred, gt)
    return float(max(_e_measure_single(pred >= t, gt) for t in THRESHOLDS))


def _ssim_region(pred: np.ndarray, gt: np.ndarray) -> float:
    """SSIM-style similarity between a prediction region and a gt region."""
    x = pred.astype(np.float64)
    y = gt.astype(np.float64)
    n = x.size
    if n <= 1:
        return 1.0 if abs(float(x.mean()) - float(y.mean())) < 1e-12 else 0.0
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).sum() / (n - 1)
    vy = ((y - my) ** 2).sum() / (n - 1)
    cxy = ((x - mx) * (y - my)).sum() / (n - 1)
    alpha = 4 * mx * my * cxy
    beta = (mx**2 + my**2) * (vx + vy)
    if alpha != 0:
        return float(alpha / (beta + 1e-20))
    return 1.0 if beta == 0 else 0.0


def _object_score(x: np.ndarray) -> float:
    """Similarity of a region's values to the all-ones target."""
    if x.size == 0:
        return 0.0
    mx = float(x.mean())
    sx = float(x.std())
    return 2 * mx / (mx * mx + 1.0 + sx + 1e-20)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = _object_score(pred[gt])
    bg = _object_score(1.0 - pred[~gt])
    mu = float(gt.mean())
    return mu * fg + (1 - mu) * bg


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    h, w = gt.shape
    if gt.sum() == 0:
        return h // 2, w // 2
    ys, xs = np.nonzero(gt)
    return int(round(ys.mean())), int(round(xs.mean()))


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    cy, cx = _centroid(gt)
    cy = min(max(cy, 1), h - 1) if h > 1 else 1
    cx = min(max(cx, 1), w - 1) if w > 1 else 1
    total = h * w
    score = 0.0
    for ys, xs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        pq, gq = pred[ys, xs], gt[ys, xs]
        if pq.size == 0:
            continue
        score += (pq.size / total) * _ssim_region(pq, gq)
    return score


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """Structure measure: alpha*S_object + (1-alpha)*S_region.

    Degenerate gt falls back to comparing the mean prediction against the
    constant target: all-zero gt scores 1 - mean(pred), all-one gt scores
    mean(pred).
    """
    pred, gt = _check_pair(pred, gt)
    mu = float(gt.mean())
    if mu == 0.0:
        return 1.0 - float(pred.mean())
    if mu == 1.0:
        return float(pred.mean())
    s = alpha * _s_object(pred, gt) + (1 - alpha) * _s_region(pred, gt)
    return float(max(s, 0.0))


def _pooled_sweep(pairs):
    """Pooled TP/FP/FN/TN over all pixels of all pairs, per threshold."""
    tp = np.zeros(256, dtype=np.int64)
    fp = np.zeros(256, dtype=np.int64)
    fn = np.zeros(256, dtype=np.int64)
    tn = np.zeros(256, dtype=np.int64)
    for pred, gt in pairs:
        pred, gt = _check_pair(pred, gt)
        a, b, c, d = _confusion_sweep(pred, gt)
        tp += a
        fp += b
        fn += c
        tn += d
    return tp, fp, fn, tn


def mean_average_precision(pairs) -> float:
    """Area under the pixel-pooled PR curve over the 256 thresholds.

    All-point interpolation: precision envelope integrated stepwise over
    recall (no trapezoids).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("mean_average_precision: empty pair list")
    tp, fp, fn, _ = _pooled_sweep(pairs)
    pos = tp[0] + fn[0]
    if pos == 0:
        return 0.0
    valid = (tp + fp) > 0
    precision = np.where(valid, tp / np.maximum(tp + fp, 1), 1.0)
    recall = tp / pos
    # sort by increasing recall, apply the envelope from the right
    order = np.argsort(recall, kind="stable")
    r = np.concatenate([[0.0], recall[order]])
    p = precision[order]
    env = np.maximum.accumulate(p[::-1])[::-1]
    return float(np.sum((r[1:] - r[:-1]) * env))


def pr_roc_curves(pairs):
    """Pooled (threshold, precision, recall) and (threshold, fpr, tpr) points."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("pr_roc_curves: empty pair list")
    tp, fp, fn, tn = _pooled_sweep(pairs)
    precision = np.where((tp + fp) > 0, tp / np.maximum(tp + fp, 1), 1.0)
    recall = np.where((tp + fn) > 0, tp / np.maximum(tp + fn, 1), 0.0)
    fpr = np.where((fp + tn) > 0, fp / np.maximum(fp + tn, 1), 0.0)
    pr = [(float(t), float(p), float(r)) for t, p, r in zip(THRESHOLDS, precision, recall)]
    roc = [(float(t), float(f), float(r)) for t, f, r in zip(THRESHOLDS, fpr, recall)]
    return pr, roc


@dataclass
class MetricReport:
    mAP: float
    IoU: float
    MAE: float
    maxF: float
    maxE: float
    S: float
    pr_curve: list = field(default_factory=list, repr=False)
    roc_curve: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict[str, float]:
        return {"mAP": self.mAP, "IoU": self.IoU, "MAE": self.MAE,
                "maxF": self.maxF, "maxE": self.maxE, "S": self.S}


def evaluate_pairs(pairs) -> MetricReport:
    """Dataset-level report: per-image metrics averaged, mAP/curves pooled."""
    pairs = [(np.asarray(p, dtype=np.float64), np.asarray(g)) for p, g in pairs]
    if not pairs:
        raise ValueError("evaluate_pairs: empty pair list")
    ious = [iou(p, g) for p, g in pairs]
    maes = [mae(p, g) for p, g in pairs]
    fs = [max_f_measure(p, g) for p, g in pairs]
    es = [max_e_measure(p, g) for p, g in pairs]
    ss = [s_measure(p, g) for p, g in pairs]
    pr, roc = pr_roc_curves(pairs)
    return MetricReport(
        mAP=mean_average_precision(pairs),
        IoU=float(np.mean(ious)),
        MAE=float(np.mean(maes)),
        maxF=float(np.mean(fs)),
        maxE=float(np.mean(es)),
        S=float(np.mean(ss)),
        pr_curve=pr,
        roc_curve=roc,
    )
