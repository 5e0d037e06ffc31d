"""Frame-level ROC, AUC and EER."""

from __future__ import annotations

import numpy as np


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise ValueError("ROC needs at least one normal and one abnormal frame")
    return s, y


def roc_curve(scores, labels):
    """ROC points swept from the strictest threshold down.

    Returns ``(fpr, tpr, thresholds)``; point k classifies a frame as
    abnormal when ``score > thresholds[k]``.  The first point is (0, 0) at
    +inf, then one point per distinct score, ending at (1, 1) at -inf.
    """
    s, y = _check(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    fpr = np.r_[0.0, fp / (~y).sum()]
    tpr = np.r_[0.0, tp / y.sum()]
    below = np.r_[s[ends[:-1] + 1], -np.inf] if ends.size else np.array([-np.inf])
    thresholds = np.r_[np.inf, below]
    return fpr, tpr, thresholds


def auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve (ties count one half)."""
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def eer_from_roc(fpr, tpr) -> float:
    fnr = 1.0 - np.asarray(tpr)
    d = np.asarray(fpr) - fnr  # -1 at (0,0), +1 at (1,1), non-decreasing
    k = int(np.argmax(d >= 0))
    if d[k] == 0 or k == 0:
        return float(fpr[k])
    a = -d[k - 1] / (d[k] - d[k - 1])
    return float(fpr[k - 1] + a * (fpr[k] - fpr[k - 1]))


def eer(scores, labels) -> float:
    """Error rate where FPR equals FNR, interpolated along the ROC."""
    fpr, tpr, _ = roc_curve(scores, labels)
    return eer_from_roc(fpr, tpr)
