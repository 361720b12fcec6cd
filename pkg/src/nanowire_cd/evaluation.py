"""Pixel-wise precision-recall evaluation with cloud exclusion.

Scores pool across every event of a disaster class (not averaged per
event); cloud pixels never enter the pools. The area under the curve uses
the average-precision step sum over distinct-score thresholds.
"""

from __future__ import annotations

import math

import numpy as np

from .bundle import MASK_AFFECTED, MASK_CLOUD
from .changedet import ChangeMap


class DegenerateLabelsError(ValueError):
    """Raised when the label pool lacks a positive or a negative example."""


def _check_inputs(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DegenerateLabelsError("no positive examples in the pool")
    if n_pos == labels.size:
        raise DegenerateLabelsError("no negative examples in the pool")
    return scores, labels, n_pos


def precision_recall_curve(scores, labels):
    """Curve points over distinct-score thresholds, ties grouped.

    Returns (precision, recall, thresholds) sorted by descending threshold;
    point k corresponds to predicting positive at score >= thresholds[k].
    """
    scores, labels, n_pos = _check_inputs(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # last index of each tie group
    boundary = np.flatnonzero(np.diff(s) != 0.0)
    last = np.concatenate([boundary, [s.size - 1]])
    tp = np.cumsum(y)[last]
    predicted = last + 1
    precision = tp / predicted
    recall = tp / n_pos
    return precision, recall, s[last]


def auprc(scores, labels) -> float:
    """Average-precision step integration: sum of (R_k - R_{k-1}) * P_k."""
    precision, recall, _ = precision_recall_curve(scores, labels)
    deltas = np.diff(np.concatenate([[0.0], recall]))
    return float((deltas * precision).sum())


def aggregate_runs(values) -> tuple[float, float]:
    """Mean and standard error over independent runs (needs n >= 2)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 2:
        raise ValueError("aggregation needs at least 2 runs")
    mean = float(values.mean())
    if values.min() == values.max():
        return float(values[0]), 0.0
    sem = float(values.std(ddof=1) / math.sqrt(values.size))
    return mean, sem


def write_curve_csv(path, scores, labels) -> None:
    """Optional export of the curve points for external plotting."""
    precision, recall, thresholds = precision_recall_curve(scores, labels)
    with open(path, "w") as fh:
        fh.write("threshold,recall,precision\n")
        for th, r, p in zip(thresholds, recall, precision):
            fh.write(f"{float(th)!r},{float(r)!r},{float(p)!r}\n")


def pool_pixels(maps_and_masks: list[tuple[ChangeMap, np.ndarray]]):
    """Pooled (scores, labels) arrays for one class across its events.

    Each item pairs a change map with the event's target mask. Pixels that
    are invalid in the map (cloud, uncovered) or cloud-labeled in the mask
    are excluded; affected pixels are the positive class.
    """
    pooled_scores = []
    pooled_labels = []
    for cmap, mask in maps_and_masks:
        if cmap.scores.shape != mask.shape:
            raise ValueError("change map and mask dims differ")
        use = cmap.valid & (mask != MASK_CLOUD)
        pooled_scores.append(cmap.scores[use])
        pooled_labels.append((mask[use] == MASK_AFFECTED).astype(np.int64))
    if not pooled_scores:
        return np.empty(0), np.empty(0, dtype=np.int64)
    return np.concatenate(pooled_scores), np.concatenate(pooled_labels)
