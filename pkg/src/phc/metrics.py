"""Deterministic evaluation metrics computed from exact rank statistics."""

from __future__ import annotations

import numpy as np


def _tie_averaged_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, ties averaged; stable and interpolation-free."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney form of the area under the ROC curve."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = _tie_averaged_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Non-interpolated AP; ties broken by original order (stable sort)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    hits = (labels[order] == 1).astype(np.float64)
    precision_at = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float((precision_at * hits).sum() / n_pos)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    pred = np.argmax(np.atleast_2d(logits), axis=1)
    return float(np.mean(pred == np.asarray(labels).ravel()))


def mae(preds: np.ndarray, targets: np.ndarray) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    return float(np.mean(np.abs(preds - targets)))


def masked_mean_metric(metric, scores: np.ndarray, labels: np.ndarray) -> float:
    """Columnwise metric averaged over label columns with both classes,
    ignoring NaN labels (multitask binary convention)."""
    scores = np.atleast_2d(scores)
    labels = np.atleast_2d(labels)
    values = []
    for c in range(labels.shape[1]):
        ok = np.isfinite(labels[:, c])
        col = labels[ok, c]
        if len(col) == 0 or col.min() == col.max():
            continue
        values.append(metric(scores[ok, c], col))
    if not values:
        return float("nan")
    return float(np.mean(values))


def task_metric(task: str, logits: np.ndarray, targets: np.ndarray) -> float:
    if task == "binary":
        return masked_mean_metric(roc_auc, logits, targets)
    if task == "multilabel-binary":
        return masked_mean_metric(average_precision, logits, targets)
    if task in ("multiclass", "node-multiclass"):
        return accuracy(logits, targets)
    if task == "regression-mae":
        return mae(logits, targets)
    raise ValueError(f"unknown task {task!r}")


def metric_direction(task: str) -> str:
    """'min' when smaller is better, else 'max'."""
    return "min" if task == "regression-mae" else "max"


def metric_name(task: str) -> str:
    return {
        "binary": "roc_auc",
        "multilabel-binary": "average_precision",
        "multiclass": "accuracy",
        "node-multiclass": "accuracy",
        "regression-mae": "mae",
    }[task]
