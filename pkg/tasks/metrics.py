"""
Evaluation metrics for the task harnesses.
"""

from typing import Sequence

import numpy as np


def _binary(values: Sequence, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype != bool and not np.all(np.isin(arr, (0, 1))):
        raise ValueError(f"MCC {name} must be binary (0/1 or bool)")
    return arr.astype(bool)


def mcc(predictions: Sequence, labels: Sequence) -> float:
    """Matthews correlation of binary predictions; 0 when any marginal is degenerate."""
    p = _binary(predictions, "predictions")
    y = _binary(labels, "labels")
    if p.shape != y.shape:
        raise ValueError(f"Length mismatch: {p.shape} predictions vs {y.shape} labels")
    tp = float(np.sum(p & y))
    tn = float(np.sum(~p & ~y))
    fp = float(np.sum(p & ~y))
    fn = float(np.sum(~p & y))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0.0:
        return 0.0
    return float((tp * tn - fp * fn) / np.sqrt(denom))


def teacher_forcing_mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((np.asarray(predictions) - np.asarray(targets)) ** 2))


def rollout_mse(predicted: np.ndarray, truth: np.ndarray) -> float:
    """MSE over the overlap of a (possibly truncated) rollout and the ground truth."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    n = min(len(predicted), len(truth))
    if n == 0:
        return float("nan")
    return float(np.mean((predicted[:n] - truth[:n]) ** 2))
