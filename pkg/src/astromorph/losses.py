"""Cross-entropy on softmax outputs."""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

P_FLOOR = 1e-300


def cross_entropy(probs: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Loss ``-log p[label]`` and its gradient w.r.t. the pre-softmax scores."""
    probs = np.asarray(probs).reshape(1, -1)
    p = probs[0, label]
    if p < P_FLOOR:
        log.warning("p[label]=%g below %g, clamped", p, P_FLOOR)
        p = P_FLOOR
    grad = probs.copy()
    grad[0, label] -= 1.0
    return float(-np.log(p)), grad


def cross_entropy_batch(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over the batch; gradient already divided by the batch size."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    b = probs.shape[0]
    p = probs[np.arange(b), labels]
    if np.any(p < P_FLOOR):
        log.warning("%d probabilities below %g, clamped", int(np.sum(p < P_FLOOR)), P_FLOOR)
        p = np.maximum(p, P_FLOOR)
    grad = probs.copy()
    grad[np.arange(b), labels] -= 1.0
    return -np.log(p).mean(), grad / b
