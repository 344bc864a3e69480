"""Stochastic gradient descent and class-imbalance weighting."""

from __future__ import annotations

import numpy as np

from .autograd import Parameter
from .errors import TrainingDivergedError


def sgd_step(params: list[Parameter], lr: float) -> None:
    """Apply p <- p - lr * grad to every trainable parameter with a gradient.

    Frozen parameters are left bit-identical. A non-finite gradient aborts the
    run: it means the optimization has diverged.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for p in params:
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise TrainingDivergedError(f"non-finite gradient in parameter {p.name!r}")
        if p.trainable:
            p.data -= lr * p.grad


def zero_grads(params: list[Parameter]) -> None:
    for p in params:
        p.grad = None


def class_weights(labels, classes) -> np.ndarray:
    """Inverse-frequency cost weights w_c = N_total / (K * N_c).

    A uniform class distribution yields all-ones weights, which leaves the
    cross-entropy unchanged.
    """
    labels = list(labels)
    counts = np.array([sum(1 for y in labels if y == c) for c in classes], dtype=np.float64)
    if np.any(counts == 0):
        missing = [c for c, n in zip(classes, counts) if n == 0]
        raise ValueError(f"no samples for classes {missing}; cannot weight the cost")
    return len(labels) / (len(classes) * counts)
