"""Evaluation metrics: UAR, confusion matrix, pseudo-label accuracy."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .data import evaluation_access
from .errors import InvalidLabelError


def _check(predictions, labels, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    true = np.asarray(labels, dtype=np.int64).ravel()
    if pred.size == 0 or pred.shape != true.shape:
        raise InvalidLabelError("predictions and labels must be non-empty and of equal length")
    for a in (pred, true):
        if a.min() < 0 or a.max() >= n_classes:
            raise InvalidLabelError(f"class ids must lie in [0, {n_classes})")
    return pred, true


def confusion(predictions, labels, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    pred, true = _check(predictions, labels, n_classes)
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (true, pred), 1)
    return m


def per_class_recall(predictions, labels, n_classes: int) -> list[float | None]:
    """Recall per class, ``None`` for classes with no true samples."""
    m = confusion(predictions, labels, n_classes)
    support = m.sum(axis=1)
    return [float(m[c, c] / support[c]) if support[c] else None for c in range(n_classes)]


def uar(predictions, labels, n_classes: int) -> float:
    """Unweighted average recall over the classes present in ``labels``."""
    recalls = [r for r in per_class_recall(predictions, labels, n_classes) if r is not None]
    return float(sum(recalls) / len(recalls))


def pseudo_label_accuracy(clients: Iterable) -> float | None:
    """Fraction of pseudo labels that match the sealed ground truth.

    Returns ``None`` when no client has admitted anything yet.
    """
    hits = total = 0
    with evaluation_access():
        for client in clients:
            for idx, label in client.pseudo.items():
                total += 1
                hits += int(client.sealed.reveal(client.utterance_ids[idx]) == label)
    return hits / total if total else None
