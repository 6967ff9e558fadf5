"""Online class-occurrence estimation and class-balance weights.

Occurrence probabilities start at 1 for every class and track, per image,
whether each class is present via an exponential moving average. The loss
weights cap the inverse occurrence at beta so very rare classes cannot
dominate, then normalize to sum 1.
"""

from __future__ import annotations

import numpy as np


class OccurrenceEstimator:
    """EMA of per-class image-occurrence probability for one domain.

    Starting from 1 with momentum < 1 the estimate can never reach 0, which
    keeps the inverse-occurrence weights finite.
    """

    def __init__(self, num_classes: int, momentum: float = 0.01, domain: str = ""):
        if not 0.0 < momentum <= 1.0:
            raise ValueError(f"momentum must be in (0, 1], got {momentum}")
        self.num_classes = num_classes
        self.momentum = momentum
        self.domain = domain
        self.occurrence = np.ones(num_classes, dtype=np.float64)

    def update(self, presence) -> None:
        """Fold one image's per-class presence booleans into the estimate."""
        presence = np.asarray(presence, dtype=np.float64)
        if presence.shape != (self.num_classes,):
            raise ValueError(
                f"presence shape {presence.shape} != ({self.num_classes},)"
            )
        eta = self.momentum
        self.occurrence = (1.0 - eta) * self.occurrence + eta * presence

    def weights(self, beta: float) -> np.ndarray:
        return balance_weights(self.occurrence, beta)


def balance_weights(occurrence: np.ndarray, beta: float) -> np.ndarray:
    """alpha_c = min(1/o_c, beta) / sum_i min(1/o_i, beta)."""
    if beta < 1.0:
        raise ValueError(f"beta must be >= 1, got {beta}")
    occurrence = np.asarray(occurrence, dtype=np.float64)
    if np.any(occurrence <= 0.0):
        raise ValueError("occurrence probabilities must be positive")
    capped = np.minimum(1.0 / occurrence, beta)
    return capped / capped.sum()


def presence_from_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class presence booleans from an index label map."""
    return np.isin(np.arange(num_classes), labels)


def presence_from_pseudo(
    labels: np.ndarray, valid: np.ndarray, num_classes: int
) -> np.ndarray:
    """Presence requires at least one valid (non-ignored) pixel of the class."""
    return np.isin(np.arange(num_classes), labels[valid])
