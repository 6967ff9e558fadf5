"""Class centroids in projection space.

Source-side quantities (correct-prediction masks, batch class means, the
EMA centroid bank) are plain numpy: they act as targets and never carry
gradients. Target-side per-image class means are built from tensor ops so
the contrastive loss can differentiate through them.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T


def correct_mask(pred_onehot: np.ndarray, label_onehot: np.ndarray) -> np.ndarray:
    """Binary H x W x C map: 1 where prediction and ground truth agree on
    class c (both one-hot 1)."""
    pred_onehot = np.asarray(pred_onehot)
    label_onehot = np.asarray(label_onehot)
    if pred_onehot.shape != label_onehot.shape:
        raise ValueError(
            f"correct_mask: {pred_onehot.shape} vs {label_onehot.shape}"
        )
    return pred_onehot * label_onehot


def batch_source_means(
    projections: np.ndarray, masks: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Class-wise mean projection over every masked pixel of the batch.

    projections: (B, H, W, K), masks: (B, H, W, C) binary. Returns
    (means (C, K), present (C,)); a class with zero masked pixels is absent
    and its mean row is unspecified.
    """
    projections = np.asarray(projections, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    if projections.shape[:3] != masks.shape[:3]:
        raise ValueError(
            f"batch_source_means: {projections.shape} vs {masks.shape}"
        )
    counts = masks.sum(axis=(0, 1, 2))
    sums = np.einsum("bhwc,bhwk->ck", masks, projections)
    present = counts > 0
    means = np.zeros_like(sums)
    means[present] = sums[present] / counts[present, None]
    return means, present


class CentroidBank:
    """Global source centroids, one per class, tracked by EMA.

    The momentum psi follows a cosine decay psi(n) = psi0 * 0.5 * (1 +
    cos(pi * n / total_steps)) where n counts completed updates, so the
    first update uses psi0 exactly. A class seen for the first time copies
    its batch mean outright.
    """

    def __init__(self, num_classes: int, dim: int, psi0: float, total_steps: int):
        if not 0.0 < psi0 <= 1.0:
            raise ValueError(f"psi0 must be in (0, 1], got {psi0}")
        if total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {total_steps}")
        self.num_classes = num_classes
        self.dim = dim
        self.psi0 = psi0
        self.total_steps = total_steps
        self.step = 0
        self.centroids = np.zeros((num_classes, dim), dtype=np.float64)
        self.initialized = np.zeros(num_classes, dtype=bool)

    @property
    def psi(self) -> float:
        frac = min(self.step / self.total_steps, 1.0)
        return self.psi0 * 0.5 * (1.0 + math.cos(math.pi * frac))

    def update(self, means: np.ndarray, present: np.ndarray) -> None:
        """EMA-blend the present classes' batch means, then advance psi."""
        means = np.asarray(means, dtype=np.float64)
        present = np.asarray(present, dtype=bool)
        psi = self.psi
        for c in np.nonzero(present)[0]:
            if self.initialized[c]:
                self.centroids[c] = (1.0 - psi) * self.centroids[c] + psi * means[c]
            else:
                self.centroids[c] = means[c]
                self.initialized[c] = True
        self.step += 1

    def cosine_similarity_matrix(self) -> np.ndarray:
        """C x C cosine similarities between centroids; NaN rows/cols for
        uninitialized classes."""
        out = np.full((self.num_classes, self.num_classes), np.nan)
        norms = np.linalg.norm(self.centroids, axis=1)
        ok = self.initialized & (norms > 0)
        idx = np.nonzero(ok)[0]
        if idx.size:
            unit = self.centroids[idx] / norms[idx, None]
            out[np.ix_(idx, idx)] = unit @ unit.T
        return out


def target_image_means(
    z: T.Tensor, pseudo_onehot: np.ndarray
) -> dict[int, T.Tensor]:
    """Per-class mean projection of one target image, as graph nodes.

    z: (H', W', K) tensor; pseudo_onehot: (H', W', C) with all-zero rows at
    ignored pixels (already resized to the projection grid). Classes without
    a valid pixel are absent from the result.
    """
    pseudo_onehot = np.asarray(pseudo_onehot, dtype=np.float64)
    if z.shape[:2] != pseudo_onehot.shape[:2]:
        raise ValueError(
            f"target_image_means: {z.shape} vs {pseudo_onehot.shape}"
        )
    counts = pseudo_onehot.sum(axis=(0, 1))
    means: dict[int, T.Tensor] = {}
    for c in np.nonzero(counts > 0)[0]:
        mask = T.Tensor(pseudo_onehot[:, :, c : c + 1])
        means[int(c)] = T.scale(T.tsum(T.mul(z, mask), axis=(0, 1)), 1.0 / counts[c])
    return means
