"""The training objective: weighted cross-entropies and the centroid
contrastive term.

Cross-entropies normalize by H*W*C exactly as the printed equations do,
even when only a fraction of the pseudo-labeled pixels are valid; dividing
by the valid count instead is available behind a flag because it rescales
the effective self-training weight. The contrastive term compares each
target image's per-class mean projection against the global source
centroids with cosine similarity; the log-ratio denominator excludes the
matching class, so the term can go negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .centroids import CentroidBank
from .pseudo import PseudoLabelMap


@dataclass(frozen=True)
class LossWeights:
    lambda_st: float = 0.1
    lambda_cl: float = 0.1

    def __post_init__(self):
        for name in ("lambda_st", "lambda_cl"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _weighted_ce(p: T.Tensor, weight: np.ndarray) -> T.Tensor:
    return T.scale(T.tsum(T.mul(T.log(p), T.Tensor(weight))), -1.0)


def source_ce(p: T.Tensor, labels_onehot: np.ndarray, alpha: np.ndarray) -> T.Tensor:
    """Class-balanced source cross-entropy, averaged over the batch.

    p: (B, H, W, C) probabilities, labels_onehot: (B, H, W, C),
    alpha: (C,) weights summing to 1.
    """
    if p.shape != labels_onehot.shape:
        raise ValueError(f"source_ce: p {p.shape} vs labels {labels_onehot.shape}")
    b, h, w, c = p.shape
    weight = labels_onehot * alpha / (h * w * c * b)
    return _weighted_ce(p, weight)


def target_ce(
    p: T.Tensor,
    pseudo: list[PseudoLabelMap],
    alpha: np.ndarray,
    normalize_by_valid: bool = False,
) -> T.Tensor:
    """Class-balanced cross-entropy against pseudo-labels; ignored pixels
    contribute exactly zero."""
    b, h, w, c = p.shape
    if len(pseudo) != b:
        raise ValueError(f"target_ce: {len(pseudo)} maps for batch of {b}")
    onehot = np.stack([m.to_onehot(c) for m in pseudo])
    if normalize_by_valid:
        denom = max(float(onehot.sum()) * c, 1.0)  # valid pixels * C
        weight = onehot * alpha / denom
    else:
        weight = onehot * alpha / (h * w * c * b)
    return _weighted_ce(p, weight)


def contrastive(
    bank: CentroidBank,
    target_means: list[dict[int, T.Tensor]],
    alpha: np.ndarray,
) -> T.Tensor:
    """Pull per-image target class means toward the matching source centroid
    and away from the others, in cosine-similarity space.

    For class c of image i with mean m and initialized centroids g_j:
    term = -alpha_c * (sim(g_c, m) - log sum_{j != c} exp(sim(g_j, m))).
    Terms are summed per image and averaged over the batch. Classes whose
    centroid is uninitialized (or with no second centroid to contrast
    against) are skipped. Zero-norm vectors are an error: they mean the
    projector output collapsed.
    """
    if not target_means:
        raise ValueError("contrastive: empty batch")
    init_idx = np.nonzero(bank.initialized)[0]
    norms = np.linalg.norm(bank.centroids[init_idx], axis=1)
    if np.any(norms == 0.0):
        raise ValueError("contrastive: zero-norm source centroid")
    unit_centroids = {
        int(c): T.Tensor(bank.centroids[c] / n)
        for c, n in zip(init_idx, norms)
    }

    total: T.Tensor | None = None
    for means in target_means:
        image_term: T.Tensor | None = None
        for c, m in means.items():
            if c not in unit_centroids or len(unit_centroids) < 2:
                continue
            if float(np.linalg.norm(m.data)) == 0.0:
                raise ValueError("contrastive: zero-norm target mean")
            inv_norm = T.div(T.Tensor(1.0), T.l2_norm(m))
            sims = {
                j: T.mul(T.dot(g, m), inv_norm) for j, g in unit_centroids.items()
            }
            negatives: T.Tensor | None = None
            for j, s in sims.items():
                if j == c:
                    continue
                e = T.exp(s)
                negatives = e if negatives is None else T.add(negatives, e)
            term = T.scale(T.sub(sims[c], T.log(negatives)), -float(alpha[c]))
            image_term = term if image_term is None else T.add(image_term, term)
        if image_term is not None:
            total = image_term if total is None else T.add(total, image_term)
    if total is None:
        return T.Tensor(0.0)
    return T.scale(total, 1.0 / len(target_means))


def total_loss(
    l_source: T.Tensor,
    l_target: T.Tensor | None,
    l_contrastive: T.Tensor | None,
    weights: LossWeights,
) -> T.Tensor:
    """l_s + lambda_st * l_t + lambda_cl * l_cl; inactive terms may be None."""
    out = l_source
    if l_target is not None and weights.lambda_st > 0.0:
        out = T.add(out, T.scale(l_target, weights.lambda_st))
    if l_contrastive is not None and weights.lambda_cl > 0.0:
        out = T.add(out, T.scale(l_contrastive, weights.lambda_cl))
    return out
