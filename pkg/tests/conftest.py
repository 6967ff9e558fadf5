"""Shared fixtures/helpers for loss-level gradient checks."""

import numpy as np

from clst import tensor as T
from clst.centroids import CentroidBank, target_image_means
from clst.losses import LossWeights, contrastive, source_ce, target_ce, total_loss
from clst.net import forward, indices_to_onehot, init_params
from clst.pseudo import PseudoLabelMap


def build_toy_loss_setup(seed: int, num_classes: int = 3):
    """A 4x4 two-image setup with every loss term exercised end to end."""
    rng = np.random.default_rng(seed)
    params = init_params(
        rng, num_classes=num_classes, hidden1=4, hidden2=6, proj_dim=4
    )
    src_img = rng.random((1, 4, 4, 3))
    tgt_img = rng.random((1, 4, 4, 3))
    src_labels = indices_to_onehot(rng.integers(0, num_classes, (1, 4, 4)), num_classes)
    pseudo = PseudoLabelMap(
        rng.integers(0, num_classes, (4, 4)), rng.random((4, 4)) > 0.3
    )
    alpha_s = rng.uniform(0.5, 2.0, num_classes)
    alpha_s /= alpha_s.sum()
    alpha_t = rng.uniform(0.5, 2.0, num_classes)
    alpha_t /= alpha_t.sum()

    bank = CentroidBank(num_classes, 4, psi0=0.02, total_steps=100)
    bank.centroids[:] = rng.standard_normal((num_classes, 4))
    bank.initialized[:] = True

    def loss_source(p=params):
        return source_ce(forward(p, src_img).probabilities, src_labels, alpha_s)

    def loss_target(p=params):
        return target_ce(forward(p, tgt_img).probabilities, [pseudo], alpha_t)

    def _single_image(z):
        # batch of one: (1, H, W, K) -> (H, W, K) while keeping the graph
        return T.tsum(z, axis=0)

    def loss_cl(p=params):
        z = forward(p, tgt_img).projections
        means = target_image_means(_single_image(z), pseudo.to_onehot(num_classes))
        return contrastive(bank, [means], alpha_t)

    def loss_total(p=params):
        return total_loss(
            loss_source(p), loss_target(p), loss_cl(p), LossWeights(0.1, 0.1)
        )

    return params, {
        "source": loss_source,
        "target": loss_target,
        "contrastive": loss_cl,
        "total": loss_total,
    }


def gradcheck_loss_over_params(params, loss_fn, tol=1e-4):
    """Finite-difference check of ``loss_fn`` against every parameter tensor.

    Returns the worst relative error across all tensors.
    """
    worst = 0.0
    for name, t in params.named():
        def f(leaf, name=name):
            saved = params._tensors[name]
            params._tensors[name] = leaf
            try:
                return loss_fn()
            finally:
                params._tensors[name] = saved

        leaf = T.Tensor(t.data.copy())
        err = T.finite_diff_check(f, leaf)
        worst = max(worst, err)
    return worst
