"""The segmentation network: extractor, segmentation head, projector.

Two 3x3 conv layers with relu extract features; a 1x1 conv plus channelwise
softmax predicts classes; a second 1x1 conv with no non-linearity projects
features for the contrastive loss. Stride 1 throughout, so the prediction
grid matches the image grid; the nearest-neighbor resize path still exists
for label maps whose resolution differs from the projection grid.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


class NetworkParams:
    """All trainable tensors, grouped by role.

    extractor: conv1 (3x3, 3->h1) and conv2 (3x3, h1->h2), relu after each;
    head: 1x1 conv h2->C; projector: 1x1 conv h2->K with K < h2 and no
    activation.
    """

    def __init__(self, tensors: dict[str, T.Tensor]):
        self._tensors = tensors
        k = tensors["proj_w"].shape[3]
        m = tensors["conv2_w"].shape[3]
        if k >= m:
            raise ValueError(f"projector width {k} must be < feature width {m}")

    @property
    def num_classes(self) -> int:
        return self._tensors["head_w"].shape[3]

    @property
    def proj_dim(self) -> int:
        return self._tensors["proj_w"].shape[3]

    def named(self) -> list[tuple[str, T.Tensor]]:
        return sorted(self._tensors.items())

    def __getitem__(self, name: str) -> T.Tensor:
        return self._tensors[name]

    def extractor(self) -> list[T.Tensor]:
        t = self._tensors
        return [t["conv1_w"], t["conv1_b"], t["conv2_w"], t["conv2_b"]]

    def head(self) -> list[T.Tensor]:
        return [self._tensors["head_w"], self._tensors["head_b"]]

    def projector(self) -> list[T.Tensor]:
        return [self._tensors["proj_w"], self._tensors["proj_b"]]

    def all_tensors(self) -> list[T.Tensor]:
        return [t for _, t in self.named()]

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.all_tensors():
            t.requires_grad = flag

    def zero_grad(self) -> None:
        for t in self.all_tensors():
            t.zero_grad()


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Weights from U(-s, s) with s = sqrt(1 / fan_in); fan_in counts every
    input connection (kh * kw * Cin for a conv kernel)."""
    fan_in = int(np.prod(shape[:-1]))
    s = np.sqrt(1.0 / fan_in)
    return rng.uniform(-s, s, size=shape)


def init_params(
    rng: np.random.Generator,
    num_classes: int,
    hidden1: int = 16,
    hidden2: int = 32,
    proj_dim: int = 16,
) -> NetworkParams:
    tensors = {
        "conv1_w": T.Tensor(uniform_fan_in(rng, (3, 3, 3, hidden1)), requires_grad=True),
        "conv1_b": T.Tensor(np.zeros(hidden1), requires_grad=True),
        "conv2_w": T.Tensor(uniform_fan_in(rng, (3, 3, hidden1, hidden2)), requires_grad=True),
        "conv2_b": T.Tensor(np.zeros(hidden2), requires_grad=True),
        "head_w": T.Tensor(uniform_fan_in(rng, (1, 1, hidden2, num_classes)), requires_grad=True),
        "head_b": T.Tensor(np.zeros(num_classes), requires_grad=True),
        "proj_w": T.Tensor(uniform_fan_in(rng, (1, 1, hidden2, proj_dim)), requires_grad=True),
        "proj_b": T.Tensor(np.zeros(proj_dim), requires_grad=True),
    }
    return NetworkParams(tensors)


class ForwardOutputs:
    """features (B,H,W,M'), projections (B,H,W,K'), probabilities (B,H,W,C),
    hard predictions as indices (B,H,W) with a one-hot view on demand."""

    __slots__ = ("features", "projections", "probabilities", "prediction")

    def __init__(self, features, projections, probabilities):
        self.features = features
        self.projections = projections
        self.probabilities = probabilities
        self.prediction = np.argmax(probabilities.data, axis=-1)

    def prediction_onehot(self) -> np.ndarray:
        c = self.probabilities.shape[-1]
        return indices_to_onehot(self.prediction, c)


def forward(params: NetworkParams, images: np.ndarray) -> ForwardOutputs:
    """Full forward pass on a (B, H, W, 3) image batch."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"forward: expected (B,H,W,3) images, got {images.shape}")
    x = T.Tensor(images)
    h1 = T.relu(T.conv2d(x, params["conv1_w"], params["conv1_b"]))
    f = T.relu(T.conv2d(h1, params["conv2_w"], params["conv2_b"]))
    logits = T.conv2d(f, params["head_w"], params["head_b"])
    p = T.softmax(logits)
    z = T.conv2d(f, params["proj_w"], params["proj_b"])
    return ForwardOutputs(f, z, p)


def indices_to_onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (num_classes,), dtype=np.float64)
    grid = tuple(np.indices(labels.shape))
    out[grid + (labels,)] = 1.0
    return out


def resize_onehot(onehot: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of a one-hot (or masked one-hot) map using the
    index mapping floor(i * H_in / H_out); stays one-hot."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize_onehot: target ({out_h}, {out_w}) invalid")
    h, w = onehot.shape[:2]
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return onehot[rows][:, cols]
