"""Pseudo-label machinery: entropy-gated labels and the temporal ensemble.

The ensemble additively collects hard target predictions over training,
weighted by a stepwise increasing integer so recent (better) predictions
count more. Per pixel only the classes that ever received a vote are
stored: a slot array of at most C (class, count) pairs, which is the sparse
realization that keeps memory linear in occupied entries.
"""

from __future__ import annotations

import numpy as np

IGNORE = 255

_VOTE_DTYPES = {8: np.uint8, 16: np.uint16}


class VoteOverflowError(RuntimeError):
    """A vote counter would exceed its configured width."""


class PseudoLabelMap:
    """Per-pixel class indices with an IGNORE sentinel and a validity mask."""

    __slots__ = ("label", "valid")

    def __init__(self, label: np.ndarray, valid: np.ndarray):
        label = np.asarray(label)
        valid = np.asarray(valid, dtype=bool)
        if label.shape != valid.shape:
            raise ValueError(f"label {label.shape} vs valid {valid.shape}")
        label = label.copy()
        label[~valid] = IGNORE
        self.label = label
        self.valid = valid

    def valid_fraction(self) -> float:
        return float(self.valid.mean()) if self.valid.size else 0.0

    def to_onehot(self, num_classes: int) -> np.ndarray:
        """One-hot encoding with all-zero rows at ignored pixels."""
        out = np.zeros(self.label.shape + (num_classes,), dtype=np.float64)
        idx = np.nonzero(self.valid)
        out[idx + (self.label[idx],)] = 1.0
        return out


def entropy(p: np.ndarray) -> np.ndarray:
    """Per-pixel entropy -sum_c p log p (natural log, probabilities clamped
    at 1e-12)."""
    p = np.asarray(p, dtype=np.float64)
    return -np.sum(p * np.log(np.maximum(p, 1e-12)), axis=-1)


def confident_labels(p: np.ndarray, fraction: float = 0.30) -> PseudoLabelMap:
    """Label the ceil(fraction * H * W) lowest-entropy pixels with their
    argmax class; everything else is IGNORE.

    Ties are broken by flat pixel index (row-major), ascending, so the
    selected set is deterministic.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    h, w, _ = p.shape
    e = entropy(p).ravel()
    keep = int(np.ceil(fraction * h * w))
    order = np.argsort(e, kind="stable")  # stable = tie-break by pixel index
    valid = np.zeros(h * w, dtype=bool)
    valid[order[:keep]] = True
    label = np.argmax(p, axis=-1).astype(np.int64).ravel()
    return PseudoLabelMap(label.reshape(h, w), valid.reshape(h, w))


def gamma_at(iteration: int, start: int, step_interval: int) -> int:
    """Vote weight at a 1-based iteration: start, incremented by 1 every
    ``step_interval`` iterations."""
    if iteration < 1:
        raise ValueError(f"iteration must be >= 1, got {iteration}")
    return start + (iteration - 1) // step_interval


class VoteStore:
    """Sparse per-image weighted vote counts over pixels and classes.

    Each image holds slot arrays of shape (H*W, C): ``classes[p, s]`` and
    ``votes[p, s]`` are the s-th (class, count) pair of pixel p, with
    ``n_slots[p]`` pairs occupied. Zero-vote entries are never stored.
    """

    def __init__(
        self,
        num_classes: int,
        height: int,
        width: int,
        vote_width: int = 16,
    ):
        if vote_width not in _VOTE_DTYPES:
            raise ValueError(f"vote_width must be 8 or 16, got {vote_width}")
        if num_classes > IGNORE:
            raise ValueError(f"num_classes must be <= {IGNORE}")
        self.num_classes = num_classes
        self.height = height
        self.width = width
        self.vote_width = vote_width
        self._max_vote = int(np.iinfo(_VOTE_DTYPES[vote_width]).max)
        self._images: dict[int, dict[str, np.ndarray]] = {}

    def _image(self, image_id: int) -> dict[str, np.ndarray]:
        iv = self._images.get(image_id)
        if iv is None:
            n = self.height * self.width
            iv = {
                "classes": np.zeros((n, self.num_classes), dtype=np.uint8),
                "votes": np.zeros(
                    (n, self.num_classes), dtype=_VOTE_DTYPES[self.vote_width]
                ),
                "n_slots": np.zeros(n, dtype=np.uint8),
            }
            self._images[image_id] = iv
        return iv

    def record(self, image_id: int, labels: np.ndarray, gamma: int) -> None:
        """Add ``gamma`` votes for each pixel's predicted class."""
        labels = np.asarray(labels)
        if labels.shape != (self.height, self.width):
            raise ValueError(
                f"labels {labels.shape} != ({self.height}, {self.width})"
            )
        if gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {gamma}")
        flat = labels.ravel().astype(np.uint8)
        iv = self._image(image_id)
        slot_idx = np.arange(self.num_classes)[None, :]
        occupied = slot_idx < iv["n_slots"][:, None]
        match = (iv["classes"] == flat[:, None]) & occupied
        has_match = match.any(axis=1)
        first = match.argmax(axis=1)

        rows = np.nonzero(has_match)[0]
        if rows.size:
            current = iv["votes"][rows, first[rows]]
            if np.any(current > self._max_vote - gamma):
                raise VoteOverflowError(
                    f"vote count would exceed uint{self.vote_width}; "
                    "widen vote_width in the config"
                )
            iv["votes"][rows, first[rows]] = current + gamma

        new_rows = np.nonzero(~has_match)[0]
        if new_rows.size:
            if gamma > self._max_vote:
                raise VoteOverflowError(
                    f"gamma {gamma} exceeds uint{self.vote_width}"
                )
            s = iv["n_slots"][new_rows]
            iv["classes"][new_rows, s] = flat[new_rows]
            iv["votes"][new_rows, s] = gamma
            iv["n_slots"][new_rows] = s + 1

    def majority(self, image_id: int) -> PseudoLabelMap:
        """Per-pixel class with the most votes; ties go to the lowest class
        index. Pixels (or whole images) never recorded are IGNORE."""
        shape = (self.height, self.width)
        iv = self._images.get(image_id)
        if iv is None:
            return PseudoLabelMap(
                np.full(shape, IGNORE, dtype=np.int64), np.zeros(shape, dtype=bool)
            )
        slot_idx = np.arange(self.num_classes)[None, :]
        occupied = slot_idx < iv["n_slots"][:, None]
        votes = np.where(occupied, iv["votes"].astype(np.int64), -1)
        best = votes.max(axis=1)
        # among slots tied at the max count, take the smallest class index
        candidates = np.where(
            votes == best[:, None], iv["classes"].astype(np.int64), self.num_classes
        )
        label = candidates.min(axis=1)
        valid = iv["n_slots"] > 0
        label[~valid] = IGNORE
        return PseudoLabelMap(label.reshape(shape), valid.reshape(shape))

    def density(self) -> float:
        """Occupied entries over the dense capacity M * H * W * C, where M
        counts images with at least one recording."""
        if not self._images:
            return 0.0
        entries = sum(int(iv["n_slots"].sum()) for iv in self._images.values())
        capacity = (
            len(self._images) * self.height * self.width * self.num_classes
        )
        return entries / capacity

    def image_ids(self) -> list[int]:
        return sorted(self._images)

    def num_entries(self) -> int:
        return sum(int(iv["n_slots"].sum()) for iv in self._images.values())

    def entries(self):
        """Yield (image_id, pixel_index, class, count) in deterministic order."""
        for image_id in sorted(self._images):
            iv = self._images[image_id]
            pix, slot = np.nonzero(
                np.arange(self.num_classes)[None, :] < iv["n_slots"][:, None]
            )
            for p, s in zip(pix.tolist(), slot.tolist()):
                yield image_id, p, int(iv["classes"][p, s]), int(iv["votes"][p, s])

    def insert(self, image_id: int, pixel: int, cls: int, count: int) -> None:
        """Insert one sparse entry (used by deserialization)."""
        if count < 1:
            raise ValueError("stored vote counts must be positive")
        if count > self._max_vote:
            raise VoteOverflowError(
                f"count {count} exceeds uint{self.vote_width}"
            )
        iv = self._image(image_id)
        s = iv["n_slots"][pixel]
        if s >= self.num_classes:
            raise ValueError(f"pixel {pixel} already has {s} entries")
        iv["classes"][pixel, s] = cls
        iv["votes"][pixel, s] = count
        iv["n_slots"][pixel] = s + 1
