"""Synthetic two-domain segmentation benchmark.

Each image is a layered scene: background, a sky band, a road band, and
probabilistically a circle and a rectangle blob, colored by class with
Gaussian pixel noise. Target images render the same scene family with
different blob frequencies, then pass through an appearance shift (hue
rotation, brightness offset, Gaussian blur) that induces the covariate gap
the trainer must close. Every image derives its RNG stream from
(seed, domain, id), so generation is reproducible and order-free.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, fields

import numpy as np
from scipy.ndimage import gaussian_filter

DATASET_MAGIC = b"CLSTDS1"

SOURCE = "source"
TARGET = "target"
_DOMAIN_CODE = {SOURCE: 0, TARGET: 1}
_DOMAIN_NAME = {0: SOURCE, 1: TARGET}

# the scene family: class index -> base RGB
_CLASS_COLORS = np.array(
    [
        [0.32, 0.44, 0.18],  # 0 background: grass
        [0.53, 0.70, 0.92],  # 1 sky band
        [0.38, 0.38, 0.40],  # 2 road band
        [0.82, 0.26, 0.20],  # 3 circle blob
        [0.78, 0.72, 0.15],  # 4 rectangle blob
    ]
)

# per-domain probability that the optional blobs appear; deliberately
# unequal across classes and across domains so the occurrence estimates
# and Eq.-5-style weights have something to balance
_CIRCLE_P = {SOURCE: 0.75, TARGET: 0.50}
_RECT_P = {SOURCE: 0.45, TARGET: 0.70}

_MIN_SIDE = 16


class DatasetError(RuntimeError):
    """Malformed or truncated dataset file."""


@dataclass(frozen=True)
class DatasetManifest:
    num_source: int = 200
    num_target: int = 200
    height: int = 32
    width: int = 48
    num_classes: int = 5
    seed: int = 0
    hue_angle: float = 0.9
    brightness_offset: float = -0.08
    blur_sigma: float = 0.7
    noise_sigma: float = 0.04

    def __post_init__(self):
        if self.num_source < 1 or self.num_target < 1:
            raise ValueError("need at least one image per domain")
        if self.num_classes < 2 or self.num_classes > len(_CLASS_COLORS):
            raise ValueError(
                f"num_classes must be in [2, {len(_CLASS_COLORS)}], "
                f"got {self.num_classes}"
            )
        for name in ("hue_angle", "brightness_offset", "blur_sigma", "noise_sigma"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass
class SegSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    label: np.ndarray | None  # (H, W) uint8 class indices
    domain: str
    id: int


@dataclass
class JitterParams:
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2

    def __post_init__(self):
        # strengths are clamped to sane ranges rather than rejected
        object.__setattr__(self, "brightness", float(np.clip(self.brightness, 0, 1)))
        object.__setattr__(self, "contrast", float(np.clip(self.contrast, 0, 1)))
        object.__setattr__(self, "saturation", float(np.clip(self.saturation, 0, 1)))


def _image_rng(seed: int, domain: str, image_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((seed, _DOMAIN_CODE[domain], image_id))
    )


def _render_scene(manifest: DatasetManifest, domain: str, image_id: int):
    h, w, c = manifest.height, manifest.width, manifest.num_classes
    if h < _MIN_SIDE or w < _MIN_SIDE:
        raise ValueError(
            f"image size {h}x{w} too small to place shapes (min {_MIN_SIDE})"
        )
    rng = _image_rng(manifest.seed, domain, image_id)
    label = np.zeros((h, w), dtype=np.uint8)

    if c > 1:  # sky band
        sky_h = int(rng.integers(h // 8, h // 3 + 1))
        label[:sky_h] = 1
    if c > 2:  # road band in the lower half
        road_h = int(rng.integers(h // 8, h // 4 + 1))
        road_y = int(rng.integers(h // 2, h - road_h + 1))
        label[road_y : road_y + road_h] = 2
    # id 0 always gets both blobs so no class can be missing from a domain
    if c > 3 and (image_id == 0 or rng.random() < _CIRCLE_P[domain]):
        r = int(rng.integers(3, max(4, min(h, w) // 4)))
        cy = int(rng.integers(r, h - r + 1))
        cx = int(rng.integers(r, w - r + 1))
        yy, xx = np.ogrid[:h, :w]
        label[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 3
    if c > 4 and (image_id == 0 or rng.random() < _RECT_P[domain]):
        rh = int(rng.integers(4, h // 3 + 1))
        rw = int(rng.integers(4, w // 3 + 1))
        ry = int(rng.integers(0, h - rh + 1))
        rx = int(rng.integers(0, w - rw + 1))
        label[ry : ry + rh, rx : rx + rw] = 4

    image = _CLASS_COLORS[label].astype(np.float64)
    image += rng.normal(0.0, manifest.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0), label


def hue_rotate(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate RGB vectors about the gray axis by ``angle`` radians."""
    if angle == 0.0:
        return image
    axis = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    cos, sin = np.cos(angle), np.sin(angle)
    cross = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    rot = cos * np.eye(3) + sin * cross + (1 - cos) * np.outer(axis, axis)
    return image @ rot.T


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return image
    return gaussian_filter(image, sigma=(sigma, sigma, 0), mode="nearest")


def apply_domain_shift(image: np.ndarray, manifest: DatasetManifest) -> np.ndarray:
    """Hue rotation, brightness offset, blur; identity when all are zero."""
    out = hue_rotate(image, manifest.hue_angle)
    if manifest.brightness_offset != 0.0:
        out = out + manifest.brightness_offset
    out = gaussian_blur(out, manifest.blur_sigma)
    if out is image:
        return image
    return np.clip(out, 0.0, 1.0)


def generate(manifest: DatasetManifest) -> list[SegSample]:
    """Render the full benchmark: source block first, then target block."""
    samples: list[SegSample] = []
    for i in range(manifest.num_source):
        image, label = _render_scene(manifest, SOURCE, i)
        samples.append(SegSample(image.astype(np.float32), label, SOURCE, i))
    for i in range(manifest.num_target):
        image, label = _render_scene(manifest, TARGET, i)
        image = apply_domain_shift(image, manifest)
        samples.append(SegSample(image.astype(np.float32), label, TARGET, i))
    return samples


def augment(
    sample: SegSample,
    jitter: JitterParams,
    blur_sigma: float,
    rng: np.random.Generator,
) -> SegSample:
    """Photometric jitter plus blur on the image only; the label never moves."""
    img = sample.image.astype(np.float64)
    if jitter.brightness > 0:
        img = img * rng.uniform(1 - jitter.brightness, 1 + jitter.brightness)
    if jitter.contrast > 0:
        f = rng.uniform(1 - jitter.contrast, 1 + jitter.contrast)
        img = (img - img.mean()) * f + img.mean()
    if jitter.saturation > 0:
        f = rng.uniform(1 - jitter.saturation, 1 + jitter.saturation)
        gray = img.mean(axis=-1, keepdims=True)
        img = gray + (img - gray) * f
    sigma = rng.uniform(0.0, blur_sigma) if blur_sigma > 0 else 0.0
    img = gaussian_blur(img, sigma)
    out = np.clip(img, 0.0, 1.0).astype(np.float32) if img is not sample.image else sample.image
    return SegSample(out, sample.label, sample.domain, sample.id)


def occurrence_probabilities(samples: list[SegSample], num_classes: int, domain: str):
    """Fraction of a domain's images containing each class."""
    imgs = [s for s in samples if s.domain == domain]
    counts = np.zeros(num_classes)
    for s in imgs:
        counts += np.isin(np.arange(num_classes), s.label)
    return counts / max(len(imgs), 1)


def split_target_ids(manifest: DatasetManifest, val_fraction: float = 0.2):
    """Deterministic train/val split of target image ids, keyed by the
    dataset seed. Validation labels are for the evaluator only."""
    m = manifest.num_target
    n_val = max(1, int(round(val_fraction * m)))
    rng = np.random.default_rng(np.random.SeedSequence((manifest.seed, 0xE7A1)))
    perm = rng.permutation(m)
    val = np.sort(perm[:n_val])
    train = np.sort(perm[n_val:])
    return train.tolist(), val.tolist()


def strip_labels(samples: list[SegSample]) -> list[SegSample]:
    """What the trainer sees of the target domain: images only."""
    return [SegSample(s.image, None, s.domain, s.id) for s in samples]


# -- file format ---------------------------------------------------------------
# magic "CLSTDS1", little-endian header (H, W, C, count: u32; seed: u64),
# then per sample: image f32 H*W*3 row-major, label u8 H*W, domain u8.


def save_dataset(path, samples: list[SegSample], manifest: DatasetManifest) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(
            struct.pack(
                "<IIIIQ",
                manifest.height,
                manifest.width,
                manifest.num_classes,
                len(samples),
                manifest.seed,
            )
        )
        for s in samples:
            fh.write(np.ascontiguousarray(s.image, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(s.label, dtype=np.uint8).tobytes())
            fh.write(struct.pack("<B", _DOMAIN_CODE[s.domain]))


def load_dataset(path) -> tuple[list[SegSample], dict]:
    """Read a dataset file back; returns samples plus the stored header."""
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    magic = buf.read(len(DATASET_MAGIC))
    if magic != DATASET_MAGIC:
        raise DatasetError(f"bad magic {magic!r}; expected {DATASET_MAGIC!r}")
    header = buf.read(struct.calcsize("<IIIIQ"))
    if len(header) != struct.calcsize("<IIIIQ"):
        raise DatasetError("truncated header")
    h, w, c, count, seed = struct.unpack("<IIIIQ", header)
    img_bytes = h * w * 3 * 4
    lab_bytes = h * w
    samples: list[SegSample] = []
    next_id = {SOURCE: 0, TARGET: 0}
    for i in range(count):
        raw = buf.read(img_bytes + lab_bytes + 1)
        if len(raw) != img_bytes + lab_bytes + 1:
            raise DatasetError(f"truncated at sample {i}")
        image = np.frombuffer(raw[:img_bytes], dtype="<f4").reshape(h, w, 3).copy()
        label = (
            np.frombuffer(raw[img_bytes : img_bytes + lab_bytes], dtype=np.uint8)
            .reshape(h, w)
            .copy()
        )
        code = raw[-1]
        if code not in _DOMAIN_NAME:
            raise DatasetError(f"unknown domain byte {code} at sample {i}")
        domain = _DOMAIN_NAME[code]
        samples.append(SegSample(image, label, domain, next_id[domain]))
        next_id[domain] += 1
    if buf.read(1):
        raise DatasetError("trailing bytes after last sample")
    return samples, {
        "height": h,
        "width": w,
        "num_classes": c,
        "count": count,
        "seed": seed,
    }


def manifest_field_names() -> list[str]:
    return [f.name for f in fields(DatasetManifest)]
