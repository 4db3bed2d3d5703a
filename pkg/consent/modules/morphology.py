"""
Letter morphology voting: a word is bold when the mean stroke thickness measured
on its skeleton clearly exceeds the thickness statistics of its own image.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from shared import config
from shared.exceptions import DatasetError

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray
    degenerate: bool = False
    light_foreground: bool = False

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]


@dataclass(frozen=True)
class ThicknessProfile:
    samples: np.ndarray
    word_index: int = 0
    degenerate: bool = False

    @property
    def empty(self):
        return self.samples.size == 0

    @property
    def mean(self):
        return float(self.samples.mean()) if self.samples.size else float('nan')


@dataclass
class ImageThicknessStats:
    profiles: list = field(default_factory=list)
    sigma_mode: str = config.SIGMA_MODE

    @property
    def pooled(self):
        parts = [p.samples for p in self.profiles if not p.empty]
        return np.concatenate(parts) if parts else np.empty(0)

    @property
    def median(self):
        return float(np.median(self.pooled))

    @property
    def sigma(self):
        if self.sigma_mode == 'word_means':
            return float(np.std([p.mean for p in self.profiles if not p.empty]))
        return float(np.std(self.pooled))


def to_gray(pixels):
    """BT.601 luma for RGB input; grayscale passes through. Returns float64."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 3:
        return pixels @ LUMA
    return pixels


def otsu_threshold(gray):
    """
    Otsu's threshold on the 256-bin histogram: pixels <= t form one class, > t the other.
    Returns None when the patch has a single intensity.
    """
    levels = np.clip(np.rint(gray), 0, 255).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    weight_low = np.cumsum(hist)
    weight_high = total - weight_low
    cum_mass = np.cumsum(hist * np.arange(256))
    valid = (weight_low > 0) & (weight_high > 0)
    if not valid.any():
        return None
    mean_low = np.divide(cum_mass, weight_low, out=np.zeros(256), where=weight_low > 0)
    mean_high = np.divide(cum_mass[-1] - cum_mass, weight_high, out=np.zeros(256), where=weight_high > 0)
    between = np.where(valid, weight_low * weight_high * (mean_low - mean_high) ** 2, -1.0)
    return int(np.argmax(between))


def binarize(patch):
    """
    Letter mask of a word patch: Otsu split, the minority side is foreground
    (dark wins a tie). A constant patch yields an empty mask flagged degenerate.
    """
    gray = to_gray(patch)
    if gray.size == 0:
        raise ValueError("binarize needs a non-empty patch")
    threshold = otsu_threshold(gray)
    if threshold is None:
        return BinaryMask(np.zeros(gray.shape, dtype=bool), degenerate=True)
    levels = np.clip(np.rint(gray), 0, 255)
    dark = levels <= threshold
    light_count = gray.size - int(dark.sum())
    if light_count < dark.sum():
        return BinaryMask(~dark, light_foreground=True)
    return BinaryMask(dark)


def _neighbours(img):
    """P2..P9 (N, NE, E, SE, S, SW, W, NW) of every interior pixel of a padded image."""
    c = img[1:-1, 1:-1]
    return c, [img[:-2, 1:-1], img[:-2, 2:], img[1:-1, 2:], img[2:, 2:],
               img[2:, 1:-1], img[2:, :-2], img[1:-1, :-2], img[:-2, :-2]]


def skeletonize(mask):
    """Zhang-Suen thinning until no pixel changes. Accepts a BinaryMask or bool array."""
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    img = np.pad(bits.astype(np.uint8), 1)
    while True:
        changed = False
        for step in (0, 1):
            c, p = _neighbours(img)
            count = sum(p)
            ring = p + [p[0]]
            transitions = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.uint8) for i in range(8))
            p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
            if step == 0:
                cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            remove = (c == 1) & (count >= 2) & (count <= 6) & (transitions == 1) & cond
            if remove.any():
                img[1:-1, 1:-1][remove] = 0
                changed = True
        if not changed:
            break
    out = img[1:-1, 1:-1].astype(bool)
    return BinaryMask(out, degenerate=mask.degenerate, light_foreground=mask.light_foreground) \
        if isinstance(mask, BinaryMask) else out


def squared_distance_transform(mask):
    """
    Exact squared Euclidean distance from each foreground pixel to the nearest
    background pixel; the area outside the image counts as background.
    """
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    padded = np.pad(bits, 1)
    # Integer offsets to the nearest background pixel keep the result exact.
    nearest = ndimage.distance_transform_edt(padded, return_distances=False, return_indices=True)
    grid = np.indices(padded.shape)
    offsets = (grid - nearest).astype(np.int64)
    squared = (offsets * offsets).sum(axis=0)
    return squared[1:-1, 1:-1].astype(np.float64)


def distance_transform(mask):
    return np.sqrt(squared_distance_transform(mask))


def thickness(patch, word_index=0):
    """Distance-transform values sampled on the skeleton of the patch's letter mask."""
    mask = binarize(patch)
    if mask.degenerate:
        logging.debug(f"Word {word_index}: degenerate binarization, empty thickness profile")
        return ThicknessProfile(np.empty(0), word_index, degenerate=True)
    skeleton = skeletonize(mask).bits
    if not skeleton.any():
        return ThicknessProfile(np.empty(0), word_index)
    dist = distance_transform(mask)
    return ThicknessProfile(dist[skeleton], word_index)


def image_stats(patches, sigma_mode=config.SIGMA_MODE):
    return ImageThicknessStats([thickness(p, i) for i, p in enumerate(patches)], sigma_mode)


def vote(stats, alpha=config.ALPHA):
    """
    Label 1 iff mean(theta_i) > med(Theta) + alpha * sigma(Theta); words with an
    empty profile are labelled 0.
    """
    usable = [p for p in stats.profiles if not p.empty]
    if not usable:
        raise DatasetError("Every word has an empty thickness profile; image unusable for voting")
    med = stats.median
    sigma = stats.sigma
    threshold = med if sigma == 0.0 else med + alpha * sigma
    return np.array([0 if p.empty else int(p.mean > threshold) for p in stats.profiles], dtype=np.int64)


def classify_image(patches, alpha=config.ALPHA, sigma_mode=config.SIGMA_MODE):
    """Thickness + vote for the word patches of one image; an unusable image votes all non-bold."""
    stats = image_stats(patches, sigma_mode)
    try:
        return vote(stats, alpha)
    except DatasetError:
        logging.warning("No measurable words in image; labelling all words non-bold")
        return np.zeros(len(patches), dtype=np.int64)
