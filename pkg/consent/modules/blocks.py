"""
Word patches -> fixed-size blocks -> padded sequence batches, and the way back
from block probabilities to word labels.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from shared import config
from shared.exceptions import DimensionError, ValidationError
from .morphology import binarize, to_gray


@dataclass
class WordPatch:
    pixels: np.ndarray          # uint8, [h, w] or [h, w, 3]
    box: tuple
    label: int = 0
    image_id: str = ''
    index: int = 0

    @property
    def word_id(self):
        return (self.image_id, self.index)


@dataclass
class Sequence:
    """One image-local run of blocks fed to the model as a single sequence."""
    blocks: np.ndarray          # [S, C, H, W] float64
    labels: np.ndarray          # [S] int
    word_ids: list              # one entry per block
    image_id: str = ''


@dataclass
class SequenceBatch:
    blocks: np.ndarray          # [B, S, C, H, W]
    mask: np.ndarray            # [B, S] bool, True for real elements
    labels: np.ndarray          # [B, S] int, 0 where masked
    word_ids: list = field(default_factory=list)

    @property
    def shape(self):
        return self.mask.shape


def crop_box(image, box):
    x, y, w, h = (int(v) for v in box)
    height, width = image.shape[:2]
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > width or y + h > height:
        raise ValidationError(f"Box {list(box)} outside image of size {width}x{height}")
    return image[y:y + h, x:x + w]


def word_patches(image, boxes, labels=None, image_id=''):
    labels = labels if labels is not None else [0] * len(boxes)
    return [WordPatch(crop_box(image, box), tuple(int(v) for v in box), int(label), image_id, i)
            for i, (box, label) in enumerate(zip(boxes, labels))]


def normalize_patch(pixels, channels=config.CHANNELS):
    """
    Scales to [0, 1] with letters bright: the Otsu minority side decides whether the
    patch is inverted. Returns [C, h, w].
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    mask = binarize(pixels)
    if channels == 1:
        planes = to_gray(pixels)[None]
    elif pixels.ndim == 3:
        planes = np.moveaxis(pixels, -1, 0)
    else:
        planes = np.repeat(pixels[None], 3, axis=0)
    scaled = planes / 255.0
    return scaled if mask.light_foreground else 1.0 - scaled


def block_origins(patch_width, patch_height, block_width=config.BLOCK_WIDTH, block_height=config.BLOCK_HEIGHT):
    """
    Left edges (patch coordinates) of the fewest block_width:block_height windows,
    full patch height, covering the patch width; the last window is right-aligned.
    """
    span = patch_height * block_width / block_height
    count = max(1, math.ceil(patch_width / span - 1e-9))
    origins = [i * span for i in range(count)]
    if count > 1:
        origins[-1] = patch_width - span
    return span, origins


def split_blocks(pixels, block_height=config.BLOCK_HEIGHT, block_width=config.BLOCK_WIDTH,
                 channels=config.CHANNELS):
    """Word patch -> [n, C, block_height, block_width] with bilinear sampling (edge clamped)."""
    planes = normalize_patch(pixels, channels)
    _, h, w = planes.shape
    span, origins = block_origins(w, h, block_width, block_height)
    rows = (np.arange(block_height) + 0.5) * h / block_height - 0.5
    cols = (np.arange(block_width) + 0.5) * span / block_width - 0.5
    blocks = np.empty((len(origins), planes.shape[0], block_height, block_width))
    grid_r = np.repeat(rows[:, None], block_width, axis=1)
    for b, x0 in enumerate(origins):
        grid_c = np.repeat((x0 + cols)[None, :], block_height, axis=0)
        for ch, plane in enumerate(planes):
            blocks[b, ch] = ndimage.map_coordinates(plane, [grid_r, grid_c], order=1, mode='nearest')
    return blocks


def chunk_words(block_counts, max_seq_len, order=None):
    """
    Packs words (in ``order``, default reading order) into runs of at most
    ``max_seq_len`` blocks without splitting a word unless it alone is too long.
    Returns a list of runs, each a list of (word position, first block, block count).
    """
    order = range(len(block_counts)) if order is None else order
    runs, current, used = [], [], 0
    for word in order:
        remaining, start = block_counts[word], 0
        while remaining:
            if used and used + remaining > max_seq_len:
                runs.append(current)
                current, used = [], 0
            take = min(remaining, max_seq_len - used)
            current.append((word, start, take))
            used += take
            start += take
            remaining -= take
    if current:
        runs.append(current)
    return runs


def word_blocks(patches, model_config):
    return [split_blocks(p.pixels, model_config.block_height, model_config.block_width, model_config.channels)
            for p in patches]


def image_sequences(patches, model_config, chunking=config.CHUNKING, rng=None, per_word=None):
    """
    Blocks of every word of one image, chunked into sequences of <= max_seq_len.
    ``per_word`` reuses blocks already cut by ``word_blocks``.
    """
    if not patches:
        return []
    per_word = per_word if per_word is not None else word_blocks(patches, model_config)
    order = None
    if chunking == 'random':
        order = (rng or np.random.default_rng(0)).permutation(len(patches))
    sequences = []
    for run in chunk_words([len(b) for b in per_word], model_config.max_seq_len, order):
        blocks, labels, ids = [], [], []
        for word, start, count in run:
            blocks.append(per_word[word][start:start + count])
            labels.extend([patches[word].label] * count)
            ids.extend([patches[word].word_id] * count)
        sequences.append(Sequence(np.concatenate(blocks), np.array(labels, dtype=np.int64), ids,
                                  patches[0].image_id))
    return sequences


def collate(sequences, length=None):
    """Pads sequences with zero blocks to a common length; padding is masked out."""
    if not sequences:
        raise DimensionError("collate needs at least one sequence")
    length = length or max(len(s.labels) for s in sequences)
    c, h, w = sequences[0].blocks.shape[1:]
    blocks = np.zeros((len(sequences), length, c, h, w))
    mask = np.zeros((len(sequences), length), dtype=bool)
    labels = np.zeros((len(sequences), length), dtype=np.int64)
    word_ids = []
    for i, seq in enumerate(sequences):
        n = len(seq.labels)
        if n > length:
            raise DimensionError(f"sequence of {n} blocks exceeds batch length {length}")
        blocks[i, :n] = seq.blocks
        mask[i, :n] = True
        labels[i, :n] = seq.labels
        word_ids.append(list(seq.word_ids) + [None] * (length - n))
    return SequenceBatch(blocks, mask, labels, word_ids)


def aggregate_word_predictions(block_probs, word_ids, known_words=None,
                               threshold=config.AGGREGATION_THRESHOLD):
    """
    Word P(bold) = mean of its blocks' P(bold); label 1 iff >= threshold.
    Returns {word id: (probability, label)} in first-seen order.
    """
    block_probs = np.asarray(block_probs, dtype=np.float64)
    if len(block_probs) != len(word_ids):
        raise DimensionError(f"{len(block_probs)} block probabilities for {len(word_ids)} word ids")
    known = None if known_words is None else set(known_words)
    grouped = {}
    for prob, word in zip(block_probs, word_ids):
        if word is None or (known is not None and word not in known):
            raise ValidationError(f"Block assigned to unknown word id {word!r}")
        grouped.setdefault(word, []).append(prob)
    result = {}
    for word, probs in grouped.items():
        p = float(np.mean(probs))
        result[word] = (p, int(p >= threshold))
    return result
