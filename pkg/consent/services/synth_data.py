"""
Deterministic synthetic stand-ins for word-annotated product images and for the
rock-paper-scissors context task.

Words are rows of procedural pseudo-glyphs drawn from line and arc strokes, so the
stroke width (the variable that defines "bold" within one image) is exact. Every
image draws from its own random streams keyed by (seed, layout, view), which keeps
threaded and serial generation byte-identical.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy import ndimage

from shared import config
from shared.exceptions import DatasetError, DatasetIOError, ManifestError
from shared.models import SynthConfig
from consent.modules.blocks import Sequence, split_blocks, word_patches
from . import storage

SPLIT_STREAM = 7919
RPS_STREAM = 104729
BEATS = {'rock': 'scissors', 'scissors': 'paper', 'paper': 'rock'}


def _arc(cx, cy, rx, ry, start, stop, steps=12):
    angles = np.radians(np.linspace(start, stop, steps + 1))
    return list(zip(cx + rx * np.cos(angles), cy - ry * np.sin(angles)))


# Pseudo-glyphs as polylines in a unit box (x right, y down); x-height starts at 0.22.
GLYPHS = (
    [[(0.5, 0.0), (0.5, 1.0)]],
    [_arc(0.5, 0.6, 0.42, 0.38, 0, 360, 16)],
    [_arc(0.55, 0.6, 0.42, 0.38, 50, 310, 14)],
    [[(0.12, 0.22), (0.12, 1.0)], _arc(0.46, 0.56, 0.34, 0.34, 180, 0) + [(0.8, 1.0)]],
    [[(0.05, 0.22), (0.5, 1.0), (0.95, 0.22)]],
    [[(0.08, 0.22), (0.92, 1.0)], [(0.92, 0.22), (0.08, 1.0)]],
    [[(0.1, 0.22), (0.9, 0.22), (0.1, 1.0), (0.9, 1.0)]],
    [[(0.12, 0.0), (0.12, 1.0)], _arc(0.5, 0.62, 0.38, 0.36, 0, 360, 16)],
    [[(0.88, 0.0), (0.88, 1.0)], _arc(0.5, 0.62, 0.38, 0.36, 0, 360, 16)],
    [[(0.15, 0.22), (0.15, 1.0)], _arc(0.55, 0.6, 0.4, 0.38, 180, 60, 8)],
    [[(0.45, 0.0), (0.45, 1.0), (0.8, 1.0)], [(0.1, 0.3), (0.85, 0.3)]],
    [[(0.12, 0.0), (0.12, 1.0)], [(0.85, 0.25), (0.12, 0.65), (0.85, 1.0)]],
    [[(0.1, 0.6), (0.9, 0.6)] + _arc(0.5, 0.6, 0.4, 0.38, 0, 320, 14)],
    [[(0.12, 0.0), (0.12, 1.0)], _arc(0.46, 0.56, 0.34, 0.34, 180, 0) + [(0.8, 1.0)]],
)

ICONS = {
    'rock': [_arc(0.5, 0.5, 0.32, 0.24, 0, 360, 20), _arc(0.5, 0.42, 0.18, 0.1, 200, 340, 8)],
    'paper': [[(0.25, 0.45), (0.75, 0.45), (0.75, 0.85), (0.25, 0.85), (0.25, 0.45)],
              [(0.3, 0.45), (0.3, 0.12)], [(0.43, 0.45), (0.43, 0.08)],
              [(0.57, 0.45), (0.57, 0.08)], [(0.7, 0.45), (0.7, 0.12)]],
    'scissors': [[(0.25, 0.1), (0.6, 0.65)], [(0.75, 0.1), (0.4, 0.65)],
                 _arc(0.35, 0.78, 0.12, 0.09, 0, 360, 12), _arc(0.65, 0.78, 0.12, 0.09, 0, 360, 12)],
}


def worker_count():
    """Worker threads for generation, capped by CONSENT_THREADS (default 1)."""
    try:
        return max(1, int(os.getenv('CONSENT_THREADS', '1')))
    except ValueError:
        logging.warning(f"Ignoring non-integer CONSENT_THREADS={os.getenv('CONSENT_THREADS')!r}")
        return 1


# --- rasterization --------------------------------------------------------------------

def _segments(polylines):
    starts, ends = [], []
    for line in polylines:
        pts = np.asarray(line, dtype=np.float64)
        starts.append(pts[:-1])
        ends.append(pts[1:])
    return np.concatenate(starts), np.concatenate(ends)


def rasterize(polylines, height, width, stroke):
    """
    Anti-aliased ink coverage in [0, 1] of polylines (pixel coordinates, x then y)
    drawn with a round pen of diameter ``stroke``.
    """
    a, b = _segments(polylines)
    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    p = np.stack([xx.ravel(), yy.ravel()], axis=1)[:, None, :]
    d = b - a
    length2 = (d * d).sum(axis=1)
    length2 = np.where(length2 == 0, 1.0, length2)
    t = np.clip(((p - a) * d).sum(axis=-1) / length2, 0.0, 1.0)
    nearest = a + t[..., None] * d
    dist = np.sqrt(((p - nearest) ** 2).sum(axis=-1)).min(axis=1)
    return np.clip(stroke / 2.0 + 0.5 - dist, 0.0, 1.0).reshape(height, width)


def _glyph_metrics(glyph_height):
    glyph_width = 0.6 * glyph_height
    return glyph_width, glyph_width + 0.3 * glyph_height


@lru_cache(maxsize=4096)
def _glyph_cell(glyph, glyph_height, stroke):
    """Coverage of one glyph in its padded cell; pages reuse one height and two strokes."""
    glyph_width, _ = _glyph_metrics(glyph_height)
    pad = int(math.ceil(stroke / 2.0)) + 2
    cell_h = int(math.ceil(glyph_height)) + 2 * pad
    cell_w = int(math.ceil(glyph_width)) + 2 * pad
    lines = [[(pad + x * glyph_width, pad + y * glyph_height) for x, y in line] for line in GLYPHS[glyph]]
    cell = rasterize(lines, cell_h, cell_w, stroke)
    cell.setflags(write=False)
    return cell


def render_word(glyph_ids, glyph_height, stroke, angle=0.0):
    """Ink coverage of one word; rotation grows the canvas so no ink is cut."""
    glyph_height, stroke = float(glyph_height), float(stroke)
    _, advance = _glyph_metrics(glyph_height)
    cells = [_glyph_cell(int(glyph), glyph_height, stroke) for glyph in glyph_ids]
    cell_h, cell_w = cells[0].shape
    offsets = [int(round(k * advance)) for k in range(len(glyph_ids))]
    canvas = np.zeros((cell_h, offsets[-1] + cell_w))
    for cell, x0 in zip(cells, offsets):
        np.maximum(canvas[:, x0:x0 + cell_w], cell, out=canvas[:, x0:x0 + cell_w])
    if angle:
        canvas = np.clip(ndimage.rotate(canvas, angle, reshape=True, order=1, mode='constant', cval=0.0), 0.0, 1.0)
    return canvas


# --- document images ------------------------------------------------------------------

@dataclass
class WordRecord:
    box: tuple
    label: int
    stroke_width: float = 0.0


@dataclass
class SynthImage:
    file: str
    pixels: np.ndarray
    words: list = field(default_factory=list)
    split: str = 'train'
    group: int = 0
    base_stroke_width: float = 0.0

    @property
    def boxes(self):
        return [w.box for w in self.words]

    @property
    def labels(self):
        return [w.label for w in self.words]

    @property
    def bold_ratio(self):
        return float(np.mean(self.labels)) if self.words else 0.0

    def patches(self):
        return word_patches(self.pixels, self.boxes, self.labels, image_id=self.file)


def _word_count(rng, cfg):
    ratio = (cfg.words_std / cfg.words_mean) ** 2
    sigma = math.sqrt(math.log1p(ratio))
    mu = math.log(cfg.words_mean) - sigma ** 2 / 2.0
    return int(np.clip(round(rng.lognormal(mu, sigma)), cfg.words_min, cfg.words_max))


def _bold_probability(rng, ratio):
    if ratio <= 0.0:
        return 0.0
    if ratio >= 1.0:
        return 1.0
    kappa = config.BOLD_RATIO_CONCENTRATION
    return float(rng.beta(kappa * ratio, kappa * (1.0 - ratio)))


def _colours(rng):
    background = rng.uniform(180.0, 255.0, 3)
    foreground = rng.uniform(0.0, 80.0, 3)
    luma = np.array([0.299, 0.587, 0.114])
    gap = (background - foreground) @ luma
    if gap < config.MIN_CONTRAST:
        foreground = np.clip(foreground - (config.MIN_CONTRAST - gap), 0.0, 255.0)
    return background, foreground


def _pack(sizes, glyph_height):
    """Left-to-right, top-to-bottom placement; returns (positions, page width, page height)."""
    margin = config.PAGE_MARGIN
    gap = int(round(0.5 * glyph_height))
    line_gap = int(round(0.3 * glyph_height))
    page_width = max(config.PAGE_WIDTH, max(w for _, w in sizes) + 2 * margin)
    positions, x, y, row_height = [], margin, margin, 0
    for h, w in sizes:
        if x > margin and x + w > page_width - margin:
            x, y, row_height = margin, y + row_height + line_gap, 0
        positions.append((x, y))
        x += w + gap
        row_height = max(row_height, h)
    return positions, page_width, y + row_height + margin


@dataclass
class PageLayout:
    """Everything a base layout fixes; augmented views only add rotation, lighting and noise."""
    labels: np.ndarray
    glyph_ids: list
    base_stroke: float
    multiplier: float
    glyph_scale: float
    background: np.ndarray
    foreground: np.ndarray

    @property
    def glyph_height(self):
        return self.glyph_scale * (10.0 + 8.0 * self.base_stroke)

    @property
    def regular_width(self):
        return self.base_stroke * self.glyph_scale

    @property
    def bold_width(self):
        return self.base_stroke * self.multiplier * self.glyph_scale

    def stroke_widths(self):
        return np.where(self.labels == 1, self.bold_width, self.regular_width)


def page_layout(cfg, layout):
    rng = np.random.default_rng([cfg.seed, layout])
    count = _word_count(rng, cfg)
    p_bold = _bold_probability(rng, cfg.bold_ratio)
    labels = (rng.random(count) < p_bold).astype(int)
    base = rng.uniform(*cfg.base_stroke_range)
    multiplier = rng.uniform(*cfg.bold_multiplier_range)
    glyph_scale = rng.uniform(*cfg.glyph_scale_range)
    glyph_counts = rng.integers(cfg.glyphs_per_word[0], cfg.glyphs_per_word[1] + 1, count)
    glyph_ids = [rng.integers(0, len(GLYPHS), n) for n in glyph_counts]
    background, foreground = _colours(rng)
    return PageLayout(labels, glyph_ids, base, multiplier, glyph_scale, background, foreground)


def render_image(cfg, index):
    """One synthetic page: (uint8 RGB pixels, manifest entry without its split)."""
    layout_index, view = divmod(index, cfg.views_per_layout)
    layout = page_layout(cfg, layout_index)
    view_rng = np.random.default_rng([cfg.seed, layout_index, view])
    count = len(layout.labels)
    background, foreground = layout.background, layout.foreground
    glyph_height = layout.glyph_height

    angles = view_rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg, count) if cfg.rotation \
        else np.zeros(count)
    if view_rng.random() < cfg.polarity_inversion_prob:
        background, foreground = foreground, background

    widths = layout.stroke_widths()
    coverages = [render_word(ids, glyph_height, width, angle)
                 for ids, width, angle in zip(layout.glyph_ids, widths, angles)]
    positions, width, height = _pack([c.shape for c in coverages], glyph_height)
    ink = np.zeros((height, width))
    words = []
    for coverage, (x, y), label, stroke in zip(coverages, positions, layout.labels, widths):
        h, w = coverage.shape
        ink[y:y + h, x:x + w] = np.maximum(ink[y:y + h, x:x + w], coverage)
        words.append({'box': [int(x), int(y), int(w), int(h)], 'label': int(label),
                      'stroke_width': float(stroke)})

    pixels = background * (1.0 - ink[..., None]) + foreground * ink[..., None]
    if cfg.illumination:
        theta = view_rng.uniform(0.0, 2.0 * math.pi)
        yy, xx = np.mgrid[0:height, 0:width]
        ramp = xx * math.cos(theta) + yy * math.sin(theta)
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1.0)
        pixels = pixels * (1.0 - cfg.illumination_strength * ramp)[..., None]
    if cfg.noise:
        pixels = pixels + view_rng.normal(0.0, cfg.noise_sigma, pixels.shape)
    image = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)

    entry = {'file': f"images/{index:05d}.ppm", 'group': int(layout_index),
             'base_stroke_width': float(layout.regular_width),
             'width': int(width), 'height': int(height), 'words': words}
    return image, entry


def assign_splits(groups, ratios, seed):
    """
    Shuffles group ids and fills test and val quotas by rounding; every split gets
    at least one group once there are three or more.
    """
    unique = sorted(set(groups))
    order = np.random.default_rng([seed, SPLIT_STREAM]).permutation(len(unique))
    n = len(unique)
    n_test = int(round(ratios['test'] * n))
    n_val = int(round(ratios['val'] * n))
    if n >= 3:
        n_test, n_val = max(n_test, 1), max(n_val, 1)
    n_test = min(n_test, n)
    n_val = min(n_val, n - n_test)
    split_of = {}
    for rank, position in enumerate(order):
        group = unique[position]
        split_of[group] = 'test' if rank < n_test else 'val' if rank < n_test + n_val else 'train'
    return [split_of[g] for g in groups]


def generate_dataset(cfg=None, out_dir='data'):
    """Renders ``cfg.images`` pages into ``out_dir/images`` and writes ``manifest.json``."""
    cfg = (cfg or SynthConfig()).validate()
    try:
        os.makedirs(os.path.join(out_dir, 'images'), exist_ok=True)
    except OSError as e:
        raise DatasetIOError(f"Cannot create dataset directory {out_dir}: {e}") from e

    step = max(1, cfg.images // 10)

    def build(index):
        image, entry = render_image(cfg, index)
        storage.write_ppm(os.path.join(out_dir, entry['file']), image)
        if (index + 1) % step == 0:
            logging.info(f"Generated {index + 1}/{cfg.images} images")
        return entry

    try:
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            entries = list(pool.map(build, range(cfg.images)))
    except OSError as e:
        raise DatasetIOError(f"Failed writing images under {out_dir}: {e}") from e

    splits = assign_splits([e['group'] for e in entries], cfg.split_ratios, cfg.seed)
    for entry, split in zip(entries, splits):
        entry['split'] = split
    manifest = {'seed': cfg.seed, 'config': cfg.to_dict(), 'images': entries}
    path = storage.write_manifest(out_dir, manifest)
    logging.info(f"Wrote manifest {path}")
    return manifest


def load_dataset(data_dir, split=None):
    """Lazily yields (SynthImage, split) in manifest order, optionally for one split."""
    manifest = storage.validate_manifest(storage.read_manifest(data_dir))
    for entry in manifest['images']:
        if split is not None and entry['split'] != split:
            continue
        pixels = storage.read_ppm(os.path.join(data_dir, entry['file']))
        height, width = pixels.shape[:2]
        boxes = [tuple(w['box']) for w in entry['words']]
        storage.check_boxes(boxes, width, height, where=f"{entry['file']}: ")
        words = [WordRecord(tuple(w['box']), int(w['label']), float(w.get('stroke_width', 0.0)))
                 for w in entry['words']]
        image = SynthImage(entry['file'], pixels, words, entry['split'], int(entry.get('group', 0)),
                           float(entry.get('base_stroke_width', 0.0)))
        yield image, entry['split']


def load_split(data_dir, split):
    return [image for image, _ in load_dataset(data_dir, split)]


def dataset_summary(manifest):
    """Per-split image, word and bold counts as a DataFrame."""
    rows = [{'split': e['split'], 'words': len(e['words']), 'bold': sum(w['label'] for w in e['words'])}
            for e in manifest['images']]
    frame = pd.DataFrame(rows, columns=['split', 'words', 'bold'])
    summary = frame.groupby('split').agg(images=('words', 'size'), words=('words', 'sum'), bold=('bold', 'sum'))
    summary.loc['all'] = summary.sum()
    summary['bold_ratio'] = (summary['bold'] / summary['words'].where(summary['words'] > 0)).fillna(0.0).round(4)
    return summary


# --- rock-paper-scissors --------------------------------------------------------------

def rps_targets(first, second):
    """[1, 0] if the first hand wins, [0, 1] if the second does, [0, 0] for a draw."""
    if BEATS[first] == second:
        return (1, 0)
    if BEATS[second] == first:
        return (0, 1)
    return (0, 0)


@dataclass
class RpsGame:
    game_id: str
    hands: tuple
    targets: tuple
    pixels: list
    split: str = 'train'

    def to_sequence(self, model_config):
        blocks = np.concatenate([
            split_blocks(p, model_config.block_height, model_config.block_width, model_config.channels)[:1]
            for p in self.pixels])
        return Sequence(blocks, np.array(self.targets, dtype=np.int64),
                        [(self.game_id, 0), (self.game_id, 1)], self.game_id)


def render_icon(hand, rng, height=config.BLOCK_HEIGHT, width=config.BLOCK_WIDTH):
    """Grayscale hand-pose icon: dark strokes on a light ground with jitter and noise."""
    scale = rng.uniform(0.75, 1.0)
    shift = rng.uniform(-0.08, 0.08, 2)
    angle = math.radians(rng.uniform(-config.RPS_MAX_ROTATION_DEG, config.RPS_MAX_ROTATION_DEG))
    stroke = rng.uniform(*config.RPS_STROKE_RANGE)
    cos, sin = math.cos(angle), math.sin(angle)
    lines = []
    for line in ICONS[hand]:
        pts = []
        for x, y in line:
            u, v = (x - 0.5) * scale * width, (y - 0.5) * scale * height
            pts.append(((0.5 + shift[0]) * width + cos * u - sin * v,
                        (0.5 + shift[1]) * height + sin * u + cos * v))
        lines.append(pts)
    ink = rasterize(lines, height, width, stroke)
    background, foreground = rng.uniform(170.0, 255.0), rng.uniform(0.0, 70.0)
    pixels = background * (1.0 - ink) + foreground * ink + rng.normal(0.0, config.NOISE_SIGMA, ink.shape)
    return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)


def generate_rps(cfg=None, games=None, out_dir=None,
                 block_height=config.BLOCK_HEIGHT, block_width=config.BLOCK_WIDTH):
    """
    ``games`` two-hand sequences (default ``cfg.images``) with per-element win
    targets; written as PPM icons plus ``rps_manifest.json`` when ``out_dir`` is given.
    """
    cfg = (cfg or SynthConfig()).validate()
    games = cfg.images if games is None else games
    if games < 1:
        raise DatasetError(f"games must be >= 1, got {games}")

    def build(index):
        rng = np.random.default_rng([cfg.seed, RPS_STREAM, index])
        hands = tuple(config.RPS_HANDS[h] for h in rng.integers(0, len(config.RPS_HANDS), 2))
        pixels = [render_icon(hand, rng, block_height, block_width) for hand in hands]
        return RpsGame(f"game{index:05d}", hands, rps_targets(*hands), pixels)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        result = list(pool.map(build, range(games)))
    for game, split in zip(result, assign_splits(list(range(games)), cfg.split_ratios, cfg.seed)):
        game.split = split

    if out_dir is not None:
        write_rps(result, out_dir, cfg)
    logging.info(f"Generated {games} rock-paper-scissors games")
    return result


def write_rps(games, out_dir, cfg=None):
    try:
        os.makedirs(os.path.join(out_dir, 'icons'), exist_ok=True)
        entries = []
        for game in games:
            files = [f"icons/{game.game_id}_{k}.ppm" for k in range(2)]
            for name, pixels in zip(files, game.pixels):
                storage.write_ppm(os.path.join(out_dir, name), pixels)
            entries.append({'id': game.game_id, 'files': files, 'hands': list(game.hands),
                            'targets': list(game.targets), 'split': game.split})
    except OSError as e:
        raise DatasetIOError(f"Failed writing games under {out_dir}: {e}") from e
    manifest = {'games': entries}
    if cfg is not None:
        manifest.update(seed=cfg.seed, config=cfg.to_dict())
    return storage.write_manifest(out_dir, manifest, name=config.RPS_MANIFEST_NAME)


def load_rps(data_dir, split=None):
    manifest = storage.read_manifest(data_dir, name=config.RPS_MANIFEST_NAME)
    if not isinstance(manifest, dict) or not isinstance(manifest.get('games'), list):
        raise ManifestError(f"{config.RPS_MANIFEST_NAME} must hold a 'games' list")
    games = []
    for i, entry in enumerate(manifest['games']):
        try:
            hands = tuple(entry['hands'])
            files = entry['files']
            game_split = entry.get('split', 'test')
        except (KeyError, TypeError) as e:
            raise ManifestError(f"games[{i}] is missing {e}") from e
        if len(hands) != 2 or len(files) != 2 or any(h not in BEATS for h in hands):
            raise ManifestError(f"games[{i}] must list two known hands and two files")
        if split is not None and game_split != split:
            continue
        pixels = [storage.read_ppm(os.path.join(data_dir, f))[..., 0] for f in files]
        games.append(RpsGame(entry.get('id', f"game{i:05d}"), hands, rps_targets(*hands), pixels, game_split))
    return games
