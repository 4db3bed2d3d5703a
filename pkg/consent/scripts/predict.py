"""
Inference helpers shared by training, evaluation and the ``predict`` command:
CONSENT word predictions, morphology voting over whole images, RPS scoring and
box annotation.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from shared import config
from shared.exceptions import DatasetError, ValidationError
from consent.modules import morphology
from consent.modules.blocks import aggregate_word_predictions, collate, image_sequences, word_patches
from consent.services import storage
from consent.services.synth_data import worker_count


def sequence_probabilities(model, sequences, batch_size=config.BATCH_SIZE):
    """P(bold) for the real positions of every sequence, in input order."""
    result = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start:start + batch_size]
        probs = model.predict(collate(chunk))
        result.extend(probs[i, :len(seq.labels)] for i, seq in enumerate(chunk))
    return result


def predict_patches(model, patches, batch_size=config.BATCH_SIZE):
    """{word id: (P(bold), label)} for the word patches of one image."""
    if not patches:
        return {}
    sequences = image_sequences(patches, model.config, chunking='contiguous')
    probs = np.concatenate(sequence_probabilities(model, sequences, batch_size))
    word_ids = [wid for seq in sequences for wid in seq.word_ids]
    return aggregate_word_predictions(probs, word_ids, known_words=[p.word_id for p in patches])


def predict_images(model, images, batch_size=config.BATCH_SIZE):
    """{(image id, word index): label} over SynthImage-like objects."""
    predictions = {}
    for image in images:
        for word_id, (_, label) in predict_patches(model, image.patches(), batch_size).items():
            predictions[word_id] = label
    return predictions


def truth_of(images):
    return {image.file: list(image.labels) for image in images}


# --- morphology voting ----------------------------------------------------------------

def _word_pixels(image):
    return [patch.pixels for patch in image.patches()]


def baseline_stats(images, sigma_mode=config.SIGMA_MODE):
    """Thickness statistics per image, measured on a worker pool."""
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(lambda image: morphology.image_stats(_word_pixels(image), sigma_mode), images))


def vote_predictions(images, stats, alpha=config.ALPHA):
    predictions = {}
    for image, image_stats in zip(images, stats):
        try:
            labels = morphology.vote(image_stats, alpha)
        except DatasetError:
            logging.warning(f"{image.file}: no measurable words, labelling all non-bold")
            labels = np.zeros(len(image.words), dtype=np.int64)
        for i, label in enumerate(labels):
            predictions[(image.file, i)] = int(label)
    return predictions


# --- rock-paper-scissors --------------------------------------------------------------

def rps_scores(model, games, batch_size=config.BATCH_SIZE):
    """(sequence accuracy, element accuracy) of thresholded P(win) against the game targets."""
    if not games:
        raise DatasetError("No games to score")
    sequences = [game.to_sequence(model.config) for game in games]
    probs = sequence_probabilities(model, sequences, batch_size)
    predicted = np.array([p >= config.AGGREGATION_THRESHOLD for p in probs], dtype=np.int64)
    targets = np.array([game.targets for game in games], dtype=np.int64)
    hits = predicted == targets
    return float(hits.all(axis=1).mean()), float(hits.mean())


# --- annotation -----------------------------------------------------------------------

def annotate(image, boxes, labels, stroke=config.ANNOTATION_STROKE):
    """Copy of an RGB image with box outlines: blue for bold, green for non-bold."""
    out = np.array(image, dtype=np.uint8, copy=True)
    if out.ndim == 2:
        out = np.repeat(out[..., None], 3, axis=2)
    for (x, y, w, h), label in zip(boxes, labels):
        colour = config.BOLD_COLOR if label else config.NON_BOLD_COLOR
        s_h, s_w = min(stroke, h), min(stroke, w)
        out[y:y + s_h, x:x + w] = colour
        out[y + h - s_h:y + h, x:x + w] = colour
        out[y:y + h, x:x + s_w] = colour
        out[y:y + h, x + w - s_w:x + w] = colour
    return out


def read_boxes(path):
    """Word boxes from JSON: a list of [x, y, w, h] or {"boxes": [...]}."""
    payload = storage.read_json(path)
    boxes = payload.get('boxes') if isinstance(payload, dict) else payload
    if not isinstance(boxes, list):
        raise ValidationError(f"{path} must hold a list of [x, y, w, h] boxes")
    parsed = []
    for i, box in enumerate(boxes):
        if not (isinstance(box, list) and len(box) == 4 and all(isinstance(v, int) for v in box)):
            raise ValidationError(f"{path}: box {i} must be four integers, got {box!r}")
        parsed.append(tuple(box))
    return parsed


def predict_file(model, image_path, boxes_path, annotate_path=None):
    """Labels the boxed words of one PPM; optionally writes the annotated image."""
    image = storage.read_ppm(image_path)
    boxes = read_boxes(boxes_path)
    storage.check_boxes(boxes, image.shape[1], image.shape[0])
    patches = word_patches(image, boxes, image_id=os.path.basename(image_path))
    words = predict_patches(model, patches)
    results = []
    for patch in patches:
        probability, label = words[patch.word_id]
        results.append({'box': list(patch.box), 'label': int(label), 'probability': round(probability, 6)})
    if annotate_path:
        storage.write_ppm(annotate_path, annotate(image, boxes, [r['label'] for r in results]))
        logging.info(f"Annotated image written to {annotate_path}")
    return results
