"""
File codecs: binary PPM images, the dataset manifest, CNSNT model files and
JSON / JSON-lines reports.
"""
import json
import logging
import os
import struct

import numpy as np

from shared import config
from shared.exceptions import (
    BadMagicError, BoxOutOfBoundsError, DatasetIOError, ManifestError, MissingImageError, ModelFormatError,
    TruncatedModelError, VersionMismatchError,
)
from shared.models import ModelConfig

MODEL_MAGIC = b'CNSNT'
MODEL_VERSION = 1
HEADER_FIELDS = ('block_height', 'block_width', 'channels', 'embed_dim', 'num_heads',
                 'num_stacks', 'ffn_hidden', 'max_seq_len')
SPLITS = ('train', 'test', 'val')


# --- PPM ------------------------------------------------------------------------------

def write_ppm(path, image):
    """Writes an 8-bit RGB (or grayscale, replicated to RGB) array as binary P6."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"PPM needs [h, w, 3] pixels, got {image.shape}")
    height, width = image.shape[:2]
    with open(path, 'wb') as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode('ascii'))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def _header_tokens(data):
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b'#':
            while pos < len(data) and data[pos:pos + 1] != b'\n':
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetIOError("Truncated PPM header")
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1


def read_ppm(path):
    if not os.path.exists(path):
        raise MissingImageError(f"Image file not found: {path}")
    with open(path, 'rb') as fh:
        data = fh.read()
    if data[:2] != b'P6':
        raise DatasetIOError(f"{path} is not a binary PPM (P6) file")
    try:
        (width, height, maxval), offset = _header_tokens(data)
    except ValueError as e:
        raise DatasetIOError(f"Malformed PPM header in {path}: {e}") from e
    if maxval != 255:
        raise DatasetIOError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    payload = data[offset:offset + width * height * 3]
    if len(payload) != width * height * 3:
        raise DatasetIOError(f"{path}: pixel data truncated")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


# --- JSON -----------------------------------------------------------------------------

def write_json(path, payload):
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write('\n')


def read_json(path):
    try:
        with open(path, encoding='utf-8') as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise DatasetIOError(f"File not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path} is not valid JSON: {e}") from e


def append_jsonl(path, record):
    with open(path, 'a', encoding='utf-8') as fh:
        fh.write(json.dumps(record, sort_keys=True, allow_nan=False) + '\n')


# --- manifest -------------------------------------------------------------------------

def validate_manifest(manifest):
    """Schema check of the documented keys; extra keys are allowed."""
    if not isinstance(manifest, dict) or not isinstance(manifest.get('images'), list):
        raise ManifestError("Manifest must be an object with an 'images' list")
    for i, entry in enumerate(manifest['images']):
        if not isinstance(entry, dict) or not isinstance(entry.get('file'), str):
            raise ManifestError(f"images[{i}] needs a string 'file'")
        if entry.get('split') not in SPLITS:
            raise ManifestError(f"images[{i}] split must be one of {SPLITS}, got {entry.get('split')!r}")
        words = entry.get('words')
        if not isinstance(words, list):
            raise ManifestError(f"images[{i}] needs a 'words' list")
        for j, word in enumerate(words):
            box = word.get('box') if isinstance(word, dict) else None
            if not (isinstance(box, list) and len(box) == 4 and all(isinstance(v, int) for v in box)):
                raise ManifestError(f"images[{i}].words[{j}].box must be four integers")
            if word.get('label') not in (0, 1):
                raise ManifestError(f"images[{i}].words[{j}].label must be 0 or 1")
    return manifest


def check_boxes(boxes, width, height, where=''):
    for j, (x, y, w, h) in enumerate(boxes):
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > width or y + h > height:
            raise BoxOutOfBoundsError(f"{where}box {j} {[x, y, w, h]} outside image of size {width}x{height}")


def write_manifest(out_dir, manifest, name=config.MANIFEST_NAME):
    path = os.path.join(out_dir, name)
    write_json(path, manifest)
    return path


def read_manifest(data_dir, name=config.MANIFEST_NAME):
    if not os.path.isdir(data_dir):
        raise DatasetIOError(f"Dataset directory not found: {data_dir}")
    path = os.path.join(data_dir, name)
    if not os.path.exists(path):
        raise DatasetIOError(f"No {name} in {data_dir}")
    return read_json(path)


# --- model files ----------------------------------------------------------------------

def encode_model(model_config, tensors):
    """CNSNT v1 bytes for a config and an ordered name -> float64 array mapping."""
    parts = [MODEL_MAGIC, bytes([MODEL_VERSION]),
             struct.pack('<8i', *(getattr(model_config, f) for f in HEADER_FIELDS)),
             struct.pack('<I', len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode('utf-8')
        array = np.asarray(array, dtype='<f8')
        parts.append(struct.pack('<H', len(encoded)) + encoded)
        parts.append(struct.pack('<B', array.ndim) + struct.pack(f'<{array.ndim}I', *array.shape))
        parts.append(array.tobytes(order='C'))
    return b''.join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, count, what):
        if self.pos + count > len(self.data):
            raise TruncatedModelError(f"Model file ends inside {what}")
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_model(data, model_config_cls=ModelConfig):
    """Inverse of ``encode_model``: returns (ModelConfig, ordered name -> array)."""
    reader = _Reader(data)
    magic = data[:len(MODEL_MAGIC)]
    if magic != MODEL_MAGIC:
        raise BadMagicError(f"Not a CNSNT model file (magic {magic!r})")
    reader.pos = len(MODEL_MAGIC)
    (version,) = reader.unpack('<B', 'version byte')
    if version != MODEL_VERSION:
        raise VersionMismatchError(f"Model file version {version}, this build reads version {MODEL_VERSION}")
    header = dict(zip(HEADER_FIELDS, reader.unpack('<8i', 'config header')))
    model_config = model_config_cls(**header).validate()
    (count,) = reader.unpack('<I', 'tensor count')
    tensors = {}
    for index in range(count):
        what = f"tensor {index + 1} of {count}"
        (name_len,) = reader.unpack('<H', what)
        try:
            name = reader.take(name_len, what).decode('utf-8')
        except UnicodeDecodeError as e:
            raise ModelFormatError(f"Tensor name of {what} is not UTF-8: {e}") from e
        (rank,) = reader.unpack('<B', what)
        dims = reader.unpack(f'<{rank}I', what)
        size = int(np.prod(dims)) if rank else 1
        payload = reader.take(size * 8, what)
        tensors[name] = np.frombuffer(payload, dtype='<f8').astype(np.float64).reshape(dims)
    if reader.pos != len(data):
        logging.warning(f"Ignoring {len(data) - reader.pos} trailing bytes after the last tensor")
    return model_config, tensors


def write_model_file(path, model_config, tensors):
    with open(path, 'wb') as fh:
        fh.write(encode_model(model_config, tensors))
    logging.info(f"Saved model with {len(tensors)} tensors to {path}")


def read_model_file(path):
    try:
        with open(path, 'rb') as fh:
            data = fh.read()
    except FileNotFoundError as e:
        raise DatasetIOError(f"Model file not found: {path}") from e
    return decode_model(data)
