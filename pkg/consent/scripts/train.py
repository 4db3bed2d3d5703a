import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from shared import config
from shared.exceptions import ConfigError, DatasetError, NumericalError
from shared.models import MorphologyConfig, TrainConfig
from consent.modules import metrics
from consent.modules.autodiff import GradTape
from consent.modules.blocks import collate, image_sequences, word_blocks
from consent.modules.losses import loss_for
from consent.modules.network import save_model
from consent.services import storage
from consent.services.synth_data import worker_count
from consent.scripts.predict import baseline_stats, predict_images, rps_scores, truth_of, vote_predictions


class Adam:
    def __init__(self, params, cfg):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads):
        """grads: {parameter Tensor: gradient array}."""
        cfg = self.cfg
        self.step_count += 1
        correction1 = 1.0 - cfg.beta1 ** self.step_count
        correction2 = 1.0 - cfg.beta2 ** self.step_count
        for name, param in self.params.items():
            g = grads.get(param)
            if g is None:
                continue
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            param.data = param.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def clip_gradients(grads, max_norm):
    """Rescales all gradients together so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    factor = max_norm / norm
    return {key: g * factor for key, g in grads.items()}, norm


def train_step(model, optimizer, batch, loss_fn, clip_norm=config.CLIP_NORM):
    with GradTape() as tape:
        probs = model.forward(batch.blocks, batch.mask)
        loss = loss_fn(probs, batch.labels, batch.mask)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericalError(f"Loss became {value}")
    grads = tape.backward(loss, wrt=list(model.parameters().values()))
    grads, _ = clip_gradients(grads, clip_norm)
    optimizer.step(grads)
    return value


def fit_batch(model, batch, cfg=None, steps=50):
    """Repeated updates on one fixed batch; returns the loss before each step."""
    cfg = cfg or TrainConfig()
    optimizer = Adam(model.parameters(), cfg)
    loss_fn = loss_for(cfg)
    return [train_step(model, optimizer, batch, loss_fn, cfg.clip_norm) for _ in range(steps)]


def rng_digest(rng):
    state = json.dumps(rng.bit_generator.state, sort_keys=True, default=int)
    return hashlib.sha256(state.encode('utf-8')).hexdigest()[:16]


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = -1.0

    def to_frame(self):
        return pd.DataFrame(self.records, columns=['epoch', 'train_loss', 'val_score', 'wall_time', 'rng_digest'])

    @property
    def losses(self):
        return [r['train_loss'] for r in self.records]


def _fit(model, epoch_sequences, validate, cfg, out_dir, metric_name):
    """
    Shared loop: ``epoch_sequences(rng)`` builds the epoch's sequences, ``validate()``
    scores the current parameters; the best-scoring parameters are restored at the end.
    """
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.parameters(), cfg)
    loss_fn = loss_for(cfg)
    log = TrainLog()
    best_state = None
    log_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, config.TRAIN_LOG_NAME)
        if os.path.exists(log_path):
            os.remove(log_path)

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        sequences = epoch_sequences(rng)
        order = rng.permutation(len(sequences))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = collate([sequences[i] for i in order[start:start + cfg.batch_size]])
            losses.append(train_step(model, optimizer, batch, loss_fn, cfg.clip_norm))
        score = validate()
        record = {'epoch': epoch, 'train_loss': float(np.mean(losses)), 'val_score': float(score),
                  'wall_time': round(time.perf_counter() - started, 3), 'rng_digest': rng_digest(rng)}
        log.records.append(record)
        logging.info(f"Epoch {epoch}/{cfg.epochs}: loss {record['train_loss']:.4f}, val {metric_name} {score:.4f}")
        if log_path:
            storage.append_jsonl(log_path, record)

        if score > log.best_score:
            log.best_score, log.best_epoch = float(score), epoch
            best_state = {name: p.data.copy() for name, p in model.parameters().items()}
            if out_dir:
                save_model(model, os.path.join(out_dir, 'best.cnsnt'))
        if out_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_model(model, os.path.join(out_dir, f'checkpoint_epoch{epoch}.cnsnt'))

    if best_state is not None:
        for name, param in model.parameters().items():
            param.data = best_state[name]
    return model, log


def _prepare_images(model, images):
    """Per image: (patches, per-word blocks); blocks are cut once on a worker pool."""
    def prepare(image):
        patches = image.patches()
        return patches, word_blocks(patches, model.config)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(prepare, images))


def train(model, train_images, val_images, cfg=None, out_dir=None):
    """
    Adam on shuffled, padded batches of image-local block sequences; keeps the
    parameters with the best validation bold-class F1. Returns (model, TrainLog).
    """
    cfg = (cfg or TrainConfig()).validate()
    train_images, val_images = list(train_images), list(val_images)
    if not train_images or not any(image.words for image in train_images):
        raise DatasetError("Training split is empty")
    if not val_images:
        raise DatasetError("Validation split is empty")
    prepared = _prepare_images(model, train_images)
    truth = truth_of(val_images)
    logging.info(f"Training on {len(train_images)} images, validating on {len(val_images)}")

    def epoch_sequences(rng):
        sequences = []
        for patches, per_word in prepared:
            sequences.extend(image_sequences(patches, model.config, cfg.chunking, rng, per_word))
        return sequences

    def validate():
        return metrics.evaluate(predict_images(model, val_images, cfg.batch_size), truth).f1

    return _fit(model, epoch_sequences, validate, cfg, out_dir, 'F1')


def train_rps(model, games, cfg=None, out_dir=None):
    """The same loop on two-element game sequences; selection by validation sequence accuracy."""
    cfg = (cfg or TrainConfig()).validate()
    train_games = [g for g in games if g.split == 'train']
    val_games = [g for g in games if g.split == 'val']
    if not train_games:
        raise DatasetError("No training games")
    if not val_games:
        raise DatasetError("No validation games")
    sequences = [g.to_sequence(model.config) for g in train_games]
    return _fit(model, lambda rng: sequences, lambda: rps_scores(model, val_games, cfg.batch_size)[0],
                cfg, out_dir, 'sequence accuracy')


def validate_alpha(val_images, grid=None, sigma_mode=None):
    """Grid value with the best validation bold F1; ties go to the smaller alpha."""
    morph = MorphologyConfig()
    grid = morph.alpha_grid if grid is None else grid
    if not len(grid):
        raise ConfigError("alpha grid is empty")
    val_images = list(val_images)
    if not val_images:
        raise DatasetError("Validation split is empty")
    stats = baseline_stats(val_images, sigma_mode or morph.sigma_mode)
    truth = truth_of(val_images)
    best_alpha, best_f1 = None, -1.0
    for alpha in sorted(grid):
        f1 = metrics.evaluate(vote_predictions(val_images, stats, alpha), truth).f1
        logging.info(f"alpha {alpha}: validation F1 {f1:.4f}")
        if f1 > best_f1:
            best_alpha, best_f1 = float(alpha), f1
    return best_alpha
