import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from shared import config
from shared.exceptions import ConsentError, DatasetError
from shared.models import EvalConfig, ModelConfig, TrainConfig
from consent.modules import metrics
from consent.modules.network import ConsentModel
from consent.services.synth_data import worker_count
from consent.scripts.predict import baseline_stats, predict_images, rps_scores, truth_of, vote_predictions
from consent.scripts.train import train


def evaluate_consent(model, images, method='consent', bucket_edges=config.BOLD_RATIO_BUCKETS):
    images = list(images)
    if not images:
        raise DatasetError("No images to evaluate")
    return metrics.evaluate(predict_images(model, images), truth_of(images), method, bucket_edges)


def evaluate_baseline(images, alpha=config.ALPHA, sigma_mode=config.SIGMA_MODE,
                      bucket_edges=config.BOLD_RATIO_BUCKETS):
    images = list(images)
    if not images:
        raise DatasetError("No images to evaluate")
    predictions = vote_predictions(images, baseline_stats(images, sigma_mode), alpha)
    return metrics.evaluate(predictions, truth_of(images), f'morphology_vote(alpha={alpha})', bucket_edges)


def evaluate_truth(images, bucket_edges=config.BOLD_RATIO_BUCKETS):
    """Ground truth scored against itself; exercises the report path end to end."""
    images = list(images)
    truth = truth_of(images)
    predictions = {(image_id, i): label for image_id, labels in truth.items() for i, label in enumerate(labels)}
    return metrics.evaluate(predictions, truth, 'ground_truth', bucket_edges)


def evaluate_rps(model, games):
    sequence_accuracy, element_accuracy = rps_scores(model, games)
    return {'method': 'consent_rps', 'games': len(games),
            'sequence_accuracy': sequence_accuracy, 'element_accuracy': element_accuracy}


@dataclass
class AblationResult:
    grid: pd.DataFrame
    best: tuple = None
    failed: list = field(default_factory=list)

    def to_json(self):
        cells = [{'stacks': int(stacks), 'embed_dim': int(dim),
                  'f1': None if np.isnan(self.grid.loc[stacks, dim]) else float(self.grid.loc[stacks, dim])}
                 for stacks in self.grid.index for dim in self.grid.columns]
        return {'cells': cells, 'best': list(self.best) if self.best else None,
                'failed': [list(cell) for cell in self.failed]}


def ablate(train_images, val_images, embed_dims=None, stacks=None, train_cfg=None, model_cfg=None):
    """
    Trains one model per (stacks, embed_dim) cell and scores bold F1 on the
    validation images. Cell k (row-major) uses seed ``train_cfg.seed + k`` for both
    initialization and training; a cell that fails is NaN and listed in ``failed``.
    """
    eval_cfg = EvalConfig()
    embed_dims = tuple(embed_dims or eval_cfg.embed_dims)
    stacks = tuple(stacks if stacks is not None else eval_cfg.stacks)
    train_cfg = train_cfg or TrainConfig()
    model_cfg = model_cfg or ModelConfig()
    train_images, val_images = list(train_images), list(val_images)
    if not val_images:
        raise DatasetError("ablate needs a validation split")
    cells = [(t, d) for t in stacks for d in embed_dims]

    def run(index):
        t, d = cells[index]
        seed = train_cfg.seed + index
        try:
            cfg = ModelConfig.sized(d, t, **{k: v for k, v in model_cfg.to_dict().items()
                                             if k not in ('embed_dim', 'num_stacks', 'ffn_hidden', 'seed')},
                                    seed=seed)
            model = ConsentModel.initialize(cfg)
            model, _ = train(model, train_images, val_images, train_cfg.override(seed=seed))
            f1 = evaluate_consent(model, val_images).f1
            logging.info(f"Ablation cell stacks={t} embed={d}: F1 {f1:.4f}")
            return f1
        except ConsentError as e:
            logging.warning(f"Ablation cell stacks={t} embed={d} failed: {e}")
            return float('nan')

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        scores = list(pool.map(run, range(len(cells))))

    grid = pd.DataFrame(np.array(scores, dtype=np.float64).reshape(len(stacks), len(embed_dims)),
                        index=pd.Index(stacks, name='stacks'), columns=pd.Index(embed_dims, name='embed_dim'))
    failed = [cell for cell, score in zip(cells, scores) if np.isnan(score)]
    best = None
    if len(failed) < len(cells):
        best_index = int(np.nanargmax(scores))
        best = cells[best_index]
    return AblationResult(grid, best, failed)
