import logging
import os
import platform
from datetime import datetime

import numpy as np
import scipy
import pandas as pd
from dotenv import load_dotenv

from shared import config
from shared.exceptions import ConfigError, DatasetError, DatasetIOError
from shared.models import RunConfig
from consent.modules.network import ConsentModel, load_model, save_model
from consent.services import storage, synth_data
from consent.scripts import evaluate, predict, train


class BoldWordClassifier:
    """
    Wires dataset generation, training, evaluation, morphology voting, prediction
    and the ablation grid behind one object configured by a RunConfig.
    """

    def __init__(self, run_config=None):
        load_dotenv()
        self.run_config = run_config or RunConfig()
        logging.info(f"BoldWordClassifier initialized ({synth_data.worker_count()} worker threads).")

    # --- bookkeeping -------------------------------------------------------------------

    def write_run_manifest(self, out_dir, command, extra=None, file_name=config.RUN_MANIFEST_NAME):
        """Effective configuration of this invocation, next to its outputs."""
        if not out_dir:
            return None
        os.makedirs(out_dir, exist_ok=True)
        payload = {
            'command': command,
            'config': self.run_config.to_dict(),
            'versions': {'python': platform.python_version(), 'numpy': np.__version__,
                         'scipy': scipy.__version__, 'pandas': pd.__version__},
        }
        payload.update(extra or {})
        path = os.path.join(out_dir, file_name)
        storage.write_json(path, payload)
        return path

    def _split(self, data_dir, split):
        images = synth_data.load_split(data_dir, split)
        if not images:
            raise DatasetError(f"Split '{split}' of {data_dir} is empty")
        return images

    # --- commands ----------------------------------------------------------------------

    def generate(self, out_dir, rps=False):
        cfg = self.run_config.synth
        if rps:
            result = synth_data.generate_rps(cfg, out_dir=out_dir)
            frame = pd.DataFrame([{'split': g.split, 'outcome': 'draw' if sum(g.targets) == 0 else 'win'}
                                  for g in result])
            summary = frame.groupby(['split', 'outcome']).size().unstack(fill_value=0)
            path = os.path.join(out_dir, config.RPS_MANIFEST_NAME)
        else:
            manifest = synth_data.generate_dataset(cfg, out_dir)
            summary = synth_data.dataset_summary(manifest)
            path = os.path.join(out_dir, config.MANIFEST_NAME)
        self.write_run_manifest(out_dir, 'gen', {'rps': rps})
        return path, summary

    def train(self, data_dir, out_dir):
        started = datetime.now()
        if not os.path.isdir(data_dir):
            raise DatasetIOError(f"Dataset directory not found: {data_dir}")
        model = ConsentModel.initialize(self.run_config.model)
        logging.info(f"Model has {model.parameter_count()} parameters")
        model, log = train.train(model, self._split(data_dir, 'train'), self._split(data_dir, 'val'),
                                 self.run_config.train, out_dir)
        path = os.path.join(out_dir, config.MODEL_FILE_NAME)
        save_model(model, path)
        self.write_run_manifest(out_dir, 'train', {'data': data_dir, 'best_epoch': log.best_epoch,
                                                   'best_val_f1': log.best_score})
        logging.info(f"Training finished in {datetime.now() - started}; best epoch {log.best_epoch}")
        return path, log

    def train_rps(self, data_dir, out_dir):
        model = ConsentModel.initialize(self.run_config.model)
        model, log = train.train_rps(model, synth_data.load_rps(data_dir), self.run_config.train, out_dir)
        path = os.path.join(out_dir, config.MODEL_FILE_NAME)
        save_model(model, path)
        self.write_run_manifest(out_dir, 'train', {'data': data_dir, 'rps': True, 'best_epoch': log.best_epoch})
        return path, log

    def evaluate(self, data_dir, model_path=None, baseline=False, alpha=None, split='test',
                 truth_as_predictions=False):
        edges = self.run_config.eval.bucket_edges
        images = self._split(data_dir, split)
        if truth_as_predictions:
            return evaluate.evaluate_truth(images, edges)
        if baseline:
            morph = self.run_config.morphology
            if alpha is None:
                alpha = train.validate_alpha(self._split(data_dir, 'val'), morph.alpha_grid, morph.sigma_mode)
                logging.info(f"Validated alpha = {alpha}")
            return evaluate.evaluate_baseline(images, alpha, morph.sigma_mode, edges)
        if not model_path:
            raise ConfigError("eval needs --model unless --baseline-vote is given")
        return evaluate.evaluate_consent(load_model(model_path), images, 'consent', edges)

    def evaluate_rps(self, data_dir, model_path, split='test'):
        games = synth_data.load_rps(data_dir, split=split)
        if not games:
            raise DatasetError(f"No '{split}' games in {data_dir}")
        return evaluate.evaluate_rps(load_model(model_path), games)

    def predict(self, model_path, image_path, boxes_path, annotate_path=None):
        return predict.predict_file(load_model(model_path), image_path, boxes_path, annotate_path)

    def ablate(self, data_dir, embed_dims=None, stacks=None):
        eval_cfg = self.run_config.eval
        return evaluate.ablate(self._split(data_dir, 'train'), self._split(data_dir, 'val'),
                               embed_dims or eval_cfg.embed_dims,
                               stacks if stacks is not None else eval_cfg.stacks,
                               self.run_config.train, self.run_config.model)
