import json

import numpy as np
import pandas as pd
import pytest

from shared.exceptions import DatasetError, ValidationError
from consent.modules.morphology import ImageThicknessStats, ThicknessProfile
from consent.services import synth_data
from consent.scripts import evaluate, predict


class TestPredictHelpers:
    def test_one_prediction_per_word(self, tiny_dataset, tiny_model):
        images = synth_data.load_split(tiny_dataset, 'train')
        predictions = predict.predict_images(tiny_model, images)
        assert set(predictions) == {(image.file, i) for image in images for i in range(len(image.words))}
        assert set(predictions.values()) <= {0, 1}

    def test_batch_size_does_not_change_probabilities(self, tiny_dataset, tiny_model):
        patches = synth_data.load_split(tiny_dataset, 'train')[0].patches()
        one = predict.predict_patches(tiny_model, patches, batch_size=1)
        many = predict.predict_patches(tiny_model, patches, batch_size=8)
        assert one == many

    def test_no_patches(self, tiny_model):
        assert predict.predict_patches(tiny_model, []) == {}

    def test_unmeasurable_image_votes_regular(self):
        image = synth_data.SynthImage('blank', np.zeros((4, 4, 3), dtype=np.uint8),
                                      [synth_data.WordRecord((0, 0, 2, 2), 1)])
        stats = [ImageThicknessStats([ThicknessProfile(np.empty(0), 0)])]
        assert predict.vote_predictions([image], stats, 1.0) == {('blank', 0): 0}

    @pytest.mark.parametrize('payload', ['{"boxes": 3}', '[[1, 2, 3]]', '[["a", 0, 1, 1]]'])
    def test_bad_boxes_file(self, tmp_path, payload):
        path = tmp_path / 'boxes.json'
        path.write_text(payload)
        with pytest.raises(ValidationError):
            predict.read_boxes(str(path))

    def test_boxes_file_forms(self, tmp_path):
        (tmp_path / 'a.json').write_text('[[0, 0, 2, 2]]')
        (tmp_path / 'b.json').write_text(json.dumps({'boxes': [[0, 0, 2, 2]]}))
        assert predict.read_boxes(str(tmp_path / 'a.json')) == predict.read_boxes(str(tmp_path / 'b.json'))

    def test_rps_scores_need_games(self, tiny_model):
        with pytest.raises(DatasetError):
            predict.rps_scores(tiny_model, [])


class TestEvaluators:
    def test_truth_scores_perfectly(self, tiny_dataset):
        report = evaluate.evaluate_truth(synth_data.load_split(tiny_dataset, 'train'))
        assert report.word_accuracy == 1.0 and report.image_accuracy == 1.0
        assert report.fp == report.fn == 0

    def test_baseline_covers_every_word(self, tiny_dataset):
        images = synth_data.load_split(tiny_dataset, 'train')
        report = evaluate.evaluate_baseline(images, alpha=1.0)
        assert report.words == sum(len(image.words) for image in images)
        assert report.method == 'morphology_vote(alpha=1.0)'

    def test_consent_report(self, tiny_dataset, tiny_model):
        report = evaluate.evaluate_consent(tiny_model, synth_data.load_split(tiny_dataset, 'test'))
        assert report.method == 'consent'
        assert 0.0 <= report.f1 <= 1.0

    def test_empty_split(self, tiny_model):
        with pytest.raises(DatasetError):
            evaluate.evaluate_consent(tiny_model, [])

    def test_rps_report(self, tiny_model, tiny_synth_config):
        games = synth_data.generate_rps(tiny_synth_config, games=3)
        result = evaluate.evaluate_rps(tiny_model, games)
        assert result['games'] == 3
        assert result['sequence_accuracy'] <= result['element_accuracy']


class TestAblationResult:
    def test_json_marks_failed_cells(self):
        grid = pd.DataFrame([[0.5, np.nan]], index=pd.Index([2], name='stacks'),
                            columns=pd.Index([32, 64], name='embed_dim'))
        payload = evaluate.AblationResult(grid, (2, 32), [(2, 64)]).to_json()
        assert payload['cells'] == [{'stacks': 2, 'embed_dim': 32, 'f1': 0.5},
                                    {'stacks': 2, 'embed_dim': 64, 'f1': None}]
        assert payload['best'] == [2, 32] and payload['failed'] == [[2, 64]]
        json.dumps(payload, allow_nan=False)
