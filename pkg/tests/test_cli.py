import json
import os

import numpy as np
import pytest

from conftest import TINY_MODEL, TINY_SYNTH
from shared import config
from consent.main import main
from consent.modules.network import ConsentModel, save_model
from consent.scripts.predict import annotate
from consent.services import storage


@pytest.fixture
def cli_config(tmp_path):
    path = tmp_path / 'run.json'
    synth = {**TINY_SYNTH, 'glyphs_per_word': list(TINY_SYNTH['glyphs_per_word']),
             'base_stroke_range': list(TINY_SYNTH['base_stroke_range']),
             'illumination': False, 'noise': False, 'rotation': False, 'polarity_inversion_prob': 0.0}
    path.write_text(json.dumps({'model': TINY_MODEL, 'synth': synth,
                                'train': {'epochs': 1, 'batch_size': 2}}))
    return str(path)


@pytest.fixture
def dataset(tmp_path, cli_config):
    out = str(tmp_path / 'data')
    assert main(['gen', '--config', cli_config, '--out', out, '--quiet']) == 0
    return out


@pytest.fixture
def model_path(tmp_path):
    from shared.models import ModelConfig
    path = str(tmp_path / 'model.cnsnt')
    save_model(ConsentModel.initialize(ModelConfig(**TINY_MODEL)), path)
    return path


def last_json(capsys):
    return json.loads(capsys.readouterr().out)


class TestGen:
    def test_same_seed_same_dataset(self, tmp_path, cli_config):
        for name in ('a', 'b'):
            assert main(['gen', '--config', cli_config, '--seed', '9', '--images', '3',
                         '--out', str(tmp_path / name), '--quiet']) == 0
        for rel in ('manifest.json', 'images/00000.ppm', 'images/00002.ppm'):
            assert (tmp_path / 'a' / rel).read_bytes() == (tmp_path / 'b' / rel).read_bytes()
        manifest = json.loads((tmp_path / 'a' / 'manifest.json').read_text())
        assert manifest['seed'] == 9 and len(manifest['images']) == 3
        assert (tmp_path / 'a' / config.RUN_MANIFEST_NAME).exists()

    def test_zero_images_is_a_config_error(self, tmp_path, cli_config):
        assert main(['gen', '--config', cli_config, '--images', '0', '--out', str(tmp_path / 'x')]) == 2

    def test_rock_paper_scissors(self, tmp_path, cli_config):
        out = tmp_path / 'rps'
        assert main(['gen', '--config', cli_config, '--rps', '--images', '9', '--out', str(out), '--quiet']) == 0
        manifest = json.loads((out / config.RPS_MANIFEST_NAME).read_text())
        assert len(manifest['games']) == 9
        assert (out / 'icons' / 'game00000_1.ppm').exists()

    def test_unknown_config_key(self, tmp_path):
        bad = tmp_path / 'bad.json'
        bad.write_text(json.dumps({'model': {'bogus': 1}}))
        assert main(['gen', '--config', str(bad), '--out', str(tmp_path / 'x')]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(['gen', '--config', str(tmp_path / 'absent.json'), '--out', str(tmp_path / 'x')]) == 2


class TestTrainAndEval:
    def test_missing_dataset(self, tmp_path, cli_config):
        assert main(['train', '--config', cli_config, '--data', str(tmp_path / 'absent'),
                     '--out', str(tmp_path / 'm')]) == 3

    def test_truth_as_predictions(self, dataset, capsys):
        capsys.readouterr()
        assert main(['eval', '--data', dataset, '--split', 'train', '--truth-as-predictions', '--quiet']) == 0
        report = last_json(capsys)
        assert report['word_accuracy'] == 1.0 and report['image_accuracy'] == 1.0
        assert report['fp'] == 0 and report['fn'] == 0
        if report['tp']:
            assert report['precision'] == report['recall'] == report['f1'] == 1.0

    def test_eval_needs_a_model(self, dataset):
        assert main(['eval', '--data', dataset, '--quiet']) == 2

    def test_train_then_eval(self, tmp_path, dataset, cli_config, capsys):
        out = tmp_path / 'model'
        assert main(['train', '--config', cli_config, '--data', dataset, '--out', str(out), '--quiet']) == 0
        assert (out / config.MODEL_FILE_NAME).exists()
        assert len((out / config.TRAIN_LOG_NAME).read_text().splitlines()) == 1
        capsys.readouterr()
        report_path = tmp_path / 'report.json'
        assert main(['eval', '--data', dataset, '--model', str(out / config.MODEL_FILE_NAME),
                     '--report', str(report_path), '--quiet']) == 0
        report = json.loads(report_path.read_text())
        assert report['method'] == 'consent'
        assert report == last_json(capsys)
        assert json.loads((tmp_path / f"report.{config.RUN_MANIFEST_NAME}").read_text())['command'] == 'eval'

    def test_baseline_vote(self, dataset, capsys):
        capsys.readouterr()
        assert main(['baseline-vote', '--data', dataset, '--alpha', '1.0', '--quiet']) == 0
        assert last_json(capsys)['method'].startswith('morphology_vote')
        run = json.loads(open(os.path.join(dataset, f"baseline-vote.{config.RUN_MANIFEST_NAME}")).read())
        assert run['command'] == 'baseline-vote' and run['data'] == dataset
        assert json.loads(open(os.path.join(dataset, config.RUN_MANIFEST_NAME)).read())['command'] == 'gen'

    def test_manifest_into_out(self, tmp_path, dataset):
        out = tmp_path / 'runs'
        assert main(['eval', '--data', dataset, '--split', 'train', '--truth-as-predictions', '--out', str(out),
                     '--quiet']) == 0
        assert json.loads((out / config.RUN_MANIFEST_NAME).read_text())['command'] == 'eval'

    def test_baseline_vote_validates_alpha(self, dataset, capsys):
        capsys.readouterr()
        assert main(['eval', '--data', dataset, '--baseline-vote', '--quiet']) == 0
        assert 'alpha=' in last_json(capsys)['method']


class TestPredict:
    def test_labels_every_box(self, tmp_path, dataset, model_path, capsys):
        manifest = json.loads(open(os.path.join(dataset, config.MANIFEST_NAME)).read())
        entry = manifest['images'][0]
        boxes = tmp_path / 'boxes.json'
        boxes.write_text(json.dumps({'boxes': [w['box'] for w in entry['words']]}))
        annotated = tmp_path / 'annotated.ppm'
        capsys.readouterr()
        assert main(['predict', '--model', model_path, '--image', os.path.join(dataset, entry['file']),
                     '--boxes', str(boxes), '--annotate', str(annotated), '--quiet']) == 0
        results = last_json(capsys)
        assert [r['box'] for r in results] == [w['box'] for w in entry['words']]
        assert all(r['label'] in (0, 1) and 0.0 <= r['probability'] <= 1.0 for r in results)
        assert storage.read_ppm(str(annotated)).shape == (entry['height'], entry['width'], 3)
        run = json.loads((tmp_path / f"annotated.{config.RUN_MANIFEST_NAME}").read_text())
        assert run['command'] == 'predict' and run['boxes'] == str(boxes)

    def test_no_boxes(self, tmp_path, model_path, capsys):
        image = tmp_path / 'page.ppm'
        storage.write_ppm(str(image), np.full((20, 30), 200, dtype=np.uint8))
        boxes = tmp_path / 'boxes.json'
        boxes.write_text('[]')
        capsys.readouterr()
        assert main(['predict', '--model', model_path, '--image', str(image), '--boxes', str(boxes), '--quiet']) == 0
        assert last_json(capsys) == []

    def test_box_outside_image(self, tmp_path, model_path):
        image = tmp_path / 'page.ppm'
        storage.write_ppm(str(image), np.full((20, 30), 200, dtype=np.uint8))
        boxes = tmp_path / 'boxes.json'
        boxes.write_text('[[25, 0, 10, 10]]')
        assert main(['predict', '--model', model_path, '--image', str(image), '--boxes', str(boxes)]) == 2

    def test_missing_model(self, tmp_path):
        assert main(['predict', '--model', str(tmp_path / 'absent.cnsnt'), '--image', 'x.ppm',
                     '--boxes', 'b.json']) == 3

    def test_annotation_colours(self):
        image = np.full((20, 30, 3), 255, dtype=np.uint8)
        out = annotate(image, [(0, 0, 10, 10), (12, 5, 8, 8)], [1, 0])
        assert tuple(out[0, 5]) == config.BOLD_COLOR
        assert tuple(out[5, 12]) == config.NON_BOLD_COLOR
        assert tuple(out[5, 5]) == (255, 255, 255)
        assert tuple(image[0, 5]) == (255, 255, 255)


class TestRockPaperScissorsCommands:
    def test_train_and_score(self, tmp_path, cli_config, capsys):
        data, out = tmp_path / 'rps', tmp_path / 'rps_model'
        assert main(['gen', '--config', cli_config, '--rps', '--images', '12', '--out', str(data), '--quiet']) == 0
        assert main(['train', '--config', cli_config, '--rps', '--data', str(data), '--out', str(out),
                     '--quiet']) == 0
        capsys.readouterr()
        assert main(['eval-rps', '--model', str(out / config.MODEL_FILE_NAME), '--data', str(data), '--quiet']) == 0
        scores = last_json(capsys)
        assert 0.0 <= scores['sequence_accuracy'] <= scores['element_accuracy'] <= 1.0
        assert json.loads((data / f"eval-rps.{config.RUN_MANIFEST_NAME}").read_text())['command'] == 'eval-rps'


class TestAblate:
    def test_grid_with_a_failing_cell(self, tmp_path, dataset, cli_config, capsys):
        capsys.readouterr()
        assert main(['ablate', '--config', cli_config, '--data', dataset, '--embed-dims', '8,7',
                     '--stacks', '1', '--quiet']) == 0
        result = last_json(capsys)
        assert [c['embed_dim'] for c in result['cells']] == [8, 7]
        assert result['failed'] == [[1, 7]]
        assert result['best'] == [1, 8]
