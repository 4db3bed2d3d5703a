import math

import numpy as np
import pytest

from shared.exceptions import ValidationError
from shared.models import TrainConfig
from consent.modules import losses
from consent.modules.autodiff import Tensor


def probs_of(p_bold):
    p = np.asarray(p_bold, dtype=float)
    return Tensor(np.stack([1.0 - p, p], axis=-1))


class TestBce:
    def test_coin_flip(self):
        loss = losses.bce_loss(probs_of([0.5]), [1], [True])
        assert loss.item() == pytest.approx(math.log(2))

    def test_perfect_prediction_is_zero(self):
        assert losses.bce_loss(probs_of([1.0, 0.0]), [1, 0], [True, True]).item() == 0.0

    def test_masked_elements_ignored(self):
        loss = losses.bce_loss(probs_of([[0.5, 0.01]]), [[1, 1]], [[True, False]])
        assert loss.item() == pytest.approx(math.log(2))

    def test_no_unmasked_elements(self):
        with pytest.raises(ValidationError):
            losses.bce_loss(probs_of([0.3]), [1], [False])

    def test_zero_probability_is_clamped(self):
        assert losses.bce_loss(probs_of([0.0]), [1], [True]).item() == pytest.approx(-math.log(1e-12))


class TestFocal:
    def test_gamma_zero_is_half_bce(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.01, 0.99, 1000)
        labels = rng.integers(0, 2, 1000)
        mask = np.ones(1000, dtype=bool)
        focal = losses.focal_loss(probs_of(p), labels, mask, gamma=0.0, alpha_bold=0.5).item()
        bce = losses.bce_loss(probs_of(p), labels, mask).item()
        assert focal == pytest.approx(0.5 * bce, rel=1e-12)

    def test_unit_weight_value(self):
        loss = losses.focal_loss(probs_of([0.5]), [1], [True], gamma=2.0, alpha_bold=None)
        assert loss.item() == pytest.approx(0.25 * math.log(2))

    def test_class_weights(self):
        bold = losses.focal_loss(probs_of([0.5]), [1], [True], gamma=2.0, alpha_bold=0.75).item()
        regular = losses.focal_loss(probs_of([0.5]), [0], [True], gamma=2.0, alpha_bold=0.75).item()
        assert bold == pytest.approx(0.75 * 0.25 * math.log(2))
        assert regular == pytest.approx(0.25 * 0.25 * math.log(2))

    def test_perfect_prediction_is_zero(self):
        assert losses.focal_loss(probs_of([0.0, 1.0]), [0, 1], [True, True]).item() == 0.0

    def test_easy_examples_down_weighted(self):
        easy = losses.focal_loss(probs_of([0.9]), [1], [True], alpha_bold=None).item()
        hard = losses.focal_loss(probs_of([0.1]), [1], [True], alpha_bold=None).item()
        assert easy / hard < (-math.log(0.9)) / (-math.log(0.1))

    @pytest.mark.parametrize('gamma, alpha', [(-1.0, 0.5), (2.0, 0.0), (2.0, 1.0)])
    def test_invalid_parameters(self, gamma, alpha):
        with pytest.raises(ValidationError):
            losses.focal_loss(probs_of([0.5]), [1], [True], gamma=gamma, alpha_bold=alpha)


class TestLossFor:
    def test_selects_by_name(self):
        probs = probs_of([0.5, 0.2])
        bce = losses.loss_for(TrainConfig(loss='bce'))(probs, [1, 0], [True, True]).item()
        assert bce == pytest.approx(losses.bce_loss(probs, [1, 0], [True, True]).item())
        focal = losses.loss_for(TrainConfig(loss='focal', focal_gamma=0.0, focal_alpha_bold=0.5))
        assert focal(probs, [1, 0], [True, True]).item() == pytest.approx(0.5 * bce)
