import numpy as np

from shared import config
from shared.exceptions import ValidationError
from . import autodiff as ad


def _true_class_prob(probs, labels, mask):
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValidationError("Loss needs at least one unmasked element")
    labels = np.where(mask, np.asarray(labels), 0).astype(np.int64)
    onehot = np.eye(2)[labels]
    p_true = ad.tensor_sum(ad.mul(probs, ad.Tensor(onehot)), axis=-1)
    # Only the lower clamp is active for p_t: perfect predictions score exactly 0.
    return ad.clip(p_true, config.PROB_CLAMP, 1.0), labels, mask, count


def bce_loss(probs, labels, mask):
    """Mean over unmasked elements of -log p(true class). probs: Tensor [..., 2]."""
    p_true, _, mask, count = _true_class_prob(probs, labels, mask)
    nll = ad.scale(ad.log(p_true), -1.0)
    return ad.scale(ad.tensor_sum(ad.mul(nll, ad.Tensor(mask.astype(np.float64)))), 1.0 / count)


def focal_loss(probs, labels, mask, gamma=config.FOCAL_GAMMA, alpha_bold=config.FOCAL_ALPHA_BOLD):
    """
    Mean over unmasked elements of -w (1 - p_t)^gamma log p_t with w = alpha_bold for
    bold targets and 1 - alpha_bold otherwise; ``alpha_bold=None`` gives unit weights.
    """
    if gamma < 0:
        raise ValidationError("focal gamma must be >= 0")
    if alpha_bold is not None and not 0.0 < alpha_bold < 1.0:
        raise ValidationError("alpha_bold must lie in (0, 1)")
    p_true, labels, mask, count = _true_class_prob(probs, labels, mask)
    if alpha_bold is None:
        weights = mask.astype(np.float64)
    else:
        weights = np.where(labels == 1, alpha_bold, 1.0 - alpha_bold) * mask
    modulation = ad.power(ad.sub(1.0, p_true), gamma)
    nll = ad.scale(ad.log(p_true), -1.0)
    per_element = ad.mul(ad.mul(modulation, nll), ad.Tensor(weights))
    return ad.scale(ad.tensor_sum(per_element), 1.0 / count)


def loss_for(train_config):
    """The loss callable selected by a TrainConfig."""
    if train_config.loss == 'bce':
        return bce_loss
    return lambda probs, labels, mask: focal_loss(
        probs, labels, mask, train_config.focal_gamma, train_config.focal_alpha_bold)
