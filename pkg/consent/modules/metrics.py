import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from shared import config
from shared.exceptions import CoverageError


def precision_recall_f1(tp, fp, fn):
    """Bold-class scores; each is 0 when its denominator is 0."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    method: str = ''
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    word_accuracy: float = 0.0
    image_accuracy: float = 0.0
    # images and buckets count only images with at least one word
    images: int = 0
    words: int = 0
    buckets: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True, allow_nan=False)

    def to_table(self):
        summary = pd.DataFrame([{
            'method': self.method, 'precision': self.precision, 'recall': self.recall, 'f1': self.f1,
            'image_acc': self.image_accuracy, 'images': self.images, 'words': self.words,
        }])
        buckets = pd.DataFrame(self.buckets, columns=['low', 'high', 'image_accuracy', 'images'])
        return (summary.to_string(index=False, float_format=lambda v: f"{v:.4f}")
                + "\n\nBy bold ratio\n"
                + buckets.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep='-'))


def _bucket_index(ratios, edges):
    # The last bucket is closed on the right.
    index = np.searchsorted(np.asarray(edges), ratios, side='right') - 1
    return np.clip(index, 0, len(edges) - 2)


def evaluate(predictions, truth, method='', bucket_edges=config.BOLD_RATIO_BUCKETS):
    """
    predictions: {(image_id, word index): 0|1}; truth: {image_id: [label per word]}.
    Bold is the positive class.
    """
    expected = {(image_id, i) for image_id, labels in truth.items() for i in range(len(labels))}
    given = set(predictions)
    if given != expected:
        raise CoverageError(expected - given, given - expected)

    rows = [{'image': image_id, 'truth': int(label), 'pred': int(predictions[(image_id, i)])}
            for image_id, labels in truth.items() for i, label in enumerate(labels)]
    words = pd.DataFrame(rows, columns=['image', 'truth', 'pred'])
    if len(words):
        tn, fp, fn, tp = confusion_matrix(words['truth'], words['pred'], labels=[0, 1]).ravel()
    else:
        tn = fp = fn = tp = 0
    precision, recall, f1 = precision_recall_f1(int(tp), int(fp), int(fn))

    words['correct'] = words['truth'] == words['pred']
    # Images without words have nothing to score and stay out of the image metrics.
    per_image = words.groupby('image', sort=False).agg(correct=('correct', 'all'), ratio=('truth', 'mean')) \
        if len(words) else pd.DataFrame({'correct': pd.Series(dtype=bool), 'ratio': pd.Series(dtype=float)})
    skipped = len(truth) - len(per_image)
    if skipped:
        logging.debug(f"{skipped} image(s) without words left out of image accuracy")
    per_image['bucket'] = _bucket_index(per_image['ratio'].to_numpy(), bucket_edges)

    buckets = []
    for b in range(len(bucket_edges) - 1):
        members = per_image[per_image['bucket'] == b]
        buckets.append({'low': float(bucket_edges[b]), 'high': float(bucket_edges[b + 1]),
                        'image_accuracy': float(members['correct'].mean()) if len(members) else None,
                        'images': int(len(members))})

    return EvalReport(
        method=method, tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn),
        precision=float(precision), recall=float(recall), f1=float(f1),
        word_accuracy=float(words['correct'].mean()) if len(words) else 1.0,
        image_accuracy=float(per_image['correct'].mean()) if len(per_image) else 1.0,
        images=int(len(per_image)), words=int(len(words)), buckets=buckets,
    )


def report_from_counts(tp, fp, fn, tn=0, method=''):
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)
    total = tp + fp + fn + tn
    return EvalReport(method=method, tp=tp, fp=fp, fn=fn, tn=tn, precision=precision, recall=recall, f1=f1,
                      word_accuracy=(tp + tn) / total if total else 0.0, words=total)
