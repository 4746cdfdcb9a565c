"""Accuracy reports, confusion matrices, k-fold aggregation, and the
train-fraction ablation runner."""

from dataclasses import dataclass, field

import numpy as np

from .data import IMAGENET_MEAN, IMAGENET_STD, ratio_split, split, to_input
from .errors import ConfigurationError, InputError
from .graph import Network, build_network, predict
from .training import fit


@dataclass
class ConfusionMatrix:
    """C x C integer grid: rows are true classes, columns predictions."""

    counts: np.ndarray
    class_names: list

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def accuracy(self):
        return 100.0 * np.trace(self.counts) / self.counts.sum()

    def per_class(self):
        """Diagonal over row sums; empty rows report as 0."""
        rows = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), rows,
                         out=np.zeros(len(rows)), where=rows > 0)


@dataclass
class ConfidenceRecord:
    path: str
    true_label: int
    predicted: int
    confidence: float

    @property
    def correct(self):
        return self.true_label == self.predicted


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    overall_accuracy: float
    per_class_accuracy: np.ndarray
    confidences: list = field(default_factory=list)


def _report_from(counts, class_names, confidences):
    cm = ConfusionMatrix(counts, class_names)
    return EvalReport(cm, float(cm.accuracy), cm.per_class(), confidences)


def evaluate(net, samples, class_names=None, mean=IMAGENET_MEAN,
             std=IMAGENET_STD, batch_size=32):
    """Classify every sample in inference mode and build an EvalReport."""
    if not samples:
        raise InputError("test set is empty")
    c = net.cfg.num_classes
    if class_names is None:
        class_names = ["class%d" % i for i in range(c)]
    counts = np.zeros((c, c), np.int64)
    confidences = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = np.stack([to_input(s, net.cfg.input_dims, mean, std) for s in chunk])
        logits = net.forward(x, mode="inference")
        labels, confs = predict(logits)
        for s, pred, conf in zip(chunk, labels, confs):
            if not 0 <= s.label < c:
                raise InputError("sample %s has label %d outside [0, %d)"
                                 % (s.source_path, s.label, c))
            counts[s.label, pred] += 1
            confidences.append(
                ConfidenceRecord(s.source_path, s.label, int(pred), float(conf)))
    return _report_from(counts, class_names, confidences)


def cross_validate(cfg, samples, k, iterations, class_names=None, seed=0,
                   **train_kw):
    """k-fold cross-validation: a fresh network per fold, trained on the
    other folds, evaluated on the held-out one. Returns (aggregate report,
    per-fold reports); the aggregate confusion is the elementwise sum, so
    its total equals the dataset size exactly."""
    if k < 2:
        raise ConfigurationError("cross-validation needs k >= 2, got %d" % k)
    if max(s.fold for s in samples) + 1 != k:
        raise ConfigurationError(
            "samples carry %d folds but k=%d was requested"
            % (max(s.fold for s in samples) + 1, k))
    mean = train_kw.get("mean", IMAGENET_MEAN)
    std = train_kw.get("std", IMAGENET_STD)
    batch = train_kw.get("batch_size", 32)
    fold_reports = []
    agg = np.zeros((cfg.num_classes, cfg.num_classes), np.int64)
    all_conf = []
    for fold in range(k):
        train_set, test_set = split(samples, fold)
        net = Network(cfg, build_network(cfg, seed=seed + fold))
        fit(net, train_set, iterations, seed=seed + fold, **train_kw)
        report = evaluate(net, test_set, class_names, mean, std, batch)
        fold_reports.append(report)
        agg += report.confusion.counts
        all_conf.extend(report.confidences)
    return _report_from(agg, fold_reports[0].confusion.class_names, all_conf), \
        fold_reports


def split_ablation(cfg, samples, fractions, seed, iterations, class_names=None,
                   **train_kw):
    """Train/evaluate once per train fraction; returns [(fraction, accuracy)]."""
    mean = train_kw.get("mean", IMAGENET_MEAN)
    std = train_kw.get("std", IMAGENET_STD)
    batch = train_kw.get("batch_size", 32)
    table = []
    for frac in fractions:
        train_set, test_set = ratio_split(samples, frac, seed)
        net = Network(cfg, build_network(cfg, seed=seed))
        fit(net, train_set, iterations, seed=seed, **train_kw)
        report = evaluate(net, test_set, class_names, mean, std, batch)
        table.append((float(frac), report.overall_accuracy))
    return table
