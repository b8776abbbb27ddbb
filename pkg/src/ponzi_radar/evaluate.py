"""Stratified cross-validation, confusion matrices, metrics, ROC/AUC.

P is the positive class. Cross-validation aggregates the per-fold confusion
matrices by summing counts (not by averaging metrics), and pools the per-fold
scores for a single AUC. Metric values that would divide zero by zero are
reported as explicitly undefined, never silently 0.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_EVEN
from typing import IO, Sequence

import numpy as np

from .dataset import Dataset, LABEL_PONZI
from .errors import DataError
from .learn import (
    CostMatrix,
    LearnerSpec,
    Model,
    _check_schema,
    dataset_matrix,
    derive_seeds,
    train_model,
    undersample,
)

REPORT_HEADER = (
    "setting", "tp", "fn", "fp", "tn",
    "accuracy", "recall", "specificity", "precision", "f", "gmean", "auc",
)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp, self.fn + other.fn,
            self.fp + other.fp, self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    recall: float | None
    specificity: float | None
    precision: float | None
    f_measure: float | None
    g_mean: float | None
    auc: float | None = None


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    """The six closed-form metrics; 0/0 ratios come back as None (undefined)."""
    if cm.total == 0:
        raise DataError("cannot compute metrics of an empty confusion matrix")
    accuracy = (cm.tp + cm.tn) / cm.total
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    specificity = cm.tn / (cm.tn + cm.fp) if cm.tn + cm.fp else None
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else None
    f_measure = None
    if precision is not None and recall is not None and precision + recall > 0:
        f_measure = 2 * precision * recall / (precision + recall)
    g_mean = None
    if recall is not None and specificity is not None:
        g_mean = (recall * specificity) ** 0.5
    return MetricsReport(accuracy, recall, specificity, precision, f_measure, g_mean)


def _binary_labels(labels: Sequence) -> np.ndarray:
    return np.asarray([1 if lbl in (1, True, LABEL_PONZI) else 0 for lbl in labels],
                      dtype=np.int8)


def roc_auc(scores: Sequence[float], labels: Sequence) -> float:
    """AUC as the Mann-Whitney statistic with tie credit 0.5.

    (#{pos > neg} + 0.5 * #{pos == neg}) / (|pos| * |neg|), computed via the
    rank-sum form with average ranks for ties.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC requires at least one positive and one negative")
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(len(s), dtype=np.float64)
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[y == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_curve(scores: Sequence[float], labels: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """ROC points from (0,0) to (1,1), one per distinct score threshold."""
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC requires at least one positive and one negative")
    order = np.argsort(-s, kind="stable")
    sorted_s = s[order]
    sorted_y = y[order]
    cum_tp = np.cumsum(sorted_y)
    cum_fp = np.cumsum(1 - sorted_y)
    # Keep only the last point of each tied-score run.
    last = np.nonzero(np.append(sorted_s[1:] != sorted_s[:-1], True))[0]
    tpr = np.concatenate(([0.0], cum_tp[last] / n_pos))
    fpr = np.concatenate(([0.0], cum_fp[last] / n_neg))
    return fpr, tpr


def auc_trapezoid(scores: Sequence[float], labels: Sequence) -> float:
    """Trapezoidal ROC area; agrees with roc_auc including tie handling."""
    fpr, tpr = roc_curve(scores, labels)
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def stratified_folds(dataset: Dataset, k: int, seed: int) -> list[list[int]]:
    """Partition instance indices into k folds, per-class counts within 1.

    Classes with fewer than k instances are spread as evenly as possible.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(dataset):
        raise DataError(f"k={k} exceeds dataset size {len(dataset)}")
    rng = random.Random(seed)
    by_class: dict[str, list[int]] = {}
    for i, inst in enumerate(dataset.instances):
        by_class.setdefault(inst.label, []).append(i)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0  # continues across classes so overall fold sizes stay level
    for label in sorted(by_class):
        idxs = by_class[label][:]
        rng.shuffle(idxs)
        for ix in idxs:
            folds[cursor % k].append(ix)
            cursor += 1
    return [sorted(f) for f in folds]


@dataclass
class FoldOutcome:
    confusion: ConfusionMatrix
    scores: list[float]
    labels: list[str]


@dataclass
class CVResult:
    confusion: ConfusionMatrix
    folds: list[FoldOutcome]
    metrics: MetricsReport

    @property
    def per_fold(self) -> list[ConfusionMatrix]:
        return [f.confusion for f in self.folds]

    @property
    def scores(self) -> list[float]:
        return [s for f in self.folds for s in f.scores]

    @property
    def score_labels(self) -> list[str]:
        return [lbl for f in self.folds for lbl in f.labels]


def _confusion_from_predictions(actual: np.ndarray, predicted_p: np.ndarray) -> ConfusionMatrix:
    tp = int(np.sum((actual == 1) & predicted_p))
    fn = int(np.sum((actual == 1) & ~predicted_p))
    fp = int(np.sum((actual == 0) & predicted_p))
    tn = int(np.sum((actual == 0) & ~predicted_p))
    return ConfusionMatrix(tp, fn, fp, tn)


def cross_validate(
    dataset: Dataset,
    learner: LearnerSpec,
    cost: CostMatrix,
    k: int = 10,
    seed: int = 0,
    sampling_ratio: float | None = None,
    threads: int = 1,
) -> CVResult:
    """K-fold stratified cross-validation with count aggregation.

    Undersampling, when requested, is applied to the training folds only.
    All randomness (fold assignment, per-fold sampling, per-fold training)
    derives from `seed`, so results are reproducible and thread-independent.
    """
    seeds = derive_seeds(seed, 1 + 2 * k)
    folds = stratified_folds(dataset, k, seeds[0])
    X, y = dataset_matrix(dataset)
    outcomes: list[FoldOutcome] = []
    for i, test_idx in enumerate(folds):
        test_set = set(test_idx)
        train_instances = tuple(
            inst for j, inst in enumerate(dataset.instances) if j not in test_set
        )
        if not any(inst.label == LABEL_PONZI for inst in train_instances):
            raise DataError(f"fold {i}: training data lost every P instance")
        train_ds = Dataset(dataset.schema, train_instances)
        if sampling_ratio is not None:
            train_ds = undersample(train_ds, sampling_ratio, seeds[1 + 2 * i])
        model = train_model(train_ds, learner, seeds[2 + 2 * i], threads=threads)
        p = model.predict_proba_matrix(X[test_idx])
        predicted_p = p >= cost.threshold
        outcomes.append(FoldOutcome(
            _confusion_from_predictions(y[test_idx], predicted_p),
            [float(v) for v in p],
            [dataset.instances[j].label for j in test_idx],
        ))
    aggregate = outcomes[0].confusion
    for outcome in outcomes[1:]:
        aggregate = aggregate + outcome.confusion
    base = metrics_from_confusion(aggregate)
    auc = roc_auc(
        [s for o in outcomes for s in o.scores],
        [lbl for o in outcomes for lbl in o.labels],
    )
    metrics = MetricsReport(
        base.accuracy, base.recall, base.specificity,
        base.precision, base.f_measure, base.g_mean, auc,
    )
    return CVResult(aggregate, outcomes, metrics)


@dataclass(frozen=True)
class Prediction:
    id: str
    label: str
    score: float
    predicted: str


@dataclass
class ApplyResult:
    confusion: ConfusionMatrix
    predictions: list[Prediction]
    metrics: MetricsReport | None


def apply_model(model: Model, cost: CostMatrix, dataset: Dataset) -> ApplyResult:
    """Score every instance with a frozen model and apply the cost rule."""
    X, y = dataset_matrix(dataset)
    if len(dataset) == 0:
        return ApplyResult(ConfusionMatrix(0, 0, 0, 0), [], None)
    _check_schema(model, X.shape[1])
    p = model.predict_proba_matrix(X)
    predicted_p = p >= cost.threshold
    predictions = [
        Prediction(inst.id, inst.label, float(p[i]), LABEL_PONZI if predicted_p[i] else "nP")
        for i, inst in enumerate(dataset.instances)
    ]
    confusion = _confusion_from_predictions(y, predicted_p)
    metrics = metrics_from_confusion(confusion)
    auc = None
    if 0 < int(y.sum()) < len(y):
        auc = roc_auc([pr.score for pr in predictions], [pr.label for pr in predictions])
    metrics = MetricsReport(
        metrics.accuracy, metrics.recall, metrics.specificity,
        metrics.precision, metrics.f_measure, metrics.g_mean, auc,
    )
    return ApplyResult(confusion, predictions, metrics)


_3DP = Decimal("0.001")


def format_metric(value: float | None) -> str:
    """Three decimals, round half to even; None prints as 'undefined'."""
    if value is None:
        return "undefined"
    return str(Decimal(value).quantize(_3DP, rounding=ROUND_HALF_EVEN))


def report_row(setting: str, cm: ConfusionMatrix, metrics: MetricsReport) -> tuple:
    return (
        setting, cm.tp, cm.fn, cm.fp, cm.tn,
        format_metric(metrics.accuracy),
        format_metric(metrics.recall),
        format_metric(metrics.specificity),
        format_metric(metrics.precision),
        format_metric(metrics.f_measure),
        format_metric(metrics.g_mean),
        format_metric(metrics.auc),
    )


def write_report_csv(rows: list[tuple], fp: IO[str], schema: str = "v1") -> None:
    fp.write(f"# ponzi-radar report schema={schema}\n")
    fp.write(",".join(REPORT_HEADER) + "\n")
    for row in rows:
        fp.write(",".join(str(cell) for cell in row) + "\n")


def format_report_table(rows: list[tuple]) -> str:
    """Human-readable fixed-width rendering of report rows."""
    table = [REPORT_HEADER, *[tuple(str(c) for c in row) for row in rows]]
    widths = [max(len(r[i]) for r in table) for i in range(len(REPORT_HEADER))]
    lines = []
    for r in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines)
