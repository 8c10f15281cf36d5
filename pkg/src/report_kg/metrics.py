"""Ranking and thresholded classification metrics.

ROC-AUC uses the rank (Mann-Whitney) formulation with ties counted half, and
is undefined when either class is absent; undefined labels are excluded from
the macro average.  Precision/recall/F1 are micro-averaged over all
(report, label) cells at a fixed threshold.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .extract import N_LABELS

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class EvalReport:
    per_label_auc: tuple  # 14 entries, None where undefined
    macro_auc: float | None
    precision: float
    recall: float
    f1: float
    threshold: float


def roc_auc(scores, labels) -> float | None:
    """P(score_pos > score_neg) + 0.5 P(tie); None if a class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError(f"scores {scores.shape} and labels {labels.shape} "
                        f"must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(scores)
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # 1-based, ties averaged
        i = j + 1
    return ranks


def prf1(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> tuple:
    """(precision, recall, f1) micro-averaged over all cells; 0/0 -> 0."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError(f"scores {scores.shape} and labels {labels.shape} "
                        f"must have equal shapes")
    predicted = scores >= threshold
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def macro_auc(score_matrix, label_matrix) -> float | None:
    """Mean per-label AUC over labels where the AUC is defined."""
    aucs = per_label_auc(score_matrix, label_matrix)
    defined = [a for a in aucs if a is not None]
    return float(np.mean(defined)) if defined else None


def per_label_auc(score_matrix, label_matrix) -> tuple:
    scores = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(label_matrix)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise DataError("score and label matrices must have equal 2-D shapes")
    return tuple(roc_auc(scores[:, j], labels[:, j])
                 for j in range(scores.shape[1]))


def evaluate(score_matrix, label_matrix,
             threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    aucs = per_label_auc(score_matrix, label_matrix)
    p, r, f = prf1(np.asarray(score_matrix).ravel(),
                   np.asarray(label_matrix).ravel(), threshold)
    defined = [a for a in aucs if a is not None]
    return EvalReport(per_label_auc=aucs,
                      macro_auc=float(np.mean(defined)) if defined else None,
                      precision=p, recall=r, f1=f, threshold=threshold)


LABEL_NAMES = (
    "No Finding", "Enlarged Cardiomediastinum", "Cardiomegaly", "Lung Opacity",
    "Lung Lesion", "Edema", "Consolidation", "Pneumonia", "Atelectasis",
    "Pneumothorax", "Pleural Effusion", "Pleural Other", "Fracture",
    "Support Devices",
)
assert len(LABEL_NAMES) == N_LABELS


def format_eval_report(report: EvalReport) -> str:
    """Aligned text table over the 14 labels plus summary rows."""
    width = max(len(n) for n in LABEL_NAMES) + 2
    lines = [f"{'label':<{width}}auc"]
    for name, auc in zip(LABEL_NAMES, report.per_label_auc):
        shown = "n/a" if auc is None else f"{auc:.4f}"
        lines.append(f"{name:<{width}}{shown}")
    macro = "n/a" if report.macro_auc is None else f"{report.macro_auc:.4f}"
    lines.append(f"{'macro auc':<{width}}{macro}")
    lines.append(f"{'precision':<{width}}{report.precision:.4f}")
    lines.append(f"{'recall':<{width}}{report.recall:.4f}")
    lines.append(f"{'f1':<{width}}{report.f1:.4f}")
    lines.append(f"{'threshold':<{width}}{report.threshold:g}")
    return "\n".join(lines)
