"""Accuracy, macro F1, and one-vs-rest macro AUC for the 3-class task.

F1 and AUC use unweighted (macro) averaging over classes.  AUC is the rank
(Mann-Whitney) statistic with tied pairs contributing 1/2, so it is exact
and invariant under strictly increasing score transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_CLASSES = 3


@dataclass
class EvalResult:
    accuracy: float
    macro_f1: float
    macro_auc: float
    confusion: np.ndarray          # (3, 3) counts, rows = true, cols = predicted
    auc_skipped: tuple[int, ...]   # classes without both a positive and a negative


def _validate_classes(values, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional")
    if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
        raise ValueError(f"{what} must lie in [0, {N_CLASSES})")
    return arr.astype(np.int64)


def confusion_matrix(preds, labels) -> np.ndarray:
    preds = _validate_classes(preds, "predictions")
    labels = _validate_classes(labels, "labels")
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions vs {labels.size} labels")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return counts


def accuracy(confusion: np.ndarray) -> float:
    total = confusion.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(confusion)) / float(total)


def macro_f1(confusion: np.ndarray) -> float:
    """Unweighted mean of per-class F1; a class with P + R = 0 scores 0."""
    confusion = np.asarray(confusion)
    scores = []
    for c in range(N_CLASSES):
        hit = float(confusion[c, c])
        col = float(confusion[:, c].sum())
        row = float(confusion[c, :].sum())
        precision = hit / col if col > 0 else 0.0
        recall = hit / row if row > 0 else 0.0
        if precision + recall > 0:
            scores.append(2.0 * precision * recall / (precision + recall))
        else:
            scores.append(0.0)
    return float(np.mean(scores))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their average rank."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def per_class_auc(probs: np.ndarray, labels) -> list[float | None]:
    """One-vs-rest AUC of each class's probability column; None when the
    class lacks a positive or a negative example."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = _validate_classes(labels, "labels")
    if probs.ndim != 2 or probs.shape != (labels.size, N_CLASSES):
        raise ValueError(f"probs must have shape ({labels.size}, {N_CLASSES})")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("probability rows must sum to 1")
    out: list[float | None] = []
    for c in range(N_CLASSES):
        positive = labels == c
        n_pos = int(positive.sum())
        n_neg = labels.size - n_pos
        if n_pos == 0 or n_neg == 0:
            out.append(None)
            continue
        ranks = _average_ranks(probs[:, c])
        auc = (ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
        out.append(float(auc))
    return out


def macro_auc_ovr(probs: np.ndarray, labels) -> float:
    """Unweighted mean of the defined per-class one-vs-rest AUCs."""
    scores = [s for s in per_class_auc(probs, labels) if s is not None]
    if not scores:
        raise ValueError("AUC undefined: every class lacks a positive or a negative")
    return float(np.mean(scores))


def evaluate_predictions(probs: np.ndarray, preds, labels) -> EvalResult:
    confusion = confusion_matrix(preds, labels)
    per_class = per_class_auc(probs, labels)
    defined = [s for s in per_class if s is not None]
    if not defined:
        raise ValueError("AUC undefined: every class lacks a positive or a negative")
    skipped = tuple(c for c, s in enumerate(per_class) if s is None)
    return EvalResult(
        accuracy=accuracy(confusion),
        macro_f1=macro_f1(confusion),
        macro_auc=float(np.mean(defined)),
        confusion=confusion,
        auc_skipped=skipped,
    )


def report_text(result: EvalResult) -> str:
    lines = [
        f"accuracy   {result.accuracy:.4f}",
        f"macro_f1   {result.macro_f1:.4f}",
        f"macro_auc  {result.macro_auc:.4f}",
        "confusion (rows = true, cols = predicted):",
    ]
    for row in result.confusion:
        lines.append("  " + "  ".join(f"{int(v):6d}" for v in row))
    if result.auc_skipped:
        lines.append(f"AUC skipped classes (no positives or no negatives): {list(result.auc_skipped)}")
    return "\n".join(lines)


def report_csv(result: EvalResult) -> str:
    return (
        "acc,macro_f1,macro_auc\n"
        f"{result.accuracy:.4f},{result.macro_f1:.4f},{result.macro_auc:.4f}\n"
    )
