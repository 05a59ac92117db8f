"""Binary classification metrics: confusion counts, ACC/SEN/SPE, and AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvalReport:
    acc: float
    sen: float
    spe: float
    auc: float
    n_pos: int
    n_neg: int
    threshold: float

    def as_text(self) -> str:
        lines = [
            f"acc={self.acc:.6f}",
            f"sen={self.sen:.6f}",
            f"spe={self.spe:.6f}",
            f"auc={self.auc:.6f}",
            f"n_pos={self.n_pos}",
            f"n_neg={self.n_neg}",
            f"threshold={self.threshold}",
        ]
        return "\n".join(lines)


def _split_classes(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1D sequences")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need at least one positive and one negative label")
    return pos, neg


def confusion_metrics(scores, labels, threshold: float = 0.5) -> tuple[float, float, float]:
    """(acc, sen, spe) with positive predicted iff score >= threshold."""
    pos, neg = _split_classes(scores, labels)
    tp = int(np.sum(pos >= threshold))
    tn = int(np.sum(neg < threshold))
    acc = (tp + tn) / (len(pos) + len(neg))
    sen = tp / len(pos)
    spe = tn / len(neg)
    return acc, sen, spe


def auc(scores, labels) -> float:
    """Pairwise concordance probability; ties between classes count 0.5."""
    pos, neg = _split_classes(scores, labels)
    diff = pos[:, None] - neg[None, :]
    wins = np.sum(diff > 0) + 0.5 * np.sum(diff == 0)
    return float(wins / (len(pos) * len(neg)))


def evaluate_scores(scores, labels, threshold: float = 0.5) -> EvalReport:
    pos, neg = _split_classes(scores, labels)
    acc, sen, spe = confusion_metrics(scores, labels, threshold)
    return EvalReport(
        acc=acc,
        sen=sen,
        spe=spe,
        auc=auc(scores, labels),
        n_pos=len(pos),
        n_neg=len(neg),
        threshold=threshold,
    )
