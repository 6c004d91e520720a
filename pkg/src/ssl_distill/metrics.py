"""Evaluation metrics: ROC-AUC, ROC curve, accuracy, report emission.

AUC uses the pairwise (Mann-Whitney) formulation as the reference: the
probability that a random positive outranks a random negative, ties
counted half.  The numerator and denominator are integers, so the result
is exact up to one float division, and the trapezoidal area under the
ROC curve agrees with it to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np


class SingleClassError(ValueError):
    """AUC needs at least one positive and one negative."""


def _validate(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.size != labels.size:
        raise ValueError(f"length mismatch, {scores.size} scores vs {labels.size} labels")
    if scores.size == 0:
        raise ValueError("empty inputs")
    uniq = set(np.unique(labels).tolist())
    if not uniq <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got {sorted(uniq)}")
    return scores, labels.astype(np.int64)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(random positive scores above random negative), ties count half."""
    scores, labels = _validate(scores, labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise SingleClassError("both classes must be present to compute auc")
    greater = int((pos[:, None] > neg[None, :]).sum())
    ties = int((pos[:, None] == neg[None, :]).sum())
    return (2 * greater + ties) / (2 * pos.size * neg.size)


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> List[Tuple[float, float]]:
    """(fpr, tpr) at every distinct score threshold, from (0,0) to (1,1)."""
    scores, labels = _validate(scores, labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("both classes must be present to compute a roc curve")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    points = [(0.0, 0.0)]
    cum_pos = 0
    cum_neg = 0
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        block = l_sorted[i:j]
        cum_pos += int((block == 1).sum())
        cum_neg += int((block == 0).sum())
        points.append((cum_neg / n_neg, cum_pos / n_pos))
        i = j
    return points


def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    """Fraction of samples where [score >= threshold] equals the label."""
    scores, labels = _validate(scores, labels)
    pred = (scores >= threshold).astype(np.int64)
    return float((pred == labels).mean())


@dataclass
class ModelResult:
    name: str
    auc: float
    accuracy: float
    n_test: int


@dataclass
class EvalReport:
    results: List[ModelResult] = field(default_factory=list)
    roc_points: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)

    def add(self, name: str, scores, labels) -> ModelResult:
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        res = ModelResult(name, auc(scores, labels), accuracy(scores, labels), scores.size)
        self.results.append(res)
        self.roc_points[name] = roc_curve(scores, labels)
        return res

    def table(self) -> str:
        name_w = max([len("model")] + [len(r.name) for r in self.results])
        lines = [f"{'model':<{name_w}}  {'auc':>8}  {'accuracy':>8}  {'n_test':>6}"]
        lines.append("-" * len(lines[0]))
        for r in self.results:
            lines.append(
                f"{r.name:<{name_w}}  {r.auc:>8.4f}  {r.accuracy:>8.4f}  {r.n_test:>6d}"
            )
        return "\n".join(lines)

    def csv(self) -> str:
        lines = ["model,auc,accuracy,n_test"]
        for r in self.results:
            lines.append(f"{r.name},{r.auc:.6f},{r.accuracy:.6f},{r.n_test}")
        return "\n".join(lines) + "\n"

    def roc_csv(self, name: str) -> str:
        lines = ["fpr,tpr"]
        for fpr, tpr in self.roc_points[name]:
            lines.append(f"{fpr:.9g},{tpr:.9g}")
        return "\n".join(lines) + "\n"
