"""Two-class scoring: confusion matrix, weighted F1, algorithmic-perspective curve."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .corpus import TWO_CLASSES, Corpus, SentimentLabel


class LabeledItem(Protocol):
    utterance_id: str
    label: SentimentLabel
    iteration: int


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[(gold, pred)]`` over the two sentiment classes."""

    counts: Mapping[tuple[SentimentLabel, SentimentLabel], int]

    def __getitem__(self, key: tuple[SentimentLabel, SentimentLabel]) -> int:
        return self.counts.get(key, 0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def support(self, label: SentimentLabel) -> int:
        return sum(self[label, p] for p in TWO_CLASSES)

    def predicted(self, label: SentimentLabel) -> int:
        return sum(self[g, label] for g in TWO_CLASSES)

    # one-vs-rest view, for callers that want tp/fp/fn/tn
    def tp(self, c: SentimentLabel) -> int:
        return self[c, c]

    def fp(self, c: SentimentLabel) -> int:
        return self.predicted(c) - self[c, c]

    def fn(self, c: SentimentLabel) -> int:
        return self.support(c) - self[c, c]

    def tn(self, c: SentimentLabel) -> int:
        return self.total - self.tp(c) - self.fp(c) - self.fn(c)


def confusion_matrix(gold: Sequence[SentimentLabel], pred: Sequence[SentimentLabel]) -> ConfusionMatrix:
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted labels")
    if not gold:
        raise ValueError("cannot score an empty label sequence")
    counts = {(g, p): 0 for g in TWO_CLASSES for p in TWO_CLASSES}
    for g, p in zip(gold, pred):
        if g not in TWO_CLASSES or p not in TWO_CLASSES:
            raise ValueError(f"labels must be positive/negative, got {g}, {p}")
        counts[g, p] += 1
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ClassificationReport:
    per_class: Mapping[SentimentLabel, ClassScores]
    weighted_f1: float
    accuracy: float

    def format(self) -> str:
        lines = [f"{'class':>10} {'precision':>9} {'recall':>9} {'f1':>9} {'support':>8}"]
        for label, s in self.per_class.items():
            lines.append(f"{label.value:>10} {s.precision:9.4f} {s.recall:9.4f} {s.f1:9.4f} {s.support:8d}")
        lines.append(f"{'accuracy':>10} {self.accuracy:9.4f}")
        lines.append(f"{'weighted f1':>10} {self.weighted_f1:9.4f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
            "per_class": {
                label.value: {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
                for label, s in self.per_class.items()
            },
        }


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


def report(cm: ConfusionMatrix) -> ClassificationReport:
    total = cm.total
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    per_class = {}
    weighted = 0.0
    for c in TWO_CLASSES:
        precision = _div(cm.tp(c), cm.predicted(c))
        recall = _div(cm.tp(c), cm.support(c))
        f1 = _div(2 * precision * recall, precision + recall)
        per_class[c] = ClassScores(precision, recall, f1, cm.support(c))
        weighted += cm.support(c) / total * f1
    accuracy = sum(cm.tp(c) for c in TWO_CLASSES) / total
    return ClassificationReport(per_class, weighted, accuracy)


def score(gold: Sequence[SentimentLabel], pred: Sequence[SentimentLabel]) -> ClassificationReport:
    return report(confusion_matrix(gold, pred))


# ---------------------------------------------------------------------------
# Algorithmic perspective: accuracy of the accumulated pseudo-labels


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    n_selected: int
    weighted_f1: float
    acc_positive: float | None
    acc_negative: float | None


def algorithmic_curve(labels: Iterable[LabeledItem], gold_corpus: Corpus) -> list[CurvePoint]:
    """Score the cumulative pseudo-label pool against gold after each iteration."""
    labels = sorted(labels, key=lambda x: (x.iteration, x.utterance_id))
    missing = [
        x.utterance_id
        for x in labels
        if x.utterance_id not in gold_corpus or gold_corpus[x.utterance_id].gold not in TWO_CLASSES
    ]
    if missing:
        raise KeyError(f"no positive/negative gold for {len(missing)} labeled ids: {missing[:10]}")
    points: list[CurvePoint] = []
    gold: list[SentimentLabel] = []
    pred: list[SentimentLabel] = []
    for i, item in enumerate(labels):
        gold.append(gold_corpus[item.utterance_id].gold)
        pred.append(item.label)
        last_of_iteration = i + 1 == len(labels) or labels[i + 1].iteration != item.iteration
        if last_of_iteration:
            rep = report(confusion_matrix(gold, pred))
            pos, neg = rep.per_class[SentimentLabel.POSITIVE], rep.per_class[SentimentLabel.NEGATIVE]
            points.append(
                CurvePoint(
                    item.iteration,
                    len(gold),
                    rep.weighted_f1,
                    pos.recall if pos.support else None,
                    neg.recall if neg.support else None,
                )
            )
    return points


def write_curve_csv(points: Sequence[CurvePoint], path: str | Path) -> None:
    def fmt(x: float | None) -> str:
        return "" if x is None else f"{x:.6f}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_selected", "weighted_f1", "acc_positive", "acc_negative"])
        for p in points:
            w.writerow([p.n_selected, fmt(p.weighted_f1), fmt(p.acc_positive), fmt(p.acc_negative)])
