"""Code-mixing analysis: L2 token ratio, ratio buckets, prediction distributions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import TWO_CLASSES, Corpus, LangTag, SentimentLabel, Utterance

N_BUCKETS = 10
BUCKET_WIDTH = 1.0 / N_BUCKETS


def token_ratio(u: Utterance) -> float | None:
    """Fraction of L2 tokens among L1+L2 tokens; ``None`` when there are none."""
    n_l1 = sum(1 for _, t in u.tokens if t is LangTag.L1)
    n_l2 = sum(1 for _, t in u.tokens if t is LangTag.L2)
    if n_l1 + n_l2 == 0:
        return None
    return n_l2 / (n_l1 + n_l2)


def bucket_index(ratio: float, n_buckets: int = N_BUCKETS) -> int:
    # the small epsilon keeps e.g. 0.3 (stored as 0.29999...) in bucket 3
    return min(int(math.floor(ratio * n_buckets + 1e-9)), n_buckets - 1)


def bucket_of(u: Utterance, n_buckets: int = N_BUCKETS) -> int | None:
    r = token_ratio(u)
    return None if r is None else bucket_index(r, n_buckets)


# ---------------------------------------------------------------------------
# Per-bucket performance


@dataclass(frozen=True)
class BucketResult:
    index: int
    lo: float
    count: int
    weighted_f1: float
    acc_positive: float | None
    acc_negative: float | None


@dataclass(frozen=True)
class BucketPerformance:
    buckets: tuple[BucketResult, ...]  # nonempty buckets only, ascending index
    undefined_count: int
    undefined_f1: float | None

    def mean_f1(self, min_lo: float = 0.0) -> float:
        vals = [b.weighted_f1 for b in self.buckets if b.lo >= min_lo - 1e-12]
        return sum(vals) / len(vals) if vals else float("nan")


def classwise_accuracy(
    gold: Sequence[SentimentLabel], pred: Sequence[SentimentLabel]
) -> tuple[float | None, float | None]:
    """Accuracy over gold-positive and over gold-negative items (per-class recall)."""
    if len(gold) != len(pred):
        raise ValueError("length mismatch")
    out = []
    for c in TWO_CLASSES:
        pairs = [(g, p) for g, p in zip(gold, pred) if g is c]
        out.append(sum(1 for g, p in pairs if p is g) / len(pairs) if pairs else None)
    return out[0], out[1]


def bucket_performance(
    corpus: Corpus, predicted: Mapping[str, SentimentLabel], n_buckets: int = N_BUCKETS
) -> BucketPerformance:
    """Weighted F1 and per-class accuracy per token-ratio bucket.

    Only utterances present in ``predicted`` and carrying a two-class gold
    label are scored.
    """
    from .metrics import score

    groups: dict[int | None, tuple[list, list]] = {}
    for u in corpus:
        if u.id not in predicted or u.gold not in TWO_CLASSES:
            continue
        g, p = groups.setdefault(bucket_of(u, n_buckets), ([], []))
        g.append(u.gold)
        p.append(predicted[u.id])
    results = []
    for idx in sorted(k for k in groups if k is not None):
        gold, pred = groups[idx]
        acc_pos, acc_neg = classwise_accuracy(gold, pred)
        results.append(BucketResult(idx, idx / n_buckets, len(gold), score(gold, pred).weighted_f1, acc_pos, acc_neg))
    undefined = groups.get(None)
    return BucketPerformance(
        tuple(results),
        len(undefined[0]) if undefined else 0,
        score(*undefined).weighted_f1 if undefined else None,
    )


# ---------------------------------------------------------------------------
# Class x bucket distributions


@dataclass(frozen=True)
class DistributionSummary:
    histograms: Mapping[SentimentLabel, tuple[int, ...]]
    undefined: Mapping[SentimentLabel, int]

    def total(self) -> int:
        return sum(sum(h) for h in self.histograms.values())

    def class_count(self, label: SentimentLabel) -> int:
        return sum(self.histograms[label])

    def mean_bucket(self, label: SentimentLabel) -> float:
        h = self.histograms[label]
        n = sum(h)
        return sum(i * c for i, c in enumerate(h)) / n if n else float("nan")


def prediction_distribution(
    corpus: Corpus, labels: Mapping[str, SentimentLabel], n_buckets: int = N_BUCKETS
) -> DistributionSummary:
    """Per-class histograms over token-ratio buckets for the labeled utterances."""
    unknown = [i for i in labels if i not in corpus]
    if unknown:
        raise KeyError(f"{len(unknown)} labeled ids not in corpus {corpus.name!r}: {unknown[:10]}")
    hist = {c: [0] * n_buckets for c in TWO_CLASSES}
    undefined = {c: 0 for c in TWO_CLASSES}
    for u in corpus:
        label = labels.get(u.id)
        if label not in TWO_CLASSES:
            continue
        b = bucket_of(u, n_buckets)
        if b is None:
            undefined[label] += 1
        else:
            hist[label][b] += 1
    return DistributionSummary({c: tuple(h) for c, h in hist.items()}, undefined)


def gold_labels(corpus: Corpus) -> dict[str, SentimentLabel]:
    return {u.id: u.gold for u in corpus if u.gold in TWO_CLASSES}


def tv_distance(a: DistributionSummary, b: DistributionSummary) -> float:
    """Total-variation distance between the joint (class, bucket) distributions."""
    if {len(h) for h in a.histograms.values()} != {len(h) for h in b.histograms.values()}:
        raise ValueError("summaries use different bucket counts")
    na, nb = a.total(), b.total()
    if na == 0 or nb == 0:
        raise ValueError("cannot compare an empty distribution")
    dist = 0.0
    for c in TWO_CLASSES:
        for x, y in zip(a.histograms[c], b.histograms[c]):
            dist += abs(x / na - y / nb)
    return dist / 2


# ---------------------------------------------------------------------------
# CSV exports


def write_bucket_csv(perf: BucketPerformance, path: str | Path) -> None:
    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket_lo", "count", "weighted_f1", "acc_positive", "acc_negative"])
        for b in perf.buckets:
            w.writerow([f"{b.lo:.1f}", b.count, fmt(b.weighted_f1), fmt(b.acc_positive), fmt(b.acc_negative)])


def write_histogram_csv(summary: DistributionSummary, path: str | Path) -> None:
    pos = summary.histograms[SentimentLabel.POSITIVE]
    neg = summary.histograms[SentimentLabel.NEGATIVE]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket_lo", "count_positive", "count_negative"])
        for i, (p, n) in enumerate(zip(pos, neg)):
            w.writerow([f"{i / len(pos):.1f}", p, n])
