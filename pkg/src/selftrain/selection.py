"""Selection block: which predictions become pseudo-labels, ratio estimation, stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .analysis import token_ratio
from .backend import Prediction
from .corpus import Corpus, SentimentLabel, Utterance
from .errors import ConfigError, EstimationAborted

POS, NEG = SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE


def round_half_up(x: float) -> int:
    """Round half away from zero (inputs here are nonnegative)."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


# ---------------------------------------------------------------------------
# Strategies


@dataclass(frozen=True)
class Vanilla:
    """Equal counts per class: floor(n_total / 2) each."""

    n_total: int | None = None  # None: derived from the run's selection_percent


@dataclass(frozen=True)
class Ratio:
    positive_fraction: float = 0.5
    n_total: int | None = None

    def __post_init__(self):
        if not 0.0 < self.positive_fraction < 1.0:
            raise ConfigError("positive_fraction must be in (0, 1)")


@dataclass(frozen=True)
class Scheduled:
    """Per-iteration totals; the last entry repeats once the schedule runs out."""

    per_iteration: tuple[int, ...]
    inner: Union[Vanilla, Ratio] = field(default_factory=Vanilla)

    def __post_init__(self):
        object.__setattr__(self, "per_iteration", tuple(self.per_iteration))
        # 0 means "rest this iteration"; any other entry is an n_total and must be >= 2
        if not self.per_iteration or any(n < 0 or n == 1 for n in self.per_iteration):
            raise ConfigError("schedule must be a nonempty sequence of counts that are 0 or >= 2")
        if not isinstance(self.inner, (Vanilla, Ratio)):
            raise ConfigError("scheduled inner strategy must be vanilla or ratio")

    def n_for(self, iteration: int) -> int:
        return self.per_iteration[min(iteration, len(self.per_iteration) - 1)]

    def has_future_selection(self, iteration: int) -> bool:
        return any(n > 0 for n in self.per_iteration[iteration + 1 :]) or self.per_iteration[-1] > 0


@dataclass(frozen=True)
class TokenRatioFiltered:
    """Restrict candidates to utterances with L2 token ratio >= ``min_l2_ratio``."""

    min_l2_ratio: float
    inner: "SelectionStrategy" = field(default_factory=Vanilla)


SelectionStrategy = Union[Vanilla, Ratio, Scheduled, TokenRatioFiltered]


def strategy_from_dict(d: Mapping) -> SelectionStrategy:
    d = dict(d)
    kind = d.pop("kind", "vanilla")
    try:
        if kind == "vanilla":
            return Vanilla(**d)
        if kind == "ratio":
            return Ratio(**d)
        if kind == "scheduled":
            inner = strategy_from_dict(d.pop("inner", {"kind": "vanilla"}))
            return Scheduled(tuple(d.pop("per_iteration")), inner, **d)
        if kind == "htr-filtered":
            inner = strategy_from_dict(d.pop("inner", {"kind": "vanilla"}))
            return TokenRatioFiltered(d.pop("min_l2_ratio"), inner, **d)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad {kind!r} strategy config: {exc}") from None
    raise ConfigError(f"unknown strategy kind {kind!r}")


def strategy_to_dict(s: SelectionStrategy) -> dict:
    if isinstance(s, Vanilla):
        return {"kind": "vanilla", "n_total": s.n_total}
    if isinstance(s, Ratio):
        return {"kind": "ratio", "positive_fraction": s.positive_fraction, "n_total": s.n_total}
    if isinstance(s, Scheduled):
        return {"kind": "scheduled", "per_iteration": list(s.per_iteration), "inner": strategy_to_dict(s.inner)}
    return {"kind": "htr-filtered", "min_l2_ratio": s.min_l2_ratio, "inner": strategy_to_dict(s.inner)}


# ---------------------------------------------------------------------------
# Outcomes


@dataclass(frozen=True)
class Selected:
    utterance_id: str
    label: SentimentLabel
    confidence: float


@dataclass(frozen=True)
class SelectionOutcome:
    selected: tuple[Selected, ...] = ()
    shortfall_positive: int = 0
    shortfall_negative: int = 0
    requested_positive: int = 0
    requested_negative: int = 0

    def of_class(self, label: SentimentLabel) -> list[Selected]:
        return [s for s in self.selected if s.label is label]

    @property
    def requested_total(self) -> int:
        return self.requested_positive + self.requested_negative


def _ranked(preds: Sequence[Prediction], label: SentimentLabel) -> list[Prediction]:
    cands = [p for p in preds if p.predicted is label]
    cands.sort(key=lambda p: (-p.confidence, p.utterance_id))
    return cands


def select_per_class(preds: Sequence[Prediction], n_positive: int, n_negative: int) -> SelectionOutcome:
    """Top-confidence predictions of each class, ties broken by ascending id."""
    chosen: list[Selected] = []
    shortfall = {}
    for label, n in ((POS, n_positive), (NEG, n_negative)):
        ranked = _ranked(preds, label)[:n]
        chosen.extend(Selected(p.utterance_id, label, p.confidence) for p in ranked)
        shortfall[label] = n - len(ranked)
    return SelectionOutcome(tuple(chosen), shortfall[POS], shortfall[NEG], n_positive, n_negative)


def _check_n_total(n_total: int) -> None:
    if n_total < 2:
        raise ConfigError(f"n_total must be >= 2, got {n_total}")


def select_vanilla(preds: Sequence[Prediction], n_total: int) -> SelectionOutcome:
    _check_n_total(n_total)
    half = n_total // 2
    return select_per_class(preds, half, half)


def ratio_counts(n_total: int, positive_fraction: float) -> tuple[int, int]:
    n_pos = round_half_up(n_total * positive_fraction)
    return n_pos, n_total - n_pos


def select_ratio(preds: Sequence[Prediction], positive_fraction: float, n_total: int) -> SelectionOutcome:
    _check_n_total(n_total)
    if not 0.0 < positive_fraction < 1.0:
        raise ConfigError("positive_fraction must be in (0, 1)")
    return select_per_class(preds, *ratio_counts(n_total, positive_fraction))


def select_token_ratio_filtered(
    preds: Sequence[Prediction],
    corpus: Corpus,
    min_l2_ratio: float,
    inner: Callable[[Sequence[Prediction]], SelectionOutcome],
) -> SelectionOutcome:
    eligible = []
    for p in preds:
        r = token_ratio(corpus[p.utterance_id])
        if r is not None and r >= min_l2_ratio:
            eligible.append(p)
    return inner(eligible)


def requested_total(strategy: SelectionStrategy, iteration: int, default_n: int) -> int:
    if isinstance(strategy, Scheduled):
        return strategy.n_for(iteration)
    if isinstance(strategy, TokenRatioFiltered):
        return requested_total(strategy.inner, iteration, default_n)
    return strategy.n_total if strategy.n_total is not None else default_n


def apply_strategy(
    strategy: SelectionStrategy,
    preds: Sequence[Prediction],
    corpus: Corpus,
    iteration: int,
    default_n: int,
) -> SelectionOutcome:
    """Run one selection round. ``default_n`` is used where the strategy leaves n_total unset."""
    if isinstance(strategy, TokenRatioFiltered):
        return select_token_ratio_filtered(
            preds,
            corpus,
            strategy.min_l2_ratio,
            lambda ps: apply_strategy(strategy.inner, ps, corpus, iteration, default_n),
        )
    if isinstance(strategy, Scheduled):
        n = strategy.n_for(iteration)
        if n == 0:
            return SelectionOutcome()
        inner = replace(strategy.inner, n_total=n)
        return apply_strategy(inner, preds, corpus, iteration, default_n)
    n_total = strategy.n_total if strategy.n_total is not None else default_n
    if isinstance(strategy, Ratio):
        return select_ratio(preds, strategy.positive_fraction, n_total)
    return select_vanilla(preds, n_total)


# ---------------------------------------------------------------------------
# Ratio estimation and stopping


@dataclass(frozen=True)
class RatioEstimate:
    p_positive_hat: float
    sample_size: int
    dataset_size: int
    expected_positive: int
    expected_negative: int

    def __post_init__(self):
        if self.expected_positive + self.expected_negative != self.dataset_size:
            raise ConfigError("expected class totals must sum to dataset_size")

    @classmethod
    def from_counts(cls, n_positive: int, k: int, dataset_size: int) -> "RatioEstimate":
        p_hat = n_positive / k
        exp_pos = round_half_up(p_hat * dataset_size)
        return cls(p_hat, k, dataset_size, exp_pos, dataset_size - exp_pos)

    def expected(self, label: SentimentLabel) -> int:
        return self.expected_positive if label is POS else self.expected_negative

    def to_dict(self) -> dict:
        return {
            "p_positive_hat": self.p_positive_hat,
            "sample_size": self.sample_size,
            "dataset_size": self.dataset_size,
            "expected_positive": self.expected_positive,
            "expected_negative": self.expected_negative,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RatioEstimate":
        try:
            return cls(
                float(d["p_positive_hat"]),
                int(d["sample_size"]),
                int(d["dataset_size"]),
                int(d["expected_positive"]),
                int(d["expected_negative"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad ratio estimate: {exc}") from None


Annotator = Callable[[Utterance, int, int], SentimentLabel]
"""Called as ``annotator(utterance, i, k)``; raises EstimationAborted to abort."""


def gold_annotator(u: Utterance, i: int, k: int) -> SentimentLabel:
    if u.gold not in (POS, NEG):
        raise EstimationAborted(f"utterance {u.id!r} has no positive/negative gold label")
    return u.gold


def estimate_ratio(corpus: Corpus, k: int, annotator: Annotator = gold_annotator, seed: int = 0) -> RatioEstimate:
    """Annotate ``k`` utterances sampled without replacement and extrapolate class totals."""
    if k <= 0:
        raise ConfigError("sample size k must be >= 1")
    if k > len(corpus):
        raise ConfigError(f"sample size k={k} exceeds corpus size {len(corpus)}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(corpus), size=k, replace=False)
    n_pos = 0
    for i, j in enumerate(picks, start=1):
        label = annotator(corpus.utterances[int(j)], i, k)
        if label is POS:
            n_pos += 1
        elif label is not NEG:
            raise EstimationAborted(f"annotator returned {label!r}")
    return RatioEstimate.from_counts(n_pos, k, len(corpus))


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str | None = None


def ratio_stop_reason(label: SentimentLabel) -> str:
    return f"ratio-stop({label.value})"


def should_stop(
    cumulative_positive: int,
    cumulative_negative: int,
    est: RatioEstimate | None,
    unlabeled_remaining: int,
) -> StopDecision:
    if unlabeled_remaining == 0:
        return StopDecision(True, "exhausted")
    if est is not None:
        if cumulative_positive >= est.expected_positive:
            return StopDecision(True, ratio_stop_reason(POS))
        if cumulative_negative >= est.expected_negative:
            return StopDecision(True, ratio_stop_reason(NEG))
    return StopDecision(False)


def truncate_to_quota(
    outcome: SelectionOutcome, cumulative: Mapping[SentimentLabel, int], est: RatioEstimate
) -> SelectionOutcome:
    """Trim each class so its cumulative selections do not pass the estimated total."""
    kept: list[Selected] = []
    for label in (POS, NEG):
        room = max(est.expected(label) - cumulative[label], 0)
        kept.extend(outcome.of_class(label)[:room])
    return replace(outcome, selected=tuple(kept))
