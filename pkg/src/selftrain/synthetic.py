"""Synthetic code-switched sentiment corpora for desk-scale experiments.

Each language has a vocabulary split into positive-indicative,
negative-indicative and shared words. An utterance of class c draws its L2
fraction from a clipped normal around the class mean, then each token picks
a language by that fraction and a word from the class vocabulary of that
language. The source corpus is pure L1 and plays the role of the labeled
matrix-language data a zero-shot model was trained on.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .corpus import Corpus, LangTag, SentimentLabel, Token, Utterance
from .errors import ConfigError

MIX_STD = 0.15
TEST_FRACTION = 0.2
OTHER_SURFACES = ("!", "?", "...", "@user", "#tag", ":)", ":(", "&")


@dataclass(frozen=True)
class SyntheticSpec:
    size: int = 2000
    class_prior_positive: float = 0.5
    vocab_size_l1: int = 600
    vocab_size_l2: int = 600
    mix_mean_positive: float = 0.35
    mix_mean_negative: float = 0.7
    length_range: tuple[int, int] = (6, 16)
    label_noise: float = 0.0
    seed: int = 0
    # probability that a word is drawn from the class-indicative part of the vocabulary
    indicative_rate: float = 0.6
    # probability of inserting an OTHER-tagged symbol after a word
    other_rate: float = 0.08
    # share of each L1 class-indicative word list that also occurs in the source corpus
    source_overlap: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "length_range", tuple(self.length_range))
        self.validate()

    def validate(self) -> None:
        lo, hi = self.length_range
        problems = []
        if self.size < 2:
            problems.append("size must be >= 2")
        if not 0.0 <= self.class_prior_positive <= 1.0:
            problems.append("class_prior_positive must be in [0, 1]")
        if self.vocab_size_l1 < 3 or self.vocab_size_l2 < 3:
            problems.append("vocabulary sizes must be >= 3")
        for name in ("mix_mean_positive", "mix_mean_negative", "indicative_rate", "other_rate", "source_overlap"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must be in [0, 1]")
        if lo < 1 or hi < lo:
            problems.append("length_range must satisfy 1 <= min <= max")
        if not 0.0 <= self.label_noise < 0.5:
            problems.append("label_noise must be in [0, 0.5)")
        if problems:
            raise ConfigError("invalid synthetic spec: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticSpec":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read synthetic spec {path}: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length_range"] = list(self.length_range)
        return d


@dataclass(frozen=True)
class Vocabulary:
    """Per-language word lists split by class affinity."""

    positive: tuple[str, ...]
    negative: tuple[str, ...]
    shared: tuple[str, ...]

    @classmethod
    def build(cls, prefix: str, size: int) -> "Vocabulary":
        words = [f"{prefix}{i:04d}" for i in range(size)]
        third = size // 3
        return cls(tuple(words[:third]), tuple(words[third : 2 * third]), tuple(words[2 * third :]))

    def for_class(self, label: SentimentLabel) -> tuple[str, ...]:
        return self.positive if label is SentimentLabel.POSITIVE else self.negative

    def restricted(self, share: float) -> "Vocabulary":
        """Keep the first ``share`` of each class-indicative list (at least one word)."""
        def cut(words):
            return words[: max(1, int(len(words) * share))]

        return Vocabulary(cut(self.positive), cut(self.negative), self.shared)


def vocabularies(spec: SyntheticSpec) -> dict[LangTag, Vocabulary]:
    return {
        LangTag.L1: Vocabulary.build("en", spec.vocab_size_l1),
        LangTag.L2: Vocabulary.build("hi", spec.vocab_size_l2),
    }


def _make_tokens(
    rng: np.random.Generator,
    spec: SyntheticSpec,
    vocab: dict[LangTag, Vocabulary],
    label: SentimentLabel,
    l2_fraction: float,
) -> tuple[Token, ...]:
    lo, hi = spec.length_range
    n_words = int(rng.integers(lo, hi + 1))
    tokens: list[Token] = []
    for _ in range(n_words):
        lang = LangTag.L2 if rng.random() < l2_fraction else LangTag.L1
        v = vocab[lang]
        pool = v.for_class(label) if rng.random() < spec.indicative_rate else v.shared
        tokens.append((pool[int(rng.integers(len(pool)))], lang))
        if rng.random() < spec.other_rate:
            tokens.append((OTHER_SURFACES[int(rng.integers(len(OTHER_SURFACES)))], LangTag.OTHER))
    return tuple(tokens)


def _class_labels(rng: np.random.Generator, size: int, prior: float) -> list[SentimentLabel]:
    n_pos = int(np.floor(size * prior + 0.5))
    labels = [SentimentLabel.POSITIVE] * n_pos + [SentimentLabel.NEGATIVE] * (size - n_pos)
    order = rng.permutation(size)
    return [labels[i] for i in order]


def _other(label: SentimentLabel) -> SentimentLabel:
    return SentimentLabel.NEGATIVE if label is SentimentLabel.POSITIVE else SentimentLabel.POSITIVE


def generate_synthetic(spec: SyntheticSpec) -> tuple[Corpus, Corpus, Corpus]:
    """Generate ``(train, test, source)`` corpora, deterministic in ``spec.seed``.

    Train and test together hold exactly ``round(size * prior)`` positives;
    test is a stratified 20% split. Label noise is applied by generating an
    utterance's tokens from the opposite class, so gold counts stay exact.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    vocab = vocabularies(spec)
    mix_mean = {
        SentimentLabel.POSITIVE: spec.mix_mean_positive,
        SentimentLabel.NEGATIVE: spec.mix_mean_negative,
    }

    source_vocab = {LangTag.L1: vocab[LangTag.L1].restricted(spec.source_overlap), LangTag.L2: vocab[LangTag.L2]}

    def make(label: SentimentLabel, mixed: bool) -> tuple[Token, ...]:
        content = _other(label) if rng.random() < spec.label_noise else label
        if mixed:
            frac = float(np.clip(rng.normal(mix_mean[content], MIX_STD), 0.0, 1.0))
            return _make_tokens(rng, spec, vocab, content, frac)
        return _make_tokens(rng, spec, source_vocab, content, 0.0)

    labels = _class_labels(rng, spec.size, spec.class_prior_positive)
    target = [(label, make(label, mixed=True)) for label in labels]

    # stratified split: the first round(0.2 * n_c) items of each class go to test
    n_test = int(np.floor(spec.size * TEST_FRACTION + 0.5))
    n_pos = sum(1 for label, _ in target if label is SentimentLabel.POSITIVE)
    n_test_pos = min(n_pos, int(np.floor(n_test * n_pos / spec.size + 0.5)))
    quota = {SentimentLabel.POSITIVE: n_test_pos, SentimentLabel.NEGATIVE: n_test - n_test_pos}
    train_items, test_items = [], []
    for label, tokens in target:
        if quota[label] > 0:
            quota[label] -= 1
            test_items.append((label, tokens))
        else:
            train_items.append((label, tokens))

    source_labels = _class_labels(rng, spec.size, 0.5)
    source_items = [(label, make(label, mixed=False)) for label in source_labels]

    return (
        _to_corpus("train", train_items),
        _to_corpus("test", test_items),
        _to_corpus("source", source_items),
    )


def _to_corpus(name: str, items: list[tuple[SentimentLabel, tuple[Token, ...]]]) -> Corpus:
    utterances = tuple(
        Utterance(f"{name}-{i:06d}", " ".join(s for s, _ in tokens), tokens, label)
        for i, (label, tokens) in enumerate(items)
    )
    return Corpus(utterances, name)
