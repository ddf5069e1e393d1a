"""Classifier backends: the contract used by the engine and a built-in model.

The built-in model is a two-class softmax over hashed word n-grams trained
with plain SGD. It is small enough to pre-train on a matrix-language corpus
in well under a second and then serve as the zero-shot starting point.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np

from .corpus import TWO_CLASSES, Corpus, SentimentLabel, Utterance
from .errors import ConfigError, NumericError

log = logging.getLogger(__name__)

BIAS = -1  # feature key of the constant bias term
CLASS_INDEX = {SentimentLabel.POSITIVE: 0, SentimentLabel.NEGATIVE: 1}

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class ProbVector:
    p_positive: float
    p_negative: float

    def __post_init__(self):
        for p in (self.p_positive, self.p_negative):
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                raise ValueError(f"probability out of range: {self}")
        if abs(self.p_positive + self.p_negative - 1.0) > 1e-6:
            raise ValueError(f"probabilities do not sum to 1: {self}")

    @classmethod
    def from_positive(cls, p_positive: float) -> "ProbVector":
        return cls(p_positive, 1.0 - p_positive)


def confidence(p: ProbVector) -> float:
    return max(p.p_positive, p.p_negative)


def argmax_label(p: ProbVector) -> SentimentLabel:
    # exact ties go to Positive
    return SentimentLabel.POSITIVE if p.p_positive >= p.p_negative else SentimentLabel.NEGATIVE


@dataclass(frozen=True)
class Prediction:
    utterance_id: str
    probs: ProbVector
    predicted: SentimentLabel
    confidence: float

    @classmethod
    def from_probs(cls, utterance_id: str, probs: ProbVector) -> "Prediction":
        return cls(utterance_id, probs, argmax_label(probs), confidence(probs))


@dataclass(frozen=True)
class TrainExample:
    utterance_id: str
    text: str
    label: SentimentLabel
    # token surfaces; the built-in model featurizes these, external peers see ``text``
    surfaces: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.label not in TWO_CLASSES:
            raise ValueError(f"training label must be positive or negative, got {self.label}")

    @classmethod
    def from_utterance(cls, u: Utterance, label: SentimentLabel) -> "TrainExample":
        return cls(u.id, u.text, label, u.surfaces)

    def words(self) -> tuple[str, ...]:
        return self.surfaces if self.surfaces is not None else tuple(self.text.split())


@dataclass(frozen=True)
class BackendConfig:
    learning_rate: float = 0.1
    batch_size: int = 16
    hash_dim: int = 2**18
    ngram_max: int = 2
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.hash_dim < 2**10 or self.hash_dim & (self.hash_dim - 1):
            raise ConfigError("hash_dim must be a power of two >= 1024")
        if self.ngram_max not in (1, 2):
            raise ConfigError("ngram_max must be 1 or 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


class ClassifierBackend(Protocol):
    def predict_batch(self, utterances: Sequence[Utterance]) -> list[Prediction]: ...

    def train_one_epoch(self, examples: Sequence[TrainExample], epochs: int = 1) -> "ClassifierBackend": ...


# ---------------------------------------------------------------------------
# Features


def fnv1a_64(s: str) -> int:
    h = _FNV_OFFSET
    for byte in s.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def featurize_words(words: Sequence[str], config: BackendConfig) -> Counter:
    """Hashed unigram (and bigram) counts plus the bias feature."""
    feats: Counter = Counter()
    for w in words:
        feats[fnv1a_64(w) % config.hash_dim] += 1
    if config.ngram_max >= 2:
        for a, b in zip(words, words[1:]):
            feats[fnv1a_64(f"{a}_{b}") % config.hash_dim] += 1
    feats[BIAS] = 1
    return feats


def featurize(u: Utterance, config: BackendConfig) -> Counter:
    return featurize_words(u.surfaces, config)


# ---------------------------------------------------------------------------
# Built-in model


def _softmax2(s_pos: float, s_neg: float) -> float:
    """P(positive) for two scores, computed without overflow."""
    d = s_pos - s_neg
    if d >= 0:
        return 1.0 / (1.0 + math.exp(-d))
    e = math.exp(d)
    return e / (1.0 + e)


class BuiltinModel:
    """Hashed n-gram softmax classifier trained by SGD on cross-entropy."""

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig()
        self.weights = np.zeros((2, self.config.hash_dim))
        self.bias = np.zeros(2)
        self.train_calls = 0
        self._cache: dict[tuple[str, ...], tuple[np.ndarray, np.ndarray]] = {}

    # -- features ---------------------------------------------------------

    def _sparse(self, words: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(words)
        if hit is None:
            feats = featurize_words(words, self.config)
            del feats[BIAS]
            keys = sorted(feats)
            hit = (np.array(keys, dtype=np.int64), np.array([feats[k] for k in keys], dtype=float))
            self._cache[words] = hit
        return hit

    # -- inference --------------------------------------------------------

    def scores(self, words: Sequence[str]) -> np.ndarray:
        idx, counts = self._sparse(tuple(words))
        return self.weights[:, idx] @ counts + self.bias

    def positive_probs(self, word_lists: Sequence[tuple[str, ...]]) -> np.ndarray:
        n = len(word_lists)
        if n == 0:
            return np.zeros(0)
        parts = [self._sparse(tuple(w)) for w in word_lists]
        lengths = np.array([len(p[0]) for p in parts])
        idx = np.concatenate([p[0] for p in parts]) if lengths.sum() else np.zeros(0, dtype=np.int64)
        counts = np.concatenate([p[1] for p in parts]) if lengths.sum() else np.zeros(0)
        seg = np.repeat(np.arange(n), lengths)
        with np.errstate(over="ignore", invalid="ignore"):
            s_pos = np.bincount(seg, weights=self.weights[0, idx] * counts, minlength=n) + self.bias[0]
            s_neg = np.bincount(seg, weights=self.weights[1, idx] * counts, minlength=n) + self.bias[1]
            finite = np.isfinite(s_pos - s_neg).all()
        if not finite:
            raise NumericError("non-finite classifier scores")
        return np.array([_softmax2(a, b) for a, b in zip(s_pos, s_neg)])

    def predict_batch(self, utterances: Sequence[Utterance]) -> list[Prediction]:
        probs = self.positive_probs([u.surfaces for u in utterances])
        return [Prediction.from_probs(u.id, ProbVector.from_positive(float(p))) for u, p in zip(utterances, probs)]

    # -- training ---------------------------------------------------------

    def _sgd_step(self, words: tuple[str, ...], label: SentimentLabel, lr: float) -> None:
        idx, counts = self._sparse(words)
        s = self.weights[:, idx] @ counts + self.bias
        p_pos = _softmax2(s[0], s[1])
        y_pos = 1.0 if label is SentimentLabel.POSITIVE else 0.0
        g = np.array([p_pos - y_pos, y_pos - p_pos])  # d loss / d scores
        self.weights[:, idx] -= lr * np.outer(g, counts)
        self.bias -= lr * g

    def train_one_epoch(self, examples: Sequence[TrainExample], epochs: int = 1) -> "BuiltinModel":
        if epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not examples:
            return self
        rng = np.random.default_rng([self.config.seed, self.train_calls])
        self.train_calls += 1
        items = [(ex.words(), ex.label) for ex in examples]
        lr = self.config.learning_rate
        for _ in range(epochs):
            # overflow surfaces through the finiteness check below
            with np.errstate(over="ignore", invalid="ignore"):
                for i in rng.permutation(len(items)):
                    words, label = items[i]
                    self._sgd_step(words, label, lr)
            if not (np.isfinite(self.bias).all() and np.isfinite(self.weights).all()):
                raise NumericError("non-finite weights after SGD epoch")
        return self

    def pretrain(self, corpus: Corpus, epochs: int = 5) -> "BuiltinModel":
        """Supervised training on a gold-labeled source corpus (the zero-shot stand-in)."""
        examples = [TrainExample.from_utterance(u, u.gold) for u in corpus if u.gold in TWO_CLASSES]
        if not examples:
            raise ConfigError(f"pretraining corpus {corpus.name!r} has no positive/negative gold labels")
        return self.train_one_epoch(examples, epochs)

    # -- loss and gradient (used by gradient checks) ----------------------

    def loss(self, examples: Iterable[TrainExample]) -> float:
        """Mean cross-entropy of the softmax outputs."""
        total, n = 0.0, 0
        for ex in examples:
            s = self.scores(ex.words())
            m = max(s[0], s[1])
            log_z = m + math.log(math.exp(s[0] - m) + math.exp(s[1] - m))
            total += log_z - s[CLASS_INDEX[ex.label]]
            n += 1
        return total / n if n else 0.0

    def gradient(self, examples: Sequence[TrainExample]) -> tuple[np.ndarray, np.ndarray]:
        """Analytic gradient of :meth:`loss` with respect to (weights, bias)."""
        g_w = np.zeros_like(self.weights)
        g_b = np.zeros_like(self.bias)
        for ex in examples:
            idx, counts = self._sparse(tuple(ex.words()))
            s = self.weights[:, idx] @ counts + self.bias
            p_pos = _softmax2(s[0], s[1])
            y_pos = 1.0 if ex.label is SentimentLabel.POSITIVE else 0.0
            g = np.array([p_pos - y_pos, y_pos - p_pos])
            g_w[:, idx] += np.outer(g, counts)
            g_b += g
        n = max(len(examples), 1)
        return g_w / n, g_b / n

    def copy(self) -> "BuiltinModel":
        other = BuiltinModel(self.config)
        other.weights = self.weights.copy()
        other.bias = self.bias.copy()
        other.train_calls = self.train_calls
        other._cache = self._cache
        return other
