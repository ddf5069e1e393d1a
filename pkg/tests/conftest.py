from __future__ import annotations

import sys
from pathlib import Path
from typing import Callable, Mapping, Sequence

import pytest

from selftrain.backend import Prediction, ProbVector, TrainExample
from selftrain.corpus import Corpus, LangTag, SentimentLabel, Utterance

P, N = SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE
PEERS = Path(__file__).parent / "peers"


def utt(uid: str, words: str = "w", tags: str | None = None, gold: SentimentLabel | None = None) -> Utterance:
    """Build an utterance; ``tags`` is a string over {1, 2, o}, one char per word."""
    surfaces = words.split()
    tags = tags or "1" * len(surfaces)
    mapping = {"1": LangTag.L1, "2": LangTag.L2, "o": LangTag.OTHER}
    return Utterance(uid, " ".join(surfaces), tuple((s, mapping[t]) for s, t in zip(surfaces, tags)), gold)


def pred(uid: str, p_positive: float) -> Prediction:
    return Prediction.from_probs(uid, ProbVector.from_positive(p_positive))


class ScriptedBackend:
    """In-process backend returning fixed P(positive) per utterance id; records training calls."""

    def __init__(self, probs: Mapping[str, float] | Callable[[str], float] = lambda _: 0.9):
        self.probs = probs
        self.train_calls: list[list[TrainExample]] = []
        self.predict_calls = 0

    def _p(self, uid: str) -> float:
        return self.probs(uid) if callable(self.probs) else self.probs[uid]

    def predict_batch(self, utterances: Sequence[Utterance]) -> list[Prediction]:
        self.predict_calls += 1
        return [pred(u.id, self._p(u.id)) for u in utterances]

    def train_one_epoch(self, examples, epochs: int = 1):
        self.train_calls.append(list(examples))
        return self


def make_corpus(n: int, gold: Callable[[int], SentimentLabel | None] | None = None, name: str = "c") -> Corpus:
    return Corpus(tuple(utt(f"u{i:04d}", f"w{i}", gold=gold(i) if gold else None) for i in range(n)), name)


def peer_cmd(script: str, *args: str) -> list[str]:
    return [sys.executable, str(PEERS / script), *args]


@pytest.fixture
def scripted():
    return ScriptedBackend
