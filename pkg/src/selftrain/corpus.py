"""Code-switched utterances: data model, parsers, and preprocessing."""

from __future__ import annotations

import enum
import json
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DuplicateIdError, ParseError, UnknownTagError


class LangTag(enum.Enum):
    L1 = "L1"  # matrix language, e.g. ENG
    L2 = "L2"  # embedded language, e.g. HIN
    OTHER = "O"  # symbols, mentions, special tokens


class SentimentLabel(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NEUTRAL = "neutral"

    @classmethod
    def parse(cls, value: str) -> "SentimentLabel":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown sentiment label {value!r}") from None


TWO_CLASSES = (SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE)

Token = tuple[str, LangTag]

JSONL_TAGS: dict[str, LangTag] = {"L1": LangTag.L1, "L2": LangTag.L2, "O": LangTag.OTHER}
TOKEN_TAGGED_TAGS: dict[str, LangTag] = {"ENG": LangTag.L1, "HIN": LangTag.L2, "0": LangTag.OTHER}


@dataclass(frozen=True)
class Utterance:
    id: str
    text: str
    tokens: tuple[Token, ...] = ()
    gold: SentimentLabel | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("utterance id must be nonempty")
        if not self.tokens and self.text.strip():
            raise ValueError(f"utterance {self.id!r} has text but no tokens")
        for surface, _ in self.tokens:
            if "\n" in surface:
                raise ValueError(f"utterance {self.id!r}: token surface contains a newline")

    @property
    def surfaces(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.tokens)


@dataclass(frozen=True)
class Corpus:
    utterances: tuple[Utterance, ...] = ()
    name: str = "corpus"
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        index: dict[str, int] = {}
        for i, u in enumerate(self.utterances):
            if u.id in index:
                raise DuplicateIdError(f"duplicate utterance id {u.id!r}")
            index[u.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __contains__(self, utterance_id: object) -> bool:
        return utterance_id in self._index

    def __getitem__(self, utterance_id: str) -> Utterance:
        return self.utterances[self._index[utterance_id]]

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.utterances]

    def subset(self, ids: Iterable[str], name: str | None = None) -> "Corpus":
        """Utterances whose id is in ``ids``, in corpus order."""
        wanted = set(ids)
        return Corpus(tuple(u for u in self.utterances if u.id in wanted), name or self.name)


# ---------------------------------------------------------------------------
# Format A: JSONL


def parse_jsonl(data: bytes | str, name: str = "corpus", tag_map: Mapping[str, LangTag] | None = None) -> Corpus:
    tag_map = JSONL_TAGS if tag_map is None else tag_map
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    utterances: list[Utterance] = []
    seen: set[str] = set()
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(record, dict):
            raise ParseError("record is not an object", lineno)
        utt_id = record.get("id")
        text = record.get("text", "")
        raw_tokens = record.get("tokens", [])
        if not isinstance(utt_id, str) or not utt_id:
            raise ParseError("missing or empty 'id'", lineno)
        if not isinstance(text, str):
            raise ParseError("'text' must be a string", lineno)
        if not isinstance(raw_tokens, list):
            raise ParseError("'tokens' must be a list", lineno)
        tokens: list[Token] = []
        for pair in raw_tokens:
            if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, str) for x in pair)):
                raise ParseError(f"malformed token {pair!r}", lineno)
            surface, tag = pair
            if tag not in tag_map:
                raise UnknownTagError(tag, lineno)
            tokens.append((surface, tag_map[tag]))
        gold = None
        if record.get("label") is not None:
            try:
                gold = SentimentLabel.parse(record["label"])
            except (ValueError, AttributeError) as exc:
                raise ParseError(str(exc), lineno) from None
        if utt_id in seen:
            raise DuplicateIdError(f"duplicate utterance id {utt_id!r}", lineno)
        seen.add(utt_id)
        try:
            utterances.append(Utterance(utt_id, text, tuple(tokens), gold))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return Corpus(tuple(utterances), name)


def serialize_jsonl(corpus: Corpus) -> bytes:
    lines = []
    for u in corpus:
        record: dict = {"id": u.id, "text": u.text, "tokens": [[s, t.value] for s, t in u.tokens]}
        if u.gold is not None:
            record["label"] = u.gold.value
        lines.append(json.dumps(record, ensure_ascii=False) + "\n")
    return "".join(lines).encode("utf-8")


# ---------------------------------------------------------------------------
# Format B: token-per-line blocks with a "meta" header


def parse_token_tagged(
    data: bytes | str, name: str = "corpus", tag_map: Mapping[str, LangTag] | None = None
) -> Corpus:
    tag_map = TOKEN_TAGGED_TAGS if tag_map is None else tag_map
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    utterances: list[Utterance] = []
    seen: set[str] = set()

    header: tuple[str, SentimentLabel | None] | None = None
    tokens: list[Token] = []

    def flush():
        if header is None:
            return
        utt_id, gold = header
        if utt_id in seen:
            raise DuplicateIdError(f"duplicate utterance id {utt_id!r}")
        seen.add(utt_id)
        utterances.append(Utterance(utt_id, " ".join(s for s, _ in tokens), tuple(tokens), gold))

    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            flush()
            header, tokens = None, []
            continue
        if header is None:
            parts = line.split()
            if parts[0] != "meta" or len(parts) < 2:
                raise ParseError("block does not start with a 'meta <id> [label]' header", lineno)
            gold = None
            if len(parts) >= 3:
                try:
                    gold = SentimentLabel.parse(parts[2])
                except ValueError as exc:
                    raise ParseError(str(exc), lineno) from None
            header = (parts[1], gold)
            continue
        parts = line.split("\t") if "\t" in line else line.rsplit(None, 1)
        if len(parts) != 2 or not parts[0]:
            raise ParseError(f"expected '<surface><TAB><tag>', got {line!r}", lineno)
        surface, tag = parts[0], parts[1].strip()
        if tag not in tag_map:
            raise UnknownTagError(tag, lineno)
        tokens.append((surface, tag_map[tag]))
    flush()
    return Corpus(tuple(utterances), name)


def load_corpus(path: str | Path, name: str | None = None) -> Corpus:
    """Read a corpus file; ``.jsonl``/``.json`` are format A, anything else format B."""
    path = Path(path)
    data = path.read_bytes()
    name = name or path.stem
    if path.suffix in (".jsonl", ".json"):
        return parse_jsonl(data, name)
    return parse_token_tagged(data, name)


# ---------------------------------------------------------------------------
# Preprocessing

URL_PREFIXES = ("http://", "https://", "www.")


def _is_url(surface: str) -> bool:
    return surface.lower().startswith(URL_PREFIXES)


def _normalize(s: str) -> str:
    return unicodedata.normalize("NFC", s.lower())


def preprocess(corpus: Corpus) -> tuple[Corpus, list[str]]:
    """Drop URL tokens, lowercase and NFC-normalize.

    Returns the cleaned corpus and the ids of utterances that were left
    without tokens. Those utterances are kept.
    """
    out: list[Utterance] = []
    emptied: list[str] = []
    for u in corpus:
        tokens = tuple((_normalize(s), t) for s, t in u.tokens if not _is_url(s))
        text = " ".join(_normalize(w) for w in u.text.split() if not _is_url(w))
        if u.tokens and not tokens:
            emptied.append(u.id)
        if not tokens:
            text = ""
        out.append(replace(u, text=text, tokens=tokens))
    return Corpus(tuple(out), corpus.name), emptied


def filter_two_class(corpus: Corpus) -> tuple[Corpus, int]:
    """Remove gold-neutral utterances; unlabeled ones stay. Returns (corpus, n_removed)."""
    kept = tuple(u for u in corpus if u.gold is not SentimentLabel.NEUTRAL)
    return Corpus(kept, corpus.name), len(corpus) - len(kept)


def count_labels(utterances: Sequence[Utterance]) -> dict[SentimentLabel | None, int]:
    counts: dict[SentimentLabel | None, int] = {}
    for u in utterances:
        counts[u.gold] = counts.get(u.gold, 0) + 1
    return counts


def prepare(corpus: Corpus) -> Corpus:
    """Preprocess and drop gold-neutral utterances: the input form the engine expects."""
    cleaned, _ = preprocess(corpus)
    return filter_two_class(cleaned)[0]
