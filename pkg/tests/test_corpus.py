import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selftrain.corpus import (
    Corpus,
    LangTag,
    SentimentLabel,
    Utterance,
    filter_two_class,
    parse_jsonl,
    parse_token_tagged,
    preprocess,
    serialize_jsonl,
)
from selftrain.errors import DuplicateIdError, ParseError, UnknownTagError

from conftest import P, N, utt


class TestParseJsonl:
    def test_single_record(self):
        c = parse_jsonl(b'{"id":"a","text":"x","tokens":[["x","L1"]]}\n')
        assert len(c) == 1
        u = c["a"]
        assert u.gold is None
        assert u.tokens == (("x", LangTag.L1),)

    def test_neutral_label(self):
        c = parse_jsonl('{"id":"a","text":"x","tokens":[["x","L1"]],"label":"neutral"}')
        assert c["a"].gold is SentimentLabel.NEUTRAL

    def test_duplicate_id(self):
        data = '{"id":"a","text":"x","tokens":[["x","L1"]]}\n{"id":"a","text":"y","tokens":[["y","L2"]]}\n'
        with pytest.raises(DuplicateIdError) as exc:
            parse_jsonl(data)
        assert exc.value.line == 2

    def test_malformed_line_number(self):
        data = '{"id":"a","text":"x","tokens":[["x","L1"]]}\n\n{"id": oops}\n'
        with pytest.raises(ParseError) as exc:
            parse_jsonl(data)
        assert exc.value.line == 3

    def test_tag_mapping(self):
        c = parse_jsonl('{"id":"a","text":"a b c","tokens":[["a","L1"],["b","L2"],["c","O"]]}')
        assert [t for _, t in c["a"].tokens] == [LangTag.L1, LangTag.L2, LangTag.OTHER]

    def test_unknown_tag(self):
        with pytest.raises(UnknownTagError, match="FRA"):
            parse_jsonl('{"id":"a","text":"a","tokens":[["a","FRA"]]}')

    def test_order_preserved(self):
        lines = "".join(json.dumps({"id": i, "text": i, "tokens": [[i, "L1"]]}) + "\n" for i in "zyx")
        assert parse_jsonl(lines).ids == ["z", "y", "x"]


class TestParseTokenTagged:
    def test_block(self):
        c = parse_token_tagged("meta t1 negative\nyeh\tHIN\nmovie\tENG\n!\t0\n")
        u = c["t1"]
        assert u.gold is N
        assert u.text == "yeh movie !"
        assert u.tokens == (("yeh", LangTag.L2), ("movie", LangTag.L1), ("!", LangTag.OTHER))

    def test_space_separated_tags(self):
        c = parse_token_tagged("meta t1 negative\nyeh HIN\nmovie ENG\n! 0\n")
        assert len(c["t1"].tokens) == 3

    def test_empty_input(self):
        assert len(parse_token_tagged(b"")) == 0

    def test_unknown_tag(self):
        with pytest.raises(UnknownTagError) as exc:
            parse_token_tagged("meta t1\nword\tFRA\n")
        assert exc.value.tag == "FRA"
        assert "FRA" in str(exc.value)

    def test_missing_header(self):
        with pytest.raises(ParseError, match="meta"):
            parse_token_tagged("word\tENG\n")

    def test_multiple_blocks_and_optional_label(self):
        c = parse_token_tagged("meta a positive\nhi\tENG\n\n\nmeta b\nyaar\tHIN\n")
        assert c.ids == ["a", "b"]
        assert c["a"].gold is P and c["b"].gold is None

    def test_custom_mapping(self):
        tags = {"EN": LangTag.L1, "SPA": LangTag.L2, "OTHER": LangTag.OTHER}
        c = parse_token_tagged("meta a\nhola\tSPA\n", tag_map=tags)
        assert c["a"].tokens == (("hola", LangTag.L2),)


class TestPreprocess:
    def test_url_removed(self):
        c = Corpus((utt("a", "good https://t.co/x"),))
        out, emptied = preprocess(c)
        assert out["a"].surfaces == ("good",)
        assert out["a"].text == "good"
        assert emptied == []

    @pytest.mark.parametrize("url", ["http://x.y", "https://x.y", "www.x.y", "HTTPS://X.Y"])
    def test_url_prefixes(self, url):
        out, _ = preprocess(Corpus((utt("a", f"ok {url}"),)))
        assert out["a"].surfaces == ("ok",)

    def test_lowercase(self):
        out, _ = preprocess(Corpus((utt("a", "GOOD"),)))
        assert out["a"].surfaces == ("good",)

    def test_nfc(self):
        decomposed = "CAFE\u0301"
        out, _ = preprocess(Corpus((utt("a", decomposed),)))
        assert out["a"].surfaces == ("caf\u00e9",)

    def test_emptied_utterance_kept_and_flagged(self):
        c = Corpus((utt("a", "www.x.com"), utt("b", "fine")))
        out, emptied = preprocess(c)
        assert out.ids == ["a", "b"]
        assert out["a"].tokens == () and out["a"].text == ""
        assert emptied == ["a"]


class TestFilterTwoClass:
    def test_neutral_removed(self):
        c = Corpus((utt("a", gold=P), utt("b", gold=N), utt("c", gold=SentimentLabel.NEUTRAL)))
        out, removed = filter_two_class(c)
        assert out.ids == ["a", "b"]
        assert removed == 1

    def test_unlabeled_identity(self):
        c = Corpus(tuple(utt(f"u{i}") for i in range(5)))
        out, removed = filter_two_class(c)
        assert out == c and removed == 0

    def test_table1_hinglish_counts(self):
        # Hinglish training set: 4634 positive / 4102 negative / 5264 neutral
        golds = [P] * 4634 + [N] * 4102 + [SentimentLabel.NEUTRAL] * 5264
        c = Corpus(tuple(Utterance(f"h{i}", "", (), g) for i, g in enumerate(golds)))
        out, removed = filter_two_class(c)
        assert len(out) == 8736
        assert removed == 5264


# ---------------------------------------------------------------------------
# properties

surface = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\n\r\t \x0b\x0c\x1c\x1d\x1e\x1f\x85  "),
    min_size=1,
    max_size=8,
)
token = st.tuples(surface, st.sampled_from(list(LangTag)))
label = st.one_of(st.none(), st.sampled_from(list(SentimentLabel)))


@st.composite
def corpora(draw):
    n = draw(st.integers(0, 6))
    ids = draw(st.lists(st.text(alphabet="abcdefgh0123", min_size=1, max_size=5), min_size=n, max_size=n, unique=True))
    utts = []
    for i in ids:
        tokens = tuple(draw(st.lists(token, min_size=1, max_size=6)))
        utts.append(Utterance(i, " ".join(s for s, _ in tokens), tokens, draw(label)))
    return Corpus(tuple(utts))


@settings(max_examples=100, deadline=None)
@given(corpora())
def test_jsonl_round_trip(c):
    assert parse_jsonl(serialize_jsonl(c)) == c


@settings(max_examples=100, deadline=None)
@given(corpora())
def test_preprocess_idempotent(c):
    once, _ = preprocess(c)
    twice, _ = preprocess(once)
    assert twice == once
    assert once.ids == c.ids


@settings(max_examples=100, deadline=None)
@given(corpora())
def test_filter_keeps_survivors_unchanged(c):
    out, _ = filter_two_class(c)
    for u in out:
        assert u == c[u.id]
    # relative order preserved
    positions = [c.ids.index(i) for i in out.ids]
    assert positions == sorted(positions)
