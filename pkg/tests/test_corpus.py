from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csasr.corpus import (
    CONT,
    EN,
    ZH,
    BpeModel,
    Sentence,
    TextCodec,
    UnionVocab,
    VocabCollisionError,
    build_union_vocab,
    decode_units,
    tokenize_mixed,
    train_bpe,
)

latin_words = st.text(alphabet="abcde", min_size=1, max_size=6)
cjk = st.sampled_from(list("我你他她好"))


def test_tokenize_mixed_splits_scripts():
    s = tokenize_mixed("我想要buy一个 iPhone, ok?")
    assert s.surfaces == ["我", "想", "要", "buy", "一", "个", "iPhone", "ok"]
    assert [t.lang for t in s.tokens] == [ZH] * 3 + [EN] + [ZH] * 2 + [EN, EN]


def test_tokenize_empty_and_punctuation_only():
    assert tokenize_mixed("").is_empty
    assert tokenize_mixed(" ,.!? ").is_empty


def test_tokenize_keeps_apostrophes_inside_words():
    assert tokenize_mixed("don't 'quote'").surfaces == ["don't", "quote"]


@given(st.lists(st.one_of(latin_words, cjk), min_size=1, max_size=8))
def test_tokenize_round_trips_space_joined_tokens(toks):
    # adjacent Latin words need a space; CJK always splits per character
    text = " ".join(toks)
    assert tokenize_mixed(text).surfaces == toks


def test_sentence_dict_round_trip():
    s = tokenize_mixed("你 hello", source_id="x")
    assert Sentence.from_dict(s.to_dict()) == s


def _brute_first_merge(words):
    pairs = Counter()
    for w, c in Counter(words).items():
        for a, b in zip(w, w[1:]):
            pairs[(a, b)] += c
    top = max(pairs.values())
    return min(p for p, c in pairs.items() if c == top)


def test_bpe_first_merge_matches_counting_oracle():
    words = ["aab", "abab", "bab", "ab", "ba"]
    bpe = train_bpe([Sentence.from_surfaces(words)], 1)
    assert bpe.merges[0] == _brute_first_merge(words)


def test_bpe_ties_break_lexicographically():
    # "ab" and "cd" both occur once; ("a", "b") < ("c", "d")
    bpe = train_bpe([Sentence.from_surfaces(["ab", "cd"])], 1)
    assert bpe.merges == (("a", "b"),)


def test_bpe_stops_when_no_pairs_remain():
    bpe = train_bpe([Sentence.from_surfaces(["ab"])], 10)
    assert bpe.merges == (("a", "b"),)


def test_bpe_ignores_other_language():
    bpe = train_bpe([tokenize_mixed("ab 我你")], 5, lang=EN)
    assert set(bpe.base_symbols) == {"a", "b"}


@given(st.lists(latin_words, min_size=1, max_size=10), st.integers(0, 20))
@settings(max_examples=60, deadline=None)
def test_bpe_encode_decode_round_trip(words, merges):
    bpe = train_bpe([Sentence.from_surfaces(words)], merges)
    units = [u for w in words for u in bpe.encode(w)]
    assert decode_units(units) == " ".join(words)
    assert set(units) <= set(bpe.units())
    for w in words:
        pieces = bpe.encode(w)
        assert all(p.endswith(CONT) for p in pieces[:-1]) and not pieces[-1].endswith(CONT)


def test_bpe_file_round_trip(tmp_path):
    bpe = train_bpe([Sentence.from_surfaces(["abc", "abd", "bcd"])], 3)
    bpe.save(tmp_path / "m.bpe")
    again = BpeModel.load(tmp_path / "m.bpe")
    assert again.merges == bpe.merges and again.base_symbols == bpe.base_symbols
    assert again.encode("abcd") == bpe.encode("abcd")


def test_bpe_rejects_foreign_file():
    with pytest.raises(ValueError):
        BpeModel.from_lines(["hello"])


def test_union_vocab_layout_and_langs():
    v = build_union_vocab(["b", "a@@"], "你我")
    assert v.blank_id == 0
    assert [v.surface(i) for i in range(len(v))] == ["<blk>", "a@@", "b", "你", "我"]
    assert v.lang(1) == EN and v.lang(4) == ZH
    assert "b" in v and "c" not in v
    with pytest.raises(KeyError):
        v.id_of("c")


def test_union_vocab_collision():
    with pytest.raises(VocabCollisionError) as err:
        build_union_vocab(["我"], "我你")
    assert err.value.collisions == ["我"]


def test_union_vocab_file_round_trip(tmp_path):
    v = build_union_vocab(["x", "y"], "他")
    v.save(tmp_path / "v.txt")
    assert UnionVocab.load(tmp_path / "v.txt") == v


@given(st.lists(st.one_of(st.sampled_from(["abc", "ab", "cab", "bca"]), st.sampled_from(list("我你他"))),
                min_size=1, max_size=8))
@settings(max_examples=60, deadline=None)
def test_codec_round_trip(toks):
    bpe = train_bpe([Sentence.from_surfaces(["abc", "ab", "cab", "bca"])], 3)
    codec = TextCodec(bpe, build_union_vocab(bpe, "我你他"))
    text = " ".join(toks)
    ids = codec.encode(text)
    assert codec.vocab.blank_id not in ids
    assert codec.decode(ids) == text
    assert TextCodec.from_dict(codec.to_dict()).encode(text) == ids
