"""Corpus layer: tokenizer, records, vocabulary, serialization, synthetic data."""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from recstyle.corpus import (
    BOS_ID,
    EOS_ID,
    MASK,
    MASK_ID,
    PAD_ID,
    UNK_ID,
    CorpusError,
    CorpusPair,
    Record,
    SyntheticSpec,
    Vocabulary,
    build_vocabulary,
    generate_synthetic,
    load_corpus,
    normalize_value,
    save_corpus,
    tiny_synthetic_spec,
    tokenize,
)


# --- tokenize ---------------------------------------------------------------

def test_tokenize_splits_trailing_punctuation():
    assert tokenize("The Mill is a pub.") == ("the", "mill", "is", "a", "pub", ".")
    assert tokenize("Wow?!") == ("wow", "?", "!")
    assert tokenize("really!!") == ("really", "!", "!")


def test_tokenize_keeps_lone_punctuation_and_interior_marks():
    assert tokenize(".") == (".",)
    assert tokenize("3.5 stars") == ("3.5", "stars")
    assert tokenize("a,b") == ("a,b",)  # only terminal marks split


def test_tokenize_lowercases_and_collapses_whitespace():
    assert tokenize("  A \t B\nC ") == ("a", "b", "c")
    assert tokenize("") == ()


@given(st.text(alphabet="ab .,!?", max_size=30))
def test_tokenize_idempotent(text):
    once = tokenize(text)
    assert tokenize(" ".join(once)) == once


# --- normalize_value ---------------------------------------------------------

def test_normalize_value_joins_words_and_maps_phrases():
    assert normalize_value("area", "City Centre") == "city_centre"
    assert normalize_value("familyfriendly", "Yes") == "family_friendly"
    assert normalize_value("familyfriendly", "no") == "not_family_friendly"
    with pytest.raises(CorpusError):
        normalize_value("area", "   ")


# --- Record / CorpusPair ------------------------------------------------------

def test_record_accessors():
    rec = Record((("name", "the_mill"), ("food", "thai")))
    assert len(rec) == 2
    assert rec.fields() == ("name", "food")
    assert rec.values() == ("the_mill", "thai")
    assert rec.field_set() == frozenset({"name", "food"})
    assert rec.value("food") == "thai"
    assert rec.value("area") is None


@pytest.mark.parametrize(
    "entries",
    [
        (),
        (("name", "a"), ("name", "b")),  # duplicate field
        (("", "a"),),
        (("name", ""),),
        (("na me", "a"),),
        (("name", "a b"),),
        tuple((f"f{i}", "v") for i in range(13)),  # over the entry cap
    ],
)
def test_record_rejects_bad_entries(entries):
    with pytest.raises(CorpusError):
        Record(tuple(entries))


def test_corpus_pair_requires_text_and_id():
    rec = Record((("name", "a"),))
    with pytest.raises(CorpusError):
        CorpusPair(rec, (), "x")
    with pytest.raises(CorpusError):
        CorpusPair(rec, ("hi",), "")


# --- Vocabulary ----------------------------------------------------------------

def test_vocabulary_reserves_special_ids():
    v = Vocabulary(["b", "a"])
    assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID) == (0, 1, 2, 3, 4)
    assert v.token(MASK_ID) == MASK
    assert v.get("b") == 5 and v.get("a") == 6
    assert v.get("zzz") is None
    assert v.lookup("zzz") == UNK_ID
    assert "a" in v and "zzz" not in v
    with pytest.raises(CorpusError):
        v.token(len(v))
    with pytest.raises(CorpusError):
        Vocabulary(["a", "a"])
    with pytest.raises(CorpusError):
        Vocabulary([MASK])


@given(st.lists(st.text(alphabet="abcdef", min_size=1, max_size=4), unique=True, max_size=20))
def test_vocabulary_bijection(tokens):
    v = Vocabulary(tokens)
    for tok in tokens:
        assert v.token(v.get(tok)) == tok
    for idx in range(len(v)):
        assert v.get(v.token(idx)) == idx or idx == UNK_ID and v.token(idx) == "<unk>"


def test_content_hash_tracks_tokens():
    assert Vocabulary(["a"]).content_hash() == Vocabulary(["a"]).content_hash()
    assert Vocabulary(["a"]).content_hash() != Vocabulary(["b"]).content_hash()


def test_build_vocabulary_orders_by_count_then_token():
    pairs = [
        CorpusPair(Record((("f", "v"),)), ("b", "a", "a"), "1"),
        CorpusPair(Record((("f", "v"),)), ("b", "c"), "2"),
    ]
    v = build_vocabulary(pairs)
    # counts: a=2, b=2, f=2, v=2, c=1 -> alphabetical within the tie, then c
    assert v.tokens[5:] == ("a", "b", "f", "v", "c")
    v2 = build_vocabulary(pairs, min_count=2)
    assert v2.tokens[5:] == ("a", "b", "f", "v")
    with pytest.raises(CorpusError):
        build_vocabulary([])
    with pytest.raises(CorpusError):
        build_vocabulary(pairs, min_count=0)


# --- serialization ---------------------------------------------------------------

def test_corpus_round_trip_is_byte_stable(tmp_path, tiny_corpus):
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    save_corpus(tiny_corpus, p1)
    loaded = load_corpus(p1)
    assert loaded == tiny_corpus
    save_corpus(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_corpus_reports_bad_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "1", "record": [{"field": "f", "value": "v"}], "text": "hi"}\nnot json\n')
    with pytest.raises(CorpusError, match="line 2"):
        load_corpus(path)
    path.write_text('{"id": "1", "record": [{"field": "f"}], "text": "hi"}\n')
    with pytest.raises(CorpusError, match="line 1"):
        load_corpus(path)


def test_load_corpus_normalizes_values(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(
        '{"id": "1", "record": [{"field": "area", "value": "City Centre"}], "text": "in the City Centre."}\n'
    )
    pair = load_corpus(path)[0]
    assert pair.record.value("area") == "city_centre"
    assert pair.text == ("in", "the", "city", "centre", ".")


# --- synthetic corpus ---------------------------------------------------------------

def test_generate_synthetic_is_deterministic():
    a = generate_synthetic(SyntheticSpec(num_pairs=50))
    b = generate_synthetic(SyntheticSpec(num_pairs=50))
    assert a == b


def test_generate_synthetic_default_shape():
    pairs = generate_synthetic(SyntheticSpec())
    assert len(pairs) == 2000
    assert pairs[0].id == "syn-000000" and pairs[-1].id == "syn-001999"
    sizes = [len(p.record) for p in pairs]
    assert min(sizes) >= 3 and max(sizes) <= 8
    mean = sum(sizes) / len(sizes)
    assert 4.9 < mean < 6.0
    vocab = build_vocabulary(pairs)
    assert len(vocab) == 119  # frozen regression value for the default spec


def test_generate_synthetic_expresses_each_value_once():
    for pair in generate_synthetic(SyntheticSpec(num_pairs=40, seed=11)):
        assert pair.record.value("name") is not None
        for val in pair.record.values():
            assert pair.text.count(val) == 1


def test_tiny_spec_fits_gradient_check_budget(tiny_corpus, tiny_vocab):
    assert len(tiny_vocab) <= 50
    assert all(2 <= len(p.record) <= 3 for p in tiny_corpus)


def test_synthetic_spec_validation():
    with pytest.raises(CorpusError):
        SyntheticSpec(min_fields=0)
    with pytest.raises(CorpusError):
        SyntheticSpec(min_fields=5, max_fields=4)
    with pytest.raises(CorpusError):
        SyntheticSpec(num_pairs=0)
    with pytest.raises(CorpusError):
        tiny_synthetic_spec(num_pairs=0)
