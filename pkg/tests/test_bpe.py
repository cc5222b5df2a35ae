"""Tokenizer: merge training, round-trips, linking, vocabulary format."""

from collections import Counter

import numpy as np
import pytest

from synglot.bpe import (
    EOS,
    MASK,
    PAD,
    SPECIALS,
    UNK,
    BpeVocab,
    EmptyCorpus,
    decode,
    decode_tokens,
    encode,
    lang_tag,
    split_token,
    train_bpe,
    train_bpe_from_tokens,
)
from synglot.toylang import gen_corpus, render, sample_program
from synglot.toylang.lang import LANGUAGES, lex_texts


def corpus_vocab(tmp_path, vocab_size=512, langs=("alpha", "beta", "gamma"), n=200):
    paths = [gen_corpus(11, n, lang, tmp_path / f"{lang}.jsonl") for lang in langs]
    return train_bpe(paths, vocab_size)


def test_specials_occupy_lowest_ids(tmp_path):
    vocab = corpus_vocab(tmp_path)
    assert vocab.id_to_token[: len(SPECIALS)] == list(SPECIALS)
    assert PAD == 0 and EOS == 2 and MASK == 3 and UNK == 4
    for k, lang in enumerate(sorted(LANGUAGES)):
        assert vocab.id_to_token[len(SPECIALS) + k] == lang_tag(lang)
    assert len(set(vocab.id_to_token)) == len(vocab)


def test_hand_simulated_merge():
    # one repeated token "abab" and room for exactly one merge
    counts = Counter({"abab": 5})
    base = len(SPECIALS) + len(LANGUAGES) + 3  # alphabet: a, b, b</w>
    vocab = train_bpe_from_tokens(counts, base + 1)
    assert vocab.merges == [("a", "b")]


def test_zero_merge_budget_gives_char_level():
    counts = Counter({"abab": 5, "ba": 2})
    base = len(SPECIALS) + len(LANGUAGES) + 4  # a, b, a</w>, b</w>
    vocab = train_bpe_from_tokens(counts, base)
    assert vocab.merges == []
    assert split_token("abab", vocab) == ["a", "b", "a", "b</w>"]


def test_vocab_size_below_alphabet_rejected():
    with pytest.raises(ValueError, match="vocab_size"):
        train_bpe_from_tokens(Counter({"ab": 1}), 3)


def test_empty_corpus_rejected():
    with pytest.raises(EmptyCorpus):
        train_bpe_from_tokens(Counter(), 100)


def test_training_deterministic(tmp_path):
    v1 = corpus_vocab(tmp_path, 300)
    v2 = corpus_vocab(tmp_path, 300)
    assert v1.merges == v2.merges
    assert v1.id_to_token == v2.id_to_token


def test_roundtrip_on_corpus(tmp_path):
    vocab = corpus_vocab(tmp_path)
    for seed in range(300):
        for lang in LANGUAGES:
            text = render(sample_program(np.random.SeedSequence([77, seed])), lang)
            enc = encode(text, lang, vocab)
            assert decode_tokens(enc.ids, vocab) == lex_texts(text)
            assert lex_texts(decode(enc.ids, vocab)) == lex_texts(text)


def test_single_character_token():
    vocab = train_bpe_from_tokens(Counter({"x": 3}), 64)
    enc = encode("x", "alpha", vocab)
    assert len(enc.ids) == 1
    assert enc.linking.tolist() == [[1]]


def test_linking_rows_consecutive_per_leaf(tmp_path):
    vocab = corpus_vocab(tmp_path, 120)  # small budget forces multi-subtoken splits
    text = render(sample_program(5), "gamma")
    enc = encode(text, "gamma", vocab)
    assert enc.linking.shape == (len(enc.ids), enc.n_leaves)
    assert np.all(enc.linking.sum(axis=1) == 1)
    leaf_of = np.argmax(enc.linking, axis=1)
    assert np.all(np.diff(leaf_of) >= 0)  # grouped
    assert set(leaf_of.tolist()) == set(range(enc.n_leaves))  # every leaf covered
    assert len(enc.ids) > enc.n_leaves  # something actually split


def test_shared_vocabulary_across_languages(tmp_path):
    vocab = corpus_vocab(tmp_path)
    a = encode("( x + y )", "alpha", vocab)
    b = encode("( x + y )", "beta", vocab)
    assert a.ids == b.ids


def test_unknown_character_maps_to_unk():
    vocab = train_bpe_from_tokens(Counter({"ab": 2}), 64)
    enc = encode("q", "alpha", vocab)
    assert enc.ids == [UNK]


def test_vocab_json_roundtrip(tmp_path):
    vocab = corpus_vocab(tmp_path, 256)
    path = tmp_path / "vocab.json"
    vocab.save(path)
    loaded = BpeVocab.load(path)
    assert loaded.merges == vocab.merges
    assert loaded.id_to_token == vocab.id_to_token
    text = render(sample_program(9), "beta")
    assert encode(text, "beta", loaded).ids == encode(text, "beta", vocab).ids


def test_decode_skips_specials(tmp_path):
    vocab = corpus_vocab(tmp_path)
    enc = encode("x = 1", "alpha", vocab)
    ids = [vocab.tag_id("alpha")] + enc.ids + [EOS, PAD, PAD]
    assert decode_tokens(ids, vocab) == ["x", "=", "1"]
