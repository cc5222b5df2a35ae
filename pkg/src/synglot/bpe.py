"""Byte-pair encoding over lexer tokens, shared across languages.

Merges never cross token boundaries: each lexer token is split to characters
with an end-of-token marker on the last one, and pairs are merged greedily
by corpus frequency (ties broken lexicographically, so training is
deterministic). Keeping the marker makes detokenization exact, which
exact-match scoring and back-translation rely on.

The vocabulary holds, in fixed id order: the special symbols, one tag per
language, the character alphabet, then one symbol per merge.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from synglot.toylang.lang import LANGUAGES, lex_texts

MARKER = "</w>"
SPECIALS = ("<pad>", "<bos>", "<eos>", "<mask>", "<unk>")
PAD, BOS, EOS, MASK, UNK = range(5)

VOCAB_FORMAT_VERSION = 1


class EmptyCorpus(Exception):
    pass


def lang_tag(lang: str) -> str:
    return f"<{lang}>"


def _token_symbols(token: str) -> tuple[str, ...]:
    return tuple(token[:-1]) + (token[-1] + MARKER,)


@dataclass
class BpeVocab:
    merges: list[tuple[str, str]]
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def n_specials(self) -> int:
        return len(SPECIALS) + len(LANGUAGES)

    def tag_id(self, lang: str) -> int:
        return self.token_to_id[lang_tag(lang)]

    def is_special(self, token_id: int) -> bool:
        return token_id < self.n_specials

    def save(self, path) -> None:
        doc = {
            "format_version": VOCAB_FORMAT_VERSION,
            "specials": list(SPECIALS) + [lang_tag(lang) for lang in sorted(LANGUAGES)],
            "merges": [list(pair) for pair in self.merges],
            "tokens": self.id_to_token,
        }
        Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeVocab":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format_version") != VOCAB_FORMAT_VERSION:
            raise ValueError(f"unsupported vocab format: {doc.get('format_version')}")
        tokens = doc["tokens"]
        return cls(
            merges=[tuple(pair) for pair in doc["merges"]],
            id_to_token=tokens,
            token_to_id={t: i for i, t in enumerate(tokens)},
        )


@dataclass
class EncodedFunction:
    lang: str
    ids: list[int]
    linking: np.ndarray  # (len(ids), n_leaves) int8, one 1 per row
    n_leaves: int


def train_bpe_from_tokens(token_counts: Counter, vocab_size: int) -> BpeVocab:
    if not token_counts:
        raise EmptyCorpus("no tokens to train on")

    words: dict[str, tuple[str, ...]] = {
        tok: _token_symbols(tok) for tok in token_counts
    }
    alphabet = sorted({sym for syms in words.values() for sym in syms})
    base = list(SPECIALS) + [lang_tag(lang) for lang in sorted(LANGUAGES)] + alphabet
    if vocab_size < len(base):
        raise ValueError(
            f"vocab_size {vocab_size} cannot hold {len(SPECIALS) + len(LANGUAGES)} "
            f"specials plus alphabet of {len(alphabet)}"
        )

    merges: list[tuple[str, str]] = []
    symbols = list(base)
    while len(symbols) < vocab_size:
        pair_freq: Counter = Counter()
        for tok, syms in words.items():
            freq = token_counts[tok]
            for a, b in zip(syms, syms[1:]):
                pair_freq[(a, b)] += freq
        if not pair_freq:
            break
        best_freq = max(pair_freq.values())
        best = min(pair for pair, f in pair_freq.items() if f == best_freq)
        merges.append(best)
        merged = best[0] + best[1]
        symbols.append(merged)
        for tok, syms in words.items():
            words[tok] = _apply_one(syms, best, merged)

    return BpeVocab(
        merges=merges,
        id_to_token=symbols,
        token_to_id={t: i for i, t in enumerate(symbols)},
    )


def _apply_one(syms: tuple[str, ...], pair: tuple[str, str], merged: str) -> tuple[str, ...]:
    if pair[0] not in syms:
        return syms
    out = []
    i = 0
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == pair[0] and syms[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def train_bpe(corpora: list, vocab_size: int, seed: int = 0) -> BpeVocab:
    """Train over the pooled lexer tokens of every corpus file given."""
    counts: Counter = Counter()
    for path in corpora:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    counts.update(lex_texts(json.loads(line)["code"]))
    return train_bpe_from_tokens(counts, vocab_size)


def split_token(token: str, vocab: BpeVocab) -> list[str]:
    syms: tuple[str, ...] = _token_symbols(token)
    for pair in vocab.merges:
        if len(syms) == 1:
            break
        syms = _apply_one(syms, pair, pair[0] + pair[1])
    return list(syms)


def encode(text: str, lang: str, vocab: BpeVocab) -> EncodedFunction:
    tokens = lex_texts(text)
    ids: list[int] = []
    leaf_of: list[int] = []
    cache: dict[str, list[int]] = {}
    for leaf_index, token in enumerate(tokens):
        if token not in cache:
            cache[token] = [
                vocab.token_to_id.get(sym, UNK) for sym in split_token(token, vocab)
            ]
        ids.extend(cache[token])
        leaf_of.extend([leaf_index] * len(cache[token]))
    linking = np.zeros((len(ids), len(tokens)), dtype=np.int8)
    linking[np.arange(len(ids)), leaf_of] = 1
    return EncodedFunction(lang=lang, ids=ids, linking=linking, n_leaves=len(tokens))


def decode_tokens(ids, vocab: BpeVocab) -> list[str]:
    """Ids back to whole lexer tokens; special symbols are dropped."""
    tokens: list[str] = []
    current = ""
    for i in ids:
        if vocab.is_special(int(i)):
            continue
        sym = vocab.id_to_token[int(i)]
        if sym.endswith(MARKER):
            tokens.append(current + sym[: -len(MARKER)])
            current = ""
        else:
            current += sym
    if current:
        tokens.append(current)  # unterminated tail from a generated sequence
    return tokens


def decode(ids, vocab: BpeVocab) -> str:
    return " ".join(decode_tokens(ids, vocab))
