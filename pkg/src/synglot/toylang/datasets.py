"""Seeded corpus and evaluation-set generation (UTF-8 JSON Lines).

Corpus records:    {"id", "lang", "code"}
Eval-set records:  {"id", "src_lang", "code_src", "tgt_lang", "code_tgt",
                    "tests": [{"inputs": [...], "expected": int|"NONTERMINATING"}]}

Corpus and eval draws come from disjoint seed namespaces, and corpora for
different languages sample different programs, so training never sees an
eval program and the monolingual corpora are genuinely unpaired.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from synglot.toylang.interp import DEFAULT_STEP_LIMIT, NONTERMINATING, interpret
from synglot.toylang.lang import LANGUAGES, check_lang, render
from synglot.toylang.sampler import SizeSpec, sample_program

_CORPUS_NS = 101
_EVAL_NS = 202
_TESTS_NS = 303


def _lang_code(lang: str) -> int:
    return sorted(LANGUAGES).index(lang)


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def gen_corpus(seed: int, n: int, lang: str, out_path, size: SizeSpec = SizeSpec()) -> Path:
    check_lang(lang)
    if n <= 0:
        raise ValueError(f"corpus size must be positive, got {n}")
    records = []
    for i in range(n):
        ir = sample_program(np.random.SeedSequence([seed, _CORPUS_NS, _lang_code(lang), i]), size)
        records.append({"id": f"{lang}-{i:06d}", "lang": lang, "code": render(ir, lang)})
    write_jsonl(out_path, records)
    return Path(out_path)


def gen_eval_set(
    seed: int,
    n: int,
    src_lang: str,
    tgt_lang: str,
    tests_per_fn: int,
    out_path,
    size: SizeSpec = SizeSpec(),
    step_limit: int = DEFAULT_STEP_LIMIT,
) -> Path:
    check_lang(src_lang)
    check_lang(tgt_lang)
    if n <= 0:
        raise ValueError(f"eval-set size must be positive, got {n}")
    if tests_per_fn <= 0:
        raise ValueError(f"tests_per_fn must be positive, got {tests_per_fn}")
    records = []
    seen = set()
    draw = 0
    while len(records) < n:
        ir = sample_program(np.random.SeedSequence([seed, _EVAL_NS, draw]), size)
        draw += 1
        if ir in seen:
            continue
        seen.add(ir)
        k = len(records)
        test_rng = np.random.default_rng(np.random.SeedSequence([seed, _TESTS_NS, k]))
        tests = []
        for _ in range(tests_per_fn):
            inputs = [int(v) for v in test_rng.integers(-9, 10, size=len(ir.params))]
            result = interpret(ir, inputs, step_limit)
            expected = "NONTERMINATING" if result is NONTERMINATING else result
            tests.append({"inputs": inputs, "expected": expected})
        records.append(
            {
                "id": f"eval-{src_lang}-{tgt_lang}-{k:04d}",
                "src_lang": src_lang,
                "code_src": render(ir, src_lang),
                "tgt_lang": tgt_lang,
                "code_tgt": render(ir, tgt_lang),
                "tests": tests,
            }
        )
    write_jsonl(out_path, records)
    return Path(out_path)
