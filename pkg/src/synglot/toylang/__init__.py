"""Three miniature languages over one shared IR and interpreter."""

from synglot.toylang.ir import (
    Assign,
    BinOp,
    If,
    IntLit,
    IrProgram,
    NotOp,
    Return,
    Var,
    While,
    validate,
)
from synglot.toylang.lang import LANGUAGES, ParseError, lex, parse, parse_with_tree, render
from synglot.toylang.interp import NONTERMINATING, ToyRuntimeError, interpret
from synglot.toylang.sampler import SizeSpec, sample_program
from synglot.toylang.datasets import gen_corpus, gen_eval_set, read_jsonl

__all__ = [
    "Assign",
    "BinOp",
    "If",
    "IntLit",
    "IrProgram",
    "NotOp",
    "Return",
    "Var",
    "While",
    "validate",
    "LANGUAGES",
    "ParseError",
    "lex",
    "parse",
    "parse_with_tree",
    "render",
    "NONTERMINATING",
    "ToyRuntimeError",
    "interpret",
    "SizeSpec",
    "sample_program",
    "gen_corpus",
    "gen_eval_set",
    "read_jsonl",
]
