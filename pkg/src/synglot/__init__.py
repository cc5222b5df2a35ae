"""synglot: unsupervised translation between miniature programming languages.

A small numpy autodiff engine drives a syntax-aware transformer: a graph
attention stack over AST leaf distances biases the encoder's self-attention,
a gradient-reversal domain discriminator pushes the encoder toward
language-neutral features, and training proceeds in three unsupervised
stages (masked/denoising pre-training, syntax+domain augmentation,
back-translation). Three toy languages with a shared interpreter make
translation quality mechanically checkable.
"""

__version__ = "0.1.0"

from synglot.toylang.ir import IrProgram
from synglot.toylang.lang import LANGUAGES, ParseError, lex, parse, render
from synglot.toylang.interp import NONTERMINATING, ToyRuntimeError, interpret

__all__ = [
    "IrProgram",
    "LANGUAGES",
    "ParseError",
    "lex",
    "parse",
    "render",
    "NONTERMINATING",
    "ToyRuntimeError",
    "interpret",
    "__version__",
]
