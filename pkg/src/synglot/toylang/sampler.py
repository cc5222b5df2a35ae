"""Seeded random program generator.

Generated programs are valid by construction, never raise at runtime, and
always terminate:

- new variables are introduced only by top-level assignments, so every
  reference is definitely assigned;
- division and modulo take a nonzero literal on the right;
- every loop is counted: a seed assignment ``c = (expr % k)`` with k <= 5
  bounds the trip count, and the loop body ends with ``c = (c - 1)``.

The one return sits at the end of the top level, so exactly one return is
reachable on every path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synglot.toylang.ir import Assign, BinOp, IntLit, IrExpr, IrProgram, IrStmt, NotOp, Return, Var, While, If

_PARAM_POOL = ("a", "b", "c")
_LOCAL_POOL = ("x", "y", "z", "u", "w", "v")
_NAME_POOL = ("f", "g", "h")
_ARITH = ("+", "-", "*", "/", "%")
_CMP = ("<", "<=", ">", ">=", "==", "!=")


@dataclass(frozen=True)
class SizeSpec:
    max_stmts: int = 6        # top-level statements, return included
    max_expr_depth: int = 3
    max_params: int = 3

    def __post_init__(self) -> None:
        if min(self.max_stmts, self.max_expr_depth, self.max_params) < 1:
            raise ValueError(f"SizeSpec bounds must be positive: {self}")


def _pick(rng: np.random.Generator, pool) -> str:
    return pool[int(rng.integers(0, len(pool)))]


def _expr(rng: np.random.Generator, defined: list[str], depth: int) -> IrExpr:
    if depth <= 0 or rng.random() < 0.3:
        if rng.random() < 0.65:
            return Var(_pick(rng, defined))
        return IntLit(int(rng.integers(0, 10)))
    r = rng.random()
    if r < 0.55:
        op = _pick(rng, _ARITH)
        left = _expr(rng, defined, depth - 1)
        if op in ("/", "%"):
            right: IrExpr = IntLit(int(rng.integers(1, 10)))
        else:
            right = _expr(rng, defined, depth - 1)
        return BinOp(op, left, right)
    if r < 0.75:
        return BinOp(_pick(rng, _CMP), _expr(rng, defined, depth - 1), _expr(rng, defined, depth - 1))
    if r < 0.9:
        return BinOp(_pick(rng, ("and", "or")), _expr(rng, defined, depth - 1), _expr(rng, defined, depth - 1))
    return NotOp(_expr(rng, defined, depth - 1))


def _cond(rng: np.random.Generator, defined: list[str], depth: int) -> IrExpr:
    return BinOp(_pick(rng, _CMP), _expr(rng, defined, depth - 1), _expr(rng, defined, depth - 1))


def sample_program(seed, size: SizeSpec = SizeSpec()) -> IrProgram:
    """Deterministic in (seed, size); seed is an int or a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    rng = np.random.default_rng(seed)

    n_params = int(rng.integers(1, size.max_params + 1))
    params = list(_PARAM_POOL[:n_params])
    defined = list(params)
    unused = list(_LOCAL_POOL)
    depth = size.max_expr_depth

    body: list[IrStmt] = []
    slots = int(rng.integers(1, size.max_stmts + 1)) - 1
    while slots > 0:
        r = rng.random()
        if r < 0.5 or slots < 2:
            target = unused.pop(0) if unused and rng.random() < 0.6 else _pick(rng, defined)
            body.append(Assign(target, _expr(rng, defined, depth)))
            if target not in defined:
                defined.append(target)
            slots -= 1
        elif r < 0.75 and unused:
            # counted loop: seed counter, decrement last in the body
            counter = unused.pop(0)
            k = int(rng.integers(2, 6))
            body.append(Assign(counter, BinOp("%", _expr(rng, defined, 2), IntLit(k))))
            defined.append(counter)
            inner: list[IrStmt] = []
            for _ in range(int(rng.integers(1, 3))):
                tgt = _pick(rng, [v for v in defined if v != counter])
                inner.append(Assign(tgt, _expr(rng, defined, depth - 1)))
            inner.append(Assign(counter, BinOp("-", Var(counter), IntLit(1))))
            body.append(While(BinOp(">", Var(counter), IntLit(0)), tuple(inner)))
            slots -= 2
        else:
            cond = _cond(rng, defined, depth)
            then_body = tuple(
                Assign(_pick(rng, defined), _expr(rng, defined, depth - 1))
                for _ in range(int(rng.integers(1, 3)))
            )
            else_body = None
            if rng.random() < 0.6:
                else_body = tuple(
                    Assign(_pick(rng, defined), _expr(rng, defined, depth - 1))
                    for _ in range(int(rng.integers(1, 3)))
                )
            body.append(If(cond, then_body, else_body))
            slots -= 1
    body.append(Return(_expr(rng, defined, depth)))
    return IrProgram(_pick(rng, _NAME_POOL), tuple(params), tuple(body))
