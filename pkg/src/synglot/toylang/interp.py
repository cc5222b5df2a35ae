"""Interpreter over the shared IR.

All arithmetic wraps to signed 64 bits. Division and modulo truncate toward
zero (C semantics); dividing by zero raises ToyRuntimeError. Execution is
step-limited: each executed statement (including every loop-condition test)
costs one step, and exceeding the limit yields NONTERMINATING instead of
hanging, so results are identical on every platform.
"""

from __future__ import annotations

from synglot.toylang.ir import (
    Assign,
    BinOp,
    If,
    IntLit,
    IrExpr,
    IrProgram,
    IrStmt,
    NotOp,
    Return,
    Var,
    While,
)

_U64 = 1 << 64
_I64_MIN = -(1 << 63)

DEFAULT_STEP_LIMIT = 10_000


class _Nonterminating:
    __slots__ = ()

    def __repr__(self) -> str:
        return "NONTERMINATING"


NONTERMINATING = _Nonterminating()


class ToyRuntimeError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _StepsExhausted(Exception):
    pass


class _ReturnValue(Exception):
    def __init__(self, value: int):
        self.value = value


def wrap64(v: int) -> int:
    return (v - _I64_MIN) % _U64 + _I64_MIN


def trunc_div(a: int, b: int) -> int:
    if b == 0:
        raise ToyRuntimeError("div-by-zero", "division by zero")
    q = abs(a) // abs(b)
    return wrap64(-q if (a < 0) != (b < 0) else q)


def trunc_mod(a: int, b: int) -> int:
    if b == 0:
        raise ToyRuntimeError("mod-by-zero", "modulo by zero")
    return wrap64(a - trunc_div(a, b) * b)


def _eval(expr: IrExpr, env: dict[str, int]) -> int:
    if isinstance(expr, IntLit):
        return wrap64(expr.value)
    if isinstance(expr, Var):
        try:
            return env[expr.name]
        except KeyError:
            raise ToyRuntimeError("undefined-var", f"variable {expr.name!r} not set") from None
    if isinstance(expr, NotOp):
        return 0 if _eval(expr.operand, env) != 0 else 1
    if isinstance(expr, BinOp):
        a = _eval(expr.left, env)
        b = _eval(expr.right, env)
        op = expr.op
        if op == "+":
            return wrap64(a + b)
        if op == "-":
            return wrap64(a - b)
        if op == "*":
            return wrap64(a * b)
        if op == "/":
            return trunc_div(a, b)
        if op == "%":
            return trunc_mod(a, b)
        if op == "<":
            return int(a < b)
        if op == "<=":
            return int(a <= b)
        if op == ">":
            return int(a > b)
        if op == ">=":
            return int(a >= b)
        if op == "==":
            return int(a == b)
        if op == "!=":
            return int(a != b)
        if op == "and":
            return int(a != 0 and b != 0)
        if op == "or":
            return int(a != 0 or b != 0)
        raise ToyRuntimeError("bad-op", f"unknown operator {op!r}")
    raise ToyRuntimeError("bad-node", f"unknown expression node {type(expr).__name__}")


class _Machine:
    def __init__(self, step_limit: int):
        self.steps_left = step_limit

    def tick(self) -> None:
        if self.steps_left <= 0:
            raise _StepsExhausted()
        self.steps_left -= 1

    def run_block(self, stmts: tuple[IrStmt, ...], env: dict[str, int]) -> None:
        for st in stmts:
            if isinstance(st, Assign):
                self.tick()
                env[st.target] = _eval(st.value, env)
            elif isinstance(st, Return):
                self.tick()
                raise _ReturnValue(_eval(st.value, env))
            elif isinstance(st, If):
                self.tick()
                if _eval(st.cond, env) != 0:
                    self.run_block(st.then_body, env)
                elif st.else_body is not None:
                    self.run_block(st.else_body, env)
            elif isinstance(st, While):
                while True:
                    self.tick()
                    if _eval(st.cond, env) == 0:
                        break
                    self.run_block(st.body, env)
            else:
                raise ToyRuntimeError("bad-node", f"unknown statement {type(st).__name__}")


def interpret(ir: IrProgram, inputs: list[int], step_limit: int = DEFAULT_STEP_LIMIT):
    """Run the function; returns an int, or NONTERMINATING at the step limit.

    Raises ToyRuntimeError for division/modulo by zero or malformed programs.
    """
    if len(inputs) != len(ir.params):
        raise ValueError(f"expected {len(ir.params)} inputs, got {len(inputs)}")
    env = {p: wrap64(int(v)) for p, v in zip(ir.params, inputs)}
    machine = _Machine(step_limit)
    try:
        machine.run_block(ir.body, env)
    except _ReturnValue as r:
        return r.value
    except _StepsExhausted:
        return NONTERMINATING
    raise ToyRuntimeError("no-return", "function ended without returning")
