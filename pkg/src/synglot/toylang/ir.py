"""Language-neutral function IR.

Every toy language renders from and parses back to this representation, so
IR equality is the ground truth for round-trip and cross-language tests.

Value model: 64-bit signed integers with wrapping arithmetic. Comparisons
and boolean operators produce 0/1; any nonzero value is truthy in a
condition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

ARITH_OPS = ("+", "-", "*", "/", "%")
CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")
BOOL_OPS = ("and", "or")
BIN_OPS = ARITH_OPS + CMP_OPS + BOOL_OPS

# Union of the keyword/operator spellings of all three languages. Identifiers
# must avoid these so that any valid IrProgram renders in any language.
RESERVED_WORDS = frozenset(
    {
        "def", "end", "func", "fn", "begin", "let", "if", "then", "else",
        "endif", "while", "do", "done", "return", "and", "or", "not",
    }
)


@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "IrExpr"
    right: "IrExpr"


@dataclass(frozen=True)
class NotOp:
    operand: "IrExpr"


IrExpr = Union[IntLit, Var, BinOp, NotOp]


@dataclass(frozen=True)
class Assign:
    target: str
    value: IrExpr


@dataclass(frozen=True)
class If:
    cond: IrExpr
    then_body: tuple["IrStmt", ...]
    else_body: tuple["IrStmt", ...] | None


@dataclass(frozen=True)
class While:
    cond: IrExpr
    body: tuple["IrStmt", ...]


@dataclass(frozen=True)
class Return:
    value: IrExpr


IrStmt = Union[Assign, If, While, Return]


@dataclass(frozen=True)
class IrProgram:
    """A single function: name, parameter list, statement body.

    Invariants (checked by :func:`validate`):
    - every referenced variable is a parameter or assigned on all paths
      reaching the reference
    - every execution path executes exactly one ``return`` (no fall-through,
      no unreachable trailing statements)
    - block nesting depth stays within the configured maximum
    """

    name: str
    params: tuple[str, ...]
    body: tuple[IrStmt, ...]


def _is_identifier(name: str) -> bool:
    return (
        name.isidentifier()
        and name == name.lower()
        and name not in RESERVED_WORDS
    )


def validate(program: IrProgram, max_nesting: int = 3) -> list[str]:
    """Return a list of invariant violations; an empty list means valid."""
    issues: list[str] = []
    if not _is_identifier(program.name):
        issues.append(f"bad function name {program.name!r}")
    if len(set(program.params)) != len(program.params):
        issues.append("duplicate parameter names")
    for p in program.params:
        if not _is_identifier(p):
            issues.append(f"bad parameter name {p!r}")

    def check_expr(expr: IrExpr, defined: frozenset[str]) -> None:
        if isinstance(expr, IntLit):
            if not isinstance(expr.value, int):
                issues.append("non-integer literal")
        elif isinstance(expr, Var):
            if expr.name not in defined:
                issues.append(f"use of undefined variable {expr.name!r}")
        elif isinstance(expr, BinOp):
            if expr.op not in BIN_OPS:
                issues.append(f"unknown operator {expr.op!r}")
            check_expr(expr.left, defined)
            check_expr(expr.right, defined)
        elif isinstance(expr, NotOp):
            check_expr(expr.operand, defined)
        else:
            issues.append(f"unknown expression node {type(expr).__name__}")

    def check_block(
        stmts: tuple[IrStmt, ...], defined: frozenset[str], depth: int
    ) -> tuple[frozenset[str], bool]:
        """Walk a block; returns (definitely-assigned set, always-returns)."""
        if not stmts:
            issues.append("empty block")
        if depth > max_nesting:
            issues.append(f"nesting depth {depth} exceeds {max_nesting}")
        returned = False
        for stmt in stmts:
            if returned:
                issues.append("unreachable statement after return")
            if isinstance(stmt, Assign):
                if not _is_identifier(stmt.target):
                    issues.append(f"bad variable name {stmt.target!r}")
                check_expr(stmt.value, defined)
                defined = defined | {stmt.target}
            elif isinstance(stmt, If):
                check_expr(stmt.cond, defined)
                then_def, then_ret = check_block(stmt.then_body, defined, depth + 1)
                if stmt.else_body is not None:
                    else_def, else_ret = check_block(stmt.else_body, defined, depth + 1)
                    defined = then_def & else_def
                    returned = then_ret and else_ret
                # without else, nothing new is definitely assigned
            elif isinstance(stmt, While):
                check_expr(stmt.cond, defined)
                check_block(stmt.body, defined, depth + 1)
                # body may run zero times: no new definite assignments
            elif isinstance(stmt, Return):
                check_expr(stmt.value, defined)
                returned = True
            else:
                issues.append(f"unknown statement node {type(stmt).__name__}")
        return defined, returned

    _, always_returns = check_block(program.body, frozenset(program.params), 1)
    if not always_returns:
        issues.append("a path can fall off the end without returning")
    return issues
