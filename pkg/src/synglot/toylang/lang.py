"""Surface syntax for the three toy languages.

One lexer covers the union alphabet; rendering and parsing are driven by a
per-language `Surface` table. Rendering is canonical (fully parenthesized
expressions, fixed keyword placement), and each parser accepts exactly the
canonical grammar, so parse(render(ir, L), L) == ir holds for every valid
IrProgram.

Parsing also builds the concrete syntax tree whose leaves spell the lexer
token stream; downstream structure features (leaf distances, depths) are
computed from that tree.
"""

from __future__ import annotations

from dataclasses import dataclass

from synglot.syntax import SyntaxTree
from synglot.toylang.ir import (
    ARITH_OPS,
    Assign,
    BinOp,
    If,
    IntLit,
    IrExpr,
    IrProgram,
    IrStmt,
    NotOp,
    RESERVED_WORDS,
    Return,
    Var,
    While,
)


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    col: int


# Multi-char symbols must be checked before their single-char prefixes.
_TWO_CHAR = (":=", "==", "!=", "<=", ">=", "&&", "||", "<>")
_ONE_CHAR = set("(){},;:=<>+-*/%!")


def lex(source: str) -> list[Token]:
    """Split source into tokens; whitespace only separates."""
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        c = source[i]
        if c == "\n":
            i, line, col = i + 1, line + 1, 1
        elif c in " \t\r":
            i, col = i + 1, col + 1
        elif c.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            tokens.append(Token(source[i:j], line, col))
            col += j - i
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(Token(source[i:j], line, col))
            col += j - i
            i = j
        elif source[i : i + 2] in _TWO_CHAR:
            tokens.append(Token(source[i : i + 2], line, col))
            i, col = i + 2, col + 2
        elif c in _ONE_CHAR:
            tokens.append(Token(c, line, col))
            i, col = i + 1, col + 1
        else:
            raise ParseError(f"unexpected character {c!r}", line, col)
    return tokens


def lex_texts(source: str) -> list[str]:
    return [t.text for t in lex(source)]


def detokenize(tokens: list[str]) -> str:
    """Inverse of lex up to whitespace: space-joined tokens re-lex to tokens."""
    return " ".join(tokens)


@dataclass(frozen=True)
class Surface:
    """Keyword/operator spellings that distinguish one language's grammar."""

    fn_kw: str
    body_open: str          # token after the parameter list
    body_close: str
    param_sep: str | None   # None: whitespace-separated parameters
    assign_kw: str | None
    assign_op: str
    stmt_term: str | None   # statement terminator for assign/return
    braces: bool            # brace-delimited sub-blocks (overrides the four below)
    then_tok: str | None
    if_end: str | None
    do_tok: str | None
    while_end: str | None
    and_op: str
    or_op: str
    not_op: str
    eq_op: str
    ne_op: str

    def op_to_ir(self) -> dict[str, str]:
        m = {op: op for op in ARITH_OPS + ("<", "<=", ">", ">=")}
        m[self.eq_op] = "=="
        m[self.ne_op] = "!="
        m[self.and_op] = "and"
        m[self.or_op] = "or"
        return m

    def op_from_ir(self) -> dict[str, str]:
        return {ir_op: surf for surf, ir_op in self.op_to_ir().items()}


ALPHA = Surface(
    fn_kw="def", body_open=":", body_close="end", param_sep=",",
    assign_kw=None, assign_op="=", stmt_term=None, braces=False,
    then_tok=":", if_end="end", do_tok=":", while_end="end",
    and_op="and", or_op="or", not_op="not", eq_op="==", ne_op="!=",
)

BETA = Surface(
    fn_kw="func", body_open="{", body_close="}", param_sep=",",
    assign_kw=None, assign_op="=", stmt_term=";", braces=True,
    then_tok=None, if_end=None, do_tok=None, while_end=None,
    and_op="&&", or_op="||", not_op="!", eq_op="==", ne_op="!=",
)

GAMMA = Surface(
    fn_kw="fn", body_open="begin", body_close="end", param_sep=None,
    assign_kw="let", assign_op=":=", stmt_term=None, braces=False,
    then_tok="then", if_end="endif", do_tok="do", while_end="done",
    and_op="and", or_op="or", not_op="not", eq_op="=", ne_op="<>",
)

LANGUAGES: dict[str, Surface] = {"alpha": ALPHA, "beta": BETA, "gamma": GAMMA}


def check_lang(lang: str) -> Surface:
    try:
        return LANGUAGES[lang]
    except KeyError:
        raise ValueError(f"unknown language {lang!r}; expected one of {sorted(LANGUAGES)}")


# ---------------------------------------------------------------------------
# Rendering


def render_expr(expr: IrExpr, s: Surface) -> str:
    if isinstance(expr, IntLit):
        return str(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, BinOp):
        op = s.op_from_ir()[expr.op]
        return f"({render_expr(expr.left, s)} {op} {render_expr(expr.right, s)})"
    if isinstance(expr, NotOp):
        return f"{s.not_op} {render_expr(expr.operand, s)}"
    raise TypeError(f"not an IrExpr: {expr!r}")


def render(ir: IrProgram, lang: str) -> str:
    s = check_lang(lang)
    lines: list[str] = []

    def emit(depth: int, text: str) -> None:
        lines.append("  " * depth + text)

    def stmt(st: IrStmt, depth: int) -> None:
        term = s.stmt_term or ""
        if isinstance(st, Assign):
            kw = f"{s.assign_kw} " if s.assign_kw else ""
            emit(depth, f"{kw}{st.target} {s.assign_op} {render_expr(st.value, s)}{term}")
        elif isinstance(st, Return):
            emit(depth, f"return {render_expr(st.value, s)}{term}")
        elif isinstance(st, If):
            cond = render_expr(st.cond, s)
            if s.braces:
                emit(depth, f"if {cond} {{")
                block(st.then_body, depth + 1)
                if st.else_body is None:
                    emit(depth, "}")
                else:
                    emit(depth, "} else {")
                    block(st.else_body, depth + 1)
                    emit(depth, "}")
            else:
                emit(depth, f"if {cond} {s.then_tok}" if s.then_tok != ":" else f"if {cond}:")
                block(st.then_body, depth + 1)
                if st.else_body is not None:
                    emit(depth, "else:" if s.then_tok == ":" else "else")
                    block(st.else_body, depth + 1)
                emit(depth, s.if_end)
        elif isinstance(st, While):
            cond = render_expr(st.cond, s)
            if s.braces:
                emit(depth, f"while {cond} {{")
                block(st.body, depth + 1)
                emit(depth, "}")
            else:
                emit(depth, f"while {cond} {s.do_tok}" if s.do_tok != ":" else f"while {cond}:")
                block(st.body, depth + 1)
                emit(depth, s.while_end)
        else:
            raise TypeError(f"not an IrStmt: {st!r}")

    def block(stmts: tuple[IrStmt, ...], depth: int) -> None:
        for st in stmts:
            stmt(st, depth)

    sep = s.param_sep + " " if s.param_sep else " "
    params = sep.join(ir.params)
    if s.braces:
        emit(0, f"{s.fn_kw} {ir.name}({params}) {{")
    elif s.body_open == ":":
        emit(0, f"{s.fn_kw} {ir.name}({params}):")
    else:
        emit(0, f"{s.fn_kw} {ir.name}({params}) {s.body_open}")
    block(ir.body, 1)
    emit(0, s.body_close)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing


class _Parser:
    """Recursive-descent parser that grows a concrete syntax tree as it goes.

    Every consumed token becomes a leaf node, so the finished tree's leaves
    spell the lexer token stream exactly.
    """

    def __init__(self, tokens: list[Token], surface: Surface):
        self.tokens = tokens
        self.pos = 0
        self.s = surface
        self.op_map = surface.op_to_ir()
        self.labels: list[str] = []
        self.parents: list[int] = []
        self.leaf_ids: list[int] = []

    # -- token plumbing

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def at(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.text == text

    def fail(self, message: str) -> ParseError:
        t = self.peek()
        if t is None:
            last = self.tokens[-1] if self.tokens else None
            line = last.line if last else 1
            col = last.col + len(last.text) if last else 1
            return ParseError(f"{message} (at end of input)", line, col)
        return ParseError(f"{message} (got {t.text!r})", t.line, t.col)

    # -- tree plumbing

    def node(self, label: str, parent: int) -> int:
        nid = len(self.labels)
        self.labels.append(label)
        self.parents.append(parent)
        return nid

    def take(self, parent: int) -> Token:
        t = self.peek()
        if t is None:
            raise self.fail("unexpected end of input")
        self.pos += 1
        nid = self.node(t.text, parent)
        self.leaf_ids.append(nid)
        return t

    def eat(self, text: str, parent: int) -> Token:
        if not self.at(text):
            raise self.fail(f"expected {text!r}")
        return self.take(parent)

    def eat_name(self, parent: int) -> str:
        t = self.peek()
        if t is None or not t.text.isidentifier() or t.text in RESERVED_WORDS:
            raise self.fail("expected an identifier")
        self.take(parent)
        return t.text

    # -- grammar

    def parse_expr(self, parent: int) -> IrExpr:
        t = self.peek()
        if t is None:
            raise self.fail("expected an expression")
        if t.text == "(":
            nid = self.node("binary", parent)
            self.eat("(", nid)
            left = self.parse_expr(nid)
            op_tok = self.peek()
            if op_tok is None or op_tok.text not in self.op_map:
                raise self.fail("expected a binary operator")
            self.take(nid)
            right = self.parse_expr(nid)
            self.eat(")", nid)
            return BinOp(self.op_map[op_tok.text], left, right)
        if t.text == self.s.not_op:
            nid = self.node("unary", parent)
            self.take(nid)
            return NotOp(self.parse_expr(nid))
        if t.text.isdigit():
            self.take(parent)
            return IntLit(int(t.text))
        if t.text.isidentifier() and t.text not in RESERVED_WORDS:
            self.take(parent)
            return Var(t.text)
        raise self.fail("expected an expression")

    def parse_kw_block(self, parent: int, opener: str | None, stop: frozenset[str]) -> tuple[IrStmt, ...]:
        nid = self.node("block", parent)
        if opener is not None:
            self.eat(opener, nid)
        stmts: list[IrStmt] = []
        while True:
            t = self.peek()
            if t is None:
                raise self.fail(f"expected one of {sorted(stop)}")
            if t.text in stop:
                break
            stmts.append(self.parse_stmt(nid))
        if not stmts:
            raise self.fail("empty block")
        return tuple(stmts)

    def parse_braced_block(self, parent: int) -> tuple[IrStmt, ...]:
        nid = self.node("block", parent)
        self.eat("{", nid)
        stmts: list[IrStmt] = []
        while not self.at("}"):
            if self.peek() is None:
                raise self.fail("expected '}'")
            stmts.append(self.parse_stmt(nid))
        if not stmts:
            raise self.fail("empty block")
        self.eat("}", nid)
        return tuple(stmts)

    def parse_stmt(self, parent: int) -> IrStmt:
        s = self.s
        t = self.peek()
        if t is None:
            raise self.fail("expected a statement")
        if t.text == "if":
            nid = self.node("if", parent)
            self.take(nid)
            cond = self.parse_expr(nid)
            if s.braces:
                then_body = self.parse_braced_block(nid)
                else_body = None
                if self.at("else"):
                    self.eat("else", nid)
                    else_body = self.parse_braced_block(nid)
            else:
                then_body = self.parse_kw_block(nid, s.then_tok, frozenset({"else", s.if_end}))
                else_body = None
                if self.at("else"):
                    self.eat("else", nid)
                    opener = ":" if s.then_tok == ":" else None
                    else_body = self.parse_kw_block(nid, opener, frozenset({s.if_end}))
                self.eat(s.if_end, nid)
            return If(cond, then_body, else_body)
        if t.text == "while":
            nid = self.node("while", parent)
            self.take(nid)
            cond = self.parse_expr(nid)
            if s.braces:
                body = self.parse_braced_block(nid)
            else:
                body = self.parse_kw_block(nid, s.do_tok, frozenset({s.while_end}))
                self.eat(s.while_end, nid)
            return While(cond, body)
        if t.text == "return":
            nid = self.node("return", parent)
            self.take(nid)
            value = self.parse_expr(nid)
            if s.stmt_term:
                self.eat(s.stmt_term, nid)
            return Return(value)
        # assignment
        nid = self.node("assign", parent)
        if s.assign_kw:
            self.eat(s.assign_kw, nid)
        target = self.eat_name(nid)
        self.eat(s.assign_op, nid)
        value = self.parse_expr(nid)
        if s.stmt_term:
            self.eat(s.stmt_term, nid)
        return Assign(target, value)

    def parse_function(self) -> IrProgram:
        s = self.s
        root = self.node("function_def", -1)
        self.eat(s.fn_kw, root)
        name = self.eat_name(root)
        pn = self.node("params", root)
        self.eat("(", pn)
        params: list[str] = []
        while not self.at(")"):
            if params and s.param_sep:
                self.eat(s.param_sep, pn)
            params.append(self.eat_name(pn))
        self.eat(")", pn)
        if s.braces:
            body = self.parse_braced_block(root)
        else:
            body = self.parse_kw_block(root, s.body_open, frozenset({s.body_close}))
            self.eat(s.body_close, root)
        if self.peek() is not None:
            raise self.fail("trailing input after function")
        return IrProgram(name, tuple(params), body)

    def tree(self) -> SyntaxTree:
        return SyntaxTree(
            labels=tuple(self.labels),
            parents=tuple(self.parents),
            leaf_ids=tuple(self.leaf_ids),
        )


def parse_with_tree(source: str, lang: str) -> tuple[IrProgram, SyntaxTree]:
    s = check_lang(lang)
    tokens = lex(source)
    if not tokens:
        raise ParseError("empty input", 1, 1)
    p = _Parser(tokens, s)
    ir = p.parse_function()
    return ir, p.tree()


def parse(source: str, lang: str) -> IrProgram:
    ir, _ = parse_with_tree(source, lang)
    return ir
