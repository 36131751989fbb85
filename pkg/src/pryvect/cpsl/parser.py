"""Lexer and recursive-descent parser for CPSL.

Concrete syntax::

    policy  ::= 'STATE' decl* rule* 'ACCEPT' exp
    decl    ::= IDENT ':' type ':=' value
    type    ::= 'Bool' | 'Int' ['[' int ',' int ']'] | 'Id' | 'Set' 'of' base
    rule    ::= ['GIVEN' exp] 'WHEN' event (',' event)* 'THEN' updates
    event   ::= IDENT ['(' (IDENT | INT | '+' | '-' | '_') ')']
    updates ::= 'skip' | IDENT ':=' exp (',' IDENT ':=' exp)*

Expressions use ``or``, ``and``, ``not``, comparisons (``== != < <= > >=``),
membership ``in``, ``+``/``-`` (integer arithmetic, or set insert/remove),
``|S|`` for cardinality, ``'name'`` for Id literals and ``{...}`` for sets.
``#`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import CpslSyntaxError
from .ast import (
    Assign, BinOp, BoolLit, BoolType, Card, EventPattern, IdLit, IdType, IntLit,
    IntType, Name, Not, PolicyAst, RuleAst, SetLit, SetType, VarDecl,
)

KEYWORDS = {
    "STATE", "GIVEN", "WHEN", "THEN", "ACCEPT", "skip", "true", "false",
    "not", "and", "or", "in", "of", "Set", "Bool", "Int", "Id",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<int>[0-9]+)
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*)
  | (?P<string>'[A-Za-z0-9_]*')
  | (?P<op>:=|==|!=|<=|>=|[:,()\[\]{}|<>+\-_])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str   # 'kw', 'ident', 'int', 'string', 'op', 'eof'
    text: str
    line: int
    col: int

    @property
    def pos(self):
        return (self.line, self.col)

    def describe(self) -> str:
        return "end of input" if self.kind == "eof" else repr(self.text)


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if not m:
            raise CpslSyntaxError(f"unexpected character {source[pos]!r}",
                                  line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident":
            tokens.append(Token("kw" if text in KEYWORDS else "ident", text, line, col))
        elif kind in ("int", "string", "op"):
            tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


_COMPARISONS = ("==", "!=", "<=", ">=", "<", ">", "in")


class Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0

    # -- token helpers -------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def at(self, *texts: str) -> bool:
        t = self.tok
        return t.kind in ("kw", "op") and t.text in texts

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def error(self, expected) -> CpslSyntaxError:
        t = self.tok
        return CpslSyntaxError(f"unexpected {t.describe()}", t.line, t.col, expected)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error([text])
        return self.advance()

    def expect_ident(self) -> Token:
        if self.tok.kind != "ident":
            raise self.error(["identifier"])
        return self.advance()

    # -- grammar -------------------------------------------------------------

    def policy(self) -> PolicyAst:
        self.expect("STATE")
        decls = []
        while self.tok.kind == "ident":
            decls.append(self.decl())
        rules = []
        while self.at("GIVEN", "WHEN"):
            rules.append(self.rule())
        if not self.at("ACCEPT"):
            raise self.error(["GIVEN", "WHEN", "ACCEPT"] + ([] if rules else ["identifier"]))
        self.advance()
        accept = self.exp()
        if self.tok.kind != "eof":
            raise self.error(["end of input"])
        return PolicyAst(tuple(decls), tuple(rules), accept)

    def decl(self) -> VarDecl:
        name = self.expect_ident()
        self.expect(":")
        type_tag = self.type_tag()
        self.expect(":=")
        init = self.value()
        return VarDecl(name.text, type_tag, init, name.pos)

    def type_tag(self):
        if self.at("Set"):
            self.advance()
            self.expect("of")
            if not self.at("Bool", "Int", "Id"):
                raise self.error(["Bool", "Int", "Id"])
            return SetType(self.type_tag())
        if self.at("Bool"):
            self.advance()
            return BoolType()
        if self.at("Id"):
            self.advance()
            return IdType()
        if self.at("Int"):
            self.advance()
            if not self.at("["):
                return IntType()
            self.advance()
            lo = self.signed_int()
            self.expect(",")
            hi = self.signed_int()
            self.expect("]")
            return IntType(lo, hi)
        raise self.error(["Bool", "Int", "Id", "Set"])

    def signed_int(self) -> int:
        sign = 1
        if self.at("-"):
            self.advance()
            sign = -1
        if self.tok.kind != "int":
            raise self.error(["integer"])
        return sign * int(self.advance().text)

    def value(self):
        t = self.tok
        if self.at("true", "false"):
            self.advance()
            return BoolLit(t.text == "true", t.pos)
        if t.kind == "int" or self.at("-"):
            return IntLit(self.signed_int(), t.pos)
        if t.kind == "string":
            self.advance()
            return IdLit(t.text[1:-1], t.pos)
        if self.at("{"):
            self.advance()
            items = []
            if not self.at("}"):
                items.append(self.value())
                while self.at(","):
                    self.advance()
                    items.append(self.value())
            self.expect("}")
            return SetLit(tuple(items), t.pos)
        raise self.error(["true", "false", "integer", "Id literal", "{"])

    def rule(self) -> RuleAst:
        start = self.tok.pos
        if self.at("GIVEN"):
            self.advance()
            guard = self.exp()
        else:
            guard = BoolLit(True, start)
        if not self.at("WHEN"):
            raise self.error(["WHEN"])
        self.advance()
        events = [self.event()]
        while self.at(","):
            self.advance()
            events.append(self.event())
        self.expect("THEN")
        if self.at("skip"):
            self.advance()
            updates = ()
        else:
            updates = [self.assign()]
            while self.at(","):
                self.advance()
                updates.append(self.assign())
            updates = tuple(updates)
        return RuleAst(guard, tuple(events), updates, start)

    def event(self) -> EventPattern:
        label = self.expect_ident()
        if not self.at("("):
            return EventPattern(label.text, None, label.pos)
        self.advance()
        t = self.tok
        if t.kind in ("ident", "int") or self.at("+", "-", "_"):
            value = self.advance().text
        else:
            raise self.error(["identifier", "integer", "+", "-", "_"])
        self.expect(")")
        return EventPattern(label.text, value, label.pos)

    def assign(self) -> Assign:
        if self.tok.kind != "ident":
            raise self.error(["identifier", "skip"])
        name = self.advance()
        self.expect(":=")
        return Assign(name.text, self.exp(), name.pos)

    # -- expressions ---------------------------------------------------------

    def exp(self):
        left = self.conj()
        while self.at("or"):
            t = self.advance()
            left = BinOp("or", left, self.conj(), t.pos)
        return left

    def conj(self):
        left = self.neg()
        while self.at("and"):
            t = self.advance()
            left = BinOp("and", left, self.neg(), t.pos)
        return left

    def neg(self):
        if self.at("not"):
            t = self.advance()
            return Not(self.neg(), t.pos)
        return self.comparison()

    def comparison(self):
        left = self.additive()
        if self.at(*_COMPARISONS):
            t = self.advance()
            left = BinOp(t.text, left, self.additive(), t.pos)
        return left

    def additive(self):
        left = self.atom()
        while self.at("+", "-"):
            t = self.advance()
            left = BinOp(t.text, left, self.atom(), t.pos)
        return left

    def atom(self):
        t = self.tok
        if self.at("("):
            self.advance()
            inner = self.exp()
            self.expect(")")
            return inner
        if self.at("|"):
            self.advance()
            inner = self.additive()
            self.expect("|")
            return Card(inner, t.pos)
        if self.at("{"):
            self.advance()
            items = []
            if not self.at("}"):
                items.append(self.exp())
                while self.at(","):
                    self.advance()
                    items.append(self.exp())
            self.expect("}")
            return SetLit(tuple(items), t.pos)
        if self.at("true", "false"):
            self.advance()
            return BoolLit(t.text == "true", t.pos)
        if t.kind == "int":
            self.advance()
            return IntLit(int(t.text), t.pos)
        if self.at("-") and self.tokens[self.i + 1].kind == "int":
            self.advance()
            return IntLit(-int(self.advance().text), t.pos)
        if t.kind == "string":
            self.advance()
            return IdLit(t.text[1:-1], t.pos)
        if t.kind == "ident":
            self.advance()
            return Name(t.text, t.pos)
        raise self.error(["(", "|", "{", "true", "false", "integer", "identifier", "Id literal", "not"])


def parse(source: str) -> PolicyAst:
    """Parse CPSL source text into a :class:`PolicyAst`.

    Raises :class:`~pryvect.errors.CpslSyntaxError` carrying the line,
    column and expected-token set of the first offending token.
    """
    return Parser(source).policy()


def parse_exp(source: str):
    p = Parser(source)
    e = p.exp()
    if p.tok.kind != "eof":
        raise p.error(["end of input"])
    return e
