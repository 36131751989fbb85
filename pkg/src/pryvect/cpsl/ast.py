"""Abstract syntax of contact policies.

Nodes are frozen dataclasses; source positions are carried for diagnostics
but excluded from equality so that re-parsed pretty-printed policies compare
equal to the original.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

Pos = tuple[int, int]


def _pos():
    return field(default=(0, 0), compare=False, repr=False)


# --- types -----------------------------------------------------------------

@dataclass(frozen=True)
class BoolType:
    def __str__(self):
        return "Bool"


@dataclass(frozen=True)
class IntType:
    """``Int[lo,hi]``; both bounds ``None`` for a plain ``Int``."""

    lo: Optional[int] = None
    hi: Optional[int] = None

    @property
    def bounded(self) -> bool:
        return self.lo is not None and self.hi is not None

    def __str__(self):
        return f"Int[{self.lo},{self.hi}]" if self.bounded else "Int"


@dataclass(frozen=True)
class IdType:
    def __str__(self):
        return "Id"


@dataclass(frozen=True)
class SetType:
    base: Union[BoolType, IntType, IdType]

    def __str__(self):
        return f"Set of {self.base}"


TypeTag = Union[BoolType, IntType, IdType, SetType]


# --- expressions -----------------------------------------------------------

@dataclass(frozen=True)
class BoolLit:
    value: bool
    pos: Pos = _pos()


@dataclass(frozen=True)
class IntLit:
    value: int
    pos: Pos = _pos()


@dataclass(frozen=True)
class IdLit:
    value: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class SetLit:
    items: tuple = ()
    pos: Pos = _pos()


@dataclass(frozen=True)
class Name:
    name: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class Not:
    operand: "Exp"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Card:
    operand: "Exp"
    pos: Pos = _pos()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Exp"
    right: "Exp"
    pos: Pos = _pos()


Exp = Union[BoolLit, IntLit, IdLit, SetLit, Name, Not, Card, BinOp]
Literal = Union[BoolLit, IntLit, IdLit, SetLit]


# --- policy structure ------------------------------------------------------

@dataclass(frozen=True)
class VarDecl:
    name: str
    type_tag: TypeTag
    init: Literal
    pos: Pos = _pos()


@dataclass(frozen=True)
class EventPattern:
    label: str
    value: Optional[str] = None
    pos: Pos = _pos()

    @property
    def symbol(self):
        return (self.label, self.value)

    def __str__(self):
        return self.label if self.value is None else f"{self.label}({self.value})"


@dataclass(frozen=True)
class Assign:
    name: str
    exp: Exp
    pos: Pos = _pos()


@dataclass(frozen=True)
class RuleAst:
    guard: Exp
    events: tuple[EventPattern, ...]
    updates: tuple[Assign, ...] = ()
    pos: Pos = _pos()


@dataclass(frozen=True)
class PolicyAst:
    state_decls: tuple[VarDecl, ...]
    rules: tuple[RuleAst, ...]
    accept: Exp


def walk(exp: Exp):
    """Yield `exp` and all its sub-expressions, pre-order."""
    yield exp
    if isinstance(exp, (Not, Card)):
        yield from walk(exp.operand)
    elif isinstance(exp, BinOp):
        yield from walk(exp.left)
        yield from walk(exp.right)
    elif isinstance(exp, SetLit):
        for item in exp.items:
            yield from walk(item)
