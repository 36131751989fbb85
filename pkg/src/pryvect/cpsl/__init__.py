"""The contact policy specification language (CPSL)."""

from .ast import (
    Assign, BinOp, BoolLit, BoolType, Card, EventPattern, IdLit, IdType, IntLit,
    IntType, Name, Not, PolicyAst, RuleAst, SetLit, SetType, VarDecl,
)
from .check import Env, TypedPolicy, eval_exp, typecheck
from .interp import interpret
from .parser import parse, parse_exp
from .printer import pretty

__all__ = [
    "Assign", "BinOp", "BoolLit", "BoolType", "Card", "Env", "EventPattern",
    "IdLit", "IdType", "IntLit", "IntType", "Name", "Not", "PolicyAst",
    "RuleAst", "SetLit", "SetType", "TypedPolicy", "VarDecl", "eval_exp",
    "interpret", "parse", "parse_exp", "pretty", "typecheck",
]
