"""Pretty-printer producing source that re-parses to an equal AST."""

from __future__ import annotations

from .ast import (
    BinOp, BoolLit, Card, IdLit, IntLit, Name, Not, PolicyAst, RuleAst, SetLit,
)


def format_exp(exp) -> str:
    if isinstance(exp, BoolLit):
        return "true" if exp.value else "false"
    if isinstance(exp, IntLit):
        return str(exp.value)
    if isinstance(exp, IdLit):
        return f"'{exp.value}'"
    if isinstance(exp, SetLit):
        return "{" + ", ".join(format_exp(i) for i in exp.items) + "}"
    if isinstance(exp, Name):
        return exp.name
    if isinstance(exp, Not):
        return f"not {_sub(exp.operand)}"
    if isinstance(exp, Card):
        return f"|{_sub(exp.operand)}|"
    if isinstance(exp, BinOp):
        return f"{_sub(exp.left)} {exp.op} {_sub(exp.right)}"
    raise TypeError(f"not an expression: {exp!r}")


def _sub(exp) -> str:
    text = format_exp(exp)
    if isinstance(exp, (BinOp, Not)) or (isinstance(exp, IntLit) and exp.value < 0):
        return f"({text})"
    return text


def format_rule(rule: RuleAst) -> str:
    events = ", ".join(str(e) for e in rule.events)
    if rule.updates:
        updates = ", ".join(f"{u.name} := {format_exp(u.exp)}" for u in rule.updates)
    else:
        updates = "skip"
    return f"GIVEN {format_exp(rule.guard)}\nWHEN {events}\nTHEN {updates}\n"


def pretty(policy: PolicyAst) -> str:
    parts = ["STATE\n"]
    for d in policy.state_decls:
        parts.append(f"  {d.name} : {d.type_tag} := {format_exp(d.init)}\n")
    for rule in policy.rules:
        parts.append("\n" + format_rule(rule))
    parts.append(f"\nACCEPT {format_exp(policy.accept)}\n")
    return "".join(parts)
