"""Type checking and expression evaluation.

The checker resolves names, verifies types and turns every expression into
a closure over a state tuple (values in declaration order). Both the
reference interpreter and the DFA compiler run those closures, so a policy
has exactly one evaluation semantics.

Integers are bounded: arithmetic involving a variable of type ``Int[lo,hi]``
saturates at the hull of the bounded operands, and assignments clamp to the
target's range.
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import (
    DuplicateVariable, TypeCheckError, TypeMismatch, UnboundedInt,
    UndeclaredVariable, UnknownEvent,
)
from ..trace import Alphabet
from .ast import (
    BinOp, BoolLit, BoolType, Card, IdLit, IdType, IntLit, IntType, Name, Not,
    PolicyAst, SetLit, SetType, VarDecl, walk,
)

_IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")

# Empty set literal: compatible with every set type.
_ANY_SET = SetType(None)


def _clamp(v: int, t: IntType) -> int:
    if t.lo is not None and v < t.lo:
        return t.lo
    if t.hi is not None and v > t.hi:
        return t.hi
    return v


def _kind(t) -> str:
    return type(t).__name__


def _compatible(a, b) -> bool:
    if _kind(a) != _kind(b):
        return False
    if isinstance(a, SetType):
        return a.base is None or b.base is None or _kind(a.base) == _kind(b.base)
    return True


def _hull(a: IntType, b: IntType) -> IntType:
    bounded = [t for t in (a, b) if t.bounded]
    if not bounded:
        return IntType()
    return IntType(min(t.lo for t in bounded), max(t.hi for t in bounded))


def domain_size(t, universe) -> int:
    if isinstance(t, BoolType):
        return 2
    if isinstance(t, IntType):
        return t.hi - t.lo + 1
    if isinstance(t, IdType):
        return len(universe)
    if isinstance(t, SetType):
        return 2 ** domain_size(t.base, universe)
    raise TypeError(t)


class Env(Mapping):
    """Immutable variable assignment; hashable so it can name a DFA state."""

    __slots__ = ("_names", "_values")

    def __init__(self, names, values):
        self._names = tuple(names)
        self._values = tuple(values)

    @property
    def values(self) -> tuple:
        return self._values

    def __getitem__(self, key):
        try:
            return self._values[self._names.index(key)]
        except ValueError:
            raise KeyError(key) from None

    def __iter__(self):
        return iter(self._names)

    def __len__(self):
        return len(self._names)

    def __hash__(self):
        return hash((self._names, self._values))

    def __eq__(self, other):
        if isinstance(other, Env):
            return self._names == other._names and self._values == other._values
        return Mapping.__eq__(self, other)

    def __repr__(self):
        inner = ", ".join(f"{n}={_show(v)}" for n, v in zip(self._names, self._values))
        return f"Env({inner})"


def _show(v):
    if isinstance(v, frozenset):
        return "{" + ", ".join(sorted(map(str, v))) + "}"
    return repr(v)


class _Checker:
    def __init__(self, decls, universe):
        self.slots = {d.name: (i, d.type_tag) for i, d in enumerate(decls)}
        self.universe = universe

    def check(self, exp) -> tuple[Any, Callable]:
        if isinstance(exp, BoolLit):
            v = exp.value
            return BoolType(), lambda s: v
        if isinstance(exp, IntLit):
            v = exp.value
            return IntType(), lambda s: v
        if isinstance(exp, IdLit):
            v = exp.value
            return IdType(), lambda s: v
        if isinstance(exp, Name):
            if exp.name not in self.slots:
                raise UndeclaredVariable(f"undeclared variable {exp.name!r} at {exp.pos}")
            i, t = self.slots[exp.name]
            return t, lambda s: s[i]
        if isinstance(exp, SetLit):
            return self._set_literal(exp)
        if isinstance(exp, Not):
            f = self.expect_bool(exp.operand, "operand of 'not'")
            return BoolType(), lambda s: not f(s)
        if isinstance(exp, Card):
            t, f = self.check(exp.operand)
            if not isinstance(t, SetType):
                raise TypeMismatch(f"|...| needs a set, got {t} at {exp.pos}")
            top = domain_size(t.base, self.universe) if t.base is not None else 0
            return IntType(0, top), lambda s: len(f(s))
        if isinstance(exp, BinOp):
            return self._binop(exp)
        raise TypeError(f"not an expression: {exp!r}")

    def expect_bool(self, exp, what) -> Callable:
        t, f = self.check(exp)
        if not isinstance(t, BoolType):
            raise TypeMismatch(f"{what} must be Bool, got {t}")
        return f

    def _set_literal(self, exp: SetLit):
        if not exp.items:
            return _ANY_SET, lambda s: frozenset()
        checked = [self.check(i) for i in exp.items]
        base = checked[0][0]
        for t, _ in checked:
            if isinstance(t, SetType) or not _compatible(t, base):
                raise TypeMismatch(f"set literal elements must share a base type at {exp.pos}")
        fns = [f for _, f in checked]
        return SetType(base), lambda s: frozenset(f(s) for f in fns)

    def _binop(self, exp: BinOp):
        op = exp.op
        lt, lf = self.check(exp.left)
        rt, rf = self.check(exp.right)
        where = f"operator {op!r} at {exp.pos}"
        if op in ("and", "or"):
            if not (isinstance(lt, BoolType) and isinstance(rt, BoolType)):
                raise TypeMismatch(f"{where} needs Bool operands")
            if op == "and":
                return BoolType(), lambda s: lf(s) and rf(s)
            return BoolType(), lambda s: lf(s) or rf(s)
        if op in ("==", "!="):
            if not _compatible(lt, rt):
                raise TypeMismatch(f"{where} compares {lt} with {rt}")
            if op == "==":
                return BoolType(), lambda s: lf(s) == rf(s)
            return BoolType(), lambda s: lf(s) != rf(s)
        if op in ("<", "<=", ">", ">="):
            if not (isinstance(lt, IntType) and isinstance(rt, IntType)):
                raise TypeMismatch(f"{where} needs Int operands")
            cmp = {"<": int.__lt__, "<=": int.__le__, ">": int.__gt__, ">=": int.__ge__}[op]
            return BoolType(), lambda s: cmp(lf(s), rf(s))
        if op == "in":
            if not isinstance(rt, SetType) or isinstance(lt, SetType):
                raise TypeMismatch(f"{where} needs an element and a set")
            if rt.base is not None and not _compatible(lt, rt.base):
                raise TypeMismatch(f"{where}: {lt} is not an element type of {rt}")
            return BoolType(), lambda s: lf(s) in rf(s)
        if op in ("+", "-"):
            if isinstance(lt, IntType) and isinstance(rt, IntType):
                t = _hull(lt, rt)
                if op == "+":
                    return t, lambda s: _clamp(lf(s) + rf(s), t)
                return t, lambda s: _clamp(lf(s) - rf(s), t)
            if isinstance(lt, SetType) and not isinstance(rt, SetType):
                if lt.base is not None and not _compatible(rt, lt.base):
                    raise TypeMismatch(f"{where}: cannot combine {lt} with {rt}")
                st = lt if lt.base is not None else SetType(rt)
                if isinstance(st.base, IntType) and st.base.bounded:
                    base = st.base
                    elem = lambda s: _clamp(rf(s), base)
                else:
                    elem = rf
                if op == "+":
                    return st, lambda s: lf(s) | {elem(s)}
                return st, lambda s: lf(s) - {elem(s)}
            raise TypeMismatch(f"{where} cannot combine {lt} with {rt}")
        raise TypeCheckError(f"unknown operator {op!r}")

    def coerce(self, target, source_type, fn, what) -> Callable:
        """Wrap `fn` so its result fits `target` (saturating ints)."""
        if not _compatible(target, source_type):
            raise TypeMismatch(f"{what}: cannot assign {source_type} to {target}")
        if isinstance(target, IntType):
            return lambda s: _clamp(fn(s), target)
        if isinstance(target, SetType) and isinstance(target.base, IntType):
            base = target.base
            return lambda s: frozenset(_clamp(x, base) for x in fn(s))
        return fn


@dataclass(frozen=True)
class CompiledRule:
    guard: Callable
    symbols: frozenset
    updates: tuple  # ((slot, fn), ...)
    source_index: int

    def apply(self, state: tuple) -> tuple:
        if not self.updates:
            return state
        new = list(state)
        # simultaneous assignment: every right-hand side sees the old state
        for slot, fn in self.updates:
            new[slot] = fn(state)
        return tuple(new)


@dataclass(frozen=True)
class TypedPolicy:
    ast: PolicyAst
    alphabet: Alphabet
    initial_env: Env
    universe: tuple = ()
    rules: tuple = field(default=(), repr=False)
    accept_fn: Callable = field(default=None, repr=False)

    @property
    def names(self) -> tuple:
        return tuple(d.name for d in self.ast.state_decls)

    def env(self, state: tuple) -> Env:
        return Env(self.names, state)

    def domain_sizes(self) -> dict:
        return {d.name: domain_size(d.type_tag, self.universe) for d in self.ast.state_decls}

    def step(self, state: tuple, symbol: int):
        """First matching rule applied to `state`, or ``None`` when none fires."""
        for rule in self.rules:
            if symbol in rule.symbols and rule.guard(state):
                return rule.apply(state)
        return None

    def accepts(self, state: tuple) -> bool:
        return bool(self.accept_fn(state))


def _id_universe(ast: PolicyAst, alphabet: Alphabet) -> tuple:
    ids = {v for _, v in alphabet if v is not None and _IDENT_RE.match(v)}
    exps = [d.init for d in ast.state_decls] + [ast.accept]
    for r in ast.rules:
        exps.append(r.guard)
        exps.extend(u.exp for u in r.updates)
    for e in exps:
        ids.update(n.value for n in walk(e) if isinstance(n, IdLit))
    return tuple(sorted(ids))


def _check_type_tag(decl: VarDecl):
    t = decl.type_tag
    base = t.base if isinstance(t, SetType) else t
    if isinstance(base, IntType):
        if not base.bounded:
            raise UnboundedInt(f"variable {decl.name!r}: Int needs a range, e.g. Int[0,10]")
        if base.lo > base.hi:
            raise TypeMismatch(f"variable {decl.name!r}: empty range {base}")


def _literal_value(decl: VarDecl, checker: _Checker):
    t, fn = checker.check(decl.init)
    if not _compatible(decl.type_tag, t):
        raise TypeMismatch(f"variable {decl.name!r}: initial value of type {t} "
                           f"does not fit {decl.type_tag}")
    value = fn(())
    target = decl.type_tag
    in_range = True
    if isinstance(target, IntType):
        in_range = target.lo <= value <= target.hi
    elif isinstance(target, SetType) and isinstance(target.base, IntType):
        in_range = all(target.base.lo <= x <= target.base.hi for x in value)
    if not in_range:
        raise TypeMismatch(f"variable {decl.name!r}: initial value out of range {target}")
    return value


def typecheck(ast: PolicyAst, alphabet: Alphabet) -> TypedPolicy:
    """Check `ast` against `alphabet` and prepare it for execution."""
    seen = set()
    for d in ast.state_decls:
        if d.name in seen:
            raise DuplicateVariable(f"variable {d.name!r} declared twice")
        seen.add(d.name)
        _check_type_tag(d)

    universe = _id_universe(ast, alphabet)
    checker = _Checker(ast.state_decls, universe)
    # initial values may not mention variables
    init_checker = _Checker((), universe)
    initial = tuple(_literal_value(d, init_checker) for d in ast.state_decls)

    rules = []
    for index, rule in enumerate(ast.rules):
        guard = checker.expect_bool(rule.guard, f"guard of rule {index + 1}")
        symbols = []
        for ev in rule.events:
            if ev.symbol not in alphabet.index:
                raise UnknownEvent(f"rule {index + 1}: event {ev} is not in the alphabet")
            symbols.append(alphabet.index[ev.symbol])
        if len(set(symbols)) != len(symbols):
            raise TypeCheckError(f"rule {index + 1}: repeated event in WHEN list")
        updates = []
        targets = set()
        for u in rule.updates:
            if u.name not in checker.slots:
                raise UndeclaredVariable(f"rule {index + 1}: assignment to undeclared {u.name!r}")
            if u.name in targets:
                raise TypeCheckError(f"rule {index + 1}: {u.name!r} assigned twice")
            targets.add(u.name)
            slot, target = checker.slots[u.name]
            t, fn = checker.check(u.exp)
            updates.append((slot, checker.coerce(target, t, fn, f"rule {index + 1}")))
        rules.append(CompiledRule(guard, frozenset(symbols), tuple(updates), index))

    accept = checker.expect_bool(ast.accept, "ACCEPT condition")
    names = tuple(d.name for d in ast.state_decls)
    return TypedPolicy(ast, alphabet, Env(names, initial), universe, tuple(rules), accept)


def eval_exp(exp, env: Env, decls=None):
    """Evaluate `exp` under `env`.

    `decls` supplies the variable types, either as VarDecls or as a mapping
    name -> type; it defaults to types inferred from the values in `env`
    (bools, unbounded ints, strings as Id, sets).
    """
    if decls is None:
        decls = {n: _infer_type(v) for n, v in env.items()}
    if isinstance(decls, Mapping):
        decls = [VarDecl(n, t, BoolLit(False)) for n, t in decls.items()]
    by_name = {d.name: d for d in decls}
    ordered = [by_name[n] for n in env]
    universe = tuple(sorted({n.value for n in walk(exp) if isinstance(n, IdLit)}))
    _, fn = _Checker(ordered, universe).check(exp)
    return fn(tuple(env[n] for n in env))


def _infer_type(v):
    if isinstance(v, bool):
        return BoolType()
    if isinstance(v, int):
        return IntType()
    if isinstance(v, str):
        return IdType()
    if isinstance(v, frozenset):
        if not v:
            return _ANY_SET
        return SetType(_infer_type(next(iter(v))))
    raise TypeError(f"unsupported value {v!r}")
