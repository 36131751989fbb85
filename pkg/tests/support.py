"""Shared test helpers: the worked policies, random generators and a reference evaluator.

The reference evaluator walks the AST with plain Python values and shares no
code with the checker, so agreement with it is a real cross-check.
"""

import itertools
import random
import warnings
from pathlib import Path

from pryvect import automata
from pryvect.automata import Dfa
from pryvect.cpsl import parse, typecheck
from pryvect.cpsl.ast import BinOp, BoolLit, Card, IdLit, IntLit, IntType, Name, Not, SetLit
from pryvect.trace import Alphabet, Event, Trace

DATA = Path(__file__).resolve().parents[1] / "src" / "pryvect" / "data"

QUARANTINE = (DATA / "quarantine.cpsl").read_text()
TESTS_ALPHABET = Alphabet.parse((DATA / "quarantine.alpha").read_text())
RISKY = (DATA / "risky.cpsl").read_text()
RISKY_ALPHABET = Alphabet.parse((DATA / "risky.alpha").read_text())


def compile_quiet(source_or_ast, alphabet, **kw):
    ast = parse(source_or_ast) if isinstance(source_or_ast, str) else source_or_ast
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", automata.OverlappingRulesWarning)
        return automata.compile(typecheck(ast, alphabet), **kw)


def quarantine_dfa() -> Dfa:
    return compile_quiet(QUARANTINE, TESTS_ALPHABET)


# Edges of the two-state quarantine automaton, written out by hand.
GOLDEN_EDGES = {
    ("q0", "a(+)"): "q1", ("q0", "s(+)"): "q1", ("q0", "v(+)"): "q1",
    ("q0", "a(-)"): "q0", ("q0", "s(-)"): "q0", ("q0", "v(-)"): "q0",
    ("q1", "s(-)"): "q0",
    ("q1", "a(+)"): "q1", ("q1", "s(+)"): "q1", ("q1", "v(+)"): "q1",
    ("q1", "a(-)"): "q1", ("q1", "v(-)"): "q1",
}


def matches_golden(dfa: Dfa) -> bool:
    """True when `dfa` is the hand-drawn quarantine automaton up to state renaming."""
    if dfa.n_states != 2:
        return False
    for perm in itertools.permutations(range(2)):
        name = {perm[0]: "q0", perm[1]: "q1"}
        if name[dfa.initial] != "q0" or {name[q] for q in dfa.finals} != {"q0"}:
            continue
        edges = {(name[q], str(dfa.alphabet.event(a))): name[dfa.delta[q][a]]
                 for q in dfa.states for a in range(len(dfa.alphabet))}
        if edges == GOLDEN_EDGES:
            return True
    return False


def all_traces(alphabet: Alphabet, max_len: int):
    events = [alphabet.event(i) for i in range(len(alphabet))]
    for n in range(max_len + 1):
        for combo in itertools.product(events, repeat=n):
            yield Trace(combo)


def random_trace(rng: random.Random, alphabet: Alphabet, max_len: int) -> Trace:
    n = rng.randint(0, max_len)
    return Trace(alphabet.event(rng.randrange(len(alphabet))) for _ in range(n))


def plain_states(dfa: Dfa, symbols):
    q, out = dfa.initial, []
    for a in symbols:
        q = dfa.delta[q][a]
        out.append(q)
    return out


# --- reference evaluator ---------------------------------------------------

def _bounds(exp, decls):
    if isinstance(exp, Name) and isinstance(decls[exp.name], IntType):
        t = decls[exp.name]
        return t.lo, t.hi
    if isinstance(exp, Card):
        return None
    if isinstance(exp, BinOp) and exp.op in "+-":
        return _bounds(exp.left, decls) or _bounds(exp.right, decls)
    return None


def _clip(v, lo_hi):
    if lo_hi is None:
        return v
    lo, hi = lo_hi
    return max(lo, min(hi, v))


def ref_eval(exp, env, decls):
    if isinstance(exp, (BoolLit, IntLit, IdLit)):
        return exp.value
    if isinstance(exp, Name):
        return env[exp.name]
    if isinstance(exp, SetLit):
        return frozenset(ref_eval(i, env, decls) for i in exp.items)
    if isinstance(exp, Not):
        return not ref_eval(exp.operand, env, decls)
    if isinstance(exp, Card):
        return len(ref_eval(exp.operand, env, decls))
    left = ref_eval(exp.left, env, decls)
    right = ref_eval(exp.right, env, decls)
    op = exp.op
    if op == "and":
        return left and right
    if op == "or":
        return left or right
    if op == "in":
        return left in right
    if op in ("==", "!=", "<", "<=", ">", ">="):
        return {"==": left == right, "!=": left != right, "<": left < right,
                "<=": left <= right, ">": left > right, ">=": left >= right}[op]
    if isinstance(left, frozenset):
        return left | {right} if op == "+" else left - {right}
    lo_hi = _hull(_bounds(exp.left, decls), _bounds(exp.right, decls))
    return _clip(left + right if op == "+" else left - right, lo_hi)


def _hull(a, b):
    bs = [x for x in (a, b) if x is not None]
    if not bs:
        return None
    return min(x[0] for x in bs), max(x[1] for x in bs)


def ref_interpret(source: str, trace: Trace) -> bool:
    """Accept/reject of `trace` by direct rule execution over the AST."""
    ast = parse(source)
    decls = {d.name: d.type_tag for d in ast.state_decls}
    env = {d.name: ref_eval(d.init, {}, decls) for d in ast.state_decls}
    for ev in trace:
        for rule in ast.rules:
            if any((p.label, p.value) == ev.symbol for p in rule.events) and ref_eval(rule.guard, env, decls):
                new = dict(env)
                for u in rule.updates:
                    v = ref_eval(u.exp, env, decls)
                    t = decls[u.name]
                    if isinstance(t, IntType):
                        v = _clip(v, (t.lo, t.hi))
                    new[u.name] = v
                env = new
                break
        else:
            return False
    return bool(ref_eval(ast.accept, env, decls))


# --- random policies -------------------------------------------------------

IDS = ("x1", "x2", "k3")


def random_alphabet(rng: random.Random, max_symbols: int = 6) -> Alphabet:
    pool = [("a", "+"), ("a", "-"), ("s", "+"), ("s", "-"), ("day", None)] + [("c", i) for i in IDS]
    return Alphabet(rng.sample(pool, rng.randint(1, max_symbols)))


def _event_text(sym):
    label, value = sym
    return label if value is None else f"{label}({value})"


def random_policy(rng: random.Random, alphabet: Alphabet) -> str:
    """CPSL source over `alphabet` with Bool, bounded Int, Id and Set variables."""
    decls = []
    kinds = rng.sample(["Bool", "Int", "Id", "Set"], rng.randint(1, 3))
    for i, kind in enumerate(kinds):
        name = f"v{i}"
        if kind == "Bool":
            decls.append((name, "Bool", rng.choice(["true", "false"])))
        elif kind == "Int":
            lo = rng.randint(-2, 1)
            hi = lo + rng.randint(0, 3)
            decls.append((name, f"Int[{lo},{hi}]", str(rng.randint(lo, hi))))
        elif kind == "Id":
            decls.append((name, "Id", f"'{rng.choice(IDS)}'"))
        else:
            decls.append((name, "Set of Id", "{}"))

    def atom_bool():
        name, typ, _ = rng.choice(decls)
        if typ == "Bool":
            return name if rng.random() < 0.5 else f"not {name}"
        if typ.startswith("Int"):
            return f"{name} {rng.choice(['<', '<=', '>', '>=', '==', '!='])} {rng.randint(-2, 3)}"
        if typ == "Id":
            return f"{name} {rng.choice(['==', '!='])} '{rng.choice(IDS)}'"
        return rng.choice([f"'{rng.choice(IDS)}' in {name}", f"|{name}| >= {rng.randint(0, 2)}"])

    def guard():
        r = rng.random()
        if r < 0.25:
            return "true"
        if r < 0.75:
            return atom_bool()
        return f"({atom_bool()}) {rng.choice(['and', 'or'])} ({atom_bool()})"

    def update(name, typ):
        if typ == "Bool":
            return f"{name} := {rng.choice(['true', 'false', 'not ' + name])}"
        if typ.startswith("Int"):
            return f"{name} := {rng.choice([f'{name} + 1', f'{name} - 1', f'{name} + 2', str(rng.randint(-3, 4))])}"
        if typ == "Id":
            return f"{name} := '{rng.choice(IDS)}'"
        return f"{name} := {name} {rng.choice(['+', '-'])} '{rng.choice(IDS)}'"

    symbols = list(alphabet)
    lines = ["STATE"] + [f"  {n} : {t} := {v}" for n, t, v in decls]
    for _ in range(rng.randint(0, 6)):
        events = rng.sample(symbols, rng.randint(1, min(3, len(symbols))))
        targets = rng.sample(decls, rng.randint(0, len(decls)))
        updates = ", ".join(update(n, t) for n, t, _ in targets) or "skip"
        lines += ["", f"GIVEN {guard()}", "WHEN " + ", ".join(map(_event_text, events)), f"THEN {updates}"]
    if rng.random() < 0.5:
        # low-priority rule for every symbol keeps most traces out of the sink
        name, typ, _ = rng.choice(decls)
        lines += ["", "WHEN " + ", ".join(map(_event_text, symbols)), f"THEN {update(name, typ)}"]
    lines += ["", f"ACCEPT {guard()}"]
    return "\n".join(lines) + "\n"


def random_dfa(rng: random.Random, max_states: int, max_symbols: int) -> Dfa:
    k = rng.randint(1, max_symbols)
    alphabet = Alphabet([("e", str(i)) for i in range(k)])
    return automata.random_dfa(rng, rng.randint(1, max_states), alphabet)


def event(text: str) -> Event:
    return Event.parse(text)

