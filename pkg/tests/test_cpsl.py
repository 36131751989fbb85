import random

import pytest
from hypothesis import given, settings, strategies as st

from pryvect.cpsl import (
    BinOp, BoolLit, BoolType, Env, EventPattern, IdLit, IntType, Name, Not, eval_exp, interpret,
    parse, parse_exp, pretty, typecheck,
)
from pryvect.cpsl.ast import IdType, SetType
from pryvect.errors import (
    AlphabetMismatch, CpslSyntaxError, DuplicateVariable, TypeMismatch, UnboundedInt,
    UndeclaredVariable, UnknownEvent,
)
from pryvect.trace import Alphabet, Trace, Verdict

from support import QUARANTINE, RISKY, RISKY_ALPHABET, TESTS_ALPHABET, random_alphabet, random_policy, \
    random_trace, ref_eval, ref_interpret


def quarantine():
    return typecheck(parse(QUARANTINE), TESTS_ALPHABET)


# --- parse -----------------------------------------------------------------

def test_parse_quarantine():
    ast = parse(QUARANTINE)
    assert len(ast.state_decls) == 1
    decl = ast.state_decls[0]
    assert (decl.name, decl.type_tag, decl.init) == ("contagious", BoolType(), BoolLit(False))
    assert len(ast.rules) == 4
    assert ast.accept == Not(Name("contagious"))
    # source order is preserved
    assert ast.rules[2].events == (EventPattern("s", "-"),)
    assert ast.rules[0].updates[0].name == "contagious"
    assert ast.rules[1].updates == ()


def test_parse_empty_policy():
    ast = parse("STATE ACCEPT true")
    assert ast.state_decls == () and ast.rules == () and ast.accept == BoolLit(True)


def test_then_before_when():
    with pytest.raises(CpslSyntaxError) as info:
        parse("STATE\nGIVEN true THEN skip WHEN a(+)\nACCEPT true")
    err = info.value
    assert "THEN" in str(err)
    assert err.line == 2 and "WHEN" in err.expected


@pytest.mark.parametrize("src", [
    "STATE ACCEPT",
    "STATE x : Bool = false ACCEPT true",
    "STATE WHEN THEN skip ACCEPT true",
    "STATE WHEN a(+) THEN ACCEPT true",
    "STATE ACCEPT true extra",
    "state ACCEPT true",
])
def test_syntax_errors(src):
    with pytest.raises(CpslSyntaxError):
        parse(src)


def test_comments_and_bare_events():
    ast = parse("# header\nSTATE\n n : Int[0,2] := 0  # counter\nWHEN day THEN n := n + 1\nACCEPT n < 2")
    assert ast.rules[0].events == (EventPattern("day", None),)
    assert ast.rules[0].guard == BoolLit(True)


def test_expression_precedence():
    assert parse_exp("not a and b or c") == BinOp("or", BinOp("and", Not(Name("a")), Name("b")), Name("c"))
    assert parse_exp("x + 1 < 3") == BinOp("<", BinOp("+", Name("x"), parse_exp("1")), parse_exp("3"))
    assert parse_exp("'x9' in S") == BinOp("in", IdLit("x9"), Name("S"))


def test_pretty_round_trip_examples():
    for src in (QUARANTINE, RISKY, "STATE ACCEPT true",
                "STATE S : Set of Id := {'a1'}\nk : Int[-2,2] := -1\n"
                "WHEN c(x9) THEN S := S - 'a1', k := k - 1\nACCEPT |S| >= 1 or not (k == -2)"):
        ast = parse(src)
        assert parse(pretty(ast)) == ast


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10 ** 9))
def test_pretty_round_trip_random(seed):
    rng = random.Random(seed)
    ast = parse(random_policy(rng, random_alphabet(rng)))
    assert parse(pretty(ast)) == ast


# --- typecheck -------------------------------------------------------------

def test_typecheck_quarantine():
    tp = quarantine()
    assert dict(tp.initial_env) == {"contagious": False}
    assert tp.alphabet == TESTS_ALPHABET


def test_bool_assigned_int():
    src = QUARANTINE.replace("THEN contagious := true", "THEN contagious := 3")
    with pytest.raises(TypeMismatch):
        typecheck(parse(src), TESTS_ALPHABET)


def test_unknown_event():
    with pytest.raises(UnknownEvent):
        typecheck(parse("STATE WHEN x(+) THEN skip ACCEPT true"), TESTS_ALPHABET)


@pytest.mark.parametrize("src, err", [
    ("STATE WHEN a(+) THEN k := 1 ACCEPT true", UndeclaredVariable),
    ("STATE ACCEPT missing", UndeclaredVariable),
    ("STATE k : Int := 0 ACCEPT true", UnboundedInt),
    ("STATE k : Bool := true k : Bool := false ACCEPT true", DuplicateVariable),
    ("STATE k : Int[0,3] := 0 ACCEPT k", TypeMismatch),
    ("STATE k : Int[0,3] := 0 GIVEN k WHEN a(+) THEN skip ACCEPT true", TypeMismatch),
    ("STATE k : Int[0,3] := 5 ACCEPT true", TypeMismatch),
    ("STATE k : Int[3,0] := 0 ACCEPT true", TypeMismatch),
    ("STATE b : Bool := true ACCEPT b < 1", TypeMismatch),
    ("STATE S : Set of Id := {} ACCEPT 1 in S", TypeMismatch),
])
def test_typecheck_errors(src, err):
    with pytest.raises(err):
        typecheck(parse(src), TESTS_ALPHABET)


def test_repeated_event_in_rule_rejected():
    with pytest.raises(Exception):
        typecheck(parse("STATE WHEN a(+), a(+) THEN skip ACCEPT true"), TESTS_ALPHABET)


# --- eval_exp --------------------------------------------------------------

def test_eval_guard():
    assert eval_exp(parse_exp("not contagious"), Env(["contagious"], [False])) is True


def test_saturating_increment():
    decl = {"k": IntType(0, 3)}
    assert eval_exp(parse_exp("k + 1"), Env(["k"], [3]), decl) == 3
    assert eval_exp(parse_exp("k - 5"), Env(["k"], [1]), decl) == 0


def test_set_cardinality():
    env = Env(["S"], [frozenset({"i1", "i2"})])
    decl = {"S": SetType(IdType())}
    exp = parse_exp("|S| >= 2")
    assert eval_exp(exp, env, decl) is (len({"i1", "i2"}) >= 2)
    assert eval_exp(parse_exp("S + 'i3'"), env, decl) == frozenset({"i1", "i2", "i3"})
    assert eval_exp(parse_exp("S - 'i1'"), env, decl) == frozenset({"i2"})
    assert eval_exp(parse_exp("'i1' in S and not ('i9' in S)"), env, decl) is True


@given(st.integers(-3, 5), st.integers(-4, 4), st.sampled_from(["+", "-"]))
def test_saturation_stays_in_range(k, delta, op):
    lo, hi = -1, 3
    k = max(lo, min(hi, k))
    exp = parse_exp(f"k {op} {abs(delta)}" if delta >= 0 else f"k {op} ({delta})")
    got = eval_exp(exp, Env(["k"], [k]), {"k": IntType(lo, hi)})
    assert lo <= got <= hi
    assert got == ref_eval(exp, {"k": k}, {"k": IntType(lo, hi)})


# --- interpret -------------------------------------------------------------

def test_interpret_worked_traces():
    tp = quarantine()
    assert interpret(tp, Trace.parse("v(+);s(-);a(-)")) is Verdict.ACCEPT
    assert interpret(tp, Trace.parse("v(+);s(-);a(+)")) is Verdict.REJECT
    assert interpret(tp, Trace()) is Verdict.ACCEPT


def test_interpret_default_deny():
    tp = typecheck(parse("STATE WHEN a(+) THEN skip ACCEPT true"), TESTS_ALPHABET)
    assert interpret(tp, Trace.parse("a(+);a(+)")) is Verdict.ACCEPT
    assert interpret(tp, Trace.parse("a(+);s(-)")) is Verdict.REJECT


def test_interpret_first_match_wins():
    src = ("STATE b : Bool := false\nWHEN a(+) THEN b := true\nWHEN a(+) THEN b := false\n"
           "ACCEPT b")
    tp = typecheck(parse(src), TESTS_ALPHABET)
    assert interpret(tp, Trace.parse("a(+)")) is Verdict.ACCEPT


def test_simultaneous_updates():
    src = ("STATE x : Int[0,5] := 1\ny : Int[0,5] := 2\nWHEN a(+) THEN x := y, y := x\n"
           "ACCEPT x == 2 and y == 1")
    tp = typecheck(parse(src), TESTS_ALPHABET)
    assert interpret(tp, Trace.parse("a(+)")) is Verdict.ACCEPT


def test_interpret_out_of_alphabet():
    with pytest.raises(AlphabetMismatch):
        interpret(quarantine(), Trace.parse("q(+)"))


def test_risky_policy_counts_dangerous_contacts():
    tp = typecheck(parse(RISKY), RISKY_ALPHABET)
    assert interpret(tp, Trace.parse("d;d;day")) is Verdict.ACCEPT
    assert interpret(tp, Trace.parse("d;d;d")) is Verdict.REJECT
    assert interpret(tp, Trace.parse("d;d;d;v(-)")) is Verdict.ACCEPT
    assert interpret(tp, Trace.parse("d;d;d;d;d;v(-);d;d")) is Verdict.ACCEPT


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10 ** 9))
def test_interpret_matches_reference(seed):
    rng = random.Random(seed)
    alpha = random_alphabet(rng)
    src = random_policy(rng, alpha)
    tp = typecheck(parse(src), alpha)
    for _ in range(4):
        trace = random_trace(rng, alpha, 8)
        assert bool(interpret(tp, trace)) == ref_interpret(src, trace)


def test_alphabet_identifiers_form_id_universe():
    alpha = Alphabet.parse("c: x9,k2")
    tp = typecheck(parse("STATE last : Id := 'x9'\nWHEN c(k2) THEN last := 'k2'\nACCEPT last == 'x9'"), alpha)
    assert interpret(tp, Trace.parse("c(k2)")) is Verdict.REJECT
    assert tp.domain_sizes()["last"] == 2
