"""End-to-end acceptance checks, one group of tests per criterion.

A summary line per criterion is printed at the end of the run (see
conftest.py). Timing budgets are asserted as stated, on whatever machine
runs the suite.
"""

import itertools
import os
import random
import signal
import subprocess
import sys
import time

import pytest
from scipy.stats import chisquare

from pryvect import hcrypto
from pryvect.automata import Dfa, run
from pryvect.cpsl import interpret, parse, typecheck
from pryvect.messages import Hello, Params, VerdictMsg
from pryvect.netapp.scenario import Scenario, run_scenario
from pryvect.netapp.service import Facility, OracleClient, OracleService
from pryvect.netapp.transport import pipe, receive, send
from pryvect.obeval import Phase, UserSession, run_local
from pryvect.oracle import AuthoritativeCredential, OracleStore, make_report
from pryvect.tokens import SigningKeyPair, issue, load_verification_key, trace_digest, verify
from pryvect.trace import Alphabet, Event, Trace, Verdict, map_unknown_contacts

from support import (
    DATA, QUARANTINE, RISKY, RISKY_ALPHABET, TESTS_ALPHABET, all_traces, compile_quiet, matches_golden,
    random_alphabet, random_dfa, random_policy, random_trace,
)

KAPPA = 16
ACCEPTED = Trace.parse("v(+);s(-);a(-)")
REJECTED = Trace.parse("v(+);s(-);a(+)")


def report(number, ok, detail):
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture(scope="module")
def keys():
    return hcrypto.keygen(512, random.Random(2024))


# --- 1 ---------------------------------------------------------------------

@pytest.mark.criterion(1, "quarantine policy compiles to the two-state golden automaton (< 1 s)")
def test_criterion_1_golden_automaton():
    started = time.perf_counter()
    dfa = compile_quiet(QUARANTINE, TESTS_ALPHABET)
    elapsed = time.perf_counter() - started
    report(1, matches_golden(dfa), f"states={dfa.n_states} elapsed={elapsed:.3f}s")
    assert dfa.n_states == 2 and dfa.initial in dfa.finals and len(dfa.finals) == 1
    assert matches_golden(dfa)
    assert elapsed < 1.0


# --- 2 ---------------------------------------------------------------------

@pytest.mark.criterion(2, "worked traces: run and run_local agree (< 5 s with 512-bit keys)")
def test_criterion_2_worked_traces():
    started = time.perf_counter()
    dfa = compile_quiet(QUARANTINE, TESTS_ALPHABET)
    keys = hcrypto.keygen(512, random.Random(1))
    got = {}
    for trace in (ACCEPTED, REJECTED):
        got[str(trace)] = (run(dfa, trace), run_local(dfa, trace, seed=7, keys=keys)[0])
    shown = {t: tuple(v.value for v in pair) for t, pair in got.items()}
    elapsed = time.perf_counter() - started
    report(2, True, f"{shown} elapsed={elapsed:.2f}s")
    assert got[str(ACCEPTED)] == (Verdict.ACCEPT, Verdict.ACCEPT)
    assert got[str(REJECTED)] == (Verdict.REJECT, Verdict.REJECT)
    assert elapsed < 5.0


# --- 3 ---------------------------------------------------------------------

_elapsed = {}


def dfas_up_to_renaming(n: int, alphabet: Alphabet):
    """Every DFA on n states with initial state 0, one per renaming of states 1..n-1."""
    k = len(alphabet)
    perms = [(0,) + p for p in itertools.permutations(range(1, n))]
    seen = set()
    for flat in itertools.product(range(n), repeat=n * k):
        rows = tuple(tuple(flat[q * k:(q + 1) * k]) for q in range(n))
        for mask in range(1 << n):
            finals = frozenset(q for q in range(n) if mask >> q & 1)
            if (rows, finals) in seen:
                continue
            for p in perms:
                inv = {p[q]: q for q in range(n)}
                seen.add((tuple(tuple(p[rows[inv[s]][a]] for a in range(k)) for s in range(n)),
                          frozenset(p[q] for q in finals)))
            yield Dfa(n, 0, alphabet, rows, finals)


@pytest.mark.criterion(3, "oblivious evaluation agrees with plaintext run (< 3 min total)")
def test_criterion_3_random_instances(keys):
    rng = random.Random(3)
    started = time.perf_counter()
    disagreements = 0
    for i in range(500):
        dfa = random_dfa(rng, 8, 6)
        trace = Trace(dfa.alphabet.event(rng.randrange(len(dfa.alphabet)))
                      for _ in range(rng.randint(0, 12)))
        disagreements += run_local(dfa, trace, seed=i, keys=keys, kappa=KAPPA)[0] != run(dfa, trace)
    _elapsed["random"] = time.perf_counter() - started
    report(3, disagreements == 0,
           f"random: 500 instances, {disagreements} disagreements, {_elapsed['random']:.1f}s")
    assert disagreements == 0


@pytest.mark.criterion(3, "oblivious evaluation agrees with plaintext run (< 3 min total)")
def test_criterion_3_exhaustive(keys):
    alphabet = Alphabet(["e(0)", "e(1)"])
    traces = list(all_traces(alphabet, 4))
    started = time.perf_counter()
    count = disagreements = 0
    for n in (1, 2, 3):
        for dfa in dfas_up_to_renaming(n, alphabet):
            count += 1
            for j, trace in enumerate(traces):
                verdict, _ = run_local(dfa, trace, seed=count * 100 + j, keys=keys, kappa=KAPPA)
                disagreements += verdict != run(dfa, trace)
    _elapsed["exhaustive"] = time.perf_counter() - started
    report(3, disagreements == 0,
           f"exhaustive: {count} DFAs x {len(traces)} traces, {disagreements} disagreements, "
           f"{_elapsed['exhaustive']:.1f}s")
    assert count == 2 + 64 + 2934 and len(traces) == 31
    assert disagreements == 0


@pytest.mark.criterion(3, "oblivious evaluation agrees with plaintext run (< 3 min total)")
def test_criterion_3_time_budget():
    assert set(_elapsed) == {"random", "exhaustive"}, "correctness parts did not run"
    total = sum(_elapsed.values())
    report(3, total < 180, f"time: {total:.1f}s against a 180s budget")
    assert total < 180


# --- 4 ---------------------------------------------------------------------

def step_counts(transcript):
    queries = [e.ciphertexts for e in transcript.entries if e.kind == "StepQuery"]
    replies = [e.ciphertexts for e in transcript.entries if e.kind == "StepReply"]
    return queries, replies


@pytest.mark.criterion(4, "per-step ciphertexts |Q|+|L| and |L|+1; rounds = l + 2")
def test_criterion_4_linear_cost(keys):
    rng = random.Random(4)
    q_count = 4
    for k in (2, 3, 5):
        small = Dfa(q_count, 0, Alphabet([("e", str(i)) for i in range(k)]),
                    tuple(tuple(rng.randrange(q_count) for _ in range(k)) for _ in range(q_count)),
                    frozenset({0}))
        big = Dfa(q_count, 0, Alphabet([("e", str(i)) for i in range(2 * k)]),
                  tuple(row + row for row in small.delta), frozenset({0}))
        for ell in (1, 2, 5):
            trace = Trace(Event("e", str(rng.randrange(k))) for _ in range(ell))
            _, t_small = run_local(small, trace, seed=ell, keys=keys, kappa=KAPPA)
            _, t_big = run_local(big, trace, seed=ell, keys=keys, kappa=KAPPA)
            qs, rs = step_counts(t_small)
            qb, rb = step_counts(t_big)
            assert qs == [q_count + k] * (ell - 1) and rs == [k + 1] * (ell - 1)
            assert qb == [q_count + 2 * k] * (ell - 1) and rb == [2 * k + 1] * (ell - 1)
            assert all(b - s == k for b, s in zip(qb + rb, qs + rs))
            assert t_small.rounds() == t_big.rounds() == ell + 2
    report(4, True, "query |Q|+|L|, reply |L|+1, doubling |L| adds |L|, rounds l+2")


# --- 5 ---------------------------------------------------------------------

@pytest.mark.criterion(5, "first blinded state uniform over Z_5 (chi-square, alpha = 0.01)")
def test_criterion_5_blinding_uniformity(keys):
    alphabet = Alphabet(["e(0)", "e(1)"])
    dfa = Dfa(5, 0, alphabet, ((3, 1), (2, 4), (0, 0), (4, 1), (1, 2)), frozenset({2, 4}))
    trace = Trace.parse("e(0);e(1)")
    observed = [0] * 5
    for i in range(2000):
        _, transcript = run_local(dfa, trace, seed=10_000 + i, keys=keys, kappa=KAPPA)
        observed[transcript.blinded_states[0]] += 1
    stat, p = chisquare(observed)
    report(5, p > 0.01, f"counts={observed} chi2={stat:.2f} p={p:.3f}")
    assert p > 0.01


# --- 6 ---------------------------------------------------------------------

@pytest.mark.criterion(6, "transcripts of equal-length traces have identical shape")
def test_criterion_6_shape_independence(keys):
    rng = random.Random(6)
    dfa = compile_quiet(QUARANTINE, TESTS_ALPHABET)
    checked = 0
    for ell in range(7):
        shapes = set()
        for _ in range(6):
            trace = Trace(TESTS_ALPHABET.event(rng.randrange(len(TESTS_ALPHABET))) for _ in range(ell))
            _, transcript = run_local(dfa, trace, seed=rng.getrandbits(32), keys=keys, kappa=KAPPA)
            shapes.add(tuple(transcript.shape()))
            checked += 1
        assert len(shapes) == 1, f"length {ell}: {len(shapes)} distinct transcript shapes"
    # opposite outcomes, same length: the verdict message must not differ in size
    accept_verdict, a = run_local(dfa, ACCEPTED, seed=1, keys=keys, kappa=KAPPA)
    reject_verdict, b = run_local(dfa, REJECTED, seed=2, keys=keys, kappa=KAPPA)
    assert (accept_verdict, reject_verdict) == (Verdict.ACCEPT, Verdict.REJECT)
    assert a.shape() == b.shape()
    report(6, True, f"{checked} transcripts over lengths 0..6 plus an accept/reject pair")


# --- 7 ---------------------------------------------------------------------

def hand_verdicts(scenario: Scenario) -> list:
    """Risky-contact counting, simulated directly from the scenario script.

    The counter goes up on a contact with someone reported positive before
    the request, saturates at 3, and resets on a negative test.
    """
    history = {u: [] for u in scenario.users}
    positive_at = {}
    verdicts = []
    for step in scenario.script:
        if step.action == "contact":
            a, b = step.args
            history[a].append(("contact", b))
            history[b].append(("contact", a))
        elif step.action == "test":
            user, _, value = step.args
            history[user].append(("test", value))
            if value == "+":
                positive_at.setdefault(user, step.t)
        elif step.action == "request":
            count = 0
            for kind, arg in history[step.args[0]]:
                if kind == "contact" and arg in positive_at:
                    count = min(3, count + 1)
                elif kind == "test" and arg == "-":
                    count = 0
            verdicts.append("accept" if count < 3 else "reject")
    return verdicts


@pytest.mark.criterion(7, "risky-contact scenario: accept at 2, reject at 3, accept after v(-) (< 30 s)")
def test_criterion_7_risky_scenario():
    scenario = Scenario.load(DATA / "risky.scn")
    started = time.perf_counter()
    result = run_scenario(scenario)
    elapsed = time.perf_counter() - started
    u1 = [r["verdict"] for r in result.requests if r["user"] == "u1"]
    expected = hand_verdicts(scenario)
    ok = result.verdicts() == expected and u1 == ["accept", "reject", "accept"]
    report(7, ok and elapsed < 30, f"u1={u1} all={result.verdicts()} elapsed={elapsed:.1f}s")
    assert [r["positives"] for r in result.requests if r["user"] == "u1"] == [2, 3, 3]
    assert u1 == ["accept", "reject", "accept"]
    assert result.verdicts() == expected
    assert all(r["token"] == "Valid" for r in result.requests if r["verdict"] == "accept")
    assert elapsed < 30


# --- 8 ---------------------------------------------------------------------

@pytest.mark.criterion(8, "token lifecycle: valid, expired, bit flips, public key only")
def test_criterion_8_token_lifecycle():
    signer = SigningKeyPair.generate(random.Random(8))
    now = 1_700_000_000
    token = issue(signer, bytes(32), trace_digest(ACCEPTED), 600, now)
    vk = load_verification_key(signer.public_pem())  # nothing but the public key
    assert verify(vk, token, now)
    assert verify(vk, token, now + 600)
    assert not verify(vk, token, now + 601)
    raw = token.to_bytes()
    flipped = 0
    for bit in range(len(raw) * 8):
        mutated = bytearray(raw)
        mutated[bit // 8] ^= 1 << (bit % 8)
        assert not verify(vk, bytes(mutated), now)
        flipped += 1
    report(8, True, f"{flipped} single-bit mutations all rejected")


# --- 9 ---------------------------------------------------------------------

@pytest.mark.criterion(9, "interpret == run . compile on 1000 random (policy, trace) pairs")
def test_criterion_9_compilation_soundness():
    rng = random.Random(9)
    disagreements = 0
    sizes = []
    for _ in range(1000):
        alphabet = random_alphabet(rng)
        source = random_policy(rng, alphabet)
        typed = typecheck(parse(source), alphabet)
        dfa = compile_quiet(source, alphabet)
        trace = random_trace(rng, alphabet, 10)
        disagreements += interpret(typed, trace) != run(dfa, trace)
        sizes.append(dfa.n_states)
    report(9, disagreements == 0, f"1000 pairs, {disagreements} disagreements, max |Q|={max(sizes)}")
    assert disagreements == 0


# --- 10 --------------------------------------------------------------------

def _spawn_oracle(tmp_path, pub):
    proc = subprocess.Popen(
        [sys.executable, "-m", "pryvect.netapp.cli", "serve-oracle", "--store",
         str(tmp_path / "oracle.log"), "--allow", str(pub), "--listen", "127.0.0.1:0"],
        stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
    line = proc.stdout.readline()
    assert line.startswith("listening on "), line
    return proc, line.split()[-1]


@pytest.mark.criterion(10, "oracle durability across restart and per-session snapshot isolation")
def test_criterion_10_durability(tmp_path):
    clinic = AuthoritativeCredential(SigningKeyPair.generate(random.Random(10)))
    pub = tmp_path / "clinic.pub"
    pub.write_bytes(clinic.keys.public_pem())
    proc, endpoint = _spawn_oracle(tmp_path, pub)
    try:
        ack = OracleClient(endpoint).report(make_report(clinic, "x9", 100))
        assert ack.created
    finally:
        os.kill(proc.pid, signal.SIGKILL)  # no clean shutdown after the acknowledgement
        proc.wait()
    proc, endpoint = _spawn_oracle(tmp_path, pub)
    try:
        listed = OracleClient(endpoint).list()
    finally:
        proc.terminate()
        proc.wait()
    report(10, listed == ["x9"], f"after SIGKILL and restart: {listed}")
    assert listed == ["x9"]


@pytest.mark.criterion(10, "oracle durability across restart and per-session snapshot isolation")
def test_criterion_10_snapshot_isolation(tmp_path, keys):
    clinic = AuthoritativeCredential(SigningKeyPair.generate(random.Random(11)))
    store = OracleStore(tmp_path / "oracle.log", [clinic.fingerprint])
    store.apply(make_report(clinic, "x9", 1))
    oracle = OracleClient(lambda: pipe(OracleService(store).handle))
    signer = SigningKeyPair.generate(random.Random(12))
    facility = Facility(parse(RISKY), RISKY_ALPHABET, signer, positives=oracle.list,
                        dangerous_label="d", kappa=KAPPA, seed=3)
    trace = Trace.parse("c(x9);c(z3);c(x9);c(z3)")

    sock = pipe(facility.handle)
    user = UserSession(trace, keys, random.Random(1))
    send(sock, user.hello())
    params, _ = receive(sock)
    assert isinstance(params, Params)
    # a report lands while the session is in flight
    store.apply(make_report(clinic, "z3", 2))
    assert "z3" in oracle.list()

    user.trace = map_unknown_contacts(trace, params.alphabet)
    user.accept_params(params)
    if user.phase is Phase.INIT:
        send(sock, user.step_init(), keys.public)
        user.absorb_init(receive(sock, keys.public)[0])
    while user.phase is Phase.STEP:
        send(sock, user.step_query(), keys.public)
        user.absorb_step(receive(sock, keys.public)[0])
    send(sock, user.finalize(), keys.public)
    answer, _ = receive(sock, keys.public)
    if not isinstance(answer, VerdictMsg):
        send(sock, user.open(answer), keys.public)
        answer, _ = receive(sock, keys.public)
    sock.close()
    in_flight = user.receive_verdict(answer)

    old_dfa = facility.dfa_for(("x9",))
    new_dfa = facility.dfa_for(("x9", "z3"))
    assert params.alphabet == old_dfa.alphabet and ("c", "z3") not in params.alphabet
    assert in_flight == run(old_dfa, map_unknown_contacts(trace, old_dfa.alphabet)) == Verdict.ACCEPT

    sock = pipe(facility.handle)
    send(sock, Hello(keys.public, len(trace)))
    fresh, _ = receive(sock)
    sock.close()
    assert ("c", "z3") in fresh.alphabet and fresh.alphabet == new_dfa.alphabet
    assert run(new_dfa, trace) is Verdict.REJECT
    report(10, True, f"in-flight alphabet {len(params.alphabet)} symbols, next session "
                     f"{len(fresh.alphabet)} symbols; in-flight verdict {in_flight.value}")

