"""Deterministic automata for CPSL policies.

:func:`compile` explores the assignments reachable from the initial one,
breadth first, so that state numbering (and therefore the serialized form
and the policy id derived from it) is identical across runs.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .cpsl import parse, typecheck
from .cpsl.ast import BoolLit, EventPattern, IdLit, Name, PolicyAst, RuleAst, walk
from .cpsl.check import TypedPolicy
from .errors import DanglingDangerousEvent, MalformedEncoding, StateSpaceExceeded
from .trace import OTHER_CONTACT, Alphabet, Event, Trace, Verdict, to_indices

DEFAULT_STATE_BOUND = 10 ** 6
SINK = "sink"

MAGIC = b"PYVD"
VERSION = 1


class OverlappingRulesWarning(UserWarning):
    """Two rules can fire on the same (state, event); the earlier one wins."""


@dataclass(frozen=True)
class Dfa:
    n_states: int
    initial: int
    alphabet: Alphabet
    delta: tuple  # delta[q][a] -> q'
    finals: frozenset
    state_meta: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        n, k = self.n_states, len(self.alphabet)
        if n < 1 or not 0 <= self.initial < n:
            raise ValueError("initial state out of range")
        if len(self.delta) != n or any(len(row) != k for row in self.delta):
            raise ValueError("transition table must be |Q| x |alphabet|")
        if any(not 0 <= t < n for row in self.delta for t in row):
            raise ValueError("transition target out of range")
        if not self.finals <= set(range(n)):
            raise ValueError("finals must be states")

    @property
    def states(self) -> range:
        return range(self.n_states)

    def step(self, q: int, a: int) -> int:
        return self.delta[q][a]

    def final_state(self, symbols: Iterable[int]) -> int:
        q = self.initial
        for a in symbols:
            q = self.delta[q][a]
        return q

    def accepts_indices(self, symbols: Iterable[int]) -> bool:
        return self.final_state(symbols) in self.finals

    def policy_id(self) -> bytes:
        return hashlib.sha256(serialize(self)).digest()


# --- compilation -----------------------------------------------------------

def compile(policy: TypedPolicy, bound: int = DEFAULT_STATE_BOUND) -> Dfa:
    """Translate a checked policy into its DFA.

    States are the assignments reachable from the initial one plus, when
    some event is unhandled somewhere, a rejecting absorbing sink.
    """
    sizes = policy.domain_sizes()
    total = 1
    for s in sizes.values():
        total *= s
    if total > bound:
        dominant = max(sizes, key=sizes.get) if sizes else None
        raise StateSpaceExceeded(bound, total, dominant)

    k = len(policy.alphabet)
    start = policy.initial_env.values
    ids = {start: 0}
    order = [start]
    rows = []
    overlaps = set()
    queue = deque([start])
    while queue:
        state = queue.popleft()
        if state == SINK:
            rows.append((ids[SINK],) * k)
            continue
        row = []
        for a in range(k):
            matching = [r for r in policy.rules if a in r.symbols and r.guard(state)]
            if len(matching) > 1:
                overlaps.add((matching[0].source_index, matching[1].source_index))
            nxt = matching[0].apply(state) if matching else SINK
            if nxt not in ids:
                ids[nxt] = len(order)
                order.append(nxt)
                queue.append(nxt)
            row.append(ids[nxt])
        rows.append(tuple(row))

    if overlaps:
        pairs = ", ".join(f"{i + 1}/{j + 1}" for i, j in sorted(overlaps))
        warnings.warn(f"rules overlap (first match wins): {pairs}",
                      OverlappingRulesWarning, stacklevel=2)

    finals = frozenset(i for i, s in enumerate(order) if s != SINK and policy.accepts(s))
    meta = tuple(SINK if s == SINK else policy.env(s) for s in order)
    return Dfa(len(order), 0, policy.alphabet, tuple(rows), finals, meta)


def compile_source(source: str, alphabet: Alphabet, expansion: "OracleExpansion | None" = None,
                   bound: int = DEFAULT_STATE_BOUND) -> Dfa:
    """Parse, optionally expand dangerous contacts, type check and compile."""
    ast = parse(source)
    if expansion is not None:
        ast, alphabet = expand_dangerous(ast, expansion, alphabet)
    return compile(typecheck(ast, alphabet), bound)


def run(dfa: Dfa, trace: Trace) -> Verdict:
    return Verdict.of(dfa.accepts_indices(to_indices(dfa.alphabet, trace)))


# --- minimization ----------------------------------------------------------

def canonical(dfa: Dfa) -> Dfa:
    """Drop unreachable states and renumber in BFS order from the initial state."""
    ids = {dfa.initial: 0}
    order = [dfa.initial]
    queue = deque([dfa.initial])
    while queue:
        q = queue.popleft()
        for t in dfa.delta[q]:
            if t not in ids:
                ids[t] = len(order)
                order.append(t)
                queue.append(t)
    delta = tuple(tuple(ids[t] for t in dfa.delta[q]) for q in order)
    finals = frozenset(ids[q] for q in order if q in dfa.finals)
    meta = tuple(dfa.state_meta[q] for q in order) if dfa.state_meta else ()
    return Dfa(len(order), 0, dfa.alphabet, delta, finals, meta)


def minimize(dfa: Dfa) -> Dfa:
    """Language-equivalent DFA with the fewest states (Moore refinement)."""
    dfa = canonical(dfa)
    first = {}
    block = [first.setdefault(q in dfa.finals, len(first)) for q in dfa.states]
    n_blocks = len(first)
    while True:
        signatures = {}
        new_block = []
        for q in dfa.states:
            sig = (block[q],) + tuple(block[t] for t in dfa.delta[q])
            new_block.append(signatures.setdefault(sig, len(signatures)))
        if len(signatures) == n_blocks:
            break
        block, n_blocks = new_block, len(signatures)

    # representative of each block: its lowest-numbered state
    rep = {}
    for q in dfa.states:
        rep.setdefault(block[q], q)
    delta = tuple(tuple(block[t] for t in dfa.delta[rep[b]]) for b in range(n_blocks))
    finals = frozenset(b for b in range(n_blocks) if rep[b] in dfa.finals)
    meta = tuple(dfa.state_meta[rep[b]] for b in range(n_blocks)) if dfa.state_meta else ()
    return canonical(Dfa(n_blocks, block[dfa.initial], dfa.alphabet, delta, finals, meta))


# --- dangerous-contact expansion -------------------------------------------

@dataclass(frozen=True)
class OracleExpansion:
    dangerous_label: str
    positive_ids: tuple = ()
    contact_label: str = "c"

    def __post_init__(self):
        object.__setattr__(self, "positive_ids", tuple(self.positive_ids))
        if len(set(self.positive_ids)) != len(self.positive_ids):
            raise ValueError("positive ids must be pairwise distinct")
        for i in self.positive_ids:
            Event(self.contact_label, i)  # validates the identifier

    @property
    def other_contact_symbol(self):
        return (self.contact_label, OTHER_CONTACT)

    def contact_symbols(self) -> list:
        return [(self.contact_label, i) for i in self.positive_ids]


def expand_dangerous(policy: PolicyAst, expansion: OracleExpansion,
                     alphabet: Optional[Alphabet] = None):
    """Replace the abstract dangerous-contact event by concrete contacts.

    Returns ``(expanded_policy, expanded_alphabet)``; the alphabet is
    ``None`` when none was given.
    """
    d = expansion.dangerous_label
    exps = [policy.accept] + [decl.init for decl in policy.state_decls]
    for r in policy.rules:
        exps.append(r.guard)
        exps.extend(u.exp for u in r.updates)
    for e in exps:
        for node in walk(e):
            if (isinstance(node, Name) and node.name == d) or (isinstance(node, IdLit) and node.value == d):
                raise DanglingDangerousEvent(
                    f"dangerous event {d!r} used in an expression at {node.pos}")

    replacement = [EventPattern(expansion.contact_label, i) for i in expansion.positive_ids]
    rules = []
    for r in policy.rules:
        events = []
        for ev in r.events:
            for new in (replacement if ev.label == d and ev.value is None else [ev]):
                if new not in events:
                    events.append(new)
        if events:
            rules.append(replace(r, events=tuple(events)))
    catch_all = EventPattern(*expansion.other_contact_symbol)
    rules.append(RuleAst(BoolLit(True), (catch_all,), ()))
    expanded = replace(policy, rules=tuple(rules))

    if alphabet is None:
        return expanded, None
    extra = expansion.contact_symbols() + [expansion.other_contact_symbol]
    return expanded, alphabet.with_symbols(extra, drop_label=d)


# --- binary format ---------------------------------------------------------

def serialize(dfa: Dfa) -> bytes:
    dfa = canonical(dfa)
    n, k = dfa.n_states, len(dfa.alphabet)
    out = bytearray(MAGIC)
    out.append(VERSION)
    out += struct.pack(">II", n, k)
    for label, value in dfa.alphabet:
        lb = label.encode()
        vb = b"" if value is None else value.encode()
        out.append(len(lb))
        out += lb
        out.append(len(vb))
        out += vb
    out += struct.pack(">I", dfa.initial)
    bitmap = bytearray((n + 7) // 8)
    for q in dfa.finals:
        bitmap[q // 8] |= 0x80 >> (q % 8)
    out += bitmap
    for row in dfa.delta:
        out += struct.pack(f">{k}I", *row)
    return bytes(out)


def deserialize(data: bytes) -> Dfa:
    pos = 0

    def take(size: int, what: str) -> bytes:
        nonlocal pos
        if pos + size > len(data):
            raise MalformedEncoding(f"truncated {what}", pos)
        chunk = data[pos:pos + size]
        pos += size
        return chunk

    if take(4, "magic") != MAGIC:
        raise MalformedEncoding("bad magic", 0)
    version = take(1, "version")[0]
    if version != VERSION:
        raise MalformedEncoding(f"unsupported version {version}", 4)
    n, k = struct.unpack(">II", take(8, "header"))
    if n < 1:
        raise MalformedEncoding("DFA needs at least one state", 5)
    symbols = []
    for _ in range(k):
        start = pos
        label = take(take(1, "label length")[0], "label")
        value = take(take(1, "value length")[0], "value")
        try:
            symbols.append(Event(label.decode(), value.decode() or None).symbol)
        except (UnicodeDecodeError, ValueError):
            raise MalformedEncoding("invalid alphabet symbol", start) from None
    try:
        alphabet = Alphabet(symbols)
    except ValueError:
        raise MalformedEncoding("duplicate alphabet symbol", pos) from None
    (initial,) = struct.unpack(">I", take(4, "initial state"))
    bitmap_at = pos
    bitmap = take((n + 7) // 8, "finals bitmap")
    finals = frozenset(q for q in range(n) if bitmap[q // 8] & (0x80 >> (q % 8)))
    if n % 8 and bitmap[-1] & (0xFF >> (n % 8)):
        raise MalformedEncoding("finals bitmap has bits set beyond |Q|", bitmap_at + len(bitmap) - 1)
    delta_at = pos
    raw = take(4 * n * k, "transition table")
    flat = struct.unpack(f">{n * k}I", raw)
    if any(t >= n for t in flat):
        bad = next(i for i, t in enumerate(flat) if t >= n)
        raise MalformedEncoding("transition target out of range", delta_at + 4 * bad)
    if pos != len(data):
        raise MalformedEncoding("trailing bytes", pos)
    if initial >= n:
        raise MalformedEncoding("initial state out of range", bitmap_at - 4)
    delta = tuple(tuple(flat[q * k:(q + 1) * k]) for q in range(n))
    dfa = Dfa(n, initial, alphabet, delta, finals)
    if canonical(dfa) != dfa:
        raise MalformedEncoding("states are not in canonical BFS order", delta_at)
    return dfa


def random_dfa(rng, n_states: int, alphabet: Alphabet | Sequence, final_prob: float = 0.5) -> Dfa:
    """Random complete DFA, canonicalized (so it may have fewer states)."""
    if not isinstance(alphabet, Alphabet):
        alphabet = Alphabet(alphabet)
    k = len(alphabet)
    delta = tuple(tuple(rng.randrange(n_states) for _ in range(k)) for _ in range(n_states))
    finals = frozenset(q for q in range(n_states) if rng.random() < final_prob)
    return canonical(Dfa(n_states, 0, alphabet, delta, finals))
