"""Oblivious DFA evaluation between a facility (DFA owner) and a user (trace owner).

The user holds the key pair. After the handshake the two parties run:

* an initial round, where the facility publishes the first transition row,
  each entry blinded by ``r_1`` and masked by a per-symbol pad ``t_a``, and
  hands back only the pad of the user's first symbol via :func:`select`;
* ``len(trace) - 1`` step rounds. The facility permutes its transition
  table by the current blinding, ``M[(q + r_i) % n][a] = (delta(q, a) +
  r_{i+1}) % n``, and picks the user's row homomorphically with the
  encrypted state selector. Columns are masked by fresh pads, and the
  user's own column pad is again returned through :func:`select`;
* a final round, where the facility selects a permuted acceptance
  indicator masked by ``final_pad``. The user opens it, the facility
  unmasks the bit and answers with a verdict (and a token on acceptance).

The user only ever holds blinded states ``s_i = (q_i + r_i) % n``; the
facility only sees ciphertexts, the trace digest and the masked final bit.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import hcrypto
from .automata import Dfa
from .errors import (
    KeyMismatch, LengthMismatch, MalformedOpening, PhaseViolation, ProtocolViolation,
    TraceTooLong,
)
from .hcrypto import HeKeyPair, SelectionVector, enc, linear_combination, make_rng, select
from .messages import (
    FinalChallenge, FinalOpen, FinalQuery, Hello, InitQuery, InitReply, Params, StepQuery,
    StepReply, VerdictMsg, ciphertext_count, decode_message, encode_message,
)
from .tokens import AuthToken, SigningKeyPair, issue, trace_digest
from .trace import Alphabet, Trace, Verdict, to_indices

DEFAULT_MAX_TRACE_LEN = 4096
ZERO_POLICY = bytes(32)


class Phase(enum.Enum):
    HANDSHAKE = "handshake"
    INIT = "init"
    STEP = "step"
    FINAL = "final"
    OPEN = "open"
    DONE = "done"


@dataclass(frozen=True)
class SessionParams:
    session_id: bytes
    q_count: int
    alphabet: Alphabet
    trace_len: int
    pk: hcrypto.HePublicKey
    kappa: int

    def __post_init__(self):
        if self.q_count < 1 or self.trace_len < 0:
            raise ValueError("need q_count >= 1 and trace_len >= 0")
        hcrypto.check_plaintext_space(self.pk, self.q_count, self.kappa)


@dataclass
class TokenIssuer:
    keys: SigningKeyPair
    validity_secs: int = 3600
    clock: Callable[[], int] = field(default=lambda: int(time.time()))

    def issue(self, policy_id: bytes, digest: bytes) -> AuthToken:
        return issue(self.keys, policy_id, digest, self.validity_secs, self.clock())


def _require(phase, expected, what):
    if phase is not expected:
        raise PhaseViolation(f"{what} not allowed in phase {phase.value}")


def _check_len(items, n, what):
    if len(items) != n:
        raise LengthMismatch(f"{what}: expected {n} entries, got {len(items)}")


def _check_key(pk, cts):
    for c in cts:
        if c.pk.fingerprint != pk.fingerprint:
            raise KeyMismatch("ciphertext not under the session key")


class FacilitySession:
    """Facility role. Build with :meth:`start` (or :func:`facility_start`)."""

    def __init__(self, dfa: Dfa, params: SessionParams, rng, issuer: Optional[TokenIssuer],
                 policy_id: bytes):
        n, ell = params.q_count, params.trace_len
        self.dfa = dfa
        self.params = params
        self.rng = rng
        self.issuer = issuer
        self.policy_id = policy_id
        # blindings[i] is r_{i+1}; each is used by exactly two consecutive rounds
        self.blindings = [rng.randrange(n) for _ in range(ell)]
        self.final_pad = rng.getrandbits(params.kappa)
        self.step = 0
        self.trace_digest: Optional[bytes] = None
        self.accepted: Optional[bool] = None
        self.phase = Phase.INIT if ell else Phase.FINAL

    @classmethod
    def start(cls, dfa: Dfa, hello: Hello, rng=None, *, kappa: int = hcrypto.DEFAULT_KAPPA,
              max_trace_len: int = DEFAULT_MAX_TRACE_LEN, issuer: Optional[TokenIssuer] = None):
        rng = rng or make_rng()
        if hello.trace_len > max_trace_len:
            raise TraceTooLong(f"trace of length {hello.trace_len} exceeds {max_trace_len}")
        policy_id = dfa.policy_id()
        if hello.policy_id not in (ZERO_POLICY, policy_id):
            raise ProtocolViolation("HELLO names a policy this facility does not enforce")
        session_id = bytes(rng.getrandbits(8) for _ in range(16))
        params = SessionParams(session_id, dfa.n_states, dfa.alphabet, hello.trace_len,
                               hello.pk, kappa)
        session = cls(dfa, params, rng, issuer, policy_id)
        return session, Params(session_id, dfa.n_states, dfa.alphabet, kappa)

    def _pads(self):
        k = self.params.kappa
        return [self.rng.getrandbits(k) for _ in range(len(self.params.alphabet))]

    def reply_init(self, query: InitQuery) -> InitReply:
        _require(self.phase, Phase.INIT, "INIT_QUERY")
        p = self.params
        _check_len(query.selector, len(p.alphabet), "symbol selector")
        _check_key(p.pk, query.selector)
        n, r1 = p.q_count, self.blindings[0]
        pads = self._pads()
        row = self.dfa.delta[self.dfa.initial]
        padded = tuple((row[a] + r1) % n + pads[a] for a in range(len(p.alphabet)))
        pad_ct = select(p.pk, query.selector, pads, p.kappa, self.rng)
        self.step = 1
        self.phase = Phase.STEP if p.trace_len > 1 else Phase.FINAL
        return InitReply(padded, pad_ct)

    def step_reply(self, query: StepQuery) -> StepReply:
        _require(self.phase, Phase.STEP, "STEP_QUERY")
        p = self.params
        n, k = p.q_count, len(p.alphabet)
        _check_len(query.state_selector, n, "state selector")
        _check_len(query.symbol_selector, k, "symbol selector")
        _check_key(p.pk, query.state_selector + query.symbol_selector)
        r_cur, r_next = self.blindings[self.step - 1], self.blindings[self.step]
        # permuted, re-blinded transition table
        matrix = [None] * n
        for q in range(n):
            matrix[(q + r_cur) % n] = [(t + r_next) % n for t in self.dfa.delta[q]]
        pads = self._pads()
        nsq = p.pk.nsquare
        row_cts = []
        for a in range(k):
            column = [matrix[s][a] for s in range(n)]
            acc = linear_combination(p.pk, query.state_selector, column)
            masked = enc(p.pk, pads[a], self.rng)  # fresh randomness rerandomizes
            row_cts.append(hcrypto.HeCiphertext(acc * masked.value % nsq, p.pk))
        pad_ct = select(p.pk, query.symbol_selector, pads, p.kappa, self.rng)
        self.step += 1
        if self.step == p.trace_len:
            self.phase = Phase.FINAL
        return StepReply(tuple(row_cts), pad_ct)

    def challenge(self, query: FinalQuery):
        """Answer FINAL_QUERY; returns FINAL_CHALLENGE, or VERDICT for an empty trace."""
        _require(self.phase, Phase.FINAL, "FINAL_QUERY")
        p = self.params
        if len(query.trace_digest) != 32:
            raise ProtocolViolation("trace digest must be 32 bytes")
        self.trace_digest = query.trace_digest
        if p.trace_len == 0:
            _check_len(query.state_selector, 0, "state selector")
            return self._conclude(self.dfa.initial in self.dfa.finals)
        n = p.q_count
        _check_len(query.state_selector, n, "state selector")
        _check_key(p.pk, query.state_selector)
        r_last = self.blindings[-1]
        indicator = [0] * n
        for q in self.dfa.finals:
            indicator[(q + r_last) % n] = 1
        acc = linear_combination(p.pk, query.state_selector, indicator)
        masked = enc(p.pk, self.final_pad, self.rng)
        self.phase = Phase.OPEN
        return FinalChallenge(hcrypto.HeCiphertext(acc * masked.value % p.pk.nsquare, p.pk))

    def verdict(self, opening: FinalOpen) -> VerdictMsg:
        _require(self.phase, Phase.OPEN, "FINAL_OPEN")
        bit = opening.masked_bit - self.final_pad
        if bit not in (0, 1):
            self.phase = Phase.DONE
            raise MalformedOpening("opened value does not unmask to a bit")
        return self._conclude(bit == 1)

    def _conclude(self, accepted: bool) -> VerdictMsg:
        self.phase = Phase.DONE
        self.accepted = accepted
        token = None
        if accepted and self.issuer is not None:
            token = self.issuer.issue(self.policy_id, self.trace_digest)
        return VerdictMsg(accepted, token)


def facility_start(dfa: Dfa, hello: Hello, rng=None, **kwargs):
    return FacilitySession.start(dfa, hello, rng, **kwargs)


class UserSession:
    """User role: owns the trace and the homomorphic key pair."""

    def __init__(self, trace: Trace, keys: HeKeyPair, rng=None, policy_id: bytes = ZERO_POLICY):
        self.trace = trace
        self.keys = keys
        self.rng = rng or make_rng()
        self.policy_id = policy_id
        self.params: Optional[SessionParams] = None
        self.symbols: list[int] = []
        self.blinded_state: Optional[int] = None
        self.step = 0
        self.phase = Phase.HANDSHAKE
        self.verdict: Optional[Verdict] = None
        self.token: Optional[AuthToken] = None

    def hello(self) -> Hello:
        return Hello(self.keys.public, len(self.trace), self.policy_id)

    def accept_params(self, msg: Params):
        _require(self.phase, Phase.HANDSHAKE, "PARAMS")
        self.params = SessionParams(msg.session_id, msg.q_count, msg.alphabet,
                                    len(self.trace), self.keys.public, msg.kappa)
        self.symbols = to_indices(msg.alphabet, self.trace)
        self.phase = Phase.INIT if self.symbols else Phase.FINAL

    def _selector(self, j: int, n: int) -> tuple:
        return SelectionVector.unit(self.keys, j, n, self.rng).ciphertexts

    def _unpad(self, value: int, pad_ct) -> int:
        pad = self.keys.decrypt(pad_ct)
        return (value - pad) % self.params.q_count

    def step_init(self) -> InitQuery:
        _require(self.phase, Phase.INIT, "step_init")
        return InitQuery(self._selector(self.symbols[0], len(self.params.alphabet)))

    def absorb_init(self, reply: InitReply):
        _require(self.phase, Phase.INIT, "INIT_REPLY")
        _check_len(reply.padded_row, len(self.params.alphabet), "padded row")
        self.blinded_state = self._unpad(reply.padded_row[self.symbols[0]], reply.pad_ct)
        self.step = 1
        self.phase = Phase.STEP if len(self.symbols) > 1 else Phase.FINAL

    def step_query(self) -> StepQuery:
        _require(self.phase, Phase.STEP, "step_query")
        p = self.params
        return StepQuery(self._selector(self.blinded_state, p.q_count),
                         self._selector(self.symbols[self.step], len(p.alphabet)))

    def absorb_step(self, reply: StepReply):
        _require(self.phase, Phase.STEP, "STEP_REPLY")
        _check_len(reply.row_cts, len(self.params.alphabet), "row ciphertexts")
        masked = self.keys.decrypt(reply.row_cts[self.symbols[self.step]])
        self.blinded_state = self._unpad(masked, reply.pad_ct)
        self.step += 1
        if self.step == len(self.symbols):
            self.phase = Phase.FINAL

    def finalize(self, digest: Optional[bytes] = None) -> FinalQuery:
        _require(self.phase, Phase.FINAL, "finalize")
        if digest is None:
            digest = trace_digest(self.trace)
        if not self.symbols:
            self.phase = Phase.OPEN
            return FinalQuery((), digest)
        selector = self._selector(self.blinded_state, self.params.q_count)
        self.phase = Phase.OPEN
        return FinalQuery(selector, digest)

    def open(self, challenge: FinalChallenge) -> FinalOpen:
        _require(self.phase, Phase.OPEN, "FINAL_CHALLENGE")
        if not self.symbols:
            raise PhaseViolation("no challenge expected for an empty trace")
        return FinalOpen(self.keys.decrypt(challenge.masked_bit_ct))

    def receive_verdict(self, msg: VerdictMsg) -> Verdict:
        _require(self.phase, Phase.OPEN, "VERDICT")
        self.phase = Phase.DONE
        self.verdict = Verdict.of(msg.accept)
        self.token = msg.token
        return self.verdict


# --- in-process driver -----------------------------------------------------

@dataclass(frozen=True)
class TranscriptEntry:
    sender: str  # "user" or "facility"
    message: object
    size: int
    ciphertexts: int

    @property
    def kind(self) -> str:
        return type(self.message).__name__


@dataclass
class Transcript:
    entries: list = field(default_factory=list)
    blinded_states: list = field(default_factory=list)  # user's view, for inspection

    def record(self, sender: str, msg, pk) -> object:
        """Round-trip `msg` through the wire codec and log it."""
        frame = encode_message(msg, pk)
        decoded = decode_message(frame, pk)
        self.entries.append(TranscriptEntry(sender, decoded, len(frame), ciphertext_count(decoded)))
        return decoded

    def kinds(self) -> list:
        return [e.kind for e in self.entries]

    def shape(self) -> list:
        return [(e.sender, e.kind, e.size) for e in self.entries]

    def rounds(self) -> int:
        """User messages after HELLO, i.e. request/response rounds of the evaluation."""
        return sum(1 for e in self.entries if e.sender == "user" and e.kind != "Hello")


def run_local(dfa: Dfa, trace: Trace, seed=None, *, keys: Optional[HeKeyPair] = None,
              key_bits: int = 512, kappa: int = hcrypto.DEFAULT_KAPPA,
              issuer: Optional[TokenIssuer] = None,
              max_trace_len: int = DEFAULT_MAX_TRACE_LEN):
    """Run both roles in-process; returns ``(verdict, transcript)``.

    Every message goes through the wire encoding, so the transcript sizes
    are those a network peer would see.
    """
    rng = make_rng(seed)
    if keys is None:
        keys = hcrypto.keygen(key_bits, rng)
    user_rng = make_rng(rng.getrandbits(64)) if seed is not None else make_rng()
    fac_rng = make_rng(rng.getrandbits(64)) if seed is not None else make_rng()
    user = UserSession(trace, keys, user_rng)
    log = Transcript()
    pk = keys.public

    hello = log.record("user", user.hello(), None)
    facility, params = FacilitySession.start(dfa, hello, fac_rng, kappa=kappa,
                                             max_trace_len=max_trace_len, issuer=issuer)
    user.accept_params(log.record("facility", params, None))

    if user.phase is Phase.INIT:
        query = log.record("user", user.step_init(), pk)
        user.absorb_init(log.record("facility", facility.reply_init(query), pk))
        log.blinded_states.append(user.blinded_state)
    while user.phase is Phase.STEP:
        query = log.record("user", user.step_query(), pk)
        user.absorb_step(log.record("facility", facility.step_reply(query), pk))
        log.blinded_states.append(user.blinded_state)

    answer = facility.challenge(log.record("user", user.finalize(), pk))
    if isinstance(answer, FinalChallenge):
        opening = user.open(log.record("facility", answer, pk))
        answer = facility.verdict(log.record("user", opening, pk))
    verdict = user.receive_verdict(log.record("facility", answer, pk))
    return verdict, log
