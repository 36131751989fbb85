"""User-side client: drives the user role of the protocol over a connection."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

from ..errors import ProtocolViolation
from ..hcrypto import HeKeyPair
from ..messages import (
    FinalChallenge, InitReply, Params, StepReply, VerdictMsg,
)
from ..obeval import ZERO_POLICY, Phase, UserSession
from ..tokens import AuthToken, TokenStatus, check, trace_digest
from ..trace import Trace, Verdict, map_unknown_contacts
from .transport import Endpoint, connect, expect, receive, send


@dataclass(frozen=True)
class AccessResult:
    verdict: Verdict
    token: Optional[AuthToken] = None
    token_status: Optional[TokenStatus] = None
    messages: int = 0
    bytes: int = 0

    @property
    def authorized(self) -> bool:
        return self.verdict is Verdict.ACCEPT and self.token_status is TokenStatus.VALID


def request_access(endpoint: Endpoint, trace: Trace, keys: HeKeyPair, facility_vk=None, *,
                   rng=None, now: Optional[int] = None, policy_id: bytes = ZERO_POLICY,
                   timeout: Optional[float] = 60.0, contact_label: str = "c") -> AccessResult:
    """Ask a facility to evaluate `trace`.

    Contacts whose identifiers are not in the published alphabet are mapped
    to the other-contact symbol first; the committed digest covers the mapped
    trace. A returned token is checked against `facility_vk` when given.
    """
    sock = connect(endpoint, timeout)
    messages = size = 0
    try:
        user = UserSession(trace, keys, rng, policy_id)

        def exchange(msg, reply_cls):
            nonlocal messages, size
            size += send(sock, msg, keys.public)
            reply, n = receive(sock, keys.public)
            messages += 2
            size += n
            return expect(reply, reply_cls)

        params = exchange(user.hello(), Params)
        user.trace = map_unknown_contacts(trace, params.alphabet, contact_label)
        user.accept_params(params)
        if user.phase is Phase.INIT:
            user.absorb_init(exchange(user.step_init(), InitReply))
        while user.phase is Phase.STEP:
            user.absorb_step(exchange(user.step_query(), StepReply))
        digest = trace_digest(user.trace)
        answer = exchange(user.finalize(digest), (FinalChallenge, VerdictMsg))
        if isinstance(answer, FinalChallenge):
            answer = exchange(user.open(answer), VerdictMsg)
        verdict = user.receive_verdict(answer)
    finally:
        sock.close()

    token, status = answer.token, None
    if token is not None:
        if token.trace_digest != digest:
            raise ProtocolViolation("token does not commit to the submitted trace")
        if facility_vk is not None:
            status = check(facility_vk, token, int(time.time()) if now is None else now)
    return AccessResult(verdict, token, status, messages, size)
