"""Facility and oracle network services.

Each accepted connection carries one conversation driven sequentially by
:meth:`Facility.handle` or :meth:`OracleService.handle`; the TCP server runs
one thread per connection. Both handlers also work on any connected socket,
which is how tests and the scenario harness run them over socket pairs.
"""

from __future__ import annotations

import hashlib
import logging
import os
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from .. import errors
from ..automata import Dfa, OracleExpansion, compile, expand_dangerous
from ..cpsl import parse, typecheck
from ..cpsl.ast import PolicyAst
from ..hcrypto import DEFAULT_KAPPA, make_rng
from ..messages import (
    FinalOpen, FinalQuery, Hello, InitQuery, OracleList, OracleListReply, OracleReport,
    OracleReportAck, StepQuery,
)
from ..obeval import DEFAULT_MAX_TRACE_LEN, FacilitySession, Phase, TokenIssuer
from ..oracle import OracleStore, list_positives
from ..tokens import SigningKeyPair
from ..trace import Alphabet
from .transport import Endpoint, connect, error_message, expect, parse_endpoint, receive, send

log = logging.getLogger("pryvect.service")


# --- facility --------------------------------------------------------------

@dataclass
class FacilityConfig:
    policy_path: str
    alphabet_path: str
    signing_key_path: str
    oracle: Optional[str] = None
    dangerous_label: Optional[str] = None
    validity_secs: int = 3600
    max_trace_len: int = DEFAULT_MAX_TRACE_LEN
    kappa: int = DEFAULT_KAPPA
    listen: str = "127.0.0.1:0"
    session_timeout: float = 60.0

    def validate(self):
        for name in ("policy_path", "alphabet_path", "signing_key_path"):
            path = getattr(self, name)
            if not os.access(path, os.R_OK):
                raise errors.ConfigError(f"{name.replace('_', ' ')} {path!r} is not readable")
        if self.validity_secs <= 0:
            raise errors.ConfigError("token validity must be positive")
        if self.max_trace_len < 0 or self.kappa < 1:
            raise errors.ConfigError("max trace length and kappa must be positive")
        parse_endpoint(self.listen)


def _mentions(policy: PolicyAst, label: str) -> bool:
    return any(ev.label == label for r in policy.rules for ev in r.events)


class Facility:
    """A policy owner: compiles its policy per oracle snapshot and serves sessions."""

    def __init__(self, policy: PolicyAst, alphabet: Alphabet, signer: SigningKeyPair, *,
                 positives: Optional[Callable[[], Sequence[str]]] = None,
                 dangerous_label: Optional[str] = None, kappa: int = DEFAULT_KAPPA,
                 max_trace_len: int = DEFAULT_MAX_TRACE_LEN, validity_secs: int = 3600,
                 clock: Optional[Callable[[], int]] = None, seed=None,
                 session_timeout: Optional[float] = 60.0, name: str = "facility"):
        self.policy = policy
        self.alphabet = alphabet
        self.signer = signer
        self.dangerous_label = dangerous_label if dangerous_label and _mentions(policy, dangerous_label) \
            else None
        if self.dangerous_label and positives is None:
            raise errors.ConfigError(
                f"policy uses dangerous event {dangerous_label!r} but no oracle is configured")
        self.positives = positives
        self.kappa = kappa
        self.max_trace_len = max_trace_len
        self.issuer = TokenIssuer(signer, validity_secs, clock or (lambda: int(time.time())))
        self.seed = seed
        self.session_timeout = session_timeout
        self.name = name
        self._lock = threading.Lock()
        self._cache: dict[tuple, Dfa] = {}
        self._sessions = 0
        self.dfa_for(())  # fail at startup if the policy does not compile

    @classmethod
    def from_config(cls, config: FacilityConfig, *, seed=None, clock=None) -> "Facility":
        config.validate()
        try:
            policy = parse(Path(config.policy_path).read_text())
            alphabet = Alphabet.parse(Path(config.alphabet_path).read_text())
            signer = SigningKeyPair.from_pem(Path(config.signing_key_path).read_bytes())
        except (OSError, ValueError, errors.PryvectError) as exc:
            raise errors.ConfigError(f"cannot load facility configuration: {exc}") from exc
        positives = None
        if config.oracle:
            client = OracleClient(config.oracle)
            positives = client.list
            try:
                positives()
            except errors.PryvectError as exc:
                raise errors.ConfigError(f"oracle {config.oracle} unreachable: {exc}") from exc
        return cls(policy, alphabet, signer, positives=positives,
                   dangerous_label=config.dangerous_label, kappa=config.kappa,
                   max_trace_len=config.max_trace_len, validity_secs=config.validity_secs,
                   clock=clock, seed=seed, session_timeout=config.session_timeout)

    def snapshot(self) -> tuple:
        if self.dangerous_label is None:
            return ()
        return tuple(self.positives())

    def dfa_for(self, snapshot: tuple) -> Dfa:
        """Compile the policy expanded against one oracle snapshot (memoized)."""
        with self._lock:
            dfa = self._cache.get(snapshot)
        if dfa is not None:
            return dfa
        policy, alphabet = self.policy, self.alphabet
        if self.dangerous_label is not None:
            policy, alphabet = expand_dangerous(
                policy, OracleExpansion(self.dangerous_label, snapshot), alphabet)
        dfa = compile(typecheck(policy, alphabet))
        with self._lock:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[snapshot] = dfa
        return dfa

    def _session_rng(self):
        with self._lock:
            self._sessions += 1
            n = self._sessions
        if self.seed is None:
            return make_rng()
        return make_rng(int.from_bytes(hashlib.sha256(f"{self.seed}:{n}".encode()).digest()[:8], "big"))

    @staticmethod
    def _dispatch(session: FacilitySession, msg):
        if isinstance(msg, InitQuery):
            return session.reply_init(msg)
        if isinstance(msg, StepQuery):
            return session.step_reply(msg)
        if isinstance(msg, FinalQuery):
            return session.challenge(msg)
        if isinstance(msg, FinalOpen):
            return session.verdict(msg)
        raise errors.ProtocolViolation(f"unexpected {type(msg).__name__} during evaluation")

    def handle(self, sock: socket.socket):
        """Serve one user session on a connected socket."""
        sock.settimeout(self.session_timeout)
        started = time.monotonic()
        sid, ell, outcome = "-", "-", "error"
        try:
            hello = expect(receive(sock)[0], Hello)
            ell = hello.trace_len
            dfa = self.dfa_for(self.snapshot())
            session, params = FacilitySession.start(
                dfa, hello, self._session_rng(), kappa=self.kappa,
                max_trace_len=self.max_trace_len, issuer=self.issuer)
            sid = params.session_id.hex()
            send(sock, params)
            while session.phase is not Phase.DONE:
                msg, _ = receive(sock, hello.pk)
                send(sock, self._dispatch(session, msg), hello.pk)
            outcome = "accept" if session.accepted else "reject"
        except (errors.TransportError, socket.timeout) as exc:
            outcome = f"error:{type(exc).__name__}"
        except errors.PryvectError as exc:
            outcome = f"error:{type(exc).__name__}"
            try:
                send(sock, error_message(exc))
            except errors.TransportError:
                pass
        finally:
            log.info("event=session facility=%s session=%s len=%s verdict=%s duration_ms=%.1f",
                     self.name, sid, ell, outcome, 1000 * (time.monotonic() - started))


# --- oracle ----------------------------------------------------------------

class OracleService:
    """Network front of an :class:`OracleStore`."""

    def __init__(self, store: OracleStore, session_timeout: Optional[float] = 60.0):
        self.store = store
        self.session_timeout = session_timeout

    def handle(self, sock: socket.socket):
        sock.settimeout(self.session_timeout)
        while True:
            try:
                msg, _ = receive(sock)
            except errors.MalformedFrame as exc:
                log.warning("event=oracle_error error=MalformedFrame detail=%r", str(exc))
                return
            except (errors.TransportError, socket.timeout):
                return
            try:
                if isinstance(msg, OracleReport):
                    record, created = self.store.apply(msg)
                    reply = OracleReportAck(record.anon_id, record.reported_at, created)
                    log.info("event=oracle_report id=%s created=%s", record.anon_id, created)
                elif isinstance(msg, OracleList):
                    reply = OracleListReply(tuple(list_positives(self.store, msg.since)))
                else:
                    raise errors.ProtocolViolation(f"oracle cannot handle {type(msg).__name__}")
            except (errors.PryvectError, ValueError) as exc:
                log.warning("event=oracle_error error=%s detail=%r", type(exc).__name__, str(exc))
                reply = error_message(exc if isinstance(exc, errors.PryvectError)
                                      else errors.ProtocolViolation(str(exc)))
            try:
                send(sock, reply)
            except errors.TransportError:
                return


class OracleClient:
    """Client for the oracle API; one connection per call."""

    def __init__(self, endpoint: Endpoint, timeout: Optional[float] = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def _call(self, msg, reply_cls):
        sock = connect(self.endpoint, self.timeout)
        try:
            send(sock, msg)
            return expect(receive(sock)[0], reply_cls)
        finally:
            sock.close()

    def report(self, report: OracleReport) -> OracleReportAck:
        return self._call(report, OracleReportAck)

    def list(self, since: Optional[int] = None) -> list[str]:
        return list(self._call(OracleList(since), OracleListReply).ids)


# --- TCP hosting -----------------------------------------------------------

class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class ServiceHandle:
    """A listening TCP service; ``start()`` serves in a background thread."""

    def __init__(self, handler: Callable[[socket.socket], None], listen: str):
        class _Handler(socketserver.BaseRequestHandler):
            def handle(self):
                handler(self.request)

        try:
            self.server = _Server(parse_endpoint(listen), _Handler)
        except OSError as exc:
            raise errors.ConfigError(f"cannot listen on {listen}: {exc}") from exc
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server.server_address[:2]

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"{host}:{port}"

    def start(self) -> "ServiceHandle":
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self.server.serve_forever()

    def close(self):
        if self._thread is not None:
            self.server.shutdown()
            self._thread.join()
        self.server.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_facility(config: FacilityConfig, *, seed=None, clock=None) -> ServiceHandle:
    facility = Facility.from_config(config, seed=seed, clock=clock)
    handle = ServiceHandle(facility.handle, config.listen)
    log.info("event=listen service=facility address=%s", handle.endpoint)
    return handle


def serve_oracle(store_path, allow_list, listen: str = "127.0.0.1:0") -> ServiceHandle:
    service = OracleService(OracleStore(store_path, allow_list))
    handle = ServiceHandle(service.handle, listen)
    log.info("event=listen service=oracle address=%s records=%d", handle.endpoint, len(service.store))
    return handle
