"""Simulated multi-party world: users, authorities, an oracle and facilities.

Scenario files are line oriented::

    seed 7
    users u1 u2 u3
    authority clinic
    facility f1 policy=risky.cpsl alphabet=risky.alpha dangerous=d
    t=10 contact u1 u2
    t=20 test u2 v + by=clinic
    t=30 day
    t=40 request u1 f1 expect=accept

Contacts go into both users' traces as ``c(<peer anon id>)``. A positive
test (value ``+``) is also reported to the oracle by the issuing authority
unless the line says ``report=no``. ``day`` appends a day marker to every
user. Consecutive requests sharing a timestamp run concurrently.

Every request is checked against the plaintext DFA for the same oracle
snapshot; a disagreement or a failed ``expect=`` raises ScenarioError.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..automata import run
from ..cpsl import parse as parse_policy
from ..errors import PryvectError, ScenarioError
from ..hcrypto import DEFAULT_KAPPA, keygen, make_rng
from ..obeval import DEFAULT_MAX_TRACE_LEN
from ..oracle import AuthoritativeCredential, OracleStore, make_report
from ..tokens import SigningKeyPair
from ..trace import Alphabet, Event, Trace, map_unknown_contacts, truncate_after_last_marker
from .client import request_access
from .service import Facility, OracleClient, OracleService
from .transport import pipe

CONTACT_LABEL = "c"
DAY_LABEL = "day"
_ACTIONS = {"contact": 2, "test": 3, "day": 0, "request": 2}


@dataclass(frozen=True)
class FacilitySpec:
    name: str
    policy: str
    alphabet: str
    dangerous: Optional[str] = None
    validity: int = 3600
    keep_days: Optional[int] = None
    kappa: int = DEFAULT_KAPPA


@dataclass(frozen=True)
class Step:
    t: int
    action: str
    args: tuple
    options: tuple = ()
    line: int = 0

    def option(self, key, default=None):
        return dict(self.options).get(key, default)


@dataclass
class Scenario:
    seed: int = 0
    users: list = field(default_factory=list)
    authorities: list = field(default_factory=list)
    facilities: dict = field(default_factory=dict)
    script: list = field(default_factory=list)
    key_bits: int = 512
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def parse(cls, text: str, base_dir=None) -> "Scenario":
        sc = cls(base_dir=Path(base_dir) if base_dir else Path.cwd())
        last_t = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                words = shlex.split(line)
            except ValueError as exc:
                raise ScenarioError(f"line {lineno}: {exc}") from None
            head, rest = words[0], words[1:]
            args = [w for w in rest if "=" not in w]
            opts = tuple(tuple(w.split("=", 1)) for w in rest if "=" in w)
            try:
                if head == "seed":
                    sc.seed = int(rest[0])
                elif head == "keybits":
                    sc.key_bits = int(rest[0])
                elif head in ("user", "users"):
                    sc.users.extend(args)
                elif head in ("authority", "authorities"):
                    sc.authorities.extend(args)
                elif head == "facility":
                    o = dict(opts)
                    keep = o.get("keep_days")
                    sc.facilities[args[0]] = FacilitySpec(
                        args[0], o["policy"], o["alphabet"], o.get("dangerous"),
                        int(o.get("validity", 3600)), int(keep) if keep else None,
                        int(o.get("kappa", DEFAULT_KAPPA)))
                elif head.startswith("t="):
                    t = int(head[2:])
                    if last_t is not None and t < last_t:
                        raise ScenarioError(f"line {lineno}: script is not sorted by time")
                    last_t = t
                    action = args[0] if args else ""
                    if action not in _ACTIONS or len(args) - 1 != _ACTIONS[action]:
                        raise ScenarioError(f"line {lineno}: malformed event {line!r}")
                    sc.script.append(Step(t, action, tuple(args[1:]), opts, lineno))
                else:
                    raise ScenarioError(f"line {lineno}: unknown directive {head!r}")
            except (IndexError, KeyError, ValueError) as exc:
                raise ScenarioError(f"line {lineno}: malformed {head!r} line ({exc})") from None
        sc.validate()
        return sc

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            return cls.parse(path.read_text(), path.parent)
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc

    def validate(self):
        if len(set(self.users)) != len(self.users):
            raise ScenarioError("duplicate user names")
        for step in self.script:
            where = f"line {step.line}"
            if step.action == "contact":
                self._known(step.args, self.users, where, "user")
                if step.args[0] == step.args[1]:
                    raise ScenarioError(f"{where}: a user cannot contact themselves")
            elif step.action == "test":
                self._known(step.args[:1], self.users, where, "user")
                Event(step.args[1], step.args[2])
                by = step.option("by")
                if by is not None:
                    self._known([by], self.authorities, where, "authority")
                elif step.args[2] == "+" and step.option("report") != "no" and not self.authorities:
                    raise ScenarioError(f"{where}: positive test needs a declared authority")
            elif step.action == "request":
                self._known(step.args[:1], self.users, where, "user")
                self._known(step.args[1:], self.facilities, where, "facility")
                if step.option("expect") not in (None, "accept", "reject"):
                    raise ScenarioError(f"{where}: expect= must be accept or reject")

    @staticmethod
    def _known(names, declared, where, kind):
        for n in names:
            if n not in declared:
                raise ScenarioError(f"{where}: undeclared {kind} {n!r}")


@dataclass
class ScenarioReport:
    seed: int
    requests: list = field(default_factory=list)
    timings: list = field(default_factory=list)  # wall-clock, excluded from to_json by default

    def to_json(self, include_timings: bool = False) -> str:
        doc = {"seed": self.seed, "requests": self.requests}
        if include_timings:
            doc["timings_ms"] = self.timings
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def verdicts(self) -> list:
        return [r["verdict"] for r in self.requests]


def _derive(seed: int, *parts) -> int:
    h = hashlib.sha256(":".join(str(p) for p in (seed,) + parts).encode())
    return int.from_bytes(h.digest()[:8], "big")


def anon_id(seed: int, user: str) -> str:
    """Opaque per-user identifier, stable for a given seed."""
    return "a" + hashlib.sha256(f"{seed}:anon:{user}".encode()).hexdigest()[:12]


class _World:
    def __init__(self, sc: Scenario, store_dir: Path):
        self.sc = sc
        self.now = 0
        self.traces = {u: [] for u in sc.users}
        self.anon = {u: anon_id(sc.seed, u) for u in sc.users}
        self.he_keys = {u: keygen(sc.key_bits, make_rng(_derive(sc.seed, "he", u))) for u in sc.users}
        self.creds = {a: AuthoritativeCredential(SigningKeyPair.generate(make_rng(_derive(sc.seed, "auth", a))), a)
                      for a in sc.authorities}
        store = OracleStore(store_dir / "oracle.log", [c.fingerprint for c in self.creds.values()])
        self.oracle_service = OracleService(store)
        self.oracle = OracleClient(lambda: pipe(self.oracle_service.handle))
        self.facilities = {}
        for name, spec in sc.facilities.items():
            try:
                policy = parse_policy((sc.base_dir / spec.policy).read_text())
                alphabet = Alphabet.parse((sc.base_dir / spec.alphabet).read_text())
            except OSError as exc:
                raise ScenarioError(f"facility {name}: {exc}") from exc
            signer = SigningKeyPair.generate(make_rng(_derive(sc.seed, "facility", name)))
            self.facilities[name] = Facility(
                policy, alphabet, signer, positives=self.oracle.list,
                dangerous_label=spec.dangerous, kappa=spec.kappa,
                max_trace_len=DEFAULT_MAX_TRACE_LEN, validity_secs=spec.validity,
                clock=lambda: self.now, seed=_derive(sc.seed, "session", name), name=name)

    def apply(self, step: Step):
        if step.action == "contact":
            a, b = step.args
            self.traces[a].append(Event(CONTACT_LABEL, self.anon[b]))
            self.traces[b].append(Event(CONTACT_LABEL, self.anon[a]))
        elif step.action == "test":
            user, label, value = step.args
            self.traces[user].append(Event(label, value))
            if Event(label, value).value == "+" and step.option("report") != "no":
                by = step.option("by") or self.sc.authorities[0]
                self.oracle.report(make_report(self.creds[by], self.anon[user], step.t))
        elif step.action == "day":
            for events in self.traces.values():
                events.append(Event(DAY_LABEL))

    def user_trace(self, user: str, spec: FacilitySpec) -> Trace:
        trace = Trace(self.traces[user])
        if spec.keep_days is not None:
            trace = truncate_after_last_marker(trace, DAY_LABEL, spec.keep_days)
        return trace

    def request(self, step: Step, index: int):
        user, fname = step.args
        facility, spec = self.facilities[fname], self.sc.facilities[fname]
        trace = self.user_trace(user, spec)
        snapshot = facility.snapshot()
        dfa = facility.dfa_for(snapshot)
        offline = run(dfa, map_unknown_contacts(trace, dfa.alphabet, CONTACT_LABEL))
        started = time.monotonic()
        result = request_access(lambda: pipe(facility.handle), trace, self.he_keys[user],
                                facility.signer.verification_key,
                                rng=make_rng(_derive(self.sc.seed, "request", index)), now=step.t)
        elapsed = round(1000 * (time.monotonic() - started), 1)
        entry = {
            "line": step.line, "t": step.t, "user": user, "facility": fname,
            "trace_len": len(trace), "positives": len(snapshot),
            "verdict": result.verdict.value, "offline": offline.value,
            "expected": step.option("expect"),
            "token": result.token_status.value if result.token_status else None,
            "messages": result.messages, "bytes": result.bytes,
        }
        return entry, elapsed


def run_scenario(sc: Scenario) -> ScenarioReport:
    report = ScenarioReport(sc.seed)
    with tempfile.TemporaryDirectory(prefix="pryvect-scenario-") as tmp:
        try:
            world = _World(sc, Path(tmp))
        except (PryvectError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"cannot set up scenario: {exc}") from exc
        i, script = 0, sc.script
        while i < len(script):
            step = script[i]
            world.now = step.t
            if step.action != "request":
                world.apply(step)
                i += 1
                continue
            batch = [i]
            while (batch[-1] + 1 < len(script) and script[batch[-1] + 1].action == "request"
                   and script[batch[-1] + 1].t == step.t):
                batch.append(batch[-1] + 1)
            with ThreadPoolExecutor(max_workers=len(batch)) as pool:
                results = list(pool.map(lambda j: world.request(script[j], j), batch))
            for entry, elapsed in results:
                report.requests.append(entry)
                report.timings.append(elapsed)
                _check(entry)
            i = batch[-1] + 1
    return report


def _check(entry: dict):
    where = f"line {entry['line']}: request {entry['user']}@{entry['facility']}"
    if entry["verdict"] != entry["offline"]:
        raise ScenarioError(f"{where}: networked verdict {entry['verdict']} disagrees with "
                            f"plaintext evaluation {entry['offline']}")
    if entry["expected"] is not None and entry["expected"] != entry["verdict"]:
        raise ScenarioError(f"{where}: expected {entry['expected']}, got {entry['verdict']}")
    if entry["verdict"] == "accept" and entry["token"] != "Valid":
        raise ScenarioError(f"{where}: accepted without a valid token ({entry['token']})")
