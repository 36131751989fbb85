"""Facility and oracle as TCP services, driven from the client side.

Starts an oracle and a facility on loopback ports, asks for access with a
trace that touches a contact, reports that contact positive, and asks
again. The second request sees the new snapshot and is refused.
"""

import random
import tempfile
from importlib import resources
from pathlib import Path

from pryvect import hcrypto
from pryvect.cpsl import parse
from pryvect.netapp.client import request_access
from pryvect.netapp.service import Facility, OracleClient, ServiceHandle, serve_oracle
from pryvect.oracle import AuthoritativeCredential, make_report
from pryvect.tokens import SigningKeyPair
from pryvect.trace import Alphabet, Trace

data = resources.files("pryvect") / "data"
clinic = AuthoritativeCredential(SigningKeyPair.generate(random.Random(1)), "clinic")
signer = SigningKeyPair.generate(random.Random(2))
keys = hcrypto.keygen(512, random.Random(3))

with tempfile.TemporaryDirectory() as tmp, \
        serve_oracle(Path(tmp) / "oracle.log", [clinic.fingerprint]).start() as oracle_service:
    oracle = OracleClient(oracle_service.endpoint)
    facility = Facility(parse((data / "risky.cpsl").read_text()),
                        Alphabet.parse((data / "risky.alpha").read_text()), signer,
                        positives=oracle.list, dangerous_label="d", name="school")
    with ServiceHandle(facility.handle, "127.0.0.1:0").start() as facility_service:
        print(f"oracle on {oracle_service.endpoint}, facility on {facility_service.endpoint}")
        trace = Trace.parse("c(k2);c(m7);day;c(k2);c(k2)")
        for anon in (None, "k2"):
            if anon:
                ack = oracle.report(make_report(clinic, anon, 100))
                print(f"clinic reports {anon}: created={ack.created}")
            result = request_access(facility_service.endpoint, trace, keys,
                                    signer.verification_key)
            status = result.token_status.value if result.token_status else "no token"
            print(f"request with {trace}: {result.verdict.value} ({status}), "
                  f"{result.messages} messages, {result.bytes} bytes")
