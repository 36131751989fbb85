"""Quarantine policy, start to finish.

Compiles the bundled quarantine policy, prints its transition table, then
evaluates two traces both in the clear and through the oblivious protocol,
showing what each party actually sends. Run with ``python3 demos/quarantine_walkthrough.py``.
"""

import random
import time
from importlib import resources

from pryvect import automata, hcrypto
from pryvect.cpsl import parse, typecheck
from pryvect.obeval import TokenIssuer, run_local
from pryvect.tokens import SigningKeyPair, check, load_verification_key
from pryvect.trace import Alphabet, Trace

data = resources.files("pryvect") / "data"
source = (data / "quarantine.cpsl").read_text()
alphabet = Alphabet.parse((data / "quarantine.alpha").read_text())

print(source)
dfa = automata.compile(typecheck(parse(source), alphabet))
print(f"compiled: {dfa.n_states} states, policy id {dfa.policy_id().hex()[:16]}...")
header = "".join(f"{str(e):>7}" for e in (alphabet.event(a) for a in range(len(alphabet))))
print(f"{'':6}{header}")
for q in dfa.states:
    mark = ("->" if q == dfa.initial else "  ") + ("*" if q in dfa.finals else " ")
    print(f"{mark} q{q} " + "".join(f"{'q' + str(t):>7}" for t in dfa.delta[q]))

# the facility signs tokens for accepted traces
signer = SigningKeyPair.generate(random.Random(1))
clock = [1_700_000_000]
issuer = TokenIssuer(signer, 3600, lambda: clock[0])
keys = hcrypto.keygen(512, random.Random(2))

for text in ("v(+);s(-);a(-)", "v(+);s(-);a(+)"):
    trace = Trace.parse(text)
    started = time.perf_counter()
    verdict, transcript = run_local(dfa, trace, seed=3, keys=keys, issuer=issuer)
    elapsed = 1000 * (time.perf_counter() - started)
    print(f"\ntrace {text}: plaintext {automata.run(dfa, trace).value}, "
          f"oblivious {verdict.value} ({elapsed:.0f} ms)")
    for e in transcript.entries:
        print(f"  {e.sender:8} {e.kind:15} {e.size:5} bytes  {e.ciphertexts:2} ciphertexts")
    print(f"  blinded states seen by the user: {transcript.blinded_states}")
    token = transcript.entries[-1].message.token
    if token is not None:
        vk = load_verification_key(signer.public_pem())
        print(f"  token now:        {check(vk, token, clock[0]).value}")
        print(f"  token in 2 hours: {check(vk, token, clock[0] + 7200).value}")
