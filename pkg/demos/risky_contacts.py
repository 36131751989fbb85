"""Risky-contact counting against a live oracle.

Replays the bundled five-user scenario: contacts are exchanged, a clinic
reports positives to the oracle, and the school facility re-expands its
policy against the oracle for every request. The table at the end lists
each request with the snapshot size the facility used.
"""

from importlib import resources

from pryvect.netapp.scenario import Scenario, anon_id, run_scenario

path = resources.files("pryvect") / "data" / "risky.scn"
scenario = Scenario.load(path)
print(path.read_text())

print("anonymous ids:")
for user in scenario.users:
    print(f"  {user} -> {anon_id(scenario.seed, user)}")

result = run_scenario(scenario)
print(f"\n{'line':>4} {'t':>4} {'user':5} {'len':>3} {'positives':>9} {'verdict':8} token")
for r in result.requests:
    print(f"{r['line']:>4} {r['t']:>4} {r['user']:5} {r['trace_len']:>3} {r['positives']:>9} "
          f"{r['verdict']:8} {r['token'] or '-'}")

# u1 met three people who later tested positive; a negative test clears the count
u1 = [r["verdict"] for r in result.requests if r["user"] == "u1"]
print(f"\nu1 over time: {' -> '.join(u1)}")
