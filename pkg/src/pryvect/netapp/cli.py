"""Command-line interface.

Exit status: 0 on success, 1 on a domain error (including a rejected or
invalid token in ``verify-token``), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .. import automata, hcrypto
from ..errors import PryvectError
from ..obeval import run_local
from ..oracle import AuthoritativeCredential, make_report
from ..tokens import (
    AuthToken, SigningKeyPair, TokenStatus, check, fingerprint, load_verification_key,
)
from ..trace import Alphabet, Trace, decode
from .client import request_access
from .scenario import Scenario, run_scenario
from .service import FacilityConfig, OracleClient, serve_facility, serve_oracle


def _read(path) -> bytes:
    return Path(path).read_bytes()


def _now(args) -> int:
    return int(time.time()) if args.now is None else args.now


def _trace(text: str) -> Trace:
    """A textual trace literal, or the path of a canonical ``.trc`` file."""
    if text.endswith(".trc") and Path(text).is_file():
        return decode(_read(text))
    return Trace.parse(text)


def _load_token(path) -> AuthToken:
    raw = _read(path)
    if raw[:4] == b"PYVT":
        return AuthToken.from_bytes(raw)
    return AuthToken.from_base64(raw.decode("ascii", errors="replace"))


# --- subcommands -----------------------------------------------------------

def cmd_compile(args):
    alphabet = Alphabet.parse(Path(args.alphabet).read_text())
    expansion = None
    if args.dangerous:
        ids = [i for i in (args.positives or "").split(",") if i]
        expansion = automata.OracleExpansion(args.dangerous, tuple(ids))
    dfa = automata.compile_source(Path(args.policy).read_text(), alphabet, expansion, args.bound)
    if args.minimize:
        dfa = automata.minimize(dfa)
    Path(args.output).write_bytes(automata.serialize(dfa))
    print(f"{dfa.n_states} states, {len(dfa.alphabet)} symbols, policy id {dfa.policy_id().hex()}")


def cmd_run(args):
    dfa = automata.deserialize(_read(args.dfa))
    print(automata.run(dfa, _trace(args.trace)).name)


def cmd_eval(args):
    dfa = automata.deserialize(_read(args.dfa))
    rng = hcrypto.make_rng(args.seed)
    keys = hcrypto.keygen(args.bits, rng)
    verdict, transcript = run_local(dfa, _trace(args.trace), rng.getrandbits(64) if args.seed is not None
                                    else None, keys=keys, kappa=args.kappa)
    if args.transcript:
        for e in transcript.entries:
            print(f"{e.sender:8} {e.kind:15} bytes={e.size} ciphertexts={e.ciphertexts}")
    print(verdict.name)


def cmd_serve_facility(args):
    if args.oracle is None and not args.no_oracle:
        raise _Usage("serve-facility needs --oracle ENDPOINT or --no-oracle")
    config = FacilityConfig(args.policy, args.alphabet, args.signing_key, args.oracle,
                            args.dangerous, args.validity, args.max_trace_len, args.kappa,
                            args.listen, args.session_timeout)
    _serve(serve_facility(config, seed=args.seed))


def cmd_serve_oracle(args):
    allow = [fingerprint(load_verification_key(_read(p))) for p in args.allow]
    _serve(serve_oracle(args.store, allow, args.listen))


def _serve(handle):
    print(f"listening on {handle.endpoint}", flush=True)
    try:
        handle.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        handle.server.server_close()


def cmd_report_positive(args):
    cred = AuthoritativeCredential(SigningKeyPair.from_pem(_read(args.key)))
    ack = OracleClient(args.oracle).report(make_report(cred, args.anon_id, _now(args)))
    print(f"{ack.anon_id} reported_at={ack.reported_at} {'created' if ack.created else 'existing'}")


def cmd_request_access(args):
    rng = hcrypto.make_rng(args.seed)
    keys = hcrypto.load_secret(_read(args.he_key)) if args.he_key else hcrypto.keygen(args.bits, rng)
    vk = load_verification_key(_read(args.facility_key)) if args.facility_key else None
    result = request_access(args.facility, _trace(args.trace), keys, vk, rng=rng,
                            now=args.now)
    status = result.token_status.value if result.token_status else "unchecked"
    print(result.verdict.name if result.token is None else f"{result.verdict.name} token={status}")
    if result.token is not None and args.token_out:
        out = Path(args.token_out)
        if out.suffix == ".tok":
            out.write_bytes(result.token.to_bytes())
        else:
            out.write_text(result.token.to_base64() + "\n")
    if result.token_status not in (None, TokenStatus.VALID):
        return 1
    return 0


def cmd_verify_token(args):
    vk = load_verification_key(_read(args.key))
    try:
        token = _load_token(args.token)
    except PryvectError:
        print(f"INVALID({TokenStatus.MALFORMED.value})")
        return 1
    status = check(vk, token, _now(args))
    if status is TokenStatus.VALID:
        print(f"VALID expires_at={token.expires_at}")
        return 0
    print(f"INVALID({status.value})")
    return 1


def cmd_scenario(args):
    report = run_scenario(Scenario.load(args.file))
    text = report.to_json(include_timings=args.timings)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_keygen(args):
    out = Path(args.output)
    if args.kind == "signing":
        keys = SigningKeyPair.generate(hcrypto.make_rng(args.seed) if args.seed is not None else None)
        out.with_suffix(".key").write_bytes(keys.private_pem())
        out.with_suffix(".pub").write_bytes(keys.public_pem())
        print(f"fingerprint {keys.fingerprint.hex()}")
    else:
        keys = hcrypto.keygen(args.bits, hcrypto.make_rng(args.seed))
        out.with_suffix(".hesk").write_bytes(hcrypto.dump_secret(keys))
        out.with_suffix(".hepk").write_bytes(hcrypto.dump_public(keys.public))
        print(f"fingerprint {keys.public.fingerprint.hex()}")


# --- parser ----------------------------------------------------------------

class _Usage(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed every randomized step")
    common.add_argument("--log-level", default="WARNING")

    p = argparse.ArgumentParser(prog="pryvect", description="Policy compliance over private traces.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", parents=[common], help="compile a CPSL policy to a DFA file")
    c.add_argument("policy")
    c.add_argument("--alphabet", required=True)
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--dangerous", help="label of the abstract dangerous-contact event")
    c.add_argument("--positives", help="comma-separated positive ids for the expansion")
    c.add_argument("--bound", type=int, default=automata.DEFAULT_STATE_BOUND)
    c.add_argument("--minimize", action="store_true")
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", parents=[common], help="evaluate a DFA on a plaintext trace")
    r.add_argument("dfa")
    r.add_argument("--trace", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", parents=[common], help="local oblivious evaluation")
    e.add_argument("dfa")
    e.add_argument("--trace", required=True)
    e.add_argument("--bits", type=int, default=512, choices=hcrypto.SUPPORTED_BITS)
    e.add_argument("--kappa", type=int, default=hcrypto.DEFAULT_KAPPA)
    e.add_argument("--transcript", action="store_true", help="print one line per message")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("serve-facility", parents=[common], help="run a facility service")
    f.add_argument("--policy", required=True)
    f.add_argument("--alphabet", required=True)
    f.add_argument("--signing-key", required=True)
    f.add_argument("--oracle")
    f.add_argument("--no-oracle", action="store_true")
    f.add_argument("--dangerous", default=None)
    f.add_argument("--validity", type=int, default=3600)
    f.add_argument("--max-trace-len", type=int, default=4096)
    f.add_argument("--kappa", type=int, default=hcrypto.DEFAULT_KAPPA)
    f.add_argument("--listen", default="127.0.0.1:7400")
    f.add_argument("--session-timeout", type=float, default=60.0)
    f.set_defaults(func=cmd_serve_facility)

    o = sub.add_parser("serve-oracle", parents=[common], help="run the contact oracle")
    o.add_argument("--store", required=True)
    o.add_argument("--allow", action="append", default=[], help="allow-listed public key (PEM)")
    o.add_argument("--listen", default="127.0.0.1:7401")
    o.set_defaults(func=cmd_serve_oracle)

    rp = sub.add_parser("report-positive", parents=[common], help="report an anonymous id")
    rp.add_argument("anon_id")
    rp.add_argument("--oracle", required=True)
    rp.add_argument("--key", required=True, help="authority signing key (PEM)")
    rp.add_argument("--now", type=int)
    rp.set_defaults(func=cmd_report_positive)

    ra = sub.add_parser("request-access", parents=[common], help="ask a facility for a token")
    ra.add_argument("--facility", required=True)
    ra.add_argument("--trace", required=True)
    ra.add_argument("--facility-key", help="facility verification key (PEM)")
    ra.add_argument("--he-key", help="homomorphic key pair file; generated when absent")
    ra.add_argument("--bits", type=int, default=1024, choices=hcrypto.SUPPORTED_BITS)
    ra.add_argument("--now", type=int)
    ra.add_argument("--token-out")
    ra.set_defaults(func=cmd_request_access)

    v = sub.add_parser("verify-token", parents=[common], help="check a token offline")
    v.add_argument("token")
    v.add_argument("--key", required=True)
    v.add_argument("--now", type=int)
    v.set_defaults(func=cmd_verify_token)

    s = sub.add_parser("scenario", parents=[common], help="run a scenario file")
    s.add_argument("file")
    s.add_argument("-o", "--output")
    s.add_argument("--timings", action="store_true", help="include wall-clock timings")
    s.set_defaults(func=cmd_scenario)

    k = sub.add_parser("keygen", parents=[common], help="generate signing or homomorphic keys")
    k.add_argument("kind", choices=("signing", "he"))
    k.add_argument("-o", "--output", required=True, help="output path prefix")
    k.add_argument("--bits", type=int, default=1024, choices=hcrypto.SUPPORTED_BITS)
    k.set_defaults(func=cmd_keygen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except _Usage as exc:
        parser.error(str(exc))
    except (PryvectError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
