"""Command line front door.

Subcommands: decode (dissect message bytes), simulate (run a browser preset
against an in-process license server and write the flow trace), audit
(judge a trace or a whole preset), serve (HTTP license/ingest service), and
fingerprint (pull the device fingerprint out of a trace).

Exit codes are part of the contract so CI can assert verdicts:
0 success / all compliant, 1 at least one NONCOMPLIANT verdict, 2 usage or
parse error, 3 EME unsupported by the chosen preset, 4 no clear Client ID
in the trace.

Every run is deterministic for a fixed --seed (default: the EME_FORGE_SEED
environment variable, then 0); the only wall-clock reads happen in the
ingestion service.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import signal
import sys
from pathlib import Path

from . import audit as audit_mod
from . import protocol
from .exceptions import EmeForgeError
from .cdm import SessionType
from .protocol import (
    ClearClientId,
    EncryptedClientId,
    LicenseRequest,
    LicenseResponse,
    MessageKind,
    RenewalRequest,
    RenewalResponse,
)
from .server import make_license_server
from .service import make_http_server
from .useragent import FlowTrace, UserAgent, get_profile

EXIT_OK = 0
EXIT_NONCOMPLIANT = 1
EXIT_USAGE = 2
EXIT_EME_UNSUPPORTED = 3
EXIT_NO_CLEAR_CLIENT_ID = 4

SEED_ENV_VAR = "EME_FORGE_SEED"

DEFAULT_ORIGIN = "https://example.test"
DEFAULT_PROFILE_ID = "default"


def _fail(message: str, code: int = EXIT_USAGE) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# -- decode -----------------------------------------------------------------------

def _describe_payload(payload, out: list[str]) -> None:
    if isinstance(payload, ClearClientId):
        cid = payload.client_id
        out.append("client_id: CLEAR")
        out.append(f"  serial: {cid.chain.device_cert.serial.hex()}")
        out.append(f"  model: {cid.info.model_name}")
        out.append(f"  architecture: {cid.info.architecture}")
        out.append(f"  cdm_version: {cid.info.cdm_version}")
        if cid.info.application_name:
            out.append(f"  application: {cid.info.application_name}")
    elif isinstance(payload, EncryptedClientId):
        env = payload.envelope
        out.append(
            "client_id: ENCRYPTED (envelope: "
            f"wrapped_key {len(env.wrapped_key)} B, iv {len(env.iv)} B, "
            f"ciphertext {len(env.ciphertext)} B)"
        )


def _describe_message(kind: MessageKind, message, out: list[str]) -> None:
    out.append(f"kind: {kind.name}")
    if isinstance(message, LicenseRequest):
        out.append(f"request_id: {message.request_id.hex()}")
        for index, key_id in enumerate(message.content_key_ids):
            out.append(f"content_key_ids[{index}]: {key_id.hex()}")
        _describe_payload(message.client_id_payload, out)
    elif isinstance(message, LicenseResponse):
        out.append(f"request_id: {message.request_id.hex()}")
        for index, entry in enumerate(message.keys):
            out.append(
                f"keys[{index}]: key_id {entry.key_id.hex()}"
                f" wrapped {len(entry.wrapped_key)} B ttl {entry.ttl_s}s"
            )
        out.append(f"policy: {message.policy}")
        if message.ott_field is not None:
            out.append(f"ott_field: {len(message.ott_field)} B")
    elif isinstance(message, RenewalRequest):
        out.append(f"request_id: {message.request_id.hex()}")
        out.append(f"policy: {message.policy}")
        if message.client_id_payload is None:
            out.append("client_id: ABSENT")
        else:
            _describe_payload(message.client_id_payload, out)
    elif isinstance(message, RenewalResponse):
        out.append(f"request_id: {message.request_id.hex()}")
        for index, (key_id, ttl_s) in enumerate(message.updated_ttls):
            out.append(f"updated_ttls[{index}]: key_id {key_id.hex()} ttl {ttl_s}s")
        out.append(f"policy: {message.policy}")
    else:  # service certificate
        out.append(f"provider_id: {message.provider_id}")
        out.append(f"public_key: {len(message.public_key_der)} B DER")


def cmd_decode(args: argparse.Namespace) -> int:
    if args.path in (None, "-"):
        data = sys.stdin.buffer.read()
    else:
        try:
            data = Path(args.path).read_bytes()
        except OSError as exc:
            return _fail(str(exc))
    lines: list[str] = []
    try:
        if args.kind:
            kind = MessageKind[args.kind]
            message = protocol.decode_message(kind, data)
            _describe_message(kind, message, lines)
        else:
            sm = protocol.decode_signed_message(data)
            message = protocol.decode_message(sm.kind, sm.body)
            _describe_message(sm.kind, message, lines)
            lines.append(f"signature: {len(sm.signature)} B")
    except (EmeForgeError, KeyError) as exc:
        return _fail(f"cannot decode input: {exc}")
    print("\n".join(lines))
    return EXIT_OK


# -- simulate ---------------------------------------------------------------------

def _simulate_trace(
    profile_name: str, policy_query: str, persistent: bool, seed: int
) -> FlowTrace | int:
    try:
        profile = get_profile(profile_name)
    except KeyError as exc:
        return _fail(str(exc.args[0]) if exc.args else str(exc))
    rng = random.Random(seed)
    ua = UserAgent(profile, rng=random.Random(rng.getrandbits(64)))
    key_id = rng.randbytes(16)
    try:
        server, _ = make_license_server(
            policy=policy_query,
            content_keys={key_id: rng.randbytes(16)},
            rng=random.Random(rng.getrandbits(32)),
        )
    except EmeForgeError as exc:
        return _fail(f"bad policy: {exc}")
    trace = ua.run_license_flow(
        DEFAULT_ORIGIN,
        DEFAULT_PROFILE_ID,
        server,
        [key_id],
        SessionType.PERSISTENT if persistent else SessionType.TEMPORARY,
    )
    return trace


def cmd_simulate(args: argparse.Namespace) -> int:
    trace = _simulate_trace(args.profile, args.policy, args.persistent, args.seed)
    if isinstance(trace, int):
        return trace
    if any(r.kind == "EME_UNSUPPORTED" for r in trace.records):
        print(f"EME unsupported on {args.profile}", file=sys.stderr)
        return EXIT_EME_UNSUPPORTED
    if args.out:
        trace.save(args.out)
        print(f"wrote {len(trace.records)} trace records to {args.out}")
    else:
        sys.stdout.write(trace.dumps())
    return EXIT_OK


# -- audit ------------------------------------------------------------------------

def _emit_report(report: audit_mod.AuditReport, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.to_text())


def cmd_audit(args: argparse.Namespace) -> int:
    if bool(args.trace) == bool(args.profile):
        return _fail("exactly one of --trace or --profile is required")
    try:
        if args.trace:
            report = audit_mod.audit_trace(args.trace, subject=args.trace)
        else:
            profile = get_profile(args.profile)  # may raise KeyError
            report, _ = audit_mod.audit_browser(profile, seed=args.seed)
    except KeyError as exc:
        return _fail(str(exc.args[0]) if exc.args else str(exc))
    except EmeForgeError as exc:
        return _fail(f"audit failed: {exc}")
    _emit_report(report, args.format)
    return EXIT_OK if report.compliant else EXIT_NONCOMPLIANT


# -- fingerprint -------------------------------------------------------------------

def _first_clear_client_id(trace: FlowTrace):
    for record in trace.messages():
        sm = protocol.decode_signed_message(record.body)
        message = protocol.decode_message(sm.kind, sm.body)
        payload = getattr(message, "client_id_payload", None)
        if isinstance(payload, ClearClientId):
            return payload.client_id
    return None


def cmd_fingerprint(args: argparse.Namespace) -> int:
    try:
        trace = FlowTrace.load(args.trace)
        cid = _first_clear_client_id(trace)
    except EmeForgeError as exc:
        return _fail(f"cannot read trace: {exc}")
    if cid is None:
        print("no clear Client ID observed", file=sys.stderr)
        return EXIT_NO_CLEAR_CLIENT_ID
    fingerprint = audit_mod.extract_fingerprint(cid)
    print(f"serial: {fingerprint.serial_hex}")
    print(f"class: {fingerprint.device_class.value}")
    print(f"augmented_ua: {audit_mod.build_augmented_ua(cid.info)}")
    return EXIT_OK


# -- serve -------------------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    host, _, port_text = args.listen.rpartition(":")
    if not host or not port_text.isdigit():
        return _fail(f"--listen expects HOST:PORT, got {args.listen!r}")
    rng = random.Random(args.seed)
    key_id = rng.randbytes(16)
    try:
        server, _ = make_license_server(
            policy=args.policy,
            content_keys={key_id: rng.randbytes(16)},
            rng=random.Random(rng.getrandbits(32)),
        )
    except EmeForgeError as exc:
        return _fail(f"bad policy: {exc}")
    httpd, _store = make_http_server((host, int(port_text)), server)

    def shutdown(signum, frame):  # noqa: ANN001
        httpd.shutdown()

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)
    bound = httpd.socket.getsockname()
    print(
        f"serving on http://{bound[0]}:{bound[1]} (content key {key_id.hex()})",
        flush=True,
    )
    print(
        "endpoints: POST /license, POST /renew, POST /ingest, GET /report/<source>",
        flush=True,
    )
    httpd.serve_forever()
    httpd.server_close()
    print("shut down")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emeforge",
        description="Widevine EME simulator and privacy-conformance auditor",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=int(os.environ.get(SEED_ENV_VAR, "0")),
        help=f"seed for all randomness (default: ${SEED_ENV_VAR} or 0)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_decode = sub.add_parser("decode", help="dissect message bytes")
    p_decode.add_argument("path", nargs="?", help="input file (default: stdin)")
    p_decode.add_argument(
        "--kind",
        choices=[kind.name for kind in MessageKind],
        help="treat input as a bare message body of this kind",
    )
    p_decode.set_defaults(func=cmd_decode)

    p_sim = sub.add_parser("simulate", help="run a browser preset end to end")
    p_sim.add_argument("--profile", required=True, help="browser preset name")
    p_sim.add_argument(
        "--policy",
        default=audit_mod.AUDIT_POLICY_QUERY,
        help="license policy query string",
    )
    p_sim.add_argument("--persistent", action="store_true", help="ask for a persistent session")
    p_sim.add_argument("--out", help="trace output path (default: stdout)")
    p_sim.set_defaults(func=cmd_simulate)

    p_audit = sub.add_parser("audit", help="audit a trace file or a whole preset")
    p_audit.add_argument("--trace", help="flow trace to analyze")
    p_audit.add_argument("--profile", help="browser preset to simulate and audit")
    p_audit.add_argument("--format", choices=("text", "json"), default="text")
    p_audit.set_defaults(func=cmd_audit)

    p_serve = sub.add_parser("serve", help="run the HTTP license/ingest service")
    p_serve.add_argument("--listen", default="127.0.0.1:8777", help="HOST:PORT to bind")
    p_serve.add_argument("--policy", default="can_play=true", help="license policy query string")
    p_serve.set_defaults(func=cmd_serve)

    p_fp = sub.add_parser("fingerprint", help="extract the fingerprint from a trace")
    p_fp.add_argument("--trace", required=True, help="flow trace to inspect")
    p_fp.set_defaults(func=cmd_fingerprint)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    return args.func(args)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
