"""HTTP front: license/renewal endpoints plus capture ingestion.

POST /license and /renew move raw signed-message bytes; a policy can be
injected per request through the URL query string, mirroring how
integration license servers let developers pick policies. POST /ingest
accepts JSON capture records from in-page probes and returns a per-record
classification; GET /report/<source> renders everything a source has sent
so far as an audit report.

Ingest never fabricates violations: messages in our own wire format are
decoded and judged exactly; foreign payloads (real browsers speak the
proprietary format) fall back to a marker heuristic that reports WARN-level
findings only.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse

from . import protocol
from .audit import (
    AuditReport,
    DeviceClass,
    Finding,
    Rule,
    Severity,
    Verdict,
    build_augmented_ua,
    detect_ua_conflict,
    extract_fingerprint,
    parse_nesn,
)
from .exceptions import EmeForgeError, NesnMalformed
from .protocol import ClearClientId, LicenseRequest, MessageKind, RenewalRequest
from .server import LicenseServer, parse_policy_params

MESSAGE_KINDS = {kind.name for kind in MessageKind}
STATUS_KINDS = {"PERM", "UNSUPPORTED", "SESSION_MATCH"}
INGEST_KINDS = MESSAGE_KINDS | STATUS_KINDS

# printable substrings that betray a clear Client ID in an undecodable payload
_CLEAR_MARKERS = (
    b"android",
    b"arm64",
    b"aarch64",
    b"x86",
    b"linux",
    b"windows",
    b"chromecdm",
    b"release-keys",
    b"widevine",
)


@dataclass(frozen=True)
class IngestRecord:
    received_at: float
    source: str
    kind: str
    body_b64: str
    claimed_ua: str | None = None
    session_id_hex: str | None = None
    session_type: str | None = None

    @property
    def body(self) -> bytes:
        return base64.b64decode(self.body_b64)

    @classmethod
    def from_json_dict(cls, raw: dict) -> "IngestRecord":
        source = raw.get("source")
        kind = raw.get("kind")
        body_b64 = raw.get("body_b64", "")
        if not isinstance(source, str) or not source:
            raise ValueError("source must be a non-empty string")
        if kind not in INGEST_KINDS:
            raise ValueError(f"kind must be one of {sorted(INGEST_KINDS)}")
        if not isinstance(body_b64, str):
            raise ValueError("body_b64 must be a string")
        base64.b64decode(body_b64, validate=True)  # must decode
        return cls(
            received_at=time.time(),  # the one wall-clock read in the system
            source=source,
            kind=kind,
            body_b64=body_b64,
            claimed_ua=raw.get("claimed_ua"),
            session_id_hex=raw.get("session_id_hex"),
            session_type=raw.get("session_type"),
        )


def _heuristic_classification(body: bytes) -> str:
    lowered = body.lower()
    if any(marker in lowered for marker in _CLEAR_MARKERS):
        return "likely_clear"
    return "likely_encrypted"


@dataclass
class _SourceState:
    records: list[IngestRecord] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)
    requests_seen: int = 0
    renewals_seen: int = 0
    rq1_violations: int = 0
    rq2_violations: int = 0
    fingerprint: object | None = None
    augmented_ua: str | None = None


class IngestStore:
    """Accumulates probe captures per source; idempotent per (source, body)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._sources: dict[str, _SourceState] = {}
        self._seen: set[tuple[str, str]] = set()

    def add(self, record: IngestRecord) -> dict:
        digest = hashlib.sha256(
            record.kind.encode() + b"\x00" + record.body_b64.encode()
        ).hexdigest()
        with self._lock:
            state = self._sources.setdefault(record.source, _SourceState())
            if (record.source, digest) in self._seen:
                return {
                    "source": record.source,
                    "duplicate": True,
                    "classification": None,
                    "findings": [],
                }
            self._seen.add((record.source, digest))
            state.records.append(record)
            classification, findings = self._classify(record, len(state.records) - 1, state)
            state.findings.extend(findings)
            return {
                "source": record.source,
                "duplicate": False,
                "classification": classification,
                "findings": [finding.to_dict() for finding in findings],
            }

    def _classify(
        self, record: IngestRecord, index: int, state: _SourceState
    ) -> tuple[str, list[Finding]]:
        if record.kind in STATUS_KINDS:
            return "status", []
        try:
            sm = protocol.decode_signed_message(record.body)
            message = protocol.decode_message(sm.kind, sm.body)
        except EmeForgeError:
            return self._classify_foreign(record, index)
        findings: list[Finding] = []
        evidence = {"record_index": index, "source": record.source}
        if isinstance(message, LicenseRequest):
            state.requests_seen += 1
            if isinstance(message.client_id_payload, ClearClientId):
                state.rq1_violations += 1
                findings.append(
                    Finding(
                        Rule.RQ1_CLEAR_CLIENT_ID_IN_LICENSE_REQUEST,
                        Severity.VIOLATION,
                        "ingested license request carries a clear Client ID",
                        evidence,
                    )
                )
                findings.extend(self._clear_extras(message, record, state))
                return "clear", findings
            return "encrypted", findings
        if isinstance(message, RenewalRequest):
            state.renewals_seen += 1
            if isinstance(message.client_id_payload, ClearClientId):
                state.rq2_violations += 1
                findings.append(
                    Finding(
                        Rule.RQ2_CLEAR_CLIENT_ID_IN_RENEWAL,
                        Severity.VIOLATION,
                        "ingested renewal request carries a clear Client ID",
                        evidence,
                    )
                )
                findings.extend(self._clear_extras(message, record, state))
                return "clear", findings
            if message.client_id_payload is None:
                return "no_client_id", findings
            return "encrypted", findings
        ott = getattr(message, "ott_field", None)
        if ott:
            try:
                parsed = parse_nesn(ott.decode())
                if parsed.finding:
                    findings.append(parsed.finding)
            except (NesnMalformed, UnicodeDecodeError):
                pass
        return "response", findings

    def _clear_extras(
        self,
        message: LicenseRequest | RenewalRequest,
        record: IngestRecord,
        state: _SourceState,
    ) -> list[Finding]:
        assert isinstance(message.client_id_payload, ClearClientId)
        cid = message.client_id_payload.client_id
        extras: list[Finding] = []
        if state.fingerprint is None:
            state.fingerprint = extract_fingerprint(cid)
            state.augmented_ua = build_augmented_ua(cid.info)
        if record.claimed_ua:
            conflict = detect_ua_conflict(record.claimed_ua, cid.info)
            if conflict:
                extras.append(conflict)
        return extras

    def _classify_foreign(
        self, record: IngestRecord, index: int
    ) -> tuple[str, list[Finding]]:
        classification = _heuristic_classification(record.body)
        findings = []
        if classification == "likely_clear" and record.kind in (
            "LICENSE_REQUEST",
            "RENEWAL_REQUEST",
        ):
            rule = (
                Rule.RQ1_CLEAR_CLIENT_ID_IN_LICENSE_REQUEST
                if record.kind == "LICENSE_REQUEST"
                else Rule.RQ2_CLEAR_CLIENT_ID_IN_RENEWAL
            )
            findings.append(
                Finding(
                    rule,
                    Severity.WARN,  # heuristic only: never a VIOLATION without proof
                    "foreign payload contains readable device markers",
                    {"record_index": index, "heuristic": True},
                )
            )
        return classification, findings

    def report(self, source: str) -> AuditReport | None:
        with self._lock:
            state = self._sources.get(source)
            if state is None:
                return None
            report = AuditReport(subject=source)
            report.findings = list(state.findings)

            def verdict(seen: int, violations: int) -> Verdict:
                if seen == 0:
                    return Verdict.NOT_APPLICABLE
                return Verdict.NONCOMPLIANT if violations else Verdict.COMPLIANT

            report.verdicts = {
                "RQ1": verdict(state.requests_seen, state.rq1_violations),
                "RQ2": verdict(state.renewals_seen, state.rq2_violations),
                "RQ3": Verdict.NOT_APPLICABLE,
            }
            report.fingerprint = state.fingerprint  # type: ignore[assignment]
            report.augmented_ua = state.augmented_ua
            return report

    def sources(self) -> list[str]:
        with self._lock:
            return sorted(self._sources)


class _Handler(BaseHTTPRequestHandler):
    server_version = "emeforge"
    license_server: LicenseServer
    ingest_store: IngestStore
    handler_lock: threading.Lock

    def log_message(self, format: str, *args) -> None:  # quiet by default
        pass

    def _send(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, payload: dict) -> None:
        self._send(status, json.dumps(payload, indent=2).encode(), "application/json")

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length)

    def do_POST(self) -> None:  # noqa: N802 (stdlib handler naming)
        url = urlparse(self.path)
        if url.path in ("/license", "/renew"):
            self._handle_exchange(url.path, url.query)
        elif url.path == "/ingest":
            self._handle_ingest()
        else:
            self._send_json(404, {"error": f"no such endpoint {url.path}"})

    def _handle_exchange(self, path: str, query: str) -> None:
        body = self._read_body()
        try:
            sm = protocol.decode_signed_message(body)
            with self.handler_lock:
                config = self.license_server.config
                original = config.policy_template
                if query:
                    config.policy_template = parse_policy_params(query)
                try:
                    if path == "/license":
                        response = self.license_server.handle_license_request(sm, 0)
                    else:
                        response = self.license_server.handle_renewal_request(sm, 0)
                finally:
                    config.policy_template = original
        except EmeForgeError as exc:
            self._send_json(400, {"error": type(exc).__name__, "detail": str(exc)})
            return
        self._send(200, protocol.encode_signed_message(response), "application/octet-stream")

    def _handle_ingest(self) -> None:
        try:
            raw = json.loads(self._read_body())
            if not isinstance(raw, dict):
                raise ValueError("ingest body must be a JSON object")
            record = IngestRecord.from_json_dict(raw)
        except (ValueError, json.JSONDecodeError) as exc:
            self._send_json(400, {"error": "BadIngestRecord", "detail": str(exc)})
            return
        self._send_json(200, self.ingest_store.add(record))

    def do_GET(self) -> None:  # noqa: N802
        url = urlparse(self.path)
        if url.path.startswith("/report/"):
            source = url.path[len("/report/") :]
            report = self.ingest_store.report(source)
            if report is None:
                self._send_json(404, {"error": f"no records for source {source!r}"})
                return
            self._send_json(200, report.to_dict())
        elif url.path == "/report":
            self._send_json(200, {"sources": self.ingest_store.sources()})
        else:
            self._send_json(404, {"error": f"no such endpoint {url.path}"})


def make_http_server(
    bind: tuple[str, int], license_server: LicenseServer
) -> tuple[ThreadingHTTPServer, IngestStore]:
    store = IngestStore()
    handler = type(
        "BoundHandler",
        (_Handler,),
        {
            "license_server": license_server,
            "ingest_store": store,
            "handler_lock": threading.Lock(),
        },
    )
    return ThreadingHTTPServer(bind, handler), store
