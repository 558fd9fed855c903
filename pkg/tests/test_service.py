"""HTTP service tests: exchange endpoints, ingest classification, reports."""

from __future__ import annotations

import base64
import json
import random
import threading
import urllib.error
import urllib.request

import pytest

from emeforge import identity, protocol
from emeforge.cdm import Cdm, CdmConfig, Platform, SessionType
from emeforge.server import make_license_server
from emeforge.service import IngestRecord, IngestStore, make_http_server
from emeforge.useragent import FlowTrace, UserAgent, get_profile

from conftest import PIXEL7_INFO, make_keybox

KEY_ID = b"\x55" * 16
CONTENT_KEY = b"\x66" * 16


@pytest.fixture(scope="module")
def http_service():
    server, _ = make_license_server(
        policy="can_play=true&can_renew=true&always_include_client_id=true",
        content_keys={KEY_ID: CONTENT_KEY},
        rng=random.Random(40),
    )
    httpd, store = make_http_server(("127.0.0.1", 0), server)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    host, port = httpd.socket.getsockname()
    yield f"http://{host}:{port}", server, store
    httpd.shutdown()
    thread.join(timeout=5)


def post(url: str, body: bytes, content_type: str) -> tuple[int, bytes]:
    request = urllib.request.Request(
        url, data=body, headers={"Content-Type": content_type}, method="POST"
    )
    try:
        with urllib.request.urlopen(request) as response:
            return response.status, response.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


def get(url: str) -> tuple[int, bytes]:
    try:
        with urllib.request.urlopen(url) as response:
            return response.status, response.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


def make_clear_request(seed: int = 60) -> tuple[Cdm, bytes]:
    cid, key = identity.provision_mobile(make_keybox(seed), "app", PIXEL7_INFO)
    cdm = Cdm(
        CdmConfig(
            platform=Platform.MOBILE,
            client_id=cid,
            device_private_key=key,
            privacy_mode_enabled=False,
        ),
        random.Random(seed),
    )
    session = cdm.create_session(SessionType.TEMPORARY)
    sm = cdm.generate_request(session, [KEY_ID])
    return cdm, protocol.encode_signed_message(sm)


class TestExchangeEndpoints:
    def test_license_round_trip(self, http_service):
        base, server, _ = http_service
        _, request_bytes = make_clear_request(61)
        status, body = post(f"{base}/license", request_bytes, "application/octet-stream")
        assert status == 200
        sm = protocol.decode_signed_message(body)
        assert sm.kind == protocol.MessageKind.LICENSE_RESPONSE
        assert protocol.verify_message(sm, server.signing_public_key_der)

    def test_garbage_is_400(self, http_service):
        base, _, _ = http_service
        status, body = post(f"{base}/license", b"\xff\xfe not a message", "application/octet-stream")
        assert status == 400
        assert b"error" in body

    def test_policy_injection_via_query(self, http_service):
        base, _, _ = http_service
        _, request_bytes = make_clear_request(62)
        status, body = post(
            f"{base}/license?can_play=true&license_duration_s=42",
            request_bytes,
            "application/octet-stream",
        )
        assert status == 200
        sm = protocol.decode_signed_message(body)
        response = protocol.decode_message(sm.kind, sm.body)
        assert response.policy.license_duration_s == 42
        assert response.keys[0].ttl_s == 42

    def test_unknown_endpoint_404(self, http_service):
        base, _, _ = http_service
        status, _ = post(f"{base}/nope", b"", "application/octet-stream")
        assert status == 404


class TestIngest:
    def _ingest(self, base: str, payload: dict) -> tuple[int, dict]:
        status, body = post(
            f"{base}/ingest", json.dumps(payload).encode(), "application/json"
        )
        return status, json.loads(body)

    def test_clear_license_request_flags_rq1(self, http_service):
        base, _, _ = http_service
        _, request_bytes = make_clear_request(63)
        status, summary = self._ingest(
            base,
            {
                "source": "probe-clear",
                "kind": "LICENSE_REQUEST",
                "body_b64": base64.b64encode(request_bytes).decode(),
                "claimed_ua": "Mozilla/5.0 (Windows NT 10.0; Win64; x64)",
            },
        )
        assert status == 200
        assert summary["classification"] == "clear"
        rules = [finding["rule"] for finding in summary["findings"]]
        assert "RQ1_CLEAR_CLIENT_ID_IN_LICENSE_REQUEST" in rules
        assert "UA_CONFLICT" in rules  # windows claim, android device

    def test_idempotent_per_source_and_body(self, http_service):
        base, _, store = http_service
        _, request_bytes = make_clear_request(64)
        payload = {
            "source": "probe-dup",
            "kind": "LICENSE_REQUEST",
            "body_b64": base64.b64encode(request_bytes).decode(),
        }
        _, first = self._ingest(base, payload)
        _, second = self._ingest(base, payload)
        assert first["duplicate"] is False
        assert second["duplicate"] is True
        report = store.report("probe-dup")
        assert (
            sum(
                1
                for finding in report.findings
                if finding.rule.value == "RQ1_CLEAR_CLIENT_ID_IN_LICENSE_REQUEST"
            )
            == 1
        )

    def test_status_record_accepted(self, http_service):
        base, _, _ = http_service
        for kind in ("UNSUPPORTED", "PERM", "SESSION_MATCH"):
            status, summary = self._ingest(
                base,
                {
                    "source": "probe-status",
                    "kind": kind,
                    "body_b64": "",
                    "session_id_hex": "ab" * 16,
                },
            )
            assert status == 200
            assert summary["classification"] == "status"
            assert summary["findings"] == []

    def test_bad_kind_400(self, http_service):
        base, _, _ = http_service
        status, _ = self._ingest(
            base, {"source": "x", "kind": "TELEGRAM", "body_b64": ""}
        )
        assert status == 400

    def test_bad_base64_400(self, http_service):
        base, _, _ = http_service
        status, _ = self._ingest(
            base, {"source": "x", "kind": "LICENSE_REQUEST", "body_b64": "!!!"}
        )
        assert status == 400

    def test_malformed_json_400(self, http_service):
        base, _, _ = http_service
        status, _ = post(f"{base}/ingest", b"{not json", "application/json")
        assert status == 400

    def test_foreign_payload_heuristic_never_violates(self, http_service):
        base, _, store = http_service
        status, summary = self._ingest(
            base,
            {
                "source": "probe-foreign",
                "kind": "LICENSE_REQUEST",
                "body_b64": base64.b64encode(
                    b"\x08\x01" + b"google/panther arm64-v8a release-keys" + b"\x00\xff"
                ).decode(),
            },
        )
        assert status == 200
        assert summary["classification"] in ("likely_clear", "clear")
        for finding in summary["findings"]:
            if finding.get("evidence", {}).get("heuristic"):
                assert finding["severity"] != "VIOLATION"


class TestReports:
    def test_report_for_source(self, http_service):
        base, _, _ = http_service
        _, request_bytes = make_clear_request(65)
        post_payload = {
            "source": "probe-report",
            "kind": "LICENSE_REQUEST",
            "body_b64": base64.b64encode(request_bytes).decode(),
        }
        post(f"{base}/ingest", json.dumps(post_payload).encode(), "application/json")
        status, body = get(f"{base}/report/probe-report")
        assert status == 200
        report = json.loads(body)
        assert report["verdicts"]["RQ1"] == "NONCOMPLIANT"
        assert report["fingerprint"]["class"] == "UNIQUE_DEVICE"

    def test_unknown_source_404(self, http_service):
        base, _, _ = http_service
        status, _ = get(f"{base}/report/never-seen")
        assert status == 404

    def test_encrypted_request_compliant_report(self, http_service):
        base, server, _ = http_service
        ua = UserAgent(get_profile("chrome_android"), rng=random.Random(70))
        trace = ua.run_license_flow(
            "https://site.example",
            "default",
            server,
            [KEY_ID],
            SessionType.TEMPORARY,
        )
        record = next(iter(trace.messages()))
        payload = {
            "source": "probe-encrypted",
            "kind": record.kind,
            "body_b64": base64.b64encode(record.body).decode(),
        }
        status, body = post(
            f"{base}/ingest", json.dumps(payload).encode(), "application/json"
        )
        assert json.loads(body)["classification"] == "encrypted"
        status, body = get(f"{base}/report/probe-encrypted")
        assert json.loads(body)["verdicts"]["RQ1"] == "COMPLIANT"
