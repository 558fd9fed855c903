"""License server tests: handlers, policy parsing, echo invariants."""

from __future__ import annotations

import random

import pytest

from emeforge import crypto, identity, protocol
from emeforge.cdm import Cdm, CdmConfig, Platform, SessionType
from emeforge.exceptions import (
    BadValue,
    ChainInvalid,
    PolicyViolated,
    SignatureInvalid,
    UnknownKeyId,
    UnknownPolicyKey,
    UnknownRequestId,
)
from emeforge.protocol import (
    LicensePolicy,
    MessageKind,
    RenewalRequest,
    SignedMessage,
)
from emeforge.server import make_license_server, parse_policy_params

from conftest import PIXEL7_INFO, make_keybox

KEY_ID = b"\x10" * 16
CONTENT_KEY = b"\x20" * 16


class TestParsePolicyParams:
    def test_renewal_forcing_query(self):
        policy = parse_policy_params(
            "can_renew=true&renewal_delay_s=5&always_include_client_id=true"
        )
        assert policy == LicensePolicy(
            can_renew=True, renewal_delay_s=5, always_include_client_id=True
        )

    def test_empty_is_default(self):
        assert parse_policy_params("") == LicensePolicy()

    def test_bad_value(self):
        with pytest.raises(BadValue):
            parse_policy_params("renewal_delay_s=abc")
        with pytest.raises(BadValue):
            parse_policy_params("can_play=maybe")
        with pytest.raises(BadValue):
            parse_policy_params("renewal_delay_s=-3")

    def test_unknown_key(self):
        with pytest.raises(UnknownPolicyKey):
            parse_policy_params("can_fly=true")

    def test_url_value(self):
        policy = parse_policy_params("renewal_server_url=https://r.example/renew")
        assert policy.renewal_server_url == "https://r.example/renew"


@pytest.fixture()
def wired(rng):
    server, cert = make_license_server(
        policy="can_play=true&can_renew=true&always_include_client_id=true",
        content_keys={KEY_ID: CONTENT_KEY},
        rng=random.Random(3),
    )
    cid, key = identity.provision_mobile(make_keybox(30), "app", PIXEL7_INFO)
    clear_cdm = Cdm(
        CdmConfig(
            platform=Platform.MOBILE,
            client_id=cid,
            device_private_key=key,
            privacy_mode_enabled=False,
            license_server_public_key_der=server.signing_public_key_der,
        ),
        random.Random(31),
    )
    enc_cdm = Cdm(
        CdmConfig(
            platform=Platform.MOBILE,
            client_id=cid,
            device_private_key=key,
            privacy_mode_enabled=True,
            server_certificate=cert,
            license_server_public_key_der=server.signing_public_key_der,
        ),
        random.Random(32),
    )
    return server, clear_cdm, enc_cdm


class TestLicenseHandler:
    def test_clear_request_served(self, wired):
        server, clear_cdm, _ = wired
        session = clear_cdm.create_session(SessionType.TEMPORARY)
        request = clear_cdm.generate_request(session, [KEY_ID])
        signed = server.handle_license_request(request, 0)
        response = protocol.decode_message(MessageKind.LICENSE_RESPONSE, signed.body)
        assert len(response.keys) == 1
        assert response.request_id == session.request_id

    def test_encrypted_request_served_identically(self, wired):
        server, _, enc_cdm = wired
        session = enc_cdm.create_session(SessionType.TEMPORARY)
        request = enc_cdm.generate_request(session, [KEY_ID])
        signed = server.handle_license_request(request, 0)
        response = protocol.decode_message(MessageKind.LICENSE_RESPONSE, signed.body)
        assert response.request_id == session.request_id
        assert len(response.keys) == 1

    def test_unknown_key_id(self, wired):
        server, clear_cdm, _ = wired
        session = clear_cdm.create_session(SessionType.TEMPORARY)
        request = clear_cdm.generate_request(session, [b"\xff" * 16])
        with pytest.raises(UnknownKeyId):
            server.handle_license_request(request, 0)

    def test_foreign_chain_rejected(self, wired, rng):
        server, clear_cdm, _ = wired
        # re-sign the device cert under a rogue intermediate: chain fails
        cid = clear_cdm.config.client_id
        rogue = crypto.derive_rsa_private_key(b"rogue-intermediate")
        from dataclasses import replace

        device = cid.chain.device_cert
        forged_device = replace(
            device, signature=crypto.sign(rogue, device.signing_payload())
        )
        forged = replace(cid, chain=replace(cid.chain, device_cert=forged_device))
        clear_cdm.config.client_id = forged
        session = clear_cdm.create_session(SessionType.TEMPORARY)
        request = clear_cdm.generate_request(session, [KEY_ID])
        with pytest.raises(ChainInvalid):
            server.handle_license_request(request, 0)

    def test_bad_signature_rejected(self, wired):
        server, clear_cdm, _ = wired
        session = clear_cdm.create_session(SessionType.TEMPORARY)
        request = clear_cdm.generate_request(session, [KEY_ID])
        forged = SignedMessage(request.kind, request.body, b"\x11" * 256)
        with pytest.raises(SignatureInvalid):
            server.handle_license_request(forged, 0)

    def test_raw_content_key_never_in_response_bytes(self, wired):
        server, clear_cdm, _ = wired
        session = clear_cdm.create_session(SessionType.TEMPORARY)
        request = clear_cdm.generate_request(session, [KEY_ID])
        signed = server.handle_license_request(request, 0)
        assert CONTENT_KEY not in protocol.encode_signed_message(signed)


class TestRenewalHandler:
    def _serve_license(self, server, cdm):
        session = cdm.create_session(SessionType.TEMPORARY)
        request = cdm.generate_request(session, [KEY_ID])
        response = server.handle_license_request(request, 0)
        cdm.update(session, response, 0)
        return session

    def test_renewal_round(self, wired):
        server, clear_cdm, _ = wired
        session = self._serve_license(server, clear_cdm)
        session.renewal_due = 5
        [renewal] = clear_cdm.tick(5)
        signed = server.handle_renewal_request(renewal, 5)
        response = protocol.decode_message(MessageKind.RENEWAL_RESPONSE, signed.body)
        assert response.request_id == session.request_id
        assert len(response.updated_ttls) == 1
        assert response.updated_ttls[0][0] == KEY_ID

    def test_unknown_request_id(self, wired):
        server, clear_cdm, _ = wired
        session = self._serve_license(server, clear_cdm)
        session.renewal_due = 5
        [renewal] = clear_cdm.tick(5)
        server.served.clear()
        with pytest.raises(UnknownRequestId):
            server.handle_renewal_request(renewal, 5)

    def test_missing_client_id_when_demanded(self, wired):
        server, clear_cdm, _ = wired
        session = self._serve_license(server, clear_cdm)
        # hand-build a renewal whose policy does not carry the client id
        body = protocol.encode_message(
            RenewalRequest(session.request_id, LicensePolicy(can_renew=True), None)
        )
        renewal = protocol.sign_message(
            MessageKind.RENEWAL_REQUEST, body, clear_cdm.config.device_private_key
        )
        with pytest.raises(PolicyViolated):
            server.handle_renewal_request(renewal, 5)

    def test_client_id_carried_when_demanded(self, wired):
        server, clear_cdm, _ = wired
        session = self._serve_license(server, clear_cdm)
        session.renewal_due = 5
        [renewal] = clear_cdm.tick(5)
        decoded = protocol.decode_message(MessageKind.RENEWAL_REQUEST, renewal.body)
        assert decoded.client_id_payload is not None
        server.handle_renewal_request(renewal, 5)  # accepted


class TestEchoInvariants:
    def test_request_id_echo_across_random_flows(self):
        rng = random.Random(0xEC40)
        for trial in range(10):
            key_id = rng.randbytes(16)
            server, cert = make_license_server(
                policy="can_play=true&can_renew=true&renewal_delay_s=1&always_include_client_id=true",
                content_keys={key_id: rng.randbytes(16)},
                rng=random.Random(trial),
            )
            cid, key = identity.provision_mobile(
                make_keybox(400 + trial), "app", PIXEL7_INFO
            )
            cdm = Cdm(
                CdmConfig(
                    platform=Platform.MOBILE,
                    client_id=cid,
                    device_private_key=key,
                    privacy_mode_enabled=bool(trial % 2),
                    server_certificate=cert,
                    license_server_public_key_der=server.signing_public_key_der,
                ),
                random.Random(500 + trial),
            )
            session = cdm.create_session(SessionType.TEMPORARY)
            request = cdm.generate_request(session, [key_id])
            response = server.handle_license_request(request, 0)
            decoded = protocol.decode_message(MessageKind.LICENSE_RESPONSE, response.body)
            assert decoded.request_id == session.request_id
            cdm.update(session, response, 0)
            [renewal] = cdm.tick(1)
            renewal_response = server.handle_renewal_request(renewal, 1)
            decoded = protocol.decode_message(
                MessageKind.RENEWAL_RESPONSE, renewal_response.body
            )
            assert decoded.request_id == session.request_id
