"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them live). Time budgets are asserted
where the criterion states one.
"""

from __future__ import annotations

import json
import random
import time
from contextlib import contextmanager

import pytest

from emeforge import cli, identity, protocol
from emeforge.audit import (
    Severity,
    build_augmented_ua,
    detect_ua_conflict,
    parse_nesn,
    track_sessions,
)
from emeforge.cdm import Cdm, CdmConfig, Platform, SessionType
from emeforge.exceptions import CertificateUnverified, NotFound
from emeforge.privacy import (
    decrypt_client_id,
    default_provider_private_key,
    default_service_certificate,
    encrypt_client_id,
)
from emeforge.protocol import (
    ClearClientId,
    EncryptedClientId,
    LicensePolicy,
    MessageKind,
)
from emeforge.server import make_license_server
from emeforge.useragent import SiteDataStore, UserAgent, get_profile

from conftest import LINUX_INFO, PIXEL7_INFO, make_keybox
from test_audit import EXPECTED_MATRIX


@contextmanager
def criterion(name: str):
    started = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name} ({time.monotonic() - started:.2f}s)")


def test_criterion_1_policy_code_byte_exactness():
    """Every policy field's wire key reproduces its published code byte."""
    with criterion("criterion 1: policy code byte exactness"):
        started = time.monotonic()
        expected_prefixes = [
            b"\x08", b"\x10", b"\x18", b"\x20", b"\x28", b"\x30", b"\x38",
            b"\x42", b"\x48", b"\x50", b"\x58", b"\x60", b"\x70", b"\x78",
            b"\x80\x01",
        ]
        policy = LicensePolicy(
            can_play=True,
            can_persist=True,
            can_renew=True,
            rental_duration_s=11,
            playback_duration_s=22,
            license_duration_s=33,
            renewal_recovery_duration_s=44,
            renewal_server_url="https://renew.example",
            renewal_delay_s=55,
            renewal_retry_interval_s=66,
            renew_with_usage=True,
            always_include_client_id=True,
            soft_enforce_playback_duration=True,
            soft_enforce_rental_duration=True,
            watermarking_control=77,
        )
        data = protocol.encode_policy(policy)
        offset = 0
        for prefix in expected_prefixes:
            assert data[offset : offset + len(prefix)] == prefix, (
                f"expected key {prefix.hex()} at offset {offset}, "
                f"got {data[offset:offset + 2].hex()}"
            )
            offset += len(prefix)
            if prefix == b"\x42":
                offset += 1 + data[offset]
            else:
                while data[offset] & 0x80:
                    offset += 1
                offset += 1
        assert offset == len(data)
        assert protocol.decode_policy(data) == policy
        assert time.monotonic() - started < 1.0


def test_criterion_2_results_matrix(capsys):
    """cmd_audit --profile over all 15 presets reproduces the results matrix."""
    with criterion("criterion 2: per-browser verdict matrix via cmd_audit"):
        started = time.monotonic()
        for name, expected in sorted(EXPECTED_MATRIX.items()):
            code = cli.main(["audit", "--profile", name, "--format", "json"])
            report = json.loads(capsys.readouterr().out)
            actual = tuple(report["verdicts"][rq] for rq in ("RQ1", "RQ2", "RQ3"))
            assert actual == expected, f"{name}: {actual} != {expected}"
            expect_fail = "NONCOMPLIANT" in expected
            assert code == (cli.EXIT_NONCOMPLIANT if expect_fail else cli.EXIT_OK), name
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"matrix took {elapsed:.1f}s"


def test_criterion_3_privacy_mode_round_trip():
    """100 randomized Client IDs encrypt/decrypt; envelopes pairwise distinct."""
    with criterion("criterion 3: privacy mode round trip"):
        started = time.monotonic()
        rng = random.Random(0xC3)
        cert = default_service_certificate()
        provider_key = default_provider_private_key()
        triples = set()
        for index in range(100):
            keybox = make_keybox(10_000 + index)
            app = f"com.app.{rng.randrange(5)}"
            cid, _ = identity.provision_mobile(keybox, app, PIXEL7_INFO)
            envelope = encrypt_client_id(cid, cert, rng)
            recovered = decrypt_client_id(envelope, provider_key)
            assert identity.encode_client_id(recovered) == identity.encode_client_id(cid)
            triples.add((envelope.wrapped_key, envelope.iv, envelope.ciphertext))
        assert len(triples) == 100

        bogus = identity.crypto.derive_rsa_private_key(b"bogus-provider")
        from emeforge.privacy import ServerCertificate

        unverified = ServerCertificate(
            "bogus.example",
            identity.crypto.public_key_der(bogus.public_key()),
            b"\x00" * 256,
        )
        cid, _ = identity.provision_mobile(make_keybox(1), "app", PIXEL7_INFO)
        for _ in range(5):
            with pytest.raises(CertificateUnverified):
                encrypt_client_id(cid, unverified, rng)
        elapsed = time.monotonic() - started
        assert elapsed < 10.0, f"round trips took {elapsed:.1f}s"


def test_criterion_4_fingerprint_uniqueness_and_stability():
    """1000 mobile devices -> 1000 serials; reprovision stable; desktop shared."""
    with criterion("criterion 4: fingerprint uniqueness and stability"):
        started = time.monotonic()
        serials = set()
        sample_keybox = None
        for index in range(1000):
            keybox = make_keybox(20_000 + index)
            if index == 137:
                sample_keybox = keybox
            cid, _ = identity.provision_mobile(keybox, "com.ott.app", PIXEL7_INFO)
            serials.add(cid.chain.device_cert.serial)
        assert len(serials) == 1000, f"collisions: {1000 - len(serials)}"

        reference = None
        for _ in range(10):
            cid, _ = identity.provision_mobile(sample_keybox, "com.ott.app", PIXEL7_INFO)
            blob = identity.encode_client_id(cid)
            reference = reference or blob
            assert blob == reference

        a, _ = identity.provision_desktop(LINUX_INFO.cdm_version, LINUX_INFO)
        b, _ = identity.provision_desktop(LINUX_INFO.cdm_version, LINUX_INFO)
        assert identity.encode_chain(a.chain) == identity.encode_chain(b.chain)
        elapsed = time.monotonic() - started
        assert elapsed < 60.0, f"provisioning took {elapsed:.1f}s"


def _renewal_bench(gap: bool):
    server, cert = make_license_server(
        policy=(
            "can_play=true&can_renew=true&renewal_delay_s=2"
            "&renewal_retry_interval_s=3&always_include_client_id=true"
        ),
        content_keys={b"\x01" * 16: b"\x02" * 16},
        rng=random.Random(80),
    )
    cid, key = identity.provision_desktop(
        "4.10.2652.0",
        identity.ClientInfo(
            architecture="x64",
            company_name="Google",
            product_name="ChromeCDM",
            model_name="ChromeCDM",
            platform_name="Windows",
            cdm_version="4.10.2652.0",
        ),
    )
    cdm = Cdm(
        CdmConfig(
            platform=Platform.DESKTOP_VMP,
            client_id=cid,
            device_private_key=key,
            vmp_renewal_privacy_gap=gap,
            server_certificate=cert,
            license_server_public_key_der=server.signing_public_key_der,
        ),
        random.Random(81),
    )
    return cdm, server


def test_criterion_5_renewal_timing():
    """Renewals at t=2,5,8 until a response; gap toggles clear vs encrypted."""
    with criterion("criterion 5: renewal timing and the renewal privacy gap"):
        for gap, expect_clear in ((True, True), (False, False)):
            cdm, server = _renewal_bench(gap)
            session = cdm.create_session(SessionType.TEMPORARY)
            request = cdm.generate_request(session, [b"\x01" * 16])
            cdm.update(session, server.handle_license_request(request, 0), 0)

            emissions: dict[int, protocol.SignedMessage] = {}
            for t in range(0, 9):
                for sm in cdm.tick(t):
                    assert t not in emissions
                    emissions[t] = sm
            assert sorted(emissions) == [2, 5, 8], sorted(emissions)

            for sm in emissions.values():
                renewal = protocol.decode_message(MessageKind.RENEWAL_REQUEST, sm.body)
                assert renewal.client_id_payload is not None
                assert isinstance(renewal.client_id_payload, ClearClientId) == expect_clear
                assert isinstance(renewal.client_id_payload, EncryptedClientId) == (
                    not expect_clear
                )

            # a renewal response lands at t=8; the schedule restarts at 8+2
            cdm.update(session, server.handle_renewal_request(emissions[8], 8), 8)
            assert cdm.tick(9) == []
            assert session.renewal_due == 10
            assert len(cdm.tick(10)) == 1


def _store_session(name: str, seed: int):
    ua = UserAgent(get_profile(name), rng=random.Random(seed))
    rng = random.Random(seed + 1)
    key_id = rng.randbytes(16)
    server, _ = make_license_server(
        policy="can_play=true&can_persist=true",
        content_keys={key_id: rng.randbytes(16)},
        rng=rng,
    )
    trace = ua.run_license_flow(
        "https://origin-a.example", "P", server, [key_id], SessionType.PERSISTENT
    )
    stored = [
        json.loads(record.body)["session_id"]
        for record in trace.records
        if record.kind == "SESSION_STORED"
    ]
    assert len(stored) == 1
    return ua, stored[0]


def test_criterion_6_persistent_session_tracking():
    """Stored ids are origin+profile bound; wipes behave per preset."""
    with criterion("criterion 6: persistent-session tracking"):
        rng = random.Random(0xC6)

        ua, stored = _store_session("chrome_desktop_windows", 600)
        probe = [rng.randbytes(16).hex() for _ in range(99)] + [stored]
        rng.shuffle(probe)
        assert track_sessions(probe, ua, "https://origin-a.example", "P", now=1) == [stored]
        assert track_sessions(probe, ua, "https://origin-b.example", "P", now=1) == []
        assert track_sessions(probe, ua, "https://origin-a.example", "Q", now=1) == []

        # compliant preset: clearing site data removes the session
        ua.clear_site_data("https://origin-a.example", "P")
        assert track_sessions([stored], ua, "https://origin-a.example", "P", now=1) == []

        # quirky presets: the session survives the clear, dies on full wipe
        for name, seed in (("opera_android", 601), ("samsung_android", 602)):
            quirky, stored = _store_session(name, seed)
            quirky.clear_site_data("https://origin-a.example", "P")
            assert track_sessions(
                [stored], quirky, "https://origin-a.example", "P", now=1
            ) == [stored]
            quirky.wipe_all_app_data()
            assert (
                track_sessions([stored], quirky, "https://origin-a.example", "P", now=1)
                == []
            )


def test_criterion_7_ua_conflict_and_nesn():
    """Spoofed UA detected against mobile info; serial suffix thresholds."""
    with criterion("criterion 7: augmented-UA conflicts and serial parsing"):
        windows_ua = (
            "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 "
            "(KHTML, like Gecko) Chrome/113.0.0.0 Safari/537.36"
        )
        finding = detect_ua_conflict(windows_ua, PIXEL7_INFO)
        assert finding is not None

        rendered = f"Mozilla/5.0 {build_augmented_ua(PIXEL7_INFO)}"
        assert detect_ua_conflict(rendered, PIXEL7_INFO) is None
        rendered = f"Mozilla/5.0 {build_augmented_ua(LINUX_INFO)}"
        assert detect_ua_conflict(rendered, LINUX_INFO) is None

        mobile = parse_nesn("Smartphones-16.1.0-GOOGLE-PIXEL7-" + "Z" * 64)
        assert mobile.finding is not None
        assert mobile.finding.severity == Severity.VIOLATION
        desktop = parse_nesn("ChromeCDM-16.1.0-GOOGLE-DESKTOP-" + "Z" * 30)
        assert desktop.finding is not None
        assert desktop.finding.severity == Severity.WARN


def test_criterion_8_key_confidentiality():
    """200 randomized flows; responses never contain raw key bytes."""
    with criterion("criterion 8: content keys never serialized in clear"):
        rng = random.Random(0xC8)
        identities = [
            identity.provision_mobile(make_keybox(30_000 + i), "app", PIXEL7_INFO)
            for i in range(6)
        ] + [
            identity.provision_desktop(LINUX_INFO.cdm_version, LINUX_INFO),
        ]
        cert = default_service_certificate()
        for flow in range(200):
            cid, device_key = identities[rng.randrange(len(identities))]
            platform = (
                Platform.MOBILE
                if identity.is_mobile_profile(cid.info)
                else rng.choice([Platform.DESKTOP_VMP, Platform.DESKTOP_NON_VMP])
            )
            content_keys = {
                rng.randbytes(16): rng.randbytes(16)
                for _ in range(rng.randint(1, 3))
            }
            policy = (
                "can_play=true"
                f"&can_persist={'true' if rng.random() < 0.5 else 'false'}"
                f"&license_duration_s={rng.randrange(0, 7200)}"
            )
            server, _ = make_license_server(
                policy=policy,
                content_keys=content_keys,
                rng=random.Random(rng.getrandbits(32)),
            )
            cdm = Cdm(
                CdmConfig(
                    platform=platform,
                    client_id=cid,
                    device_private_key=device_key,
                    privacy_mode_enabled=rng.random() < 0.5,
                    server_certificate=cert,
                    license_server_public_key_der=server.signing_public_key_der,
                ),
                random.Random(rng.getrandbits(32)),
            )
            session = cdm.create_session(SessionType.TEMPORARY)
            request = cdm.generate_request(session, list(content_keys))
            response = server.handle_license_request(request, 0)
            wire = protocol.encode_signed_message(response)
            for raw_key in content_keys.values():
                assert raw_key not in wire, f"flow {flow} leaked a content key"
            cdm.update(session, response, 0)
            for key_id, raw_key in content_keys.items():
                assert session.key_wallet[key_id].key == raw_key
