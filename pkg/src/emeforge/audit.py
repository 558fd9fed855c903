"""Conformance auditor: trace analysis, behavioral probing, fingerprinting.

Findings answer three questions about a browser+CDM combination: does the
license request protect the Client ID (RQ1), does the renewal path protect
it too (RQ2), and does persistent-session data behave like cookies (RQ3).
RQ1/RQ2 verdicts come from wire bytes alone — a violation is only reported
when the recorded message actually decodes to a clear Client ID, never from
heuristics. RQ3 comes from driving a live user-agent through three scripted
scenarios: create-under-cookie-block, reopen-across-origin/profile, and
reopen-after-wipe.

On top of the verdicts, a clear Client ID yields a device fingerprint (the
device certificate serial: unique per mobile device, shared per CDM version
on desktop) and an augmented user-agent string the browser cannot spoof.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import identity, protocol
from .cdm import Platform, SessionType
from .exceptions import NesnMalformed, NotFound, TraceCorrupt
from .identity import ClientId, ClientInfo
from .protocol import ClearClientId, LicenseRequest, MessageKind, RenewalRequest
from .server import LicenseServer, make_license_server
from .useragent import (
    BrowserProfile,
    DIR_EVENT,
    FlowTrace,
    PermissionModel,
    UserAgent,
    get_profile,
)

AUDIT_ORIGIN = "https://audit.example"
AUDIT_ALT_ORIGIN = "https://elsewhere.example"
AUDIT_PROFILE_ID = "default"
AUDIT_ALT_PROFILE_ID = "secondary"

# Renewal is forced a few seconds in so the renewal path gets exercised.
AUDIT_POLICY_QUERY = (
    "can_play=true&can_persist=true&can_renew=true"
    "&renewal_delay_s=2&renewal_retry_interval_s=3&always_include_client_id=true"
    "&license_duration_s=3600"
)

NESN_DESKTOP_SUFFIX_LEN = 30
NESN_MOBILE_SUFFIX_LEN = 64


class Rule(Enum):
    RQ1_CLEAR_CLIENT_ID_IN_LICENSE_REQUEST = "RQ1_CLEAR_CLIENT_ID_IN_LICENSE_REQUEST"
    RQ2_CLEAR_CLIENT_ID_IN_RENEWAL = "RQ2_CLEAR_CLIENT_ID_IN_RENEWAL"
    RQ3_SESSION_DESPITE_COOKIE_BLOCK = "RQ3_SESSION_DESPITE_COOKIE_BLOCK"
    RQ3_SESSION_SURVIVES_WIPE = "RQ3_SESSION_SURVIVES_WIPE"
    RQ3_CROSS_ORIGIN_LEAK = "RQ3_CROSS_ORIGIN_LEAK"
    FP_UNIQUE_CERT_SERIAL = "FP_UNIQUE_CERT_SERIAL"
    UA_CONFLICT = "UA_CONFLICT"
    NESN_DISTINCTIVE_SUFFIX = "NESN_DISTINCTIVE_SUFFIX"
    PERM_SILENT_EME_ACCESS = "PERM_SILENT_EME_ACCESS"
    STORAGE_UI_OMISSION = "STORAGE_UI_OMISSION"


class Severity(Enum):
    INFO = "INFO"
    WARN = "WARN"
    VIOLATION = "VIOLATION"


class Verdict(Enum):
    COMPLIANT = "COMPLIANT"
    NONCOMPLIANT = "NONCOMPLIANT"
    NOT_APPLICABLE = "NOT_APPLICABLE"


class DeviceClass(Enum):
    UNIQUE_DEVICE = "UNIQUE_DEVICE"
    SHARED_PER_CDM_VERSION = "SHARED_PER_CDM_VERSION"


@dataclass(frozen=True)
class Finding:
    rule: Rule
    severity: Severity
    description: str
    evidence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rule": self.rule.value,
            "severity": self.severity.value,
            "description": self.description,
            "evidence": self.evidence,
        }


@dataclass(frozen=True)
class Fingerprint:
    serial_hex: str
    device_class: DeviceClass

    def to_dict(self) -> dict:
        return {"serial_hex": self.serial_hex, "class": self.device_class.value}


@dataclass
class AuditReport:
    subject: str
    findings: list[Finding] = field(default_factory=list)
    verdicts: dict[str, Verdict] = field(default_factory=dict)
    fingerprint: Fingerprint | None = None
    augmented_ua: str | None = None

    @property
    def compliant(self) -> bool:
        return all(
            verdict in (Verdict.COMPLIANT, Verdict.NOT_APPLICABLE)
            for verdict in self.verdicts.values()
        )

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "verdicts": {rq: verdict.value for rq, verdict in self.verdicts.items()},
            "findings": [finding.to_dict() for finding in self.findings],
            "fingerprint": self.fingerprint.to_dict() if self.fingerprint else None,
            "augmented_ua": self.augmented_ua,
        }

    def to_text(self) -> str:
        lines = [f"subject: {self.subject}"]
        for rq in sorted(self.verdicts):
            lines.append(f"  {rq}: {self.verdicts[rq].value}")
        if self.fingerprint:
            lines.append(
                f"  fingerprint: {self.fingerprint.serial_hex}"
                f" ({self.fingerprint.device_class.value})"
            )
        if self.augmented_ua:
            lines.append(f"  augmented_ua: {self.augmented_ua}")
        if self.findings:
            lines.append("  findings:")
            for finding in self.findings:
                lines.append(
                    f"    [{finding.severity.value}] {finding.rule.value}: {finding.description}"
                )
        else:
            lines.append("  findings: none")
        return "\n".join(lines)


def _verdict_from(seen: int, violations: int) -> Verdict:
    if seen == 0:
        return Verdict.NOT_APPLICABLE
    return Verdict.NONCOMPLIANT if violations else Verdict.COMPLIANT


# -- RQ1/RQ2: trace analysis ------------------------------------------------------

def audit_trace(trace: FlowTrace | str | Path, subject: str = "trace") -> AuditReport:
    """Classify every recorded message; violations only on decoded proof."""
    if not isinstance(trace, FlowTrace):
        trace = FlowTrace.load(trace)
    report = AuditReport(subject=subject)
    requests_seen = renewals_seen = 0
    clear_client_id: ClientId | None = None

    for index, record in enumerate(trace.records):
        if record.dir == DIR_EVENT:
            continue
        try:
            sm = protocol.decode_signed_message(record.body)
            message = protocol.decode_message(sm.kind, sm.body)
        except Exception as exc:
            raise TraceCorrupt(f"record {index} does not decode: {exc}") from exc
        evidence = {"record_index": index, "t": record.t, "kind": record.kind}

        if isinstance(message, LicenseRequest):
            requests_seen += 1
            if isinstance(message.client_id_payload, ClearClientId):
                cid = message.client_id_payload.client_id
                clear_client_id = clear_client_id or cid
                report.findings.append(
                    Finding(
                        Rule.RQ1_CLEAR_CLIENT_ID_IN_LICENSE_REQUEST,
                        Severity.VIOLATION,
                        "license request carries the Client ID in clear",
                        evidence
                        | {"serial_hex": cid.chain.device_cert.serial.hex()},
                    )
                )
        elif isinstance(message, RenewalRequest):
            renewals_seen += 1
            if isinstance(message.client_id_payload, ClearClientId):
                cid = message.client_id_payload.client_id
                clear_client_id = clear_client_id or cid
                report.findings.append(
                    Finding(
                        Rule.RQ2_CLEAR_CLIENT_ID_IN_RENEWAL,
                        Severity.VIOLATION,
                        "renewal request carries the Client ID in clear",
                        evidence
                        | {"serial_hex": cid.chain.device_cert.serial.hex()},
                    )
                )
        else:
            ott = getattr(message, "ott_field", None)
            if ott:
                report.findings.extend(_nesn_findings(ott, evidence))

    rq1_violations = sum(
        1
        for f in report.findings
        if f.rule == Rule.RQ1_CLEAR_CLIENT_ID_IN_LICENSE_REQUEST
    )
    rq2_violations = sum(
        1 for f in report.findings if f.rule == Rule.RQ2_CLEAR_CLIENT_ID_IN_RENEWAL
    )
    report.verdicts = {
        "RQ1": _verdict_from(requests_seen, rq1_violations),
        "RQ2": _verdict_from(renewals_seen, rq2_violations),
        "RQ3": Verdict.NOT_APPLICABLE,  # needs behavioral probing, not a trace
    }

    if clear_client_id is not None:
        report.fingerprint = extract_fingerprint(clear_client_id)
        report.augmented_ua = build_augmented_ua(clear_client_id.info)
        report.findings.append(
            Finding(
                Rule.FP_UNIQUE_CERT_SERIAL,
                Severity.WARN
                if report.fingerprint.device_class == DeviceClass.UNIQUE_DEVICE
                else Severity.INFO,
                "device certificate serial observable in clear traffic",
                {"serial_hex": report.fingerprint.serial_hex},
            )
        )
    return report


def _nesn_findings(ott: bytes, evidence: dict) -> list[Finding]:
    try:
        parsed = parse_nesn(ott.decode())
    except (NesnMalformed, UnicodeDecodeError):
        return []  # provider field is opaque; only well-formed serials matter
    return [parsed.finding] if parsed.finding else []


# -- RQ3: behavioral probing -------------------------------------------------------

def _fresh_server(rng: random.Random) -> tuple[LicenseServer, list[bytes]]:
    key_id = rng.randbytes(16)
    server, _ = make_license_server(
        policy="can_play=true&can_persist=true",
        content_keys={key_id: rng.randbytes(16)},
        rng=random.Random(rng.getrandbits(32)),
    )
    return server, [key_id]


def _stored_ids(trace: FlowTrace) -> list[str]:
    import json

    return [
        json.loads(record.body)["session_id"]
        for record in trace.records
        if record.kind == "SESSION_STORED"
    ]


def audit_persistence(
    ua: UserAgent, rng: random.Random | None = None
) -> AuditReport:
    """Run the three cookie-likeness scenarios against a live user agent."""
    profile = ua.profile
    report = AuditReport(subject=profile.name)
    if not profile.eme_supported or not profile.persistent_sessions_supported:
        report.verdicts = {"RQ3": Verdict.NOT_APPLICABLE}
        return report
    rng = rng if rng is not None else random.Random(0xA7D1)
    ever_stored = False

    # 1: persistent session while first-party cookies are blocked
    ua.wipe_all_app_data()
    ua.set_cookies_blocked(True)
    server, key_ids = _fresh_server(rng)
    trace = ua.run_license_flow(
        AUDIT_ORIGIN, AUDIT_PROFILE_ID, server, key_ids, SessionType.PERSISTENT
    )
    for session_id in _stored_ids(trace):
        ever_stored = True
        report.findings.append(
            Finding(
                Rule.RQ3_SESSION_DESPITE_COOKIE_BLOCK,
                Severity.VIOLATION,
                "persistent session stored although first-party cookies are blocked",
                {"scenario": "cookie_block", "session_id": session_id},
            )
        )

    # 2: reopen from a different origin and a different browsing profile
    ua.wipe_all_app_data()
    server, key_ids = _fresh_server(rng)
    trace = ua.run_license_flow(
        AUDIT_ORIGIN, AUDIT_PROFILE_ID, server, key_ids, SessionType.PERSISTENT
    )
    stored = _stored_ids(trace)
    for session_id in stored:
        ever_stored = True
        for origin, profile_id, label in (
            (AUDIT_ALT_ORIGIN, AUDIT_PROFILE_ID, "cross_origin"),
            (AUDIT_ORIGIN, AUDIT_ALT_PROFILE_ID, "cross_profile"),
        ):
            try:
                ua.load_stored_session(origin, profile_id, session_id, now=1)
            except NotFound:
                continue
            report.findings.append(
                Finding(
                    Rule.RQ3_CROSS_ORIGIN_LEAK,
                    Severity.VIOLATION,
                    f"stored session reopened from another {label.split('_')[1]}",
                    {"scenario": label, "session_id": session_id},
                )
            )

    # 3: reopen after clearing cookies and site data
    for session_id in stored:
        ua.clear_site_data(AUDIT_ORIGIN, AUDIT_PROFILE_ID)
        try:
            ua.load_stored_session(AUDIT_ORIGIN, AUDIT_PROFILE_ID, session_id, now=1)
        except NotFound:
            continue
        report.findings.append(
            Finding(
                Rule.RQ3_SESSION_SURVIVES_WIPE,
                Severity.VIOLATION,
                "stored session survives clearing cookies and site data",
                {"scenario": "site_data_wipe", "session_id": session_id},
            )
        )

    if ever_stored and not ua.storage_ui_listing(AUDIT_ORIGIN, AUDIT_PROFILE_ID):
        report.findings.append(
            Finding(
                Rule.STORAGE_UI_OMISSION,
                Severity.INFO,
                "stored DRM sessions are invisible in the storage settings UI",
                {"scenario": "storage_ui"},
            )
        )

    ua.wipe_all_app_data()
    violations = sum(
        1 for finding in report.findings if finding.severity == Severity.VIOLATION
    )
    report.verdicts = {"RQ3": Verdict.NONCOMPLIANT if violations else Verdict.COMPLIANT}
    return report


# -- whole-browser audit ------------------------------------------------------------

def audit_browser(
    profile: BrowserProfile | str, seed: int = 0
) -> tuple[AuditReport, FlowTrace]:
    """Simulate one browser end to end and merge trace + probing verdicts."""
    if isinstance(profile, str):
        profile = get_profile(profile)
    rng = random.Random(seed)
    ua = UserAgent(profile, rng=random.Random(rng.getrandbits(64)))

    key_id = rng.randbytes(16)
    server, _ = make_license_server(
        policy=AUDIT_POLICY_QUERY,
        content_keys={key_id: rng.randbytes(16)},
        rng=random.Random(rng.getrandbits(32)),
    )
    trace = ua.run_license_flow(
        AUDIT_ORIGIN, AUDIT_PROFILE_ID, server, [key_id], SessionType.PERSISTENT
    )
    report = audit_trace(trace, subject=profile.name)
    persistence = audit_persistence(ua, rng=random.Random(rng.getrandbits(32)))
    report.findings.extend(persistence.findings)
    report.verdicts["RQ3"] = persistence.verdicts["RQ3"]

    if profile.eme_supported and profile.permission_model == PermissionModel.DEFAULT_ALLOW:
        report.findings.append(
            Finding(
                Rule.PERM_SILENT_EME_ACCESS,
                Severity.WARN,
                "content protection access is granted to all origins without a prompt",
                {"permission_model": profile.permission_model.value},
            )
        )
    return report, trace


# -- fingerprinting and the augmented UA ----------------------------------------------

def extract_fingerprint(
    cid: ClientId, platform: Platform | None = None
) -> Fingerprint:
    if platform is None:
        mobile = identity.is_mobile_profile(cid.info)
    else:
        mobile = platform == Platform.MOBILE
    return Fingerprint(
        serial_hex=cid.chain.device_cert.serial.hex(),
        device_class=DeviceClass.UNIQUE_DEVICE
        if mobile
        else DeviceClass.SHARED_PER_CDM_VERSION,
    )


def build_augmented_ua(info: ClientInfo) -> str:
    """Render Client Info as a user-agent-shaped string the page cannot alter.

    Grammar: "(<platform-or-build>; <architecture>; <model>) CDM/<version>
    App/<application>"; absent pieces drop out without leaving separators.
    """
    segments = [
        info.platform_name if info.platform_name else info.build_info,
        info.architecture,
        info.model_name,
    ]
    inner = "; ".join(s for s in segments if s)
    parts = [f"({inner})"]
    if info.cdm_version:
        parts.append(f"CDM/{info.cdm_version}")
    if info.application_name:
        parts.append(f"App/{info.application_name}")
    return " ".join(parts)


# token dictionaries for coarse device-class comparison; order matters, the
# first match wins (android before linux: Android UAs contain "Linux")
_OS_TOKENS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("android", ("android",)),
    ("ios", ("iphone", "ipad", "ipod")),
    ("windows", ("windows", "win64", "win32")),
    ("macos", ("mac os x", "macintosh", "macos", "darwin")),
    ("linux", ("linux", "x11")),
)
_ARCH_TOKENS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("x64", ("x86_64", "x86-64", "win64", "amd64", "x64")),
    ("arm64", ("aarch64", "arm64-v8a", "arm64")),
    ("x86", ("i686", "i386", "x86")),
    ("arm", ("armv7", "armeabi", "arm")),
)


def _classify(text: str, table: tuple[tuple[str, tuple[str, ...]], ...]) -> str | None:
    lowered = text.lower()
    for label, tokens in table:
        if any(token in lowered for token in tokens):
            return label
    return None


def _info_os_family(info: ClientInfo) -> str | None:
    if identity.is_mobile_profile(info):
        return "android"
    if info.platform_name:
        return _classify(info.platform_name, _OS_TOKENS)
    return None


def detect_ua_conflict(claimed_ua: str, info: ClientInfo) -> Finding | None:
    """Flag a claimed UA whose device class contradicts the Client Info."""
    claimed_os = _classify(claimed_ua, _OS_TOKENS)
    claimed_arch = _classify(claimed_ua, _ARCH_TOKENS)
    info_os = _info_os_family(info)
    info_arch = _classify(info.architecture, _ARCH_TOKENS)

    conflicts: list[str] = []
    if claimed_os and info_os and claimed_os != info_os:
        conflicts.append(f"os {claimed_os!r} vs {info_os!r}")
    if claimed_arch and info_arch and claimed_arch != info_arch:
        conflicts.append(f"architecture {claimed_arch!r} vs {info_arch!r}")
    if (
        not conflicts
        and "mobile" in claimed_ua.lower()
        and info_os
        and not identity.is_mobile_profile(info)
    ):
        conflicts.append("mobile token vs desktop Client Info")
    if not conflicts:
        return None
    return Finding(
        Rule.UA_CONFLICT,
        Severity.WARN,
        f"claimed user agent contradicts Client Info ({'; '.join(conflicts)})",
        {"claimed_ua": claimed_ua, "info_os": info_os, "info_arch": info_arch},
    )


# -- provider equipment serial (OTT field) ---------------------------------------------

_NESN_RE = re.compile(
    r"([A-Za-z0-9]+)-([A-Za-z0-9.]+)-([A-Za-z0-9]+)-([A-Za-z0-9]+)-([A-Za-z0-9]+)"
)

_DESKTOP_CATEGORIES = {"CHROMECDM"}


@dataclass(frozen=True)
class NesnParse:
    category: str
    oemcrypto_version: str
    manufacturer: str
    model: str
    random_suffix: str
    finding: Finding | None


def parse_nesn(nesn: str) -> NesnParse:
    """Parse CATEGORY-OEMCRYPTOVER-MANUFACTURER-MODEL-SUFFIX serials.

    Desktop-class serials (category ChromeCDM) are flagged at suffixes of 30
    characters and up; mobile-class serials escalate to a violation at 64,
    where the suffix is unique per device and survives data wipes.
    """
    match = _NESN_RE.fullmatch(nesn.strip())
    if not match:
        raise NesnMalformed("expected five dash-separated alphanumeric segments")
    category, version, manufacturer, model, suffix = match.groups()
    desktop = category.upper() in _DESKTOP_CATEGORIES
    finding = None
    if desktop and len(suffix) >= NESN_DESKTOP_SUFFIX_LEN:
        finding = Finding(
            Rule.NESN_DISTINCTIVE_SUFFIX,
            Severity.WARN,
            f"desktop equipment serial ends in a {len(suffix)}-char distinctive suffix",
            {"category": category, "suffix_length": len(suffix)},
        )
    elif not desktop and len(suffix) >= NESN_MOBILE_SUFFIX_LEN:
        finding = Finding(
            Rule.NESN_DISTINCTIVE_SUFFIX,
            Severity.VIOLATION,
            f"mobile equipment serial ends in a {len(suffix)}-char unique suffix",
            {"category": category, "suffix_length": len(suffix)},
        )
    return NesnParse(category, version, manufacturer, model, suffix, finding)


# -- stateful tracking -------------------------------------------------------------------

def track_sessions(
    known_ids: list[str], ua: UserAgent, origin: str, profile_id: str, now: int = 0
) -> list[str]:
    """Probe stored sessions by id; every hit marks a returning visitor."""
    matched = []
    seen = set()
    for session_id in known_ids:
        if session_id in seen:
            continue
        seen.add(session_id)
        try:
            ua.load_stored_session(origin, profile_id, session_id, now)
        except NotFound:
            continue
        matched.append(session_id)
    return matched
