"""Simulated browsers: permission models, key-system access, license flows,
per-origin/per-profile session storage, and the preset behavior table.

Presets are data, not code branches: each names a real browser build and
pins the handful of behaviors that differ between them — whether the
media-key API exists at all, which permission model gates it, whether the
embedder opts into mobile privacy mode, whether persistent sessions are
supported, and the two storage quirks (ignoring the first-party cookie
block, surviving a site-data wipe). Everything else falls out of the CDM
configuration derived from the platform.

A flow writes every message it saw into a FlowTrace: line-delimited JSON
records carrying virtual time, direction, message kind, and the raw bytes
base-64 encoded. The auditor works from those bytes alone.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from random import Random
from typing import Callable, Iterator

from . import crypto, identity, privacy, protocol
from .cdm import Cdm, CdmConfig, Platform, Session, SessionType, encode_session_blob
from .exceptions import (
    EmeForgeError,
    EmeUnsupported,
    NotFound,
    PermissionDenied,
    TraceCorrupt,
)
from .identity import ClientInfo, DeviceKeybox
from .server import LicenseServer

MOBILE_CDM_VERSION = "17.0.0"
WINDOWS_CDM_VERSION = "4.10.2652.0"
LINUX_CDM_VERSION = "4.10.2557.0"

MOBILE_BUILD_INFO = (
    "google/panther/panther:13/TQ2A.230505.002/8940162:user/release-keys"
)
MOBILE_OEM_BUILD_INFO = "OEMCrypto Level3 Code May 20 2022 21:36:542"


class PermissionModel(Enum):
    DEFAULT_ALLOW = "default_allow"        # silent grant, any origin
    PER_ORIGIN_PROMPT = "per_origin_prompt"  # one prompt per origin
    GLOBAL_GRANT = "global_grant"          # first grant covers every origin


@dataclass(frozen=True)
class BrowserProfile:
    name: str
    eme_supported: bool
    platform: Platform
    permission_model: PermissionModel
    mobile_privacy_mode_set: bool = False
    persistent_sessions_supported: bool = False
    quirk_sessions_ignore_cookie_block: bool = False
    quirk_sessions_survive_site_data_wipe: bool = False
    application_name: str | None = None
    os_name: str | None = None
    cdm_version: str = MOBILE_CDM_VERSION


def _desktop(name: str, os_name: str, persistent: bool, model: PermissionModel) -> BrowserProfile:
    vmp = os_name == "Windows"
    return BrowserProfile(
        name=name,
        eme_supported=True,
        platform=Platform.DESKTOP_VMP if vmp else Platform.DESKTOP_NON_VMP,
        permission_model=model,
        persistent_sessions_supported=persistent,
        os_name=os_name,
        cdm_version=WINDOWS_CDM_VERSION if vmp else LINUX_CDM_VERSION,
    )


def _mobile(
    name: str,
    application_name: str,
    privacy_set: bool,
    persistent: bool,
    model: PermissionModel,
    quirks: bool = False,
) -> BrowserProfile:
    return BrowserProfile(
        name=name,
        eme_supported=True,
        platform=Platform.MOBILE,
        permission_model=model,
        mobile_privacy_mode_set=privacy_set,
        persistent_sessions_supported=persistent,
        quirk_sessions_ignore_cookie_block=quirks,
        quirk_sessions_survive_site_data_wipe=quirks,
        application_name=application_name,
        cdm_version=MOBILE_CDM_VERSION,
    )


def _unsupported(name: str, platform: Platform, application_name: str | None = None) -> BrowserProfile:
    return BrowserProfile(
        name=name,
        eme_supported=False,
        platform=platform,
        permission_model=PermissionModel.PER_ORIGIN_PROMPT,
        application_name=application_name,
        os_name="Linux" if platform != Platform.MOBILE else None,
    )


_ALLOW = PermissionModel.DEFAULT_ALLOW
_PROMPT = PermissionModel.PER_ORIGIN_PROMPT
_GLOBAL = PermissionModel.GLOBAL_GRANT

PRESETS: dict[str, BrowserProfile] = {
    p.name: p
    for p in (
        # desktop, Chromium family on Windows (integrity-checked)
        _desktop("chrome_desktop_windows", "Windows", True, _ALLOW),
        _desktop("edge_desktop_windows", "Windows", True, _ALLOW),
        _desktop("opera_desktop_windows", "Windows", True, _ALLOW),
        # desktop on Linux (no integrity support)
        _desktop("firefox_linux", "Linux", False, _GLOBAL),
        _desktop("brave_desktop_linux", "Linux", False, _ALLOW),
        _unsupported("tor_desktop", Platform.DESKTOP_NON_VMP),
        # Android, Chromium family
        _mobile("chrome_android", "com.android.chrome", True, True, _ALLOW),
        _mobile("edge_android", "com.microsoft.emmx", True, True, _ALLOW),
        _mobile("samsung_android", "com.sec.android.app.sbrowser", True, True, _ALLOW, quirks=True),
        _mobile("opera_android", "com.opera.browser", True, True, _ALLOW, quirks=True),
        _unsupported("brave_android", Platform.MOBILE, "com.brave.browser"),
        # Android, Firefox family
        _mobile("firefox_android", "org.mozilla.firefox", False, False, _PROMPT),
        _mobile("firefox_focus_android", "org.mozilla.focus", False, False, _PROMPT),
        _mobile("ghostery_android", "com.ghostery.android.ghostery", False, False, _PROMPT),
        _unsupported("tor_android", Platform.MOBILE, "org.torproject.torbrowser"),
    )
}

PRESET_ALIASES = {
    "chrome_desktop": "chrome_desktop_windows",
    "edge_desktop": "edge_desktop_windows",
    "opera_desktop": "opera_desktop_windows",
    "firefox_desktop": "firefox_linux",
    "brave_desktop": "brave_desktop_linux",
}


def get_profile(name: str) -> BrowserProfile:
    resolved = PRESET_ALIASES.get(name, name)
    try:
        return PRESETS[resolved]
    except KeyError:
        raise KeyError(
            f"unknown browser profile {name!r}; known: {', '.join(sorted(PRESETS))}"
        ) from None


def build_client_info(profile: BrowserProfile) -> ClientInfo:
    if profile.platform == Platform.MOBILE:
        app = profile.application_name or "unknown.app"
        cert_hash = base64.b64encode(
            crypto.hmac_sha256(b"apk-signing-cert", app.encode())[:15]
        ).decode()
        return ClientInfo(
            architecture="arm64-v8a",
            company_name="Google",
            device_name="panther",
            product_name="panther",
            model_name="Pixel 7",
            application_name=app,
            package_cert_hash=cert_hash,
            build_info=MOBILE_BUILD_INFO,
            cdm_version=profile.cdm_version,
            security_patch_level=0,
            oem_build_info=MOBILE_OEM_BUILD_INFO,
        )
    return ClientInfo(
        architecture="x64",
        company_name="Google",
        product_name="ChromeCDM",
        model_name="ChromeCDM",
        platform_name=profile.os_name or "Linux",
        cdm_version=profile.cdm_version,
    )


# -- flow traces -----------------------------------------------------------------

DIR_CLIENT_TO_SERVER = "c2s"
DIR_SERVER_TO_CLIENT = "s2c"
DIR_EVENT = "event"


@dataclass(frozen=True)
class TraceRecord:
    t: int
    dir: str
    kind: str
    body: bytes

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": self.t,
                "dir": self.dir,
                "kind": self.kind,
                "body_b64": base64.b64encode(self.body).decode(),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceRecord":
        try:
            raw = json.loads(line)
            return cls(
                t=int(raw["t"]),
                dir=str(raw["dir"]),
                kind=str(raw["kind"]),
                body=base64.b64decode(raw["body_b64"], validate=True),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise TraceCorrupt(f"bad trace record: {exc}") from exc


@dataclass
class FlowTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def add_message(self, t: int, direction: str, sm: protocol.SignedMessage) -> None:
        self.records.append(
            TraceRecord(t, direction, sm.kind.name, protocol.encode_signed_message(sm))
        )

    def add_event(self, t: int, kind: str, detail: dict | None = None) -> None:
        body = json.dumps(detail or {}, sort_keys=True).encode()
        self.records.append(TraceRecord(t, DIR_EVENT, kind, body))

    def messages(self) -> Iterator[TraceRecord]:
        for record in self.records:
            if record.dir != DIR_EVENT:
                yield record

    def dumps(self) -> str:
        return "".join(record.to_json() + "\n" for record in self.records)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "FlowTrace":
        records = [
            TraceRecord.from_json(line) for line in text.splitlines() if line.strip()
        ]
        return cls(records)

    @classmethod
    def load(cls, path: str | Path) -> "FlowTrace":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise TraceCorrupt(f"cannot read trace: {exc}") from exc
        return cls.loads(text)


# -- site data --------------------------------------------------------------------

@dataclass(frozen=True)
class OriginProfileKey:
    origin: str
    profile_id: str


@dataclass
class SiteDataStore:
    cookies_blocked: bool = False
    sessions: dict[OriginProfileKey, dict[str, bytes]] = field(default_factory=dict)
    permission_grants: set = field(default_factory=set)


@dataclass(frozen=True)
class AccessHandle:
    origin: str
    profile_id: str
    persistent: bool


_GLOBAL_GRANT_KEY = ("*", "*")


class UserAgent:
    """One simulated browser instance embedding one CDM."""

    def __init__(
        self,
        profile: BrowserProfile | str,
        rng: Random | None = None,
        permission_script: Callable[[str], bool] | None = None,
    ):
        if isinstance(profile, str):
            profile = get_profile(profile)
        self.profile = profile
        self.rng = rng if rng is not None else Random(0)
        self.permission_script = permission_script or (lambda origin: True)
        self.store = SiteDataStore()
        self.prompt_count = 0
        self.cdm: Cdm | None = None
        if profile.eme_supported:
            self.cdm = self._build_cdm()

    def _build_cdm(self) -> Cdm:
        info = build_client_info(self.profile)
        if self.profile.platform == Platform.MOBILE:
            self.keybox = DeviceKeybox(
                device_id=self.rng.randbytes(32), seed=self.rng.randbytes(32)
            )
            cid, key = identity.provision_mobile(
                self.keybox, info.application_name or "", info
            )
        else:
            cid, key = identity.provision_desktop(self.profile.cdm_version, info)
        config = CdmConfig(
            platform=self.profile.platform,
            client_id=cid,
            device_private_key=key,
            server_certificate=privacy.default_service_certificate(),
        )
        cdm = Cdm(config, Random(self.rng.getrandbits(64)))
        if (
            self.profile.platform == Platform.MOBILE
            and self.profile.mobile_privacy_mode_set
        ):
            cdm.set_privacy_mode(True)
        return cdm

    # -- permissions ---------------------------------------------------------

    def request_key_system_access(
        self, origin: str, profile_id: str, persistent: bool = False
    ) -> AccessHandle:
        if not self.profile.eme_supported or self.cdm is None:
            raise EmeUnsupported(f"{self.profile.name} does not support the media-key API")
        model = self.profile.permission_model
        if model == PermissionModel.DEFAULT_ALLOW:
            pass  # content protection allowed for all origins, no prompt
        elif model == PermissionModel.PER_ORIGIN_PROMPT:
            key = (profile_id, origin)
            if key not in self.store.permission_grants:
                self.prompt_count += 1
                if not self.permission_script(origin):
                    raise PermissionDenied(f"{origin} refused by user")
                self.store.permission_grants.add(key)
        else:  # GLOBAL_GRANT
            if _GLOBAL_GRANT_KEY not in self.store.permission_grants:
                self.prompt_count += 1
                if not self.permission_script(origin):
                    raise PermissionDenied(f"{origin} refused by user")
                self.store.permission_grants.add(_GLOBAL_GRANT_KEY)
        return AccessHandle(
            origin=origin,
            profile_id=profile_id,
            persistent=persistent and self.profile.persistent_sessions_supported,
        )

    # -- flows ------------------------------------------------------------------

    def run_license_flow(
        self,
        origin: str,
        profile_id: str,
        server: LicenseServer,
        key_ids: list[bytes],
        session_type: SessionType,
        now: int = 0,
        renewal_rounds: int = 1,
    ) -> FlowTrace:
        """Drive one acquisition-renewal-close cycle and record every message."""
        trace = FlowTrace()
        try:
            handle = self.request_key_system_access(
                origin, profile_id, persistent=session_type == SessionType.PERSISTENT
            )
        except EmeUnsupported as exc:
            trace.add_event(now, "EME_UNSUPPORTED", {"reason": str(exc)})
            return trace
        except PermissionDenied as exc:
            trace.add_event(now, "PERMISSION_DENIED", {"reason": str(exc)})
            return trace
        trace.add_event(now, "ACCESS_GRANTED", {"origin": origin, "persistent": handle.persistent})

        assert self.cdm is not None
        self.cdm.config.license_server_public_key_der = server.signing_public_key_der
        session = self.cdm.create_session(
            SessionType.PERSISTENT if handle.persistent else SessionType.TEMPORARY
        )
        t = now
        try:
            request = self.cdm.generate_request(session, key_ids)
            trace.add_message(t, DIR_CLIENT_TO_SERVER, request)
            response = server.handle_license_request(request, t)
            trace.add_message(t, DIR_SERVER_TO_CLIENT, response)
            self.cdm.update(session, response, t)

            for _ in range(renewal_rounds):
                if session.renewal_due is None:
                    break
                t = session.renewal_due
                for renewal in self.cdm.tick(t):
                    trace.add_message(t, DIR_CLIENT_TO_SERVER, renewal)
                    renewal_response = server.handle_renewal_request(renewal, t)
                    trace.add_message(t, DIR_SERVER_TO_CLIENT, renewal_response)
                    self.cdm.update(session, renewal_response, t)
        except EmeForgeError as exc:
            trace.add_event(t, "ERROR", {"error": type(exc).__name__, "detail": str(exc)})
            return trace

        session_id_hex = session.session_id_hex
        blob = self.cdm.close_session(session)
        if blob is not None and self._may_store_sessions():
            key = OriginProfileKey(origin, profile_id)
            self.store.sessions.setdefault(key, {})[session_id_hex] = (
                encode_session_blob(blob)
            )
            trace.add_event(t, "SESSION_STORED", {"session_id": session_id_hex})
        else:
            trace.add_event(t, "SESSION_CLOSED", {"session_id": session_id_hex})
        return trace

    def _may_store_sessions(self) -> bool:
        if not self.profile.persistent_sessions_supported:
            return False
        return (
            not self.store.cookies_blocked
            or self.profile.quirk_sessions_ignore_cookie_block
        )

    # -- stored sessions -----------------------------------------------------------

    def load_stored_session(
        self, origin: str, profile_id: str, session_id_hex: str, now: int = 0
    ) -> Session:
        """Reopen a stored session; fails as plain NotFound for every reason."""
        blobs = self.store.sessions.get(OriginProfileKey(origin, profile_id), {})
        data = blobs.get(session_id_hex)
        if data is None or self.cdm is None:
            raise NotFound("no such stored session")
        try:
            return self.cdm.load_session(data, now)
        except EmeForgeError as exc:
            raise NotFound("no such stored session") from exc

    def storage_ui_listing(self, origin: str, profile_id: str) -> list[str]:
        """What the browser's storage UI shows for stored DRM sessions: nothing."""
        return []

    # -- data removal ------------------------------------------------------------

    def set_cookies_blocked(self, blocked: bool) -> None:
        self.store.cookies_blocked = blocked

    def clear_site_data(self, origin: str, profile_id: str) -> None:
        if self.profile.quirk_sessions_survive_site_data_wipe:
            return  # sessions outlive the wipe on these browsers
        self.store.sessions.pop(OriginProfileKey(origin, profile_id), None)

    def wipe_all_app_data(self) -> None:
        """Full application reset: sessions, grants, and settings all go."""
        self.store = SiteDataStore()
