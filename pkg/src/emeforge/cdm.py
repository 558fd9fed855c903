"""CDM state machine: sessions, requests, renewals, persistence.

One Cdm instance models the decryption module a browser embeds. Sessions
are isolated key wallets with a CREATED -> PENDING -> ACTIVE -> CLOSED
lifecycle. All timing is virtual: callers pass monotonic integer seconds
into update/tick/load, and the instance remembers the latest time it has
seen for expiry checks inside decrypt_sample.

Whether a Client ID leaves the device clear or encrypted is a pure function
of configuration. Desktop CDMs derive privacy mode from platform integrity
support (present implies privacy for license requests); mobile CDMs expose
a toggle the embedding browser must opt into. One deliberate quirk is
modeled: on integrity-checked desktops the renewal path skips Client ID
encryption unless ``vmp_renewal_privacy_gap`` is turned off, which lets an
auditor observe both the buggy and the fixed behavior.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from random import Random

from cryptography.hazmat.primitives.asymmetric import rsa

from . import codec, crypto, privacy, protocol
from .codec import FieldKey, RawField, WIRE_LENGTH_DELIMITED, WIRE_VARINT
from .exceptions import (
    AllKeysExpired,
    BadState,
    BlobCorrupt,
    EmeForgeError,
    KeyExpired,
    KeyNotFound,
    NoServerCertificate,
    PlatformForbids,
    PolicyForbids,
    RequestIdMismatch,
    SignatureInvalid,
)
from .identity import ClientId
from .privacy import ServerCertificate
from .protocol import (
    ClearClientId,
    EncryptedClientId,
    LicensePolicy,
    LicenseRequest,
    LicenseResponse,
    MessageKind,
    RenewalRequest,
    RenewalResponse,
    SignedMessage,
)

SESSION_ID_LEN = 16


class Platform(Enum):
    DESKTOP_VMP = "desktop_vmp"
    DESKTOP_NON_VMP = "desktop_non_vmp"
    MOBILE = "mobile"


class SessionType(Enum):
    TEMPORARY = 1
    PERSISTENT = 2


class SessionState(Enum):
    CREATED = "created"
    PENDING = "pending"
    ACTIVE = "active"
    CLOSED = "closed"


@dataclass
class CdmConfig:
    platform: Platform
    client_id: ClientId
    device_private_key: rsa.RSAPrivateKey
    privacy_mode_enabled: bool = False
    vmp_renewal_privacy_gap: bool = True
    server_certificate: ServerCertificate | None = None
    license_server_public_key_der: bytes | None = None

    def __post_init__(self) -> None:
        # Desktop privacy is decided by the CDM itself, not the embedder.
        if self.platform == Platform.DESKTOP_VMP:
            self.privacy_mode_enabled = True
        elif self.platform == Platform.DESKTOP_NON_VMP:
            self.privacy_mode_enabled = False


@dataclass
class KeySlot:
    key: bytes
    expiry: int


@dataclass
class Session:
    session_id: bytes
    session_type: SessionType
    state: SessionState = SessionState.CREATED
    key_wallet: dict[bytes, KeySlot] = field(default_factory=dict)
    policy: LicensePolicy | None = None
    request_id: bytes | None = None
    renewal_due: int | None = None
    received_at: int | None = None
    first_use: int | None = None
    renewal_pending_since: int | None = None

    @property
    def session_id_hex(self) -> str:
        return self.session_id.hex()


@dataclass(frozen=True)
class SessionBlob:
    """What survives a persistent session's close: enough to reopen it."""

    session_id: bytes
    session_type: SessionType
    policy: LicensePolicy
    wallet: tuple[tuple[bytes, bytes, int], ...]  # (key_id, key, expiry)
    created_at: int


_F_BLOB_SESSION_ID = 1
_F_BLOB_TYPE = 2
_F_BLOB_POLICY = 3
_F_BLOB_ENTRY = 4
_F_BLOB_CREATED = 5
_F_BLOB_DIGEST = 6


def _blob_payload_fields(blob: SessionBlob) -> list[RawField]:
    fields = [
        RawField(FieldKey(_F_BLOB_SESSION_ID, WIRE_LENGTH_DELIMITED), blob.session_id),
        RawField(FieldKey(_F_BLOB_TYPE, WIRE_VARINT), blob.session_type.value),
        RawField(
            FieldKey(_F_BLOB_POLICY, WIRE_LENGTH_DELIMITED),
            protocol.encode_policy(blob.policy),
        ),
    ]
    for key_id, key, expiry in blob.wallet:
        entry = codec.encode_fields(
            [
                RawField(FieldKey(1, WIRE_LENGTH_DELIMITED), key_id),
                RawField(FieldKey(2, WIRE_LENGTH_DELIMITED), key),
                RawField(FieldKey(3, WIRE_VARINT), expiry),
            ]
        )
        fields.append(RawField(FieldKey(_F_BLOB_ENTRY, WIRE_LENGTH_DELIMITED), entry))
    fields.append(RawField(FieldKey(_F_BLOB_CREATED, WIRE_VARINT), blob.created_at))
    return fields


def encode_session_blob(blob: SessionBlob) -> bytes:
    payload = codec.encode_fields(_blob_payload_fields(blob))
    digest = hashlib.sha256(payload).digest()
    return payload + codec.encode_field(
        FieldKey(_F_BLOB_DIGEST, WIRE_LENGTH_DELIMITED), digest
    )


def decode_session_blob(data: bytes) -> SessionBlob:
    try:
        fields = codec.decode_fields(data)
    except EmeForgeError as exc:
        raise BlobCorrupt("session blob does not parse") from exc
    digest = None
    payload_end = None
    offset = 0
    # Recompute the byte span the digest covers (everything before it).
    for raw in fields:
        encoded = codec.encode_field(raw.key, raw.value)
        if raw.key.field_number == _F_BLOB_DIGEST and isinstance(raw.value, bytes):
            digest = raw.value
            payload_end = offset
        offset += len(encoded)
    if digest is None or payload_end is None:
        raise BlobCorrupt("session blob has no integrity digest")
    if hashlib.sha256(data[:payload_end]).digest() != digest:
        raise BlobCorrupt("session blob digest mismatch")

    session_id = None
    session_type = None
    policy = None
    created_at = 0
    wallet: list[tuple[bytes, bytes, int]] = []
    try:
        for raw in fields:
            number, value = raw.key.field_number, raw.value
            if number == _F_BLOB_SESSION_ID and isinstance(value, bytes):
                session_id = value
            elif number == _F_BLOB_TYPE and isinstance(value, int):
                session_type = SessionType(value)
            elif number == _F_BLOB_POLICY and isinstance(value, bytes):
                policy = protocol.decode_policy(value)
            elif number == _F_BLOB_ENTRY and isinstance(value, bytes):
                parts: dict[int, int | bytes] = {
                    f.key.field_number: f.value for f in codec.decode_fields(value)
                }
                key_id, key, expiry = parts[1], parts[2], parts.get(3, 0)
                assert isinstance(key_id, bytes) and isinstance(key, bytes)
                assert isinstance(expiry, int)
                wallet.append((key_id, key, expiry))
            elif number == _F_BLOB_CREATED and isinstance(value, int):
                created_at = value
    except (EmeForgeError, KeyError, ValueError, AssertionError) as exc:
        raise BlobCorrupt("session blob fields malformed") from exc
    if session_id is None or session_type is None or policy is None:
        raise BlobCorrupt("session blob incomplete")
    return SessionBlob(session_id, session_type, policy, tuple(wallet), created_at)


class Cdm:
    """A single simulated content decryption module."""

    def __init__(self, config: CdmConfig, rng: Random):
        self.config = config
        self.rng = rng
        self.sessions: dict[bytes, Session] = {}
        self.now = 0

    # -- internals ---------------------------------------------------------

    def _advance(self, now: int) -> None:
        self.now = max(self.now, now)

    def _client_id_payload(self, encrypt: bool) -> protocol.ClientIdPayload:
        if not encrypt:
            return ClearClientId(self.config.client_id)
        cert = self.config.server_certificate
        if cert is None:
            raise NoServerCertificate(
                "privacy mode requires a verified service certificate"
            )
        return EncryptedClientId(
            privacy.encrypt_client_id(self.config.client_id, cert, self.rng)
        )

    def _encrypts_license_requests(self) -> bool:
        return self.config.privacy_mode_enabled

    def _encrypts_renewal_requests(self) -> bool:
        if not self.config.privacy_mode_enabled:
            return False
        if (
            self.config.platform == Platform.DESKTOP_VMP
            and self.config.vmp_renewal_privacy_gap
        ):
            return False
        return True

    def _rental_cap(self, session: Session) -> int | None:
        policy = session.policy
        if policy is None or session.received_at is None:
            return None
        window = (
            policy.license_duration_s
            if policy.soft_enforce_rental_duration
            else policy.rental_duration_s
        )
        return session.received_at + window if window > 0 else None

    def _playback_cap(self, session: Session) -> int | None:
        policy = session.policy
        if policy is None or session.first_use is None:
            return None
        window = (
            policy.license_duration_s
            if policy.soft_enforce_playback_duration
            else policy.playback_duration_s
        )
        return session.first_use + window if window > 0 else None

    def _recovery_cap(self, session: Session) -> int | None:
        policy = session.policy
        if policy is None or session.renewal_pending_since is None:
            return None
        window = policy.renewal_recovery_duration_s
        return session.renewal_pending_since + window if window > 0 else None

    def _effective_expiry(self, session: Session, slot: KeySlot) -> int:
        expiry = slot.expiry
        for cap in (
            self._rental_cap(session),
            self._playback_cap(session),
            self._recovery_cap(session),
        ):
            if cap is not None:
                expiry = min(expiry, cap)
        return expiry

    # -- session lifecycle ---------------------------------------------------

    def create_session(self, session_type: SessionType) -> Session:
        session_id = self.rng.randbytes(SESSION_ID_LEN)
        while session_id in self.sessions:
            session_id = self.rng.randbytes(SESSION_ID_LEN)
        session = Session(session_id=session_id, session_type=session_type)
        self.sessions[session_id] = session
        return session

    def generate_request(
        self, session: Session, init_data: list[bytes]
    ) -> SignedMessage:
        if session.state != SessionState.CREATED:
            raise BadState(f"cannot generate a request in state {session.state.name}")
        if not init_data:
            raise BadState("initialization data carries no key ids")
        request_id = self.rng.randbytes(protocol.REQUEST_ID_LEN)
        payload = self._client_id_payload(self._encrypts_license_requests())
        body = protocol.encode_message(
            LicenseRequest(request_id, tuple(init_data), payload)
        )
        session.request_id = request_id
        session.state = SessionState.PENDING
        return protocol.sign_message(
            MessageKind.LICENSE_REQUEST, body, self.config.device_private_key
        )

    def update(self, session: Session, response: SignedMessage, now: int) -> None:
        self._advance(now)
        if response.kind == MessageKind.LICENSE_RESPONSE:
            if session.state != SessionState.PENDING:
                raise BadState(f"license response in state {session.state.name}")
        elif response.kind == MessageKind.RENEWAL_RESPONSE:
            if session.state != SessionState.ACTIVE:
                raise BadState(f"renewal response in state {session.state.name}")
        else:
            raise BadState(f"update cannot process {response.kind.name}")

        server_key = self.config.license_server_public_key_der
        if server_key is None or not protocol.verify_message(response, server_key):
            raise SignatureInvalid("response signature rejected")

        message = protocol.decode_message(response.kind, response.body)
        if message.request_id != session.request_id:
            raise RequestIdMismatch("response does not match the outstanding request")

        if isinstance(message, LicenseResponse):
            self._process_license(session, message, now)
        else:
            assert isinstance(message, RenewalResponse)
            self._process_renewal(session, message, now)

    def _process_license(
        self, session: Session, message: LicenseResponse, now: int
    ) -> None:
        if (
            session.session_type == SessionType.PERSISTENT
            and not message.policy.can_persist
        ):
            raise PolicyForbids("persistent session but policy denies persistence")
        entries = privacy.unwrap_content_keys(
            message.keys, self.config.device_private_key
        )
        session.policy = message.policy
        session.received_at = now
        cap = self._rental_cap(session)
        for entry in entries:
            expiry = now + entry.ttl_s
            if cap is not None:
                expiry = min(expiry, cap)
            session.key_wallet[entry.key_id] = KeySlot(entry.key, expiry)
        session.state = SessionState.ACTIVE
        session.renewal_due = (
            now + message.policy.renewal_delay_s if message.policy.can_renew else None
        )

    def _process_renewal(
        self, session: Session, message: RenewalResponse, now: int
    ) -> None:
        cap = self._rental_cap(session)
        for key_id, ttl_s in message.updated_ttls:
            slot = session.key_wallet.get(key_id)
            if slot is None:
                continue
            expiry = now + ttl_s
            if cap is not None:
                expiry = min(expiry, cap)
            slot.expiry = expiry
        session.policy = message.policy
        session.renewal_pending_since = None
        session.renewal_due = (
            now + message.policy.renewal_delay_s if message.policy.can_renew else None
        )

    def tick(self, now: int) -> list[SignedMessage]:
        """Emit renewal requests for every session whose schedule is due."""
        self._advance(now)
        out: list[SignedMessage] = []
        for session in self.sessions.values():
            if session.state != SessionState.ACTIVE:
                continue
            if session.renewal_due is None or session.renewal_due > now:
                continue
            policy = session.policy
            if policy is None or not policy.can_renew or session.request_id is None:
                session.renewal_due = None
                continue
            recovery_cap = self._recovery_cap(session)
            if recovery_cap is not None and now >= recovery_cap:
                session.renewal_due = None  # renewal window exhausted, keys lapse
                continue
            payload = None
            if policy.always_include_client_id:
                payload = self._client_id_payload(self._encrypts_renewal_requests())
            body = protocol.encode_message(
                RenewalRequest(session.request_id, policy, payload)
            )
            out.append(
                protocol.sign_message(
                    MessageKind.RENEWAL_REQUEST, body, self.config.device_private_key
                )
            )
            if session.renewal_pending_since is None:
                session.renewal_pending_since = now
            retry = policy.renewal_retry_interval_s
            session.renewal_due = now + retry if retry > 0 else None
        return out

    def close_session(self, session: Session) -> SessionBlob | None:
        if session.state == SessionState.CLOSED:
            return None
        was_active = session.state == SessionState.ACTIVE
        blob: SessionBlob | None = None
        if (
            was_active
            and session.session_type == SessionType.PERSISTENT
            and session.policy is not None
            and session.policy.can_persist
        ):
            blob = SessionBlob(
                session_id=session.session_id,
                session_type=session.session_type,
                policy=session.policy,
                wallet=tuple(
                    (key_id, slot.key, slot.expiry)
                    for key_id, slot in session.key_wallet.items()
                ),
                created_at=session.received_at or 0,
            )
        session.key_wallet.clear()
        session.state = SessionState.CLOSED
        self.sessions.pop(session.session_id, None)
        return blob

    def load_session(self, blob: SessionBlob | bytes, now: int) -> Session:
        self._advance(now)
        if isinstance(blob, bytes):
            blob = decode_session_blob(blob)
        wallet = {
            key_id: KeySlot(key, expiry)
            for key_id, key, expiry in blob.wallet
            if expiry > now
        }
        if not wallet:
            raise AllKeysExpired("no unexpired keys left in the stored session")
        session = Session(
            session_id=blob.session_id,
            session_type=blob.session_type,
            state=SessionState.ACTIVE,
            key_wallet=wallet,
            policy=blob.policy,
            received_at=blob.created_at,
        )
        self.sessions[session.session_id] = session
        return session

    # -- media path -----------------------------------------------------------

    def decrypt_sample(
        self, session: Session, key_id: bytes, iv: bytes, ciphertext: bytes
    ) -> bytes:
        if session.state != SessionState.ACTIVE:
            raise BadState(f"cannot decrypt in state {session.state.name}")
        if session.policy is not None and not session.policy.can_play:
            raise PolicyForbids("policy does not allow playback")
        slot = session.key_wallet.get(key_id)
        if slot is None:
            raise KeyNotFound(f"key {key_id.hex()} not in this session's wallet")
        if self.now >= self._effective_expiry(session, slot):
            raise KeyExpired(f"key {key_id.hex()} expired")
        if session.first_use is None:
            session.first_use = self.now
            policy = session.policy
            if policy is not None and policy.renew_with_usage and policy.can_renew:
                session.renewal_due = self.now  # renew as soon as the license is used
        return crypto.aes_cbc_decrypt(slot.key, iv, ciphertext)

    # -- configuration ----------------------------------------------------------

    def set_privacy_mode(self, enabled: bool) -> None:
        if self.config.platform != Platform.MOBILE:
            raise PlatformForbids("desktop privacy mode is derived, not settable")
        self.config.privacy_mode_enabled = enabled
