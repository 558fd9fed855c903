"""Message types for the four license operations, plus the policy record.

The license policy is the one structure whose wire layout is pinned down
bit-for-bit: each field number is chosen so its encoded key reproduces the
known policy code byte (0x08 Can Play, 0x10 Can Persist, ... 0x80 0x01
Watermarking Control). Field 13 is deliberately unassigned. The non-policy
messages use a fixed, documented numbering of our own since their real
layout is proprietary.

Request/response bodies are signed detached: a SignedMessage carries the
kind, the encoded body, and an RSA PKCS#1 v1.5 / SHA-256 signature over the
exact body bytes (device key for requests, server key for responses).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from enum import IntEnum

from cryptography.hazmat.primitives.asymmetric import rsa

from . import codec, identity, privacy
from .codec import FieldKey, RawField, WIRE_LENGTH_DELIMITED, WIRE_VARINT
from .crypto import sign as _sign, verify as _verify
from .exceptions import (
    InvariantViolation,
    KindMismatch,
    MissingRequiredField,
    UnknownKind,
)
from .privacy import ContentKeyEntry, PrivacyEnvelope, ServerCertificate, WrappedKeyEntry

__all__ = [
    "MessageKind",
    "LicensePolicy",
    "POLICY_FIELDS",
    "ClearClientId",
    "EncryptedClientId",
    "LicenseRequest",
    "LicenseResponse",
    "RenewalRequest",
    "RenewalResponse",
    "SignedMessage",
    "ContentKeyEntry",
    "WrappedKeyEntry",
    "encode_policy",
    "decode_policy",
    "encode_message",
    "decode_message",
    "encode_signed_message",
    "decode_signed_message",
    "sign_message",
    "verify_message",
]

REQUEST_ID_LEN = 16


class MessageKind(IntEnum):
    LICENSE_REQUEST = 1
    LICENSE_RESPONSE = 2
    RENEWAL_REQUEST = 3
    RENEWAL_RESPONSE = 4
    SERVICE_CERTIFICATE = 5


@dataclass(frozen=True)
class LicensePolicy:
    """Server-defined usage rules enforced by the CDM.

    Durations are seconds; zero means unset/unlimited. Unset fields are
    omitted from the wire entirely.
    """

    can_play: bool = False
    can_persist: bool = False
    can_renew: bool = False
    rental_duration_s: int = 0
    playback_duration_s: int = 0
    license_duration_s: int = 0
    renewal_recovery_duration_s: int = 0
    renewal_server_url: str = ""
    renewal_delay_s: int = 0
    renewal_retry_interval_s: int = 0
    renew_with_usage: bool = False
    always_include_client_id: bool = False
    soft_enforce_playback_duration: bool = False
    soft_enforce_rental_duration: bool = False
    watermarking_control: int = 0

    def __post_init__(self) -> None:
        for attr, _, kind in POLICY_FIELDS:
            if kind is int and getattr(self, attr) < 0:
                raise InvariantViolation(f"{attr} must be >= 0")


# (attribute, field number, value type); the encoded key bytes of these
# field numbers are the policy codes.
POLICY_FIELDS: tuple[tuple[str, int, type], ...] = (
    ("can_play", 1, bool),
    ("can_persist", 2, bool),
    ("can_renew", 3, bool),
    ("rental_duration_s", 4, int),
    ("playback_duration_s", 5, int),
    ("license_duration_s", 6, int),
    ("renewal_recovery_duration_s", 7, int),
    ("renewal_server_url", 8, str),
    ("renewal_delay_s", 9, int),
    ("renewal_retry_interval_s", 10, int),
    ("renew_with_usage", 11, bool),
    ("always_include_client_id", 12, bool),
    ("soft_enforce_playback_duration", 14, bool),
    ("soft_enforce_rental_duration", 15, bool),
    ("watermarking_control", 16, int),
)


def encode_policy(policy: LicensePolicy) -> bytes:
    fields: list[RawField] = []
    for attr, number, kind in POLICY_FIELDS:
        value = getattr(policy, attr)
        if kind is str:
            if value:
                fields.append(
                    RawField(FieldKey(number, WIRE_LENGTH_DELIMITED), value.encode())
                )
        elif value:
            fields.append(RawField(FieldKey(number, WIRE_VARINT), int(value)))
    return codec.encode_fields(fields)


def decode_policy(data: bytes) -> LicensePolicy:
    by_number = {number: (attr, kind) for attr, number, kind in POLICY_FIELDS}
    kwargs: dict[str, object] = {}
    for raw in codec.decode_fields(data):
        entry = by_number.get(raw.key.field_number)
        if entry is None:
            continue  # unknown policy codes are tolerated, the table may grow
        attr, kind = entry
        if kind is str:
            if not isinstance(raw.value, bytes):
                raise KindMismatch(f"{attr} must be length-delimited")
            kwargs[attr] = raw.value.decode()
        else:
            if not isinstance(raw.value, int):
                raise KindMismatch(f"{attr} must be a varint")
            kwargs[attr] = bool(raw.value) if kind is bool else raw.value
    return LicensePolicy(**kwargs)


# -- client id payload variants -------------------------------------------------

@dataclass(frozen=True)
class ClearClientId:
    client_id: identity.ClientId


@dataclass(frozen=True)
class EncryptedClientId:
    envelope: PrivacyEnvelope


ClientIdPayload = ClearClientId | EncryptedClientId


# -- messages --------------------------------------------------------------------

_F_REQUEST_ID = 1
_F_CONTENT_KEY_ID = 2
_F_CLIENT_ID_CLEAR = 3
_F_CLIENT_ID_ENCRYPTED = 4
_F_WRAPPED_KEY = 5
_F_POLICY = 6
_F_UPDATED_TTL = 7
_F_OTT = 9

_F_TTL_KEY_ID = 1
_F_TTL_SECONDS = 2


def _check_request_id(request_id: bytes) -> None:
    if len(request_id) != REQUEST_ID_LEN:
        raise InvariantViolation(f"request id must be {REQUEST_ID_LEN} bytes")


@dataclass(frozen=True)
class LicenseRequest:
    request_id: bytes
    content_key_ids: tuple[bytes, ...]
    client_id_payload: ClientIdPayload

    def __post_init__(self) -> None:
        _check_request_id(self.request_id)
        if not self.content_key_ids:
            raise InvariantViolation("license request needs at least one key id")
        if not isinstance(self.client_id_payload, (ClearClientId, EncryptedClientId)):
            raise InvariantViolation("client id payload must be clear or encrypted")


@dataclass(frozen=True)
class LicenseResponse:
    request_id: bytes
    keys: tuple[WrappedKeyEntry, ...]
    policy: LicensePolicy
    ott_field: bytes | None = None

    def __post_init__(self) -> None:
        _check_request_id(self.request_id)
        seen = {entry.key_id for entry in self.keys}
        if len(seen) != len(self.keys):
            raise InvariantViolation("duplicate key id in response")


@dataclass(frozen=True)
class RenewalRequest:
    request_id: bytes
    policy: LicensePolicy
    client_id_payload: ClientIdPayload | None = None

    def __post_init__(self) -> None:
        _check_request_id(self.request_id)
        if self.policy.always_include_client_id and self.client_id_payload is None:
            raise InvariantViolation("policy demands a client id in renewals")
        if not self.policy.always_include_client_id and self.client_id_payload is not None:
            raise InvariantViolation("client id present but policy does not ask for it")


@dataclass(frozen=True)
class RenewalResponse:
    request_id: bytes
    updated_ttls: tuple[tuple[bytes, int], ...]
    policy: LicensePolicy
    ott_field: bytes | None = None

    def __post_init__(self) -> None:
        _check_request_id(self.request_id)


@dataclass(frozen=True)
class SignedMessage:
    kind: MessageKind
    body: bytes
    signature: bytes


Message = (
    LicenseRequest
    | LicenseResponse
    | RenewalRequest
    | RenewalResponse
    | ServerCertificate
)


def _encode_client_id_payload(payload: ClientIdPayload) -> RawField:
    if isinstance(payload, ClearClientId):
        return RawField(
            FieldKey(_F_CLIENT_ID_CLEAR, WIRE_LENGTH_DELIMITED),
            identity.encode_client_id(payload.client_id),
        )
    return RawField(
        FieldKey(_F_CLIENT_ID_ENCRYPTED, WIRE_LENGTH_DELIMITED),
        privacy.encode_envelope(payload.envelope),
    )


def _encode_updated_ttl(key_id: bytes, ttl_s: int) -> bytes:
    return codec.encode_fields(
        [
            RawField(FieldKey(_F_TTL_KEY_ID, WIRE_LENGTH_DELIMITED), key_id),
            RawField(FieldKey(_F_TTL_SECONDS, WIRE_VARINT), ttl_s),
        ]
    )


def encode_message(message: Message) -> bytes:
    fields: list[RawField] = []
    if isinstance(message, LicenseRequest):
        fields.append(RawField(FieldKey(_F_REQUEST_ID, WIRE_LENGTH_DELIMITED), message.request_id))
        for key_id in message.content_key_ids:
            fields.append(RawField(FieldKey(_F_CONTENT_KEY_ID, WIRE_LENGTH_DELIMITED), key_id))
        fields.append(_encode_client_id_payload(message.client_id_payload))
    elif isinstance(message, LicenseResponse):
        fields.append(RawField(FieldKey(_F_REQUEST_ID, WIRE_LENGTH_DELIMITED), message.request_id))
        for entry in message.keys:
            fields.append(
                RawField(
                    FieldKey(_F_WRAPPED_KEY, WIRE_LENGTH_DELIMITED),
                    privacy.encode_wrapped_key_entry(entry),
                )
            )
        fields.append(
            RawField(FieldKey(_F_POLICY, WIRE_LENGTH_DELIMITED), encode_policy(message.policy))
        )
        if message.ott_field is not None:
            fields.append(RawField(FieldKey(_F_OTT, WIRE_LENGTH_DELIMITED), message.ott_field))
    elif isinstance(message, RenewalRequest):
        fields.append(RawField(FieldKey(_F_REQUEST_ID, WIRE_LENGTH_DELIMITED), message.request_id))
        if message.client_id_payload is not None:
            fields.append(_encode_client_id_payload(message.client_id_payload))
        fields.append(
            RawField(FieldKey(_F_POLICY, WIRE_LENGTH_DELIMITED), encode_policy(message.policy))
        )
    elif isinstance(message, RenewalResponse):
        fields.append(RawField(FieldKey(_F_REQUEST_ID, WIRE_LENGTH_DELIMITED), message.request_id))
        for key_id, ttl_s in message.updated_ttls:
            fields.append(
                RawField(
                    FieldKey(_F_UPDATED_TTL, WIRE_LENGTH_DELIMITED),
                    _encode_updated_ttl(key_id, ttl_s),
                )
            )
        fields.append(
            RawField(FieldKey(_F_POLICY, WIRE_LENGTH_DELIMITED), encode_policy(message.policy))
        )
        if message.ott_field is not None:
            fields.append(RawField(FieldKey(_F_OTT, WIRE_LENGTH_DELIMITED), message.ott_field))
    elif isinstance(message, ServerCertificate):
        return privacy.encode_server_certificate(message)
    else:
        raise UnknownKind(f"cannot encode {type(message).__name__}")
    return codec.encode_fields(fields)


def _collect(data: bytes) -> dict[int, list[int | bytes]]:
    grouped: dict[int, list[int | bytes]] = {}
    for raw in codec.decode_fields(data):
        grouped.setdefault(raw.key.field_number, []).append(raw.value)
    return grouped


def _one_bytes(grouped: dict[int, list[int | bytes]], number: int, name: str) -> bytes:
    values = grouped.get(number)
    if not values:
        raise MissingRequiredField(f"{name} absent")
    value = values[0]
    if not isinstance(value, bytes):
        raise MissingRequiredField(f"{name} has wrong wire kind")
    return value


def _opt_bytes(grouped: dict[int, list[int | bytes]], number: int) -> bytes | None:
    values = grouped.get(number)
    if not values:
        return None
    value = values[0]
    return value if isinstance(value, bytes) else None


def _decode_client_id_payload(grouped: dict[int, list[int | bytes]]) -> ClientIdPayload | None:
    clear = _opt_bytes(grouped, _F_CLIENT_ID_CLEAR)
    encrypted = _opt_bytes(grouped, _F_CLIENT_ID_ENCRYPTED)
    if clear is not None and encrypted is not None:
        raise InvariantViolation("both client id variants present")
    if clear is not None:
        return ClearClientId(identity.decode_client_id(clear))
    if encrypted is not None:
        return EncryptedClientId(privacy.decode_envelope(encrypted))
    return None


def decode_message(kind: MessageKind, data: bytes) -> Message:
    if kind == MessageKind.SERVICE_CERTIFICATE:
        return privacy.decode_server_certificate(data)
    grouped = _collect(data)
    request_id = _one_bytes(grouped, _F_REQUEST_ID, "request_id")
    if kind == MessageKind.LICENSE_REQUEST:
        key_ids = tuple(
            v for v in grouped.get(_F_CONTENT_KEY_ID, ()) if isinstance(v, bytes)
        )
        payload = _decode_client_id_payload(grouped)
        if payload is None:
            raise MissingRequiredField("license request needs a client id payload")
        if not key_ids:
            raise MissingRequiredField("license request needs content key ids")
        return LicenseRequest(request_id, key_ids, payload)
    if kind == MessageKind.LICENSE_RESPONSE:
        keys = tuple(
            privacy.decode_wrapped_key_entry(v)
            for v in grouped.get(_F_WRAPPED_KEY, ())
            if isinstance(v, bytes)
        )
        policy = decode_policy(_one_bytes(grouped, _F_POLICY, "policy"))
        return LicenseResponse(request_id, keys, policy, _opt_bytes(grouped, _F_OTT))
    if kind == MessageKind.RENEWAL_REQUEST:
        policy = decode_policy(_one_bytes(grouped, _F_POLICY, "policy"))
        return RenewalRequest(request_id, policy, _decode_client_id_payload(grouped))
    if kind == MessageKind.RENEWAL_RESPONSE:
        ttls = []
        for blob in grouped.get(_F_UPDATED_TTL, ()):
            if not isinstance(blob, bytes):
                continue
            inner = _collect(blob)
            key_id = _one_bytes(inner, _F_TTL_KEY_ID, "updated ttl key id")
            seconds = inner.get(_F_TTL_SECONDS, [0])[0]
            if not isinstance(seconds, int):
                raise MissingRequiredField("updated ttl seconds has wrong wire kind")
            ttls.append((key_id, seconds))
        policy = decode_policy(_one_bytes(grouped, _F_POLICY, "policy"))
        return RenewalResponse(request_id, tuple(ttls), policy, _opt_bytes(grouped, _F_OTT))
    raise UnknownKind(f"kind {kind}")


# -- signed envelope --------------------------------------------------------------

_F_SM_KIND = 1
_F_SM_BODY = 2
_F_SM_SIGNATURE = 3


def encode_signed_message(sm: SignedMessage) -> bytes:
    return codec.encode_fields(
        [
            RawField(FieldKey(_F_SM_KIND, WIRE_VARINT), int(sm.kind)),
            RawField(FieldKey(_F_SM_BODY, WIRE_LENGTH_DELIMITED), sm.body),
            RawField(FieldKey(_F_SM_SIGNATURE, WIRE_LENGTH_DELIMITED), sm.signature),
        ]
    )


def decode_signed_message(data: bytes) -> SignedMessage:
    grouped = _collect(data)
    kinds = grouped.get(_F_SM_KIND)
    if not kinds or not isinstance(kinds[0], int):
        raise MissingRequiredField("signed message kind absent")
    try:
        kind = MessageKind(kinds[0])
    except ValueError as exc:
        raise UnknownKind(f"kind {kinds[0]}") from exc
    body = _one_bytes(grouped, _F_SM_BODY, "signed message body")
    signature = _opt_bytes(grouped, _F_SM_SIGNATURE)
    return SignedMessage(kind, body, signature if signature is not None else b"")


def sign_message(
    kind: MessageKind, body: bytes, signing_key: rsa.RSAPrivateKey
) -> SignedMessage:
    if not isinstance(kind, MessageKind):
        raise UnknownKind(f"kind {kind!r}")
    return SignedMessage(kind, body, _sign(signing_key, body))


def verify_message(sm: SignedMessage, public_key_der: bytes) -> bool:
    return _verify(public_key_der, sm.signature, sm.body)
