"""Privacy Mode crypto and the simplified content-key wrap.

Privacy Mode hides the Client ID from everyone but the license provider: a
fresh 128-bit key encrypts the serialized Client ID with AES-CBC under a
random IV, and that key is wrapped to the provider's service certificate
with RSA-OAEP. The certificate itself must carry a signature by the
hard-coded privacy root before the CDM will encrypt to it.

License content keys travel wrapped to the requesting device's public key;
the real key-ladder derivation is out of scope and modeled as a direct
hybrid wrap, which preserves the property the protocol relies on: raw key
bytes never appear in a serialized response.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from random import Random
from typing import Iterable

from cryptography.hazmat.primitives.asymmetric import rsa

from . import codec, crypto, identity
from .codec import FieldKey, RawField, WIRE_LENGTH_DELIMITED, WIRE_VARINT
from .exceptions import CertificateUnverified, DecodeFailed, DecryptFailed

PRIVACY_KEY_LEN = 16  # 128-bit AES
IV_LEN = 16
KEY_ID_LEN = 16
CONTENT_KEY_LEN = 16

_PRIVACY_ROOT_SEED = b"emeforge:privacy:root:v1"
DEFAULT_PROVIDER_ID = "license.widevine.com"
_DEFAULT_PROVIDER_SEED = b"emeforge:privacy:default-provider:v1"


@dataclass(frozen=True)
class ServerCertificate:
    """License-provider public key endorsed by the privacy root."""

    provider_id: str
    public_key_der: bytes
    root_signature: bytes

    def signing_payload(self) -> bytes:
        return self.provider_id.encode() + self.public_key_der


@dataclass(frozen=True)
class PrivacyEnvelope:
    """Encrypted Client ID: wrapped session key, IV, CBC ciphertext."""

    wrapped_key: bytes
    iv: bytes
    ciphertext: bytes


@dataclass(frozen=True)
class ContentKeyEntry:
    """One clear content key with its time to live."""

    key_id: bytes
    key: bytes
    ttl_s: int


@dataclass(frozen=True)
class WrappedKeyEntry:
    """One content key wrapped to a device public key."""

    key_id: bytes
    wrapped_key: bytes
    ttl_s: int


# -- wire format ---------------------------------------------------------------

def encode_server_certificate(cert: ServerCertificate) -> bytes:
    return codec.encode_fields(
        [
            RawField(FieldKey(1, WIRE_LENGTH_DELIMITED), cert.provider_id.encode()),
            RawField(FieldKey(2, WIRE_LENGTH_DELIMITED), cert.public_key_der),
            RawField(FieldKey(3, WIRE_LENGTH_DELIMITED), cert.root_signature),
        ]
    )


def decode_server_certificate(data: bytes) -> ServerCertificate:
    values: dict[int, bytes] = {}
    for field in codec.decode_fields(data):
        if isinstance(field.value, bytes):
            values[field.key.field_number] = field.value
    try:
        return ServerCertificate(values[1].decode(), values[2], values[3])
    except KeyError as exc:
        raise DecodeFailed(f"server certificate missing field {exc}") from exc


def encode_envelope(env: PrivacyEnvelope) -> bytes:
    return codec.encode_fields(
        [
            RawField(FieldKey(1, WIRE_LENGTH_DELIMITED), env.wrapped_key),
            RawField(FieldKey(2, WIRE_LENGTH_DELIMITED), env.iv),
            RawField(FieldKey(3, WIRE_LENGTH_DELIMITED), env.ciphertext),
        ]
    )


def decode_envelope(data: bytes) -> PrivacyEnvelope:
    values: dict[int, bytes] = {}
    for field in codec.decode_fields(data):
        if isinstance(field.value, bytes):
            values[field.key.field_number] = field.value
    try:
        return PrivacyEnvelope(values[1], values[2], values[3])
    except KeyError as exc:
        raise DecodeFailed(f"privacy envelope missing field {exc}") from exc


def encode_wrapped_key_entry(entry: WrappedKeyEntry) -> bytes:
    return codec.encode_fields(
        [
            RawField(FieldKey(1, WIRE_LENGTH_DELIMITED), entry.key_id),
            RawField(FieldKey(2, WIRE_LENGTH_DELIMITED), entry.wrapped_key),
            RawField(FieldKey(3, WIRE_VARINT), entry.ttl_s),
        ]
    )


def decode_wrapped_key_entry(data: bytes) -> WrappedKeyEntry:
    key_id = wrapped = None
    ttl = 0
    for field in codec.decode_fields(data):
        if field.key.field_number == 1 and isinstance(field.value, bytes):
            key_id = field.value
        elif field.key.field_number == 2 and isinstance(field.value, bytes):
            wrapped = field.value
        elif field.key.field_number == 3 and isinstance(field.value, int):
            ttl = field.value
    if key_id is None or wrapped is None:
        raise DecodeFailed("wrapped key entry missing key id or payload")
    return WrappedKeyEntry(key_id, wrapped, ttl)


# -- privacy root and service certificates -------------------------------------

@lru_cache(maxsize=1)
def _privacy_root_key() -> rsa.RSAPrivateKey:
    return crypto.derive_rsa_private_key(_PRIVACY_ROOT_SEED)


@lru_cache(maxsize=1)
def privacy_root_public_key() -> bytes:
    """DER public key the CDM ships with for certificate verification."""
    return crypto.public_key_der(_privacy_root_key().public_key())


def issue_server_certificate(provider_id: str, public_key_der: bytes) -> ServerCertificate:
    """Endorse a provider key with the privacy root (test-bench stand-in for
    the real signing ceremony)."""
    unsigned = ServerCertificate(provider_id, public_key_der, b"")
    signature = crypto.sign(_privacy_root_key(), unsigned.signing_payload())
    return ServerCertificate(provider_id, public_key_der, signature)


@lru_cache(maxsize=1)
def default_provider_private_key() -> rsa.RSAPrivateKey:
    return crypto.derive_rsa_private_key(_DEFAULT_PROVIDER_SEED)


@lru_cache(maxsize=1)
def default_service_certificate() -> ServerCertificate:
    """Built-in certificate every CDM instance is configured with."""
    public_der = crypto.public_key_der(default_provider_private_key().public_key())
    return issue_server_certificate(DEFAULT_PROVIDER_ID, public_der)


def verify_server_certificate(
    cert: ServerCertificate, root_public_key: bytes | None = None
) -> bool:
    root = root_public_key if root_public_key is not None else privacy_root_public_key()
    return crypto.verify(root, cert.root_signature, cert.signing_payload())


# -- client id encryption --------------------------------------------------------

def encrypt_client_id(
    cid: identity.ClientId, cert: ServerCertificate, rng: Random
) -> PrivacyEnvelope:
    """Encrypt a Client ID to a verified service certificate.

    A fresh privacy key and IV are drawn per call, so repeated encryptions
    of the same Client ID are unlinkable on the wire.
    """
    if not verify_server_certificate(cert):
        raise CertificateUnverified(f"certificate for {cert.provider_id!r} not trusted")
    privacy_key = rng.randbytes(PRIVACY_KEY_LEN)
    iv = rng.randbytes(IV_LEN)
    ciphertext = crypto.aes_cbc_encrypt(privacy_key, iv, identity.encode_client_id(cid))
    wrapped = crypto.oaep_encrypt(cert.public_key_der, privacy_key, rng)
    return PrivacyEnvelope(wrapped, iv, ciphertext)


def decrypt_client_id(
    env: PrivacyEnvelope, provider_private_key: rsa.RSAPrivateKey
) -> identity.ClientId:
    privacy_key = crypto.oaep_decrypt(provider_private_key, env.wrapped_key)
    if len(privacy_key) != PRIVACY_KEY_LEN:
        raise DecryptFailed("unwrapped privacy key has wrong length")
    plaintext = crypto.aes_cbc_decrypt(privacy_key, env.iv, env.ciphertext)
    try:
        return identity.decode_client_id(plaintext)
    except DecodeFailed:
        raise
    except Exception as exc:
        raise DecodeFailed("plaintext is not a client id") from exc


# -- content key wrap ------------------------------------------------------------

def wrap_content_keys(
    keys: Iterable[ContentKeyEntry], device_public_key_der: bytes, rng: Random
) -> list[WrappedKeyEntry]:
    """Wrap each content key to the device key in its own envelope."""
    return [
        WrappedKeyEntry(
            key_id=entry.key_id,
            wrapped_key=crypto.oaep_encrypt(device_public_key_der, entry.key, rng),
            ttl_s=entry.ttl_s,
        )
        for entry in keys
    ]


def unwrap_content_keys(
    wrapped: Iterable[WrappedKeyEntry], device_private_key: rsa.RSAPrivateKey
) -> list[ContentKeyEntry]:
    out = []
    for entry in wrapped:
        key = crypto.oaep_decrypt(device_private_key, entry.wrapped_key)
        if len(key) != CONTENT_KEY_LEN:
            raise DecryptFailed("unwrapped content key has wrong length")
        out.append(ContentKeyEntry(entry.key_id, key, entry.ttl_s))
    return out
