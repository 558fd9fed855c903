"""Client ID model: Client Info attributes, device certificate chain,
deterministic provisioning.

Two provisioning paths exist. Mobile devices carry a factory keybox; the
certificate serial and the device RSA keypair are both derived from a keyed
hash of device id and calling application, so re-provisioning the same
device for the same app always reproduces the same Client ID, while
distinct devices get distinct serials. Desktop CDMs have no per-device
secret at all: the chain is a pure function of the CDM version string, so
every desktop install of a given version shares one chain and one private
key.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from cryptography.hazmat.primitives.asymmetric import rsa

from . import codec, crypto
from .codec import FieldKey, RawField, WIRE_LENGTH_DELIMITED, WIRE_VARINT
from .exceptions import DecodeFailed, ProfileMismatch

SERIAL_LEN = 16
DEVICE_ID_LEN = 32

_ROOT_SEED = b"emeforge:identity:root:v1"
_INTERMEDIATE_SEED = b"emeforge:identity:intermediate:v1"
_DESKTOP_SEED = b"emeforge:identity:desktop:v1"

ROOT_SUBJECT = "emeforge root authority"
INTERMEDIATE_SUBJECT = "emeforge provisioning service"


@dataclass(frozen=True)
class ClientInfo:
    """Device and software metadata carried inside the Client ID.

    Desktop CDMs report architecture, company, model, platform and CDM
    version only; mobile CDMs omit the platform name but add the device
    codenames, the calling application, its certificate hash, and the full
    build string.
    """

    architecture: str
    company_name: str
    product_name: str
    model_name: str
    cdm_version: str
    device_name: str | None = None
    platform_name: str | None = None
    application_name: str | None = None
    package_cert_hash: str | None = None
    build_info: str | None = None
    security_patch_level: int = 0
    oem_build_info: str | None = None


def is_mobile_profile(info: ClientInfo) -> bool:
    return info.platform_name is None and info.build_info is not None


def is_desktop_profile(info: ClientInfo) -> bool:
    return (
        info.platform_name is not None
        and info.device_name is None
        and info.build_info is None
        and info.application_name is None
        and info.package_cert_hash is None
    )


@dataclass(frozen=True)
class Certificate:
    """Minimal certificate: serial, subject, RSA public key, issuer link.

    The signature covers serial || subject || public key DER and is produced
    by the issuer's private key (the root signs itself).
    """

    serial: bytes
    subject: str
    public_key_der: bytes
    issuer_subject: str
    signature: bytes

    def signing_payload(self) -> bytes:
        return self.serial + self.subject.encode() + self.public_key_der


@dataclass(frozen=True)
class CertificateChain:
    device_cert: Certificate
    intermediate_cert: Certificate
    root_cert: Certificate


@dataclass(frozen=True)
class ClientId:
    info: ClientInfo
    chain: CertificateChain


@dataclass(frozen=True)
class DeviceKeybox:
    """Per-device factory root of trust: public device id plus secret seed."""

    device_id: bytes
    seed: bytes

    def __post_init__(self) -> None:
        if len(self.device_id) != DEVICE_ID_LEN:
            raise ValueError(f"device_id must be {DEVICE_ID_LEN} bytes")
        if len(self.seed) != DEVICE_ID_LEN:
            raise ValueError(f"seed must be {DEVICE_ID_LEN} bytes")


# -- wire format --------------------------------------------------------------

_INFO_TEXT_FIELDS = (
    # (field number, attribute, required)
    (1, "architecture", True),
    (2, "company_name", True),
    (3, "device_name", False),
    (4, "product_name", True),
    (5, "model_name", True),
    (6, "platform_name", False),
    (7, "application_name", False),
    (8, "package_cert_hash", False),
    (9, "build_info", False),
    (10, "cdm_version", True),
    (12, "oem_build_info", False),
)
_INFO_SPL_FIELD = 11


def encode_client_info(info: ClientInfo) -> bytes:
    fields: list[RawField] = []
    for number, attr, required in _INFO_TEXT_FIELDS:
        value = getattr(info, attr)
        if value is None or (required and value == ""):
            continue
        fields.append(RawField(FieldKey(number, WIRE_LENGTH_DELIMITED), value.encode()))
    if info.security_patch_level:
        fields.append(
            RawField(FieldKey(_INFO_SPL_FIELD, WIRE_VARINT), info.security_patch_level)
        )
    return codec.encode_fields(sorted(fields, key=lambda f: f.key.field_number))


def decode_client_info(data: bytes) -> ClientInfo:
    by_number: dict[int, int | bytes] = {}
    for field in codec.decode_fields(data):
        by_number[field.key.field_number] = field.value

    def text(number: int, required: bool) -> str | None:
        value = by_number.get(number)
        if value is None:
            return "" if required else None
        if not isinstance(value, bytes):
            raise DecodeFailed(f"client info field {number} has wrong wire kind")
        return value.decode()

    kwargs = {
        attr: text(number, required) for number, attr, required in _INFO_TEXT_FIELDS
    }
    spl = by_number.get(_INFO_SPL_FIELD, 0)
    if not isinstance(spl, int):
        raise DecodeFailed("security patch level has wrong wire kind")
    return ClientInfo(security_patch_level=spl, **kwargs)


def _encode_cert(cert: Certificate) -> bytes:
    fields = [
        RawField(FieldKey(1, WIRE_LENGTH_DELIMITED), cert.serial),
        RawField(FieldKey(2, WIRE_LENGTH_DELIMITED), cert.subject.encode()),
        RawField(FieldKey(3, WIRE_LENGTH_DELIMITED), cert.public_key_der),
        RawField(FieldKey(4, WIRE_LENGTH_DELIMITED), cert.issuer_subject.encode()),
        RawField(FieldKey(5, WIRE_LENGTH_DELIMITED), cert.signature),
    ]
    return codec.encode_fields(fields)


def _decode_cert(data: bytes) -> Certificate:
    values: dict[int, bytes] = {}
    for field in codec.decode_fields(data):
        if not isinstance(field.value, bytes):
            raise DecodeFailed("certificate fields are length-delimited")
        values[field.key.field_number] = field.value
    try:
        return Certificate(
            serial=values[1],
            subject=values[2].decode(),
            public_key_der=values[3],
            issuer_subject=values[4].decode(),
            signature=values[5],
        )
    except KeyError as exc:
        raise DecodeFailed(f"certificate missing field {exc}") from exc


def encode_chain(chain: CertificateChain) -> bytes:
    return codec.encode_fields(
        [
            RawField(FieldKey(1, WIRE_LENGTH_DELIMITED), _encode_cert(chain.device_cert)),
            RawField(
                FieldKey(2, WIRE_LENGTH_DELIMITED), _encode_cert(chain.intermediate_cert)
            ),
            RawField(FieldKey(3, WIRE_LENGTH_DELIMITED), _encode_cert(chain.root_cert)),
        ]
    )


def decode_chain(data: bytes) -> CertificateChain:
    certs: dict[int, Certificate] = {}
    for field in codec.decode_fields(data):
        if isinstance(field.value, bytes):
            certs[field.key.field_number] = _decode_cert(field.value)
    try:
        return CertificateChain(certs[1], certs[2], certs[3])
    except KeyError as exc:
        raise DecodeFailed("certificate chain needs three links") from exc


def encode_client_id(cid: ClientId) -> bytes:
    return codec.encode_fields(
        [
            RawField(FieldKey(1, WIRE_LENGTH_DELIMITED), encode_client_info(cid.info)),
            RawField(FieldKey(2, WIRE_LENGTH_DELIMITED), encode_chain(cid.chain)),
        ]
    )


def decode_client_id(data: bytes) -> ClientId:
    info: ClientInfo | None = None
    chain: CertificateChain | None = None
    for field in codec.decode_fields(data):
        if field.key.field_number == 1 and isinstance(field.value, bytes):
            info = decode_client_info(field.value)
        elif field.key.field_number == 2 and isinstance(field.value, bytes):
            chain = decode_chain(field.value)
    if info is None or chain is None:
        raise DecodeFailed("client id needs both info and chain")
    return ClientId(info, chain)


# -- authorities ---------------------------------------------------------------

def _issue(
    serial: bytes,
    subject: str,
    public_key_der: bytes,
    issuer_subject: str,
    issuer_key: rsa.RSAPrivateKey,
) -> Certificate:
    unsigned = Certificate(serial, subject, public_key_der, issuer_subject, b"")
    signature = crypto.sign(issuer_key, unsigned.signing_payload())
    return Certificate(serial, subject, public_key_der, issuer_subject, signature)


@lru_cache(maxsize=1)
def _root_key() -> rsa.RSAPrivateKey:
    return crypto.derive_rsa_private_key(_ROOT_SEED)


@lru_cache(maxsize=1)
def root_certificate() -> Certificate:
    """The trust anchor every provisioned chain terminates in (self-signed)."""
    key = _root_key()
    return _issue(
        serial=crypto.hmac_sha256(_ROOT_SEED, b"serial")[:SERIAL_LEN],
        subject=ROOT_SUBJECT,
        public_key_der=crypto.public_key_der(key.public_key()),
        issuer_subject=ROOT_SUBJECT,
        issuer_key=key,
    )


@lru_cache(maxsize=1)
def _intermediate_key() -> rsa.RSAPrivateKey:
    return crypto.derive_rsa_private_key(_INTERMEDIATE_SEED)


@lru_cache(maxsize=1)
def intermediate_certificate() -> Certificate:
    return _issue(
        serial=crypto.hmac_sha256(_INTERMEDIATE_SEED, b"serial")[:SERIAL_LEN],
        subject=INTERMEDIATE_SUBJECT,
        public_key_der=crypto.public_key_der(_intermediate_key().public_key()),
        issuer_subject=ROOT_SUBJECT,
        issuer_key=_root_key(),
    )


def _build_chain(serial: bytes, device_key: rsa.RSAPrivateKey) -> CertificateChain:
    device_cert = _issue(
        serial=serial,
        subject=f"device:{serial.hex()}",
        public_key_der=crypto.public_key_der(device_key.public_key()),
        issuer_subject=INTERMEDIATE_SUBJECT,
        issuer_key=_intermediate_key(),
    )
    return CertificateChain(device_cert, intermediate_certificate(), root_certificate())


# -- provisioning --------------------------------------------------------------

def provision_mobile(
    keybox: DeviceKeybox, app_id: str, info: ClientInfo
) -> tuple[ClientId, rsa.RSAPrivateKey]:
    """Provision a mobile device for one application.

    Pure function of (keybox, app_id, info): the same inputs always yield a
    byte-identical Client ID, and distinct (device id, app) pairs diverge in
    both serial and keypair.
    """
    if not is_mobile_profile(info):
        raise ProfileMismatch("mobile provisioning requires a mobile Client Info")
    base = crypto.hmac_sha256(keybox.seed, keybox.device_id + b"\x00" + app_id.encode())
    serial = crypto.hmac_sha256(base, b"serial")[:SERIAL_LEN]
    device_key = crypto.derive_rsa_private_key(crypto.hmac_sha256(base, b"device-key"))
    return ClientId(info, _build_chain(serial, device_key)), device_key


@lru_cache(maxsize=64)
def _desktop_chain(cdm_version: str) -> tuple[CertificateChain, rsa.RSAPrivateKey]:
    base = crypto.hmac_sha256(_DESKTOP_SEED, cdm_version.encode())
    serial = crypto.hmac_sha256(base, b"serial")[:SERIAL_LEN]
    device_key = crypto.derive_rsa_private_key(crypto.hmac_sha256(base, b"device-key"))
    return _build_chain(serial, device_key), device_key


def provision_desktop(
    cdm_version: str, info: ClientInfo
) -> tuple[ClientId, rsa.RSAPrivateKey]:
    """Desktop chains are hard-coded per CDM version: no per-device state."""
    if not is_desktop_profile(info):
        raise ProfileMismatch("desktop provisioning requires a desktop Client Info")
    if info.cdm_version != cdm_version:
        raise ProfileMismatch("client info carries a different CDM version")
    chain, device_key = _desktop_chain(cdm_version)
    return ClientId(info, chain), device_key


def _link_valid(cert: Certificate, issuer: Certificate) -> bool:
    if cert.issuer_subject != issuer.subject:
        return False
    return crypto.verify(issuer.public_key_der, cert.signature, cert.signing_payload())


def verify_chain(chain: CertificateChain, trusted_root: Certificate) -> bool:
    """True iff device->intermediate->root all verify and the root is ours."""
    return (
        chain.root_cert == trusted_root
        and _link_valid(chain.root_cert, chain.root_cert)
        and _link_valid(chain.intermediate_cert, chain.root_cert)
        and _link_valid(chain.device_cert, chain.intermediate_cert)
    )
