"""Simulated license/renewal server with query-string policy injection.

The server plays the provider role end to end: it unwraps encrypted Client
IDs with its provider key, checks the device certificate chain against the
trusted provisioning root, verifies the request signature with the device
public key taken from that chain, and answers with content keys wrapped to
the same device key. Renewals are answered from an in-memory map of served
request ids. Policies come from a template, typically parsed off a URL
query string exactly as integration test servers let developers do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random
from urllib.parse import parse_qsl

from cryptography.hazmat.primitives.asymmetric import rsa

from . import crypto, identity, privacy, protocol
from .exceptions import (
    BadValue,
    ChainInvalid,
    PolicyViolated,
    SignatureInvalid,
    UnknownKeyId,
    UnknownKind,
    UnknownPolicyKey,
    UnknownRequestId,
)
from .identity import Certificate, ClientId
from .privacy import ContentKeyEntry
from .protocol import (
    ClearClientId,
    EncryptedClientId,
    LicensePolicy,
    LicenseRequest,
    LicenseResponse,
    MessageKind,
    POLICY_FIELDS,
    RenewalRequest,
    RenewalResponse,
    SignedMessage,
)

DEFAULT_KEY_TTL_S = 3600

_SERVER_SIGNING_SEED = b"emeforge:server:signing:v1"


def parse_policy_params(query: str) -> LicensePolicy:
    """Parse ``k=v&k=v`` text whose keys are LicensePolicy field names."""
    types = {attr: kind for attr, _, kind in POLICY_FIELDS}
    kwargs: dict[str, object] = {}
    for key, value in parse_qsl(query, keep_blank_values=True):
        kind = types.get(key)
        if kind is None:
            raise UnknownPolicyKey(f"unknown policy key {key!r}")
        if kind is bool:
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0"):
                raise BadValue(f"{key} expects true/false, got {value!r}")
            kwargs[key] = lowered in ("true", "1")
        elif kind is int:
            try:
                parsed = int(value)
            except ValueError as exc:
                raise BadValue(f"{key} expects an integer, got {value!r}") from exc
            if parsed < 0:
                raise BadValue(f"{key} must be >= 0")
            kwargs[key] = parsed
        else:
            kwargs[key] = value
    return LicensePolicy(**kwargs)


@dataclass
class ServerConfig:
    provider_private_key: rsa.RSAPrivateKey
    signing_key: rsa.RSAPrivateKey
    policy_template: LicensePolicy
    content_keys: dict[bytes, bytes]
    trusted_identity_root: Certificate
    ott_field_template: bytes | None = None


@dataclass
class ServedRequest:
    key_ids: tuple[bytes, ...]
    device_public_key_der: bytes
    ttl_s: int


@dataclass
class LicenseServer:
    config: ServerConfig
    rng: Random
    served: dict[bytes, ServedRequest] = field(default_factory=dict)

    @property
    def signing_public_key_der(self) -> bytes:
        return crypto.public_key_der(self.config.signing_key.public_key())

    def _recover_client_id(self, request: LicenseRequest | RenewalRequest) -> ClientId:
        payload = request.client_id_payload
        if isinstance(payload, ClearClientId):
            return payload.client_id
        assert isinstance(payload, EncryptedClientId)
        return privacy.decrypt_client_id(
            payload.envelope, self.config.provider_private_key
        )

    def _ttl(self) -> int:
        duration = self.config.policy_template.license_duration_s
        return duration if duration > 0 else DEFAULT_KEY_TTL_S

    def handle_license_request(self, sm: SignedMessage, now: int) -> SignedMessage:
        if sm.kind != MessageKind.LICENSE_REQUEST:
            raise UnknownKind(f"expected a license request, got {sm.kind.name}")
        request = protocol.decode_message(MessageKind.LICENSE_REQUEST, sm.body)
        assert isinstance(request, LicenseRequest)

        client_id = self._recover_client_id(request)
        if not identity.verify_chain(
            client_id.chain, self.config.trusted_identity_root
        ):
            raise ChainInvalid("device certificate chain not rooted in our trust")
        device_key_der = client_id.chain.device_cert.public_key_der
        if not protocol.verify_message(sm, device_key_der):
            raise SignatureInvalid("license request signature rejected")

        for key_id in request.content_key_ids:
            if key_id not in self.config.content_keys:
                raise UnknownKeyId(f"no content key {key_id.hex()}")

        ttl = self._ttl()
        entries = [
            ContentKeyEntry(key_id, self.config.content_keys[key_id], ttl)
            for key_id in request.content_key_ids
        ]
        wrapped = privacy.wrap_content_keys(entries, device_key_der, self.rng)
        response = LicenseResponse(
            request_id=request.request_id,
            keys=tuple(wrapped),
            policy=self.config.policy_template,
            ott_field=self.config.ott_field_template,
        )
        self.served[request.request_id] = ServedRequest(
            request.content_key_ids, device_key_der, ttl
        )
        return protocol.sign_message(
            MessageKind.LICENSE_RESPONSE,
            protocol.encode_message(response),
            self.config.signing_key,
        )

    def handle_renewal_request(self, sm: SignedMessage, now: int) -> SignedMessage:
        if sm.kind != MessageKind.RENEWAL_REQUEST:
            raise UnknownKind(f"expected a renewal request, got {sm.kind.name}")
        request = protocol.decode_message(MessageKind.RENEWAL_REQUEST, sm.body)
        assert isinstance(request, RenewalRequest)

        served = self.served.get(request.request_id)
        if served is None:
            raise UnknownRequestId(f"request {request.request_id.hex()} never served")
        if not protocol.verify_message(sm, served.device_public_key_der):
            raise SignatureInvalid("renewal request signature rejected")
        if (
            self.config.policy_template.always_include_client_id
            and request.client_id_payload is None
        ):
            raise PolicyViolated("policy demands a client id in renewal requests")

        ttl = self._ttl()
        response = RenewalResponse(
            request_id=request.request_id,
            updated_ttls=tuple((key_id, ttl) for key_id in served.key_ids),
            policy=self.config.policy_template,
            ott_field=self.config.ott_field_template,
        )
        return protocol.sign_message(
            MessageKind.RENEWAL_RESPONSE,
            protocol.encode_message(response),
            self.config.signing_key,
        )


def make_license_server(
    policy: LicensePolicy | str = "",
    content_keys: dict[bytes, bytes] | None = None,
    rng: Random | None = None,
    ott_field: bytes | None = None,
) -> tuple[LicenseServer, privacy.ServerCertificate]:
    """Assemble a server wired to the built-in default service certificate.

    The returned certificate is what CDM configs should carry so their
    privacy envelopes are addressed to this server's provider key.
    """
    if isinstance(policy, str):
        policy = parse_policy_params(policy)
    rng = rng if rng is not None else Random(0)
    if content_keys is None:
        key_id = rng.randbytes(privacy.KEY_ID_LEN)
        content_keys = {key_id: rng.randbytes(privacy.CONTENT_KEY_LEN)}
    config = ServerConfig(
        provider_private_key=privacy.default_provider_private_key(),
        signing_key=crypto.derive_rsa_private_key(_SERVER_SIGNING_SEED),
        policy_template=policy,
        content_keys=content_keys,
        trusted_identity_root=identity.root_certificate(),
        ott_field_template=ott_field,
    )
    return LicenseServer(config, rng), privacy.default_service_certificate()
