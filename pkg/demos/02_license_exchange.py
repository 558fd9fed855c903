"""One full license exchange, message by message.

A mobile CDM with privacy mode on talks to an in-process license server:
license request -> response -> forced renewal -> renewal response, then a
frame decryption with the delivered content key.

Run: python demos/02_license_exchange.py
"""

import random

from emeforge import crypto, identity, protocol
from emeforge.cdm import Cdm, CdmConfig, Platform, SessionType
from emeforge.identity import ClientInfo, DeviceKeybox
from emeforge.protocol import EncryptedClientId, MessageKind
from emeforge.server import make_license_server

rng = random.Random(2024)

info = ClientInfo(
    architecture="arm64-v8a",
    company_name="Google",
    device_name="panther",
    product_name="panther",
    model_name="Pixel 7",
    application_name="com.android.chrome",
    build_info="google/panther/panther:13/TQ2A.230505.002/8940162:user/release-keys",
    cdm_version="17.0.0",
)
keybox = DeviceKeybox(device_id=rng.randbytes(32), seed=rng.randbytes(32))
client_id, device_key = identity.provision_mobile(keybox, "com.android.chrome", info)
print(f"provisioned device, cert serial {client_id.chain.device_cert.serial.hex()}")

key_id = rng.randbytes(16)
server, certificate = make_license_server(
    policy="can_play=true&can_renew=true&renewal_delay_s=5&always_include_client_id=true",
    content_keys={key_id: rng.randbytes(16)},
    rng=rng,
)

cdm = Cdm(
    CdmConfig(
        platform=Platform.MOBILE,
        client_id=client_id,
        device_private_key=device_key,
        privacy_mode_enabled=True,  # Chromium-family embedder opts in
        server_certificate=certificate,
        license_server_public_key_der=server.signing_public_key_der,
    ),
    rng,
)

session = cdm.create_session(SessionType.TEMPORARY)
print(f"session {session.session_id_hex} created, wallet empty")

request = cdm.generate_request(session, [key_id])
body = protocol.decode_message(MessageKind.LICENSE_REQUEST, request.body)
print(f"license request: {len(request.body)} B body, "
      f"client id encrypted: {isinstance(body.client_id_payload, EncryptedClientId)}")

response = server.handle_license_request(request, now=0)
cdm.update(session, response, now=0)
slot = session.key_wallet[key_id]
print(f"license response processed: key ttl -> expiry t={slot.expiry}, state {session.state.name}")

print(f"renewal due at t={session.renewal_due}")
[renewal] = cdm.tick(session.renewal_due)
renewal_body = protocol.decode_message(MessageKind.RENEWAL_REQUEST, renewal.body)
print(f"renewal request at t=5, client id encrypted: "
      f"{isinstance(renewal_body.client_id_payload, EncryptedClientId)}")
cdm.update(session, server.handle_renewal_request(renewal, 5), now=5)
print(f"renewal processed: expiry now t={session.key_wallet[key_id].expiry}")

iv = rng.randbytes(16)
frame = crypto.aes_cbc_encrypt(slot.key, iv, b"one encrypted media frame")
print(f"decrypt_sample -> {cdm.decrypt_sample(session, key_id, iv, frame)!r}")
