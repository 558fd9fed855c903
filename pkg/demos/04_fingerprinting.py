"""Device fingerprinting from clear Client IDs.

Shows the three properties an origin can exploit when the Client ID leaks:
mobile serials are unique per device, stable across re-provisioning, and
desktop serials collapse to one per CDM version. Also renders the
augmented user-agent and catches a spoofed UA.

Run: python demos/04_fingerprinting.py
"""

import random

from emeforge import identity
from emeforge.audit import build_augmented_ua, detect_ua_conflict, extract_fingerprint
from emeforge.identity import ClientInfo, DeviceKeybox

rng = random.Random(7)

mobile_info = ClientInfo(
    architecture="arm64-v8a",
    company_name="Google",
    device_name="panther",
    product_name="panther",
    model_name="Pixel 7",
    application_name="org.mozilla.firefox",
    build_info="google/panther/panther:13/TQ2A.230505.002/8940162:user/release-keys",
    cdm_version="17.0.0",
)

print("== uniqueness: 5 mobile devices ==")
keyboxes = [
    DeviceKeybox(device_id=rng.randbytes(32), seed=rng.randbytes(32)) for _ in range(5)
]
for index, keybox in enumerate(keyboxes):
    cid, _ = identity.provision_mobile(keybox, "org.mozilla.firefox", mobile_info)
    fp = extract_fingerprint(cid)
    print(f"  device {index}: serial {fp.serial_hex}  ({fp.device_class.value})")

print("\n== stability: one device, three re-provisionings ==")
for round_number in range(3):
    cid, _ = identity.provision_mobile(keyboxes[0], "org.mozilla.firefox", mobile_info)
    print(f"  round {round_number}: serial {extract_fingerprint(cid).serial_hex}")

print("\n== desktop: anonymity set is the CDM version ==")
desktop_info = ClientInfo(
    architecture="x64",
    company_name="Google",
    product_name="ChromeCDM",
    model_name="ChromeCDM",
    platform_name="Linux",
    cdm_version="4.10.2557.0",
)
for attempt in range(2):
    cid, _ = identity.provision_desktop("4.10.2557.0", desktop_info)
    fp = extract_fingerprint(cid)
    print(f"  install {attempt}: serial {fp.serial_hex}  ({fp.device_class.value})")

print("\n== the augmented user-agent ==")
print(f"  mobile : {build_augmented_ua(mobile_info)}")
print(f"  desktop: {build_augmented_ua(desktop_info)}")

print("\n== catching a spoofed UA ==")
spoofed = "Mozilla/5.0 (Windows NT 10.0; Win64; x64) Chrome/113.0.0.0 Safari/537.36"
finding = detect_ua_conflict(spoofed, mobile_info)
print(f"  claimed : {spoofed}")
print(f"  finding : {finding.description}")
