from __future__ import annotations

import random

import pytest

from emeforge import identity, privacy
from emeforge.identity import ClientInfo, DeviceKeybox

PIXEL7_INFO = ClientInfo(
    architecture="arm64-v8a",
    company_name="Google",
    device_name="panther",
    product_name="panther",
    model_name="Pixel 7",
    application_name="com.android.chrome",
    package_cert_hash="p4tiLoN3BH338BWzmwQ=",
    build_info="google/panther/panther:13/TQ2A.230505.002/8940162:user/release-keys",
    cdm_version="17.0.0",
    security_patch_level=0,
    oem_build_info="OEMCrypto Level3 Code May 20 2022 21:36:542",
)

LINUX_INFO = ClientInfo(
    architecture="x64",
    company_name="Google",
    product_name="ChromeCDM",
    model_name="ChromeCDM",
    platform_name="Linux",
    cdm_version="4.10.2557.0",
)


def make_keybox(seed: int) -> DeviceKeybox:
    rng = random.Random(seed)
    return DeviceKeybox(device_id=rng.randbytes(32), seed=rng.randbytes(32))


@pytest.fixture(scope="session")
def mobile_identity():
    """A provisioned mobile device: (ClientId, device private key)."""
    return identity.provision_mobile(make_keybox(1), "com.android.chrome", PIXEL7_INFO)


@pytest.fixture(scope="session")
def desktop_identity():
    return identity.provision_desktop("4.10.2557.0", LINUX_INFO)


@pytest.fixture(scope="session")
def service_certificate():
    return privacy.default_service_certificate()


@pytest.fixture()
def rng():
    return random.Random(0xEFE)
