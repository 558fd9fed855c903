"""Crypto primitives: deterministic RSA, OAEP wrap, signing, AES-CBC.

Everything that consumes randomness takes it from the caller, either as a
``random.Random`` or as key material fed to an HMAC counter stream. That is
what makes whole simulated flows reproducible from a single seed: RSA keys
are searched from a deterministic byte stream, OAEP seeds come from the
injected rng (the encoder is the RFC 8017 construction, so the standard
library-side decrypt still applies), and signatures use PKCS#1 v1.5 which
is deterministic by definition.
"""

from __future__ import annotations

import hashlib
import hmac
from functools import lru_cache
from random import Random

import gmpy2
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.padding import PKCS7

from .exceptions import DecryptFailed

RSA_BITS = 2048
RSA_EXPONENT = 65537

_HASH_LEN = 32  # SHA-256


def hmac_sha256(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


class HmacStream:
    """Deterministic byte stream: HMAC-SHA256(key, counter)."""

    def __init__(self, key: bytes):
        self._key = key
        self._counter = 0
        self._buffer = b""

    def read(self, n: int) -> bytes:
        while len(self._buffer) < n:
            block = hmac_sha256(self._key, self._counter.to_bytes(8, "big"))
            self._counter += 1
            self._buffer += block
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out


def _search_prime(stream: HmacStream, bits: int) -> int:
    # Top two bits forced so the two-prime product keeps its full width.
    while True:
        candidate = int.from_bytes(stream.read(bits // 8), "big")
        candidate |= (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        p = int(gmpy2.next_prime(candidate))
        if p.bit_length() == bits:
            return p


@lru_cache(maxsize=4096)
def derive_rsa_private_key(material: bytes, bits: int = RSA_BITS) -> rsa.RSAPrivateKey:
    """Derive an RSA private key as a pure function of ``material``."""
    stream = HmacStream(hmac_sha256(material, b"rsa-keygen"))
    while True:
        p = _search_prime(stream, bits // 2)
        q = _search_prime(stream, bits // 2)
        if p == q:
            continue
        lam = gmpy2.lcm(p - 1, q - 1)
        if gmpy2.gcd(RSA_EXPONENT, lam) != 1:
            continue
        d = int(gmpy2.invert(RSA_EXPONENT, lam))
        numbers = rsa.RSAPrivateNumbers(
            p=p,
            q=q,
            d=d,
            dmp1=d % (p - 1),
            dmq1=d % (q - 1),
            iqmp=int(gmpy2.invert(q, p)),
            public_numbers=rsa.RSAPublicNumbers(RSA_EXPONENT, p * q),
        )
        # p and q come from gmpy2's prime search and the CRT parameters are
        # computed right here, so the backend's re-validation is redundant
        # and would dominate provisioning time.
        return numbers.private_key(unsafe_skip_rsa_key_validation=True)


def public_key_der(public_key: rsa.RSAPublicKey) -> bytes:
    return public_key.public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )


def load_public_key_der(der: bytes) -> rsa.RSAPublicKey:
    key = serialization.load_der_public_key(der)
    if not isinstance(key, rsa.RSAPublicKey):
        raise DecryptFailed("not an RSA public key")
    return key


def sign(private_key: rsa.RSAPrivateKey, data: bytes) -> bytes:
    return private_key.sign(data, padding.PKCS1v15(), hashes.SHA256())


def verify(public_key_spki: bytes, signature: bytes, data: bytes) -> bool:
    try:
        key = load_public_key_der(public_key_spki)
        key.verify(signature, data, padding.PKCS1v15(), hashes.SHA256())
        return True
    except Exception:
        return False


# -- RSA-OAEP (SHA-256 / MGF1-SHA256, empty label) ---------------------------

def _mgf1(seed: bytes, length: int) -> bytes:
    out = b""
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
        counter += 1
    return out[:length]


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def oaep_encrypt(public_key_spki: bytes, plaintext: bytes, rng: Random) -> bytes:
    """RFC 8017 OAEP encrypt with its seed drawn from the injected rng."""
    key = load_public_key_der(public_key_spki)
    numbers = key.public_numbers()
    k = (numbers.n.bit_length() + 7) // 8
    if len(plaintext) > k - 2 * _HASH_LEN - 2:
        raise ValueError("plaintext too long for OAEP with this key")
    lhash = hashlib.sha256(b"").digest()
    ps = b"\x00" * (k - len(plaintext) - 2 * _HASH_LEN - 2)
    db = lhash + ps + b"\x01" + plaintext
    seed = rng.randbytes(_HASH_LEN)
    masked_db = _xor(db, _mgf1(seed, k - _HASH_LEN - 1))
    masked_seed = _xor(seed, _mgf1(masked_db, _HASH_LEN))
    em = int.from_bytes(b"\x00" + masked_seed + masked_db, "big")
    return pow(em, numbers.e, numbers.n).to_bytes(k, "big")


def oaep_decrypt(private_key: rsa.RSAPrivateKey, ciphertext: bytes) -> bytes:
    try:
        return private_key.decrypt(
            ciphertext,
            padding.OAEP(
                mgf=padding.MGF1(hashes.SHA256()),
                algorithm=hashes.SHA256(),
                label=None,
            ),
        )
    except Exception as exc:
        raise DecryptFailed("OAEP unwrap failed") from exc


# -- AES-CBC with block padding ----------------------------------------------

def aes_cbc_encrypt(key: bytes, iv: bytes, plaintext: bytes) -> bytes:
    padder = PKCS7(128).padder()
    padded = padder.update(plaintext) + padder.finalize()
    encryptor = Cipher(algorithms.AES(key), modes.CBC(iv)).encryptor()
    return encryptor.update(padded) + encryptor.finalize()


def aes_cbc_decrypt(key: bytes, iv: bytes, ciphertext: bytes) -> bytes:
    try:
        decryptor = Cipher(algorithms.AES(key), modes.CBC(iv)).decryptor()
        padded = decryptor.update(ciphertext) + decryptor.finalize()
        unpadder = PKCS7(128).unpadder()
        return unpadder.update(padded) + unpadder.finalize()
    except Exception as exc:
        raise DecryptFailed("CBC decryption failed") from exc
