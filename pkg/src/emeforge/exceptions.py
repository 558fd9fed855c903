"""Exception hierarchy for the whole package.

Every error raised on a contract boundary derives from EmeForgeError so
callers (CLI, HTTP service, auditor) can catch one base class.
"""


class EmeForgeError(Exception):
    """Base class for all package errors."""


# -- codec ------------------------------------------------------------------

class Truncated(EmeForgeError):
    """Input ended before a varint, length prefix, or payload completed."""


class Overflow(EmeForgeError):
    """Varint does not fit in 64 bits."""


class InvalidKey(EmeForgeError):
    """Field key is malformed (field number zero)."""


class KindMismatch(EmeForgeError):
    """Value type does not match the key's wire kind."""


class KindUnsupported(EmeForgeError):
    """Wire kind other than varint (0) or length-delimited (2)."""


# -- protocol ---------------------------------------------------------------

class MissingRequiredField(EmeForgeError):
    """A message is missing a field its schema requires."""


class InvariantViolation(EmeForgeError):
    """Message-level invariant broken at construction time."""


class UnknownKind(EmeForgeError):
    """Message kind outside the five defined operations."""


class SignatureInvalid(EmeForgeError):
    """Message signature failed verification."""


# -- identity ---------------------------------------------------------------

class ProfileMismatch(EmeForgeError):
    """Client Info shape does not match the requested device class."""


# -- privacy ----------------------------------------------------------------

class CertificateUnverified(EmeForgeError):
    """Refusing to encrypt to a service certificate that fails verification."""


class DecryptFailed(EmeForgeError):
    """Key unwrap, block decryption, or padding check failed."""


class DecodeFailed(EmeForgeError):
    """Decrypted plaintext is not a valid structure."""


# -- cdm --------------------------------------------------------------------

class BadState(EmeForgeError):
    """Session is in the wrong lifecycle state for the operation."""


class NoServerCertificate(EmeForgeError):
    """Privacy mode is on but no verified service certificate is configured."""


class RequestIdMismatch(EmeForgeError):
    """Response request id does not match the session's outstanding request."""


class PolicyForbids(EmeForgeError):
    """The active license policy forbids the operation."""


class PlatformForbids(EmeForgeError):
    """Operation not available on this platform (e.g. toggling desktop privacy)."""


class KeyNotFound(EmeForgeError):
    """Requested key id is not in the session wallet."""


class KeyExpired(EmeForgeError):
    """Key is present but past its effective expiry."""


class BlobCorrupt(EmeForgeError):
    """Stored session blob failed its integrity check or cannot be parsed."""


class AllKeysExpired(EmeForgeError):
    """Every key in a loaded session blob is already expired."""


# -- license server ---------------------------------------------------------

class UnknownKeyId(EmeForgeError):
    """Request references a content key the server does not hold."""


class ChainInvalid(EmeForgeError):
    """Device certificate chain failed verification against the trusted root."""


class UnknownRequestId(EmeForgeError):
    """Renewal references a request id the server never served."""


class PolicyViolated(EmeForgeError):
    """Renewal omits the Client ID although the policy demands it."""


class UnknownPolicyKey(EmeForgeError):
    """Policy query string names a field that does not exist."""


class BadValue(EmeForgeError):
    """Policy query string value failed type checking."""


# -- user agent -------------------------------------------------------------

class EmeUnsupported(EmeForgeError):
    """Browser profile does not expose the media-key API."""


class PermissionDenied(EmeForgeError):
    """Scripted user declined the content-protection permission prompt."""


class NotFound(EmeForgeError):
    """Stored session lookup failed (reason intentionally not disclosed)."""


# -- audit ------------------------------------------------------------------

class TraceCorrupt(EmeForgeError):
    """Flow trace file is not parseable."""


class NesnMalformed(EmeForgeError):
    """Equipment serial string does not match the documented grammar."""
