"""Base-128 varint key-value wire codec.

Messages are flat sequences of fields. Each field starts with a key: a
varint holding ``(field_number << 3) | wire_kind``. Wire kind 0 carries an
unsigned varint value; wire kind 2 carries a byte string prefixed by a
varint length. A field number up to 15 with kind 0 therefore encodes as the
single key byte ``field_number << 3``, which keeps one-byte license-policy
codes such as 0x08 legible straight off the wire.

Varints are little-endian base-128: seven payload bits per byte, the high
bit set on every byte except the last, minimal length, at most 64 bits of
value (10 bytes).
"""

from __future__ import annotations

from dataclasses import dataclass

from .exceptions import InvalidKey, KindMismatch, KindUnsupported, Overflow, Truncated

WIRE_VARINT = 0
WIRE_LENGTH_DELIMITED = 2

MAX_VARINT = 2**64 - 1
MAX_VARINT_LEN = 10


@dataclass(frozen=True)
class FieldKey:
    """Field number plus wire kind; the varint-encoded head of a field."""

    field_number: int
    wire_kind: int

    def __post_init__(self) -> None:
        if self.field_number < 1:
            raise InvalidKey(f"field number must be >= 1, got {self.field_number}")
        if self.wire_kind not in (WIRE_VARINT, WIRE_LENGTH_DELIMITED):
            raise KindUnsupported(f"wire kind {self.wire_kind} not supported")

    @property
    def key_value(self) -> int:
        return (self.field_number << 3) | self.wire_kind


@dataclass(frozen=True)
class RawField:
    """One decoded field: key plus either an unsigned int or a byte string."""

    key: FieldKey
    value: int | bytes

    def __post_init__(self) -> None:
        if self.key.wire_kind == WIRE_VARINT and not isinstance(self.value, int):
            raise KindMismatch("varint field requires an int value")
        if self.key.wire_kind == WIRE_LENGTH_DELIMITED and not isinstance(self.value, bytes):
            raise KindMismatch("length-delimited field requires a bytes value")


def encode_varint(value: int) -> bytes:
    if value < 0 or value > MAX_VARINT:
        raise ValueError(f"varint out of range: {value}")
    out = bytearray()
    while True:
        chunk = value & 0x7F
        value >>= 7
        if value:
            out.append(chunk | 0x80)
        else:
            out.append(chunk)
            return bytes(out)


def decode_varint(data: bytes, offset: int = 0) -> tuple[int, int]:
    """Decode one varint at ``offset``; returns (value, bytes consumed)."""
    value = 0
    shift = 0
    consumed = 0
    while True:
        if offset + consumed >= len(data):
            raise Truncated("varint runs past end of input")
        byte = data[offset + consumed]
        consumed += 1
        if consumed > MAX_VARINT_LEN:
            raise Overflow("varint longer than 10 bytes")
        value |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            break
    if value > MAX_VARINT:
        raise Overflow(f"varint value exceeds 64 bits")
    return value, consumed


def encode_field(key: FieldKey, value: int | bytes) -> bytes:
    head = encode_varint(key.key_value)
    if key.wire_kind == WIRE_VARINT:
        if not isinstance(value, int):
            raise KindMismatch("varint field requires an int value")
        return head + encode_varint(value)
    if not isinstance(value, bytes):
        raise KindMismatch("length-delimited field requires a bytes value")
    return head + encode_varint(len(value)) + value


def encode_fields(fields: list[RawField]) -> bytes:
    return b"".join(encode_field(f.key, f.value) for f in fields)


def decode_fields(data: bytes) -> list[RawField]:
    """Decode a whole buffer into an ordered field list.

    Unknown field numbers are preserved; wire kinds other than 0 and 2 are
    rejected rather than guessed at.
    """
    fields: list[RawField] = []
    offset = 0
    while offset < len(data):
        key_value, consumed = decode_varint(data, offset)
        offset += consumed
        wire_kind = key_value & 0x07
        field_number = key_value >> 3
        if field_number < 1:
            raise InvalidKey("field number 0 is not a valid key")
        if wire_kind == WIRE_VARINT:
            value, consumed = decode_varint(data, offset)
            offset += consumed
            fields.append(RawField(FieldKey(field_number, WIRE_VARINT), value))
        elif wire_kind == WIRE_LENGTH_DELIMITED:
            length, consumed = decode_varint(data, offset)
            offset += consumed
            if offset + length > len(data):
                raise Truncated(
                    f"field {field_number} declares {length} bytes, "
                    f"{len(data) - offset} available"
                )
            fields.append(
                RawField(
                    FieldKey(field_number, WIRE_LENGTH_DELIMITED),
                    bytes(data[offset : offset + length]),
                )
            )
            offset += length
        else:
            raise KindUnsupported(f"wire kind {wire_kind} (field {field_number})")
    return fields
