"""Wire format tour: varints, field keys, and the license-policy code bytes.

Run: python demos/01_wire_format.py
"""

from emeforge import codec, protocol
from emeforge.codec import FieldKey, WIRE_LENGTH_DELIMITED, WIRE_VARINT
from emeforge.protocol import POLICY_FIELDS, LicensePolicy

print("== varints ==")
for value in (0, 8, 127, 128, 300, 2**32):
    encoded = codec.encode_varint(value)
    print(f"  {value:>12} -> {encoded.hex(' ')}")

print("\n== field keys ==")
print("  a key is varint((field_number << 3) | wire_kind)")
print(f"  field 1, varint value 1   -> {codec.encode_field(FieldKey(1, WIRE_VARINT), 1).hex(' ')}")
print(f"  field 8, bytes 'a'        -> {codec.encode_field(FieldKey(8, WIRE_LENGTH_DELIMITED), b'a').hex(' ')}")
print(f"  field 16, varint value 0  -> {codec.encode_field(FieldKey(16, WIRE_VARINT), 0).hex(' ')} (two-byte key)")

print("\n== license policy codes ==")
print("  each policy field number is chosen so its key byte IS the code:")
for attr, number, kind in POLICY_FIELDS:
    sample = {attr: "https://x" if kind is str else (True if kind is bool else 7)}
    data = protocol.encode_policy(LicensePolicy(**sample))
    key_len = 2 if number >= 16 else 1
    print(f"  0x{data[:key_len].hex():<4} {attr}")

print("\n== a realistic policy ==")
policy = LicensePolicy(
    can_play=True,
    can_renew=True,
    renewal_delay_s=10,
    renewal_retry_interval_s=30,
    always_include_client_id=True,
)
data = protocol.encode_policy(policy)
print(f"  encoded: {data.hex(' ')}")
print(f"  decoded: {protocol.decode_policy(data)}")
