"""EtherNet/IP encapsulation with the ListIdentity service.

Encapsulation header is exactly 24 bytes, little-endian:

    command u16 | length u16 (payload bytes) | session u32 | status u32 |
    sender context (8 bytes) | options u32

A ListIdentity reply carries one CPF item of type 0x000C: protocol
version u16, a 16-byte socket address (big-endian inside), then the
identity object: vendor u16, device type u16, product code u16,
revision (u8, u8), status u16, serial u32, length-prefixed product
name, state u8.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import FormatError, LengthMismatch, Truncated, UnexpectedCommand

ENCAP_HEADER = struct.Struct("<HHII8sI")
ENIP_PORT = 44818

CMD_NOP = 0x0000
CMD_LIST_SERVICES = 0x0004
CMD_LIST_IDENTITY = 0x0063
CMD_LIST_INTERFACES = 0x0064
CMD_REGISTER_SESSION = 0x0065
CMD_UNREGISTER_SESSION = 0x0066
CMD_SEND_RR_DATA = 0x006F

KNOWN_COMMANDS = {
    CMD_NOP,
    CMD_LIST_SERVICES,
    CMD_LIST_IDENTITY,
    CMD_LIST_INTERFACES,
    CMD_REGISTER_SESSION,
    CMD_UNREGISTER_SESSION,
    CMD_SEND_RR_DATA,
}

ITEM_IDENTITY = 0x000C


@dataclass(frozen=True)
class CipIdentity:
    vendor_id: int
    device_type: int
    product_code: int
    revision: tuple[int, int]
    status: int
    serial: int
    product_name: str
    state: int = 0


@dataclass(frozen=True)
class EnipMessage:
    command: int
    length: int
    session: int = 0
    status: int = 0
    options: int = 0
    identity: CipIdentity | None = None


def encode_header(command: int, payload: bytes, session: int = 0, status: int = 0, options: int = 0) -> bytes:
    return ENCAP_HEADER.pack(command, len(payload), session, status, b"\x00" * 8, options) + payload


def decode_header(data: bytes) -> tuple[EnipMessage, bytes]:
    """Decode the 24-byte header; validates the declared length."""
    if len(data) < ENCAP_HEADER.size:
        raise Truncated(f"encapsulation header needs 24 bytes, got {len(data)}")
    command, length, session, status, _context, options = ENCAP_HEADER.unpack_from(data)
    payload = data[ENCAP_HEADER.size :]
    if len(payload) != length:
        raise LengthMismatch(f"header declares {length} payload bytes, got {len(payload)}")
    return EnipMessage(command=command, length=length, session=session, status=status, options=options), bytes(payload)


def extract_frames(buffer: bytes) -> tuple[list[bytes], bytes]:
    """Cut complete encapsulation frames off the front of a stream."""
    frames: list[bytes] = []
    while len(buffer) >= ENCAP_HEADER.size:
        command, length = struct.unpack_from("<HH", buffer)
        if command not in KNOWN_COMMANDS:
            break
        end = ENCAP_HEADER.size + length
        if len(buffer) < end:
            break
        frames.append(bytes(buffer[:end]))
        buffer = buffer[end:]
    return frames, bytes(buffer)


def build_list_identity() -> bytes:
    """The 24-byte ListIdentity request: command 0x0063, length 0."""
    return encode_header(CMD_LIST_IDENTITY, b"")


def encode_identity_item(identity: CipIdentity, ip: str = "0.0.0.0", port: int = ENIP_PORT) -> bytes:
    name = identity.product_name.encode("ascii", errors="replace")
    if len(name) > 0xFF:
        raise ValueError("product name too long")
    addr = struct.pack(">HH4s8s", 2, port, bytes(int(o) for o in ip.split(".")), b"\x00" * 8)
    item = struct.pack("<H", 1) + addr
    item += struct.pack(
        "<HHHBBHI",
        identity.vendor_id,
        identity.device_type,
        identity.product_code,
        identity.revision[0],
        identity.revision[1],
        identity.status,
        identity.serial,
    )
    item += bytes([len(name)]) + name + bytes([identity.state])
    return struct.pack("<HHH", 1, ITEM_IDENTITY, len(item)) + item


def build_list_identity_response(identity: CipIdentity, ip: str = "0.0.0.0", port: int = ENIP_PORT) -> bytes:
    return encode_header(CMD_LIST_IDENTITY, encode_identity_item(identity, ip, port))


def parse_list_identity(data: bytes) -> CipIdentity:
    """Extract the identity object from a ListIdentity reply."""
    message, payload = decode_header(data)
    if message.command != CMD_LIST_IDENTITY:
        raise UnexpectedCommand(f"expected ListIdentity reply, got command 0x{message.command:04x}")
    if len(payload) < 6:
        raise Truncated("reply carries no identity item")
    item_count, item_type, item_length = struct.unpack_from("<HHH", payload)
    if item_count < 1 or item_type != ITEM_IDENTITY:
        raise FormatError(f"expected identity item, got type 0x{item_type:04x} (count {item_count})")
    item = payload[6 : 6 + item_length]
    if len(item) < item_length:
        raise Truncated("identity item beyond frame end")
    # protocol version (2) + socket address (16) + fixed identity (14) + name length (1)
    if len(item) < 33:
        raise Truncated(f"identity item needs >= 33 bytes, got {len(item)}")
    vendor_id, device_type, product_code, rev_major, rev_minor, status, serial = struct.unpack_from(
        "<HHHBBHI", item, 18
    )
    name_len = item[32]
    if len(item) < 33 + name_len:
        raise Truncated("product name beyond item end")
    name = item[33 : 33 + name_len].decode("ascii", errors="replace")
    state = item[33 + name_len] if len(item) > 33 + name_len else 0
    return CipIdentity(
        vendor_id=vendor_id,
        device_type=device_type,
        product_code=product_code,
        revision=(rev_major, rev_minor),
        status=status,
        serial=serial,
        product_name=name,
        state=state,
    )


def identity_to_fields(identity: CipIdentity, vendor_name: str | None) -> dict[str, str]:
    """Map a CIP identity onto static-info fields."""
    fields = {
        "model": identity.product_name,
        "firmware_version": f"{identity.revision[0]}.{identity.revision[1]}",
        "serial": f"0x{identity.serial:08X}",
    }
    if vendor_name:
        fields["manufacturer"] = vendor_name
    return fields
