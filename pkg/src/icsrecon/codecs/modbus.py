"""Modbus/TCP framing and the PDU subset used for enumeration.

Wire layout (big-endian):

    MBAP header (7 bytes): transaction_id u16 | protocol_id u16 (=0) |
        length u16 (bytes after the length field, i.e. unit_id + PDU) |
        unit_id u8
    PDU: function u8 | payload

Supported functions: 0x2B/0x0E Read Device Identification, 0x11 Report
Server ID, 0x03 Read Holding Registers. Exception replies carry
function|0x80 and exactly one exception-code byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import (
    FormatError,
    LengthMismatch,
    ModbusExceptionResponse,
    NotModbus,
    Truncated,
)

MBAP = struct.Struct(">HHHB")

FC_READ_HOLDING = 0x03
FC_REPORT_SLAVE_ID = 0x11
FC_ENCAPSULATED = 0x2B
MEI_DEVICE_ID = 0x0E

DEVICE_ID_BASIC = 0x01

OBJ_VENDOR_NAME = 0x00
OBJ_PRODUCT_CODE = 0x01
OBJ_REVISION = 0x02

EXC_ILLEGAL_FUNCTION = 0x01
EXC_ILLEGAL_DATA_ADDRESS = 0x02
EXC_ILLEGAL_DATA_VALUE = 0x03


@dataclass(frozen=True)
class MbapHeader:
    transaction_id: int
    unit_id: int
    length: int
    protocol_id: int = 0


@dataclass(frozen=True)
class ModbusPdu:
    function: int
    payload: bytes = b""

    @property
    def is_exception(self) -> bool:
        return bool(self.function & 0x80)

    @property
    def exception_code(self) -> int:
        return self.payload[0]


@dataclass(frozen=True)
class DeviceIdentification:
    """Parsed FC 0x2B / MEI 0x0E reply."""

    objects: dict[int, str]
    conformity: int = 0x01
    more_follows: bool = False
    next_object_id: int = 0

    def field(self, object_id: int) -> str | None:
        return self.objects.get(object_id)


@dataclass(frozen=True)
class SlaveId:
    """Parsed FC 0x11 reply."""

    slave_id: int
    running: bool
    additional: bytes = b""


def encode_modbus(header: MbapHeader, pdu: ModbusPdu) -> bytes:
    """Encode a frame; header invariants must hold."""
    expected = 2 + len(pdu.payload)
    if header.protocol_id != 0:
        raise ValueError(f"protocol_id must be 0, got {header.protocol_id}")
    if header.length != expected:
        raise ValueError(f"length must be {expected}, got {header.length}")
    if not 0 <= header.unit_id <= 0xFF or not 0 <= header.transaction_id <= 0xFFFF:
        raise ValueError("unit_id / transaction_id out of range")
    if not 0 <= pdu.function <= 0xFF:
        raise ValueError(f"function out of range: {pdu.function}")
    if pdu.is_exception and len(pdu.payload) != 1:
        raise ValueError("exception PDU must carry exactly one code byte")
    head = MBAP.pack(header.transaction_id, header.protocol_id, header.length, header.unit_id)
    return head + bytes([pdu.function]) + pdu.payload


def frame(transaction_id: int, unit_id: int, function: int, payload: bytes = b"") -> bytes:
    """Encode with the length field computed from the PDU."""
    header = MbapHeader(transaction_id, unit_id, length=2 + len(payload))
    return encode_modbus(header, ModbusPdu(function, payload))


def decode_modbus(data: bytes) -> tuple[MbapHeader, ModbusPdu]:
    """Decode one full frame; raises a DecodeError subclass on bad input."""
    if len(data) < 8:
        raise Truncated(f"modbus frame needs >= 8 bytes, got {len(data)}")
    tx, proto, length, unit = MBAP.unpack_from(data)
    if proto != 0:
        raise NotModbus(f"protocol_id 0x{proto:04x} is not Modbus/TCP")
    if length < 2:
        raise LengthMismatch(f"declared length {length} below minimum 2")
    if len(data) != 6 + length:
        raise LengthMismatch(f"declared {6 + length} bytes, got {len(data)}")
    function = data[7]
    payload = bytes(data[8:])
    if function & 0x80 and len(payload) != 1:
        raise FormatError(f"exception frame with {len(payload)} payload bytes")
    return MbapHeader(tx, unit, length), ModbusPdu(function, payload)


def extract_frames(buffer: bytes) -> tuple[list[bytes], bytes]:
    """Cut complete MBAP frames off the front of a stream buffer.

    Stops (returning the remainder untouched) at the first chunk that
    cannot be a Modbus/TCP frame.
    """
    frames: list[bytes] = []
    while len(buffer) >= 7:
        proto = struct.unpack_from(">H", buffer, 2)[0]
        length = struct.unpack_from(">H", buffer, 4)[0]
        if proto != 0 or not 2 <= length <= 254:
            break
        end = 6 + length
        if len(buffer) < end:
            break
        frames.append(bytes(buffer[:end]))
        buffer = buffer[end:]
    return frames, bytes(buffer)


def exception_frame(transaction_id: int, unit_id: int, function: int, code: int) -> bytes:
    return frame(transaction_id, unit_id, function | 0x80, bytes([code]))


def build_device_id_request(
    unit: int,
    transaction_id: int = 1,
    read_code: int = DEVICE_ID_BASIC,
    object_id: int = OBJ_VENDOR_NAME,
) -> bytes:
    """FC 0x2B / MEI 0x0E read request, basic category by default."""
    return frame(transaction_id, unit, FC_ENCAPSULATED, bytes([MEI_DEVICE_ID, read_code, object_id]))


def build_device_id_response(
    transaction_id: int,
    unit: int,
    objects: dict[int, str],
    read_code: int = DEVICE_ID_BASIC,
    conformity: int = DEVICE_ID_BASIC,
    more_follows: bool = False,
    next_object_id: int = 0,
) -> bytes:
    body = bytearray([MEI_DEVICE_ID, read_code, conformity, 0xFF if more_follows else 0x00, next_object_id, len(objects)])
    for object_id in sorted(objects):
        value = objects[object_id].encode("ascii", errors="replace")
        if len(value) > 0xFF:
            raise ValueError(f"object 0x{object_id:02x} value too long")
        body += bytes([object_id, len(value)]) + value
    return frame(transaction_id, unit, FC_ENCAPSULATED, bytes(body))


def parse_device_id_response(data: bytes) -> DeviceIdentification:
    """Parse an FC 0x2B reply frame into its identification objects.

    The ``more_follows`` flag is surfaced so the caller can iterate
    with ``next_object_id``.
    """
    _, pdu = decode_modbus(data)
    if pdu.is_exception:
        raise ModbusExceptionResponse(pdu.function & 0x7F, pdu.exception_code)
    if pdu.function != FC_ENCAPSULATED:
        raise FormatError(f"expected FC 0x2B reply, got 0x{pdu.function:02x}")
    payload = pdu.payload
    if len(payload) < 6:
        raise Truncated("device identification reply too short")
    if payload[0] != MEI_DEVICE_ID:
        raise FormatError(f"unexpected MEI type 0x{payload[0]:02x}")
    more = payload[3]
    if more not in (0x00, 0xFF):
        raise FormatError(f"bad more-follows flag 0x{more:02x}")
    count = payload[5]
    if count == 0:
        raise FormatError("empty object list")
    objects: dict[int, str] = {}
    offset = 6
    for _ in range(count):
        if offset + 2 > len(payload):
            raise Truncated("object header beyond frame end")
        object_id, length = payload[offset], payload[offset + 1]
        offset += 2
        if offset + length > len(payload):
            raise Truncated("object value beyond frame end")
        objects[object_id] = payload[offset : offset + length].decode("ascii", errors="replace")
        offset += length
    if offset != len(payload):
        raise FormatError(f"{len(payload) - offset} trailing bytes after object list")
    return DeviceIdentification(
        objects=objects,
        conformity=payload[2],
        more_follows=more == 0xFF,
        next_object_id=payload[4],
    )


def build_report_slave_id_request(unit: int, transaction_id: int = 1) -> bytes:
    return frame(transaction_id, unit, FC_REPORT_SLAVE_ID)


def build_report_slave_id_response(
    transaction_id: int, unit: int, slave_id: int, running: bool = True, additional: bytes = b""
) -> bytes:
    body = bytes([slave_id, 0xFF if running else 0x00]) + additional
    return frame(transaction_id, unit, FC_REPORT_SLAVE_ID, bytes([len(body)]) + body)


def parse_report_slave_id_response(data: bytes) -> SlaveId:
    _, pdu = decode_modbus(data)
    if pdu.is_exception:
        raise ModbusExceptionResponse(pdu.function & 0x7F, pdu.exception_code)
    if pdu.function != FC_REPORT_SLAVE_ID:
        raise FormatError(f"expected FC 0x11 reply, got 0x{pdu.function:02x}")
    payload = pdu.payload
    if len(payload) < 3:
        raise Truncated("report server id reply too short")
    byte_count = payload[0]
    if byte_count != len(payload) - 1:
        raise LengthMismatch(f"byte count {byte_count} vs {len(payload) - 1} actual")
    return SlaveId(slave_id=payload[1], running=payload[2] == 0xFF, additional=bytes(payload[3:]))


def build_read_holding_request(unit: int, start: int, count: int, transaction_id: int = 1) -> bytes:
    return frame(transaction_id, unit, FC_READ_HOLDING, struct.pack(">HH", start, count))


def build_read_holding_response(transaction_id: int, unit: int, registers: list[int]) -> bytes:
    body = bytes([2 * len(registers)]) + b"".join(struct.pack(">H", r) for r in registers)
    return frame(transaction_id, unit, FC_READ_HOLDING, body)


def device_id_to_fields(ident: DeviceIdentification) -> dict[str, str]:
    """Map standard identification objects onto static-info fields."""
    fields: dict[str, str] = {}
    if OBJ_VENDOR_NAME in ident.objects:
        fields["manufacturer"] = ident.objects[OBJ_VENDOR_NAME]
    if OBJ_PRODUCT_CODE in ident.objects:
        fields["model"] = ident.objects[OBJ_PRODUCT_CODE]
    if OBJ_REVISION in ident.objects:
        fields["firmware_version"] = ident.objects[OBJ_REVISION]
    return fields
