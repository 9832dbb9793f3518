"""ISO-on-TCP transport and the S7 status-list subset.

Framing, outermost first (all big-endian):

    TPKT (4 bytes): version u8 (=3) | reserved u8 | length u16
        (total frame length including this header)
    COTP class 0: length-indicator u8 | pdu type | type-specific body
        CR 0xE0 / CC 0xD0: dst_ref u16, src_ref u16, class u8, then
            parameters (code, len, value): 0xC0 tpdu-size, 0xC1 calling
            TSAP, 0xC2 called TSAP
        DR 0x80: dst_ref u16, src_ref u16, reason u8
        DT 0xF0: tpdu number | end-of-TSDU bit (0x80), then user data
    S7 (inside DT): 0x32 | rosctr u8 | redundancy u16 | pdu_ref u16 |
        param_len u16 | data_len u16 [| error u16 for acks]

Status-list reads travel as userdata (rosctr 7). Two lists are
implemented: 0x0011 module identification (28-byte entries: index,
20-char order number, type word, two version words) and 0x001C
component identification (34-byte entries: index, 32-char text).
Anything beyond that subset is out of scope here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import FormatError, LengthMismatch, Truncated

TPKT_VERSION = 3
ISO_TSAP_PORT = 102

COTP_CR = 0xE0
COTP_CC = 0xD0
COTP_DR = 0x80
COTP_DT = 0xF0

PARAM_TPDU_SIZE = 0xC0
PARAM_SRC_TSAP = 0xC1
PARAM_DST_TSAP = 0xC2

S7_PROTOCOL_ID = 0x32
ROSCTR_JOB = 0x01
ROSCTR_ACK_DATA = 0x03
ROSCTR_USERDATA = 0x07

SZL_MODULE_ID = 0x0011
SZL_COMPONENT_ID = 0x001C
SUPPORTED_SZL_IDS = (SZL_MODULE_ID, SZL_COMPONENT_ID)

# Default TSAP pairs offered when connecting, in order. These mirror
# common rack/slot conventions and are caller-overridable.
DEFAULT_TSAP_PAIRS = ((0x0100, 0x0102), (0x0100, 0x0200), (0x0100, 0x0201))

_MODULE_ID_INDEX_ORDER = 0x0001
_MODULE_ID_INDEX_HARDWARE = 0x0006
_MODULE_ID_INDEX_FIRMWARE = 0x0007

_COMPONENT_INDEX_SYSTEM_NAME = 0x0001
_COMPONENT_INDEX_MODULE_NAME = 0x0002
_COMPONENT_INDEX_PLANT_ID = 0x0003
_COMPONENT_INDEX_COPYRIGHT = 0x0004
_COMPONENT_INDEX_SERIAL = 0x0005


@dataclass(frozen=True)
class CotpConnectionRequest:
    src_tsap: int
    dst_tsap: int
    dst_ref: int = 0
    src_ref: int = 1
    tpdu_size: int = 0x0A


@dataclass(frozen=True)
class CotpConnectionConfirm:
    src_tsap: int
    dst_tsap: int
    dst_ref: int = 1
    src_ref: int = 2
    tpdu_size: int = 0x0A


@dataclass(frozen=True)
class CotpDisconnectRequest:
    reason: int = 0
    dst_ref: int = 0
    src_ref: int = 0


@dataclass(frozen=True)
class CotpData:
    payload: bytes
    last: bool = True


Cotp = CotpConnectionRequest | CotpConnectionConfirm | CotpDisconnectRequest | CotpData


@dataclass(frozen=True)
class TpktCotpEnvelope:
    cotp: Cotp
    tpkt_version: int = TPKT_VERSION
    tpkt_length: int = 0


@dataclass(frozen=True)
class S7SetupCommunication:
    is_request: bool
    pdu_ref: int = 0
    max_amq_caller: int = 1
    max_amq_callee: int = 1
    pdu_length: int = 480


@dataclass(frozen=True)
class SzlEntry:
    """One raw partlist entry; ``words`` only used by list 0x0011."""

    index: int
    text: str
    words: tuple[int, int, int] = (0, 0, 0)


@dataclass(frozen=True)
class S7SzlRequest:
    szl_id: int
    szl_index: int = 0
    pdu_ref: int = 0
    sequence: int = 0


@dataclass(frozen=True)
class S7SzlResponse:
    szl_id: int
    szl_index: int
    entries: tuple[SzlEntry, ...]
    pdu_ref: int = 0
    sequence: int = 0
    error_code: int = 0


S7Message = S7SetupCommunication | S7SzlRequest | S7SzlResponse

# A friendly view of one status-list read: canonical field -> text.
SzlRecord = dict[str, str]


def _need(data: bytes, count: int, what: str) -> None:
    if len(data) < count:
        raise Truncated(f"{what}: need {count} bytes, got {len(data)}")


def encode_tpkt(payload: bytes) -> bytes:
    total = 4 + len(payload)
    if total > 0xFFFF:
        raise ValueError("payload too large for TPKT")
    return struct.pack(">BBH", TPKT_VERSION, 0, total) + payload


def decode_tpkt(data: bytes) -> bytes:
    """Strip and validate the TPKT header, returning the COTP bytes."""
    _need(data, 4, "TPKT header")
    version, _reserved, length = struct.unpack_from(">BBH", data)
    if version != TPKT_VERSION:
        raise FormatError(f"TPKT version {version}, expected 3")
    if length != len(data):
        raise LengthMismatch(f"TPKT declares {length} bytes, got {len(data)}")
    if length < 5:
        raise Truncated("TPKT too short to carry COTP")
    return bytes(data[4:])


def extract_tpkt_frames(buffer: bytes) -> tuple[list[bytes], bytes]:
    """Cut complete TPKT frames off the front of a stream buffer."""
    frames: list[bytes] = []
    while len(buffer) >= 4:
        if buffer[0] != TPKT_VERSION or buffer[1] != 0:
            break
        length = struct.unpack_from(">H", buffer, 2)[0]
        if length < 5:
            break
        if len(buffer) < length:
            break
        frames.append(bytes(buffer[:length]))
        buffer = buffer[length:]
    return frames, bytes(buffer)


def _encode_cr_cc(cotp: CotpConnectionRequest | CotpConnectionConfirm, pdu_type: int) -> bytes:
    params = struct.pack(">BBB", PARAM_TPDU_SIZE, 1, cotp.tpdu_size)
    params += struct.pack(">BBH", PARAM_SRC_TSAP, 2, cotp.src_tsap)
    params += struct.pack(">BBH", PARAM_DST_TSAP, 2, cotp.dst_tsap)
    body = struct.pack(">HHB", cotp.dst_ref, cotp.src_ref, 0x00) + params
    return bytes([1 + len(body), pdu_type]) + body


def encode_cotp(cotp: Cotp) -> bytes:
    if isinstance(cotp, CotpConnectionRequest):
        return _encode_cr_cc(cotp, COTP_CR)
    if isinstance(cotp, CotpConnectionConfirm):
        return _encode_cr_cc(cotp, COTP_CC)
    if isinstance(cotp, CotpDisconnectRequest):
        body = struct.pack(">HHB", cotp.dst_ref, cotp.src_ref, cotp.reason)
        return bytes([1 + len(body), COTP_DR]) + body
    if isinstance(cotp, CotpData):
        return bytes([2, COTP_DT, 0x80 if cotp.last else 0x00]) + cotp.payload
    raise TypeError(f"not a COTP value: {cotp!r}")


def _decode_params(raw: bytes) -> dict[int, bytes]:
    params: dict[int, bytes] = {}
    offset = 0
    while offset < len(raw):
        _need(raw, offset + 2, "COTP parameter header")
        code, length = raw[offset], raw[offset + 1]
        offset += 2
        _need(raw, offset + length, "COTP parameter value")
        params[code] = raw[offset : offset + length]
        offset += length
    return params


def _decode_cr_cc(header: bytes, params_raw: bytes, confirm: bool) -> Cotp:
    dst_ref, src_ref, _cls = struct.unpack(">HHB", header)
    params = _decode_params(params_raw)
    try:
        src_tsap = struct.unpack(">H", params[PARAM_SRC_TSAP])[0]
        dst_tsap = struct.unpack(">H", params[PARAM_DST_TSAP])[0]
    except (KeyError, struct.error) as exc:
        raise FormatError("connect PDU missing TSAP parameters") from exc
    size = params.get(PARAM_TPDU_SIZE, b"\x0a")
    tpdu_size = size[0] if size else 0x0A
    cls = CotpConnectionConfirm if confirm else CotpConnectionRequest
    return cls(src_tsap=src_tsap, dst_tsap=dst_tsap, dst_ref=dst_ref, src_ref=src_ref, tpdu_size=tpdu_size)


def decode_cotp(data: bytes) -> Cotp:
    _need(data, 2, "COTP header")
    li, pdu_type = data[0], data[1]
    if pdu_type == COTP_DT:
        if li != 2:
            raise FormatError(f"DT length indicator {li}, expected 2")
        _need(data, 3, "DT TPDU number")
        return CotpData(payload=bytes(data[3:]), last=bool(data[2] & 0x80))
    header_end = 1 + li
    _need(data, header_end, "COTP fixed part")
    if pdu_type in (COTP_CR, COTP_CC):
        if li < 6:
            raise FormatError(f"connect PDU length indicator {li} too small")
        return _decode_cr_cc(data[2:7], data[7:header_end], confirm=pdu_type == COTP_CC)
    if pdu_type == COTP_DR:
        if li < 6:
            raise FormatError(f"DR length indicator {li} too small")
        dst_ref, src_ref, reason = struct.unpack_from(">HHB", data, 2)
        return CotpDisconnectRequest(reason=reason, dst_ref=dst_ref, src_ref=src_ref)
    raise FormatError(f"unsupported COTP PDU type 0x{pdu_type:02x}")


def encode_envelope(cotp: Cotp) -> bytes:
    return encode_tpkt(encode_cotp(cotp))


def decode_envelope(data: bytes) -> TpktCotpEnvelope:
    cotp = decode_cotp(decode_tpkt(data))
    return TpktCotpEnvelope(cotp=cotp, tpkt_version=data[0], tpkt_length=len(data))


def build_cotp_connect(src_tsap: int, dst_tsap: int) -> bytes:
    return encode_envelope(CotpConnectionRequest(src_tsap=src_tsap, dst_tsap=dst_tsap))


def build_cotp_confirm(request: CotpConnectionRequest) -> bytes:
    return encode_envelope(
        CotpConnectionConfirm(
            src_tsap=request.src_tsap,
            dst_tsap=request.dst_tsap,
            dst_ref=request.src_ref,
            src_ref=request.src_ref + 1,
            tpdu_size=request.tpdu_size,
        )
    )


def build_cotp_disconnect(reason: int = 0) -> bytes:
    return encode_envelope(CotpDisconnectRequest(reason=reason))


def encode_s7(message: S7Message) -> bytes:
    if isinstance(message, S7SetupCommunication):
        params = struct.pack(
            ">BBHHH", 0xF0, 0x00, message.max_amq_caller, message.max_amq_callee, message.pdu_length
        )
        if message.is_request:
            head = struct.pack(">BBHHHH", S7_PROTOCOL_ID, ROSCTR_JOB, 0, message.pdu_ref, len(params), 0)
        else:
            head = struct.pack(
                ">BBHHHHH", S7_PROTOCOL_ID, ROSCTR_ACK_DATA, 0, message.pdu_ref, len(params), 0, 0
            )
        return head + params

    if isinstance(message, S7SzlRequest):
        params = bytes([0x00, 0x01, 0x12, 0x04, 0x11, 0x44, 0x01, message.sequence & 0xFF])
        data = struct.pack(">BBHHH", 0xFF, 0x09, 4, message.szl_id, message.szl_index)
        head = struct.pack(
            ">BBHHHH", S7_PROTOCOL_ID, ROSCTR_USERDATA, 0, message.pdu_ref, len(params), len(data)
        )
        return head + params + data

    if isinstance(message, S7SzlResponse):
        params = bytes([0x00, 0x01, 0x12, 0x08, 0x12, 0x84, 0x01, message.sequence & 0xFF, 0x00, 0x00])
        params += struct.pack(">H", message.error_code)
        if message.error_code:
            data = struct.pack(">BBH", 0x0A, 0x00, 0)
        else:
            record_len = 28 if message.szl_id == SZL_MODULE_ID else 34
            body = b"".join(_encode_szl_entry(message.szl_id, e) for e in message.entries)
            data = struct.pack(
                ">BBHHHHH",
                0xFF,
                0x09,
                8 + len(body),
                message.szl_id,
                message.szl_index,
                record_len,
                len(message.entries),
            ) + body
        head = struct.pack(
            ">BBHHHH", S7_PROTOCOL_ID, ROSCTR_USERDATA, 0, message.pdu_ref, len(params), len(data)
        )
        return head + params + data

    raise TypeError(f"not an S7 message: {message!r}")


def _encode_szl_entry(szl_id: int, entry: SzlEntry) -> bytes:
    if szl_id == SZL_MODULE_ID:
        text = entry.text.encode("ascii", errors="replace")[:20].ljust(20)
        return struct.pack(">H", entry.index) + text + struct.pack(">HHH", *entry.words)
    text = entry.text.encode("ascii", errors="replace")[:32].ljust(32)
    return struct.pack(">H", entry.index) + text


def _decode_szl_entries(szl_id: int, count: int, record_len: int, raw: bytes) -> tuple[SzlEntry, ...]:
    expected_len = 28 if szl_id == SZL_MODULE_ID else 34
    if record_len != expected_len:
        raise FormatError(f"list 0x{szl_id:04x} record length {record_len}, expected {expected_len}")
    _need(raw, count * record_len, "status list records")
    entries = []
    for i in range(count):
        chunk = raw[i * record_len : (i + 1) * record_len]
        index = struct.unpack_from(">H", chunk)[0]
        if szl_id == SZL_MODULE_ID:
            text = chunk[2:22].decode("ascii", errors="replace").rstrip()
            words = struct.unpack_from(">HHH", chunk, 22)
        else:
            text = chunk[2:34].decode("ascii", errors="replace").rstrip()
            words = (0, 0, 0)
        entries.append(SzlEntry(index=index, text=text, words=words))
    return tuple(entries)


def decode_s7(data: bytes) -> S7Message:
    """Decode S7 bytes carried in a COTP data TPDU."""
    _need(data, 10, "S7 header")
    if data[0] != S7_PROTOCOL_ID:
        raise FormatError(f"S7 protocol id 0x{data[0]:02x}, expected 0x32")
    rosctr = data[1]
    _red, pdu_ref, param_len, data_len = struct.unpack_from(">HHHH", data, 2)
    offset = 10
    if rosctr in (0x02, ROSCTR_ACK_DATA):
        _need(data, 12, "S7 ack error field")
        offset = 12
    _need(data, offset + param_len + data_len, "S7 body")
    params = data[offset : offset + param_len]
    body = data[offset + param_len : offset + param_len + data_len]

    if rosctr in (ROSCTR_JOB, ROSCTR_ACK_DATA):
        if param_len >= 8 and params[0] == 0xF0:
            caller, callee, pdu_length = struct.unpack_from(">HHH", params, 2)
            return S7SetupCommunication(
                is_request=rosctr == ROSCTR_JOB,
                pdu_ref=pdu_ref,
                max_amq_caller=caller,
                max_amq_callee=callee,
                pdu_length=pdu_length,
            )
        raise FormatError(f"unsupported S7 job function (rosctr {rosctr})")

    if rosctr != ROSCTR_USERDATA:
        raise FormatError(f"unsupported rosctr 0x{rosctr:02x}")
    if param_len < 8 or params[:3] != b"\x00\x01\x12":
        raise FormatError("bad userdata parameter block")
    method = params[4]
    sequence = params[7]
    if method == 0x11:  # request
        _need(body, 8, "status list request data")
        szl_id, szl_index = struct.unpack_from(">HH", body, 4)
        return S7SzlRequest(szl_id=szl_id, szl_index=szl_index, pdu_ref=pdu_ref, sequence=sequence)
    if method == 0x12:  # response
        if param_len < 12:
            raise FormatError("userdata response parameters too short")
        error_code = struct.unpack_from(">H", params, 10)[0]
        _need(body, 4, "status list response data")
        return_code = body[0]
        if error_code or return_code != 0xFF:
            return S7SzlResponse(
                szl_id=0, szl_index=0, entries=(), pdu_ref=pdu_ref, sequence=sequence,
                error_code=error_code or return_code,
            )
        _need(body, 12, "status list response header")
        szl_id, szl_index, record_len, count = struct.unpack_from(">HHHH", body, 4)
        entries = _decode_szl_entries(szl_id, count, record_len, body[12:])
        return S7SzlResponse(
            szl_id=szl_id, szl_index=szl_index, entries=entries, pdu_ref=pdu_ref, sequence=sequence
        )
    raise FormatError(f"unsupported userdata method 0x{method:02x}")


def build_setup_communication(pdu_ref: int = 1) -> bytes:
    return encode_envelope(CotpData(encode_s7(S7SetupCommunication(is_request=True, pdu_ref=pdu_ref))))


def build_setup_ack(pdu_ref: int) -> bytes:
    return encode_envelope(CotpData(encode_s7(S7SetupCommunication(is_request=False, pdu_ref=pdu_ref))))


def build_szl_read(szl_id: int, szl_index: int = 0, pdu_ref: int = 2, sequence: int = 0) -> bytes:
    return encode_envelope(
        CotpData(encode_s7(S7SzlRequest(szl_id=szl_id, szl_index=szl_index, pdu_ref=pdu_ref, sequence=sequence)))
    )


def build_szl_response_frame(response: S7SzlResponse) -> bytes:
    return encode_envelope(CotpData(encode_s7(response)))


def module_id_entries(identity: dict[str, str]) -> tuple[SzlEntry, ...]:
    """Identity fields -> list 0x0011 entries (order nr, hw, fw)."""
    entries = []
    order = identity.get("module_order_number", "")
    entries.append(SzlEntry(index=_MODULE_ID_INDEX_ORDER, text=order))
    hardware = identity.get("hardware_version")
    if hardware:
        entries.append(SzlEntry(index=_MODULE_ID_INDEX_HARDWARE, text=order, words=(0, _pack_version(hardware), 0)))
    firmware = identity.get("firmware_version")
    if firmware:
        major_minor, patch = _pack_firmware(firmware)
        entries.append(SzlEntry(index=_MODULE_ID_INDEX_FIRMWARE, text=order, words=(0, major_minor, patch)))
    return tuple(entries)


def component_id_entries(identity: dict[str, str]) -> tuple[SzlEntry, ...]:
    """Identity fields -> list 0x001C entries."""
    mapping = (
        (_COMPONENT_INDEX_SYSTEM_NAME, "system_name"),
        (_COMPONENT_INDEX_MODULE_NAME, "module_name"),
        (_COMPONENT_INDEX_PLANT_ID, "plant_id"),
        (_COMPONENT_INDEX_COPYRIGHT, "copyright"),
        (_COMPONENT_INDEX_SERIAL, "serial"),
    )
    return tuple(
        SzlEntry(index=index, text=identity[key]) for index, key in mapping if identity.get(key)
    )


def _pack_version(text: str) -> int:
    parts = text.split(".")
    try:
        major = int(parts[0])
        minor = int(parts[1]) if len(parts) > 1 else 0
    except ValueError as exc:
        raise ValueError(f"version {text!r} is not dotted-numeric") from exc
    return ((major & 0xFF) << 8) | (minor & 0xFF)


def _pack_firmware(text: str) -> tuple[int, int]:
    parts = text.split(".")
    patch = int(parts[2]) if len(parts) > 2 else 0
    return _pack_version(text), patch & 0xFFFF


def _unpack_version(word: int) -> str:
    return f"{word >> 8}.{word & 0xFF}"


def parse_szl_response(data: bytes) -> list[SzlRecord]:
    """Parse a status-list reply frame into canonical field maps.

    Returns one merged record per reply. Refusals surface as a
    FormatError carrying the device's error code; unknown list ids are
    also a FormatError (only 0x0011 / 0x001C belong to this subset).
    """
    envelope = decode_envelope(data)
    if not isinstance(envelope.cotp, CotpData):
        raise FormatError(f"expected COTP data TPDU, got {type(envelope.cotp).__name__}")
    message = decode_s7(envelope.cotp.payload)
    if not isinstance(message, S7SzlResponse):
        raise FormatError(f"expected status list response, got {type(message).__name__}")
    if message.error_code:
        raise FormatError(f"status list read refused (code 0x{message.error_code:04x})")
    if message.szl_id not in SUPPORTED_SZL_IDS:
        raise FormatError(f"unknown status list id 0x{message.szl_id:04x}")
    if not message.entries:
        raise FormatError("status list response with no records")

    record: SzlRecord = {}
    if message.szl_id == SZL_MODULE_ID:
        record["vendor"] = "Siemens"  # status lists are a Siemens-family service
        for entry in message.entries:
            if entry.index == _MODULE_ID_INDEX_ORDER and entry.text:
                record["module_order_number"] = entry.text
            elif entry.index == _MODULE_ID_INDEX_HARDWARE:
                record["hardware_version"] = _unpack_version(entry.words[1])
            elif entry.index == _MODULE_ID_INDEX_FIRMWARE:
                record["firmware_version"] = f"{_unpack_version(entry.words[1])}.{entry.words[2]}"
    else:
        for entry in message.entries:
            if not entry.text:
                continue
            if entry.index == _COMPONENT_INDEX_SYSTEM_NAME:
                record["system_name"] = entry.text
            elif entry.index == _COMPONENT_INDEX_MODULE_NAME:
                record["module_name"] = entry.text
            elif entry.index == _COMPONENT_INDEX_PLANT_ID:
                record["plant_id"] = entry.text
            elif entry.index == _COMPONENT_INDEX_COPYRIGHT:
                record["vendor"] = "Siemens" if "siemens" in entry.text.lower() else entry.text
            elif entry.index == _COMPONENT_INDEX_SERIAL:
                record["serial"] = entry.text
    if not record:
        raise FormatError("status list response with no usable fields")
    return [record]


def szl_records_to_fields(records: list[SzlRecord]) -> tuple[dict[str, str], dict[str, str]]:
    """Map status-list records onto static / deployment fields.

    order number -> model, vendor -> manufacturer; station naming goes
    to deployment entries.
    """
    static: dict[str, str] = {}
    deployment: dict[str, str] = {}
    for record in records:
        if "module_order_number" in record:
            static["model"] = record["module_order_number"]
        if "firmware_version" in record:
            static["firmware_version"] = record["firmware_version"]
        if "hardware_version" in record:
            static["hardware_version"] = record["hardware_version"]
        if "vendor" in record:
            static.setdefault("manufacturer", record["vendor"])
        if "serial" in record:
            static["serial"] = record["serial"]
        for key in ("system_name", "module_name", "plant_id"):
            if key in record:
                deployment[key] = record[key]
    return static, deployment
