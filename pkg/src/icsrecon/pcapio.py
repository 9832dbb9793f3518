"""Classic libpcap file I/O and minimal Ethernet/IPv4/TCP frames.

The reader accepts both byte orders and both tick resolutions
(microsecond magic 0xA1B2C3D4, nanosecond 0xA1B23C4D); malformed
records are counted and skipped, never aborting the stream. The writer
emits little-endian microsecond files with Ethernet link type.

Frame builders synthesize honest ARP/ICMP/TCP traffic (checksums
included) so recorded captures look like mirror-port output; the
:class:`TrafficRecorder` tracks per-connection sequence numbers.
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass
from typing import BinaryIO, Callable, Iterator

from .errors import FormatError

MAGIC_MICROS = 0xA1B2C3D4
MAGIC_NANOS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806

PROTO_ICMP = 1
PROTO_TCP = 6

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10

BROADCAST_MAC = "ff:ff:ff:ff:ff:ff"


def mac_bytes(mac: str) -> bytes:
    return bytes(int(part, 16) for part in mac.split(":"))


def mac_text(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def ip_bytes(ip: str) -> bytes:
    return bytes(int(part) for part in ip.split("."))


def ip_text(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def inet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def ethernet(dst_mac: str, src_mac: str, ethertype: int, payload: bytes) -> bytes:
    return mac_bytes(dst_mac) + mac_bytes(src_mac) + struct.pack(">H", ethertype) + payload


def arp_frame(op: int, sender_mac: str, sender_ip: str, target_mac: str, target_ip: str) -> bytes:
    body = struct.pack(">HHBBH", 1, ETHERTYPE_IPV4, 6, 4, op)
    body += mac_bytes(sender_mac) + ip_bytes(sender_ip)
    body += mac_bytes("00:00:00:00:00:00" if op == 1 else target_mac) + ip_bytes(target_ip)
    dst = BROADCAST_MAC if op == 1 else target_mac
    return ethernet(dst, sender_mac, ETHERTYPE_ARP, body)


def ipv4(src_ip: str, dst_ip: str, proto: int, payload: bytes, ident: int = 0) -> bytes:
    header = struct.pack(
        ">BBHHHBBH4s4s",
        0x45, 0, 20 + len(payload), ident, 0, 64, proto, 0, ip_bytes(src_ip), ip_bytes(dst_ip),
    )
    checksum = inet_checksum(header)
    header = header[:10] + struct.pack(">H", checksum) + header[12:]
    return header + payload


def icmp_echo(ident: int, seq: int, reply: bool = False, data: bytes = b"icsrecon") -> bytes:
    kind = 0 if reply else 8
    head = struct.pack(">BBHHH", kind, 0, 0, ident, seq)
    checksum = inet_checksum(head + data)
    return struct.pack(">BBHHH", kind, 0, checksum, ident, seq) + data


def tcp_segment(
    src_ip: str,
    dst_ip: str,
    src_port: int,
    dst_port: int,
    seq: int,
    ack: int,
    flags: int,
    payload: bytes = b"",
) -> bytes:
    header = struct.pack(
        ">HHIIBBHHH", src_port, dst_port, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF,
        5 << 4, flags, 8192, 0, 0,
    )
    pseudo = ip_bytes(src_ip) + ip_bytes(dst_ip) + struct.pack(">BBH", 0, PROTO_TCP, len(header) + len(payload))
    checksum = inet_checksum(pseudo + header + payload)
    header = header[:16] + struct.pack(">H", checksum) + header[18:]
    return header + payload


@dataclass(frozen=True)
class EthernetFrame:
    dst_mac: str
    src_mac: str
    ethertype: int
    payload: bytes


@dataclass(frozen=True)
class ArpMessage:
    op: int
    sender_mac: str
    sender_ip: str
    target_ip: str


@dataclass(frozen=True)
class Ipv4Packet:
    src_ip: str
    dst_ip: str
    proto: int
    payload: bytes


@dataclass(frozen=True)
class TcpSegment:
    src_port: int
    dst_port: int
    seq: int
    ack: int
    flags: int
    payload: bytes


def parse_ethernet(frame: bytes) -> EthernetFrame | None:
    if len(frame) < 14:
        return None
    ethertype = struct.unpack_from(">H", frame, 12)[0]
    return EthernetFrame(mac_text(frame[:6]), mac_text(frame[6:12]), ethertype, bytes(frame[14:]))


def parse_arp(payload: bytes) -> ArpMessage | None:
    if len(payload) < 28:
        return None
    op = struct.unpack_from(">H", payload, 6)[0]
    return ArpMessage(
        op=op,
        sender_mac=mac_text(payload[8:14]),
        sender_ip=ip_text(payload[14:18]),
        target_ip=ip_text(payload[24:28]),
    )


def parse_ipv4(payload: bytes) -> Ipv4Packet | None:
    if len(payload) < 20 or payload[0] >> 4 != 4:
        return None
    ihl = (payload[0] & 0x0F) * 4
    if ihl < 20 or len(payload) < ihl:
        return None
    total = struct.unpack_from(">H", payload, 2)[0]
    if total < ihl:
        return None
    return Ipv4Packet(
        src_ip=ip_text(payload[12:16]),
        dst_ip=ip_text(payload[16:20]),
        proto=payload[9],
        payload=bytes(payload[ihl : min(total, len(payload))]),
    )


def parse_tcp(payload: bytes) -> TcpSegment | None:
    if len(payload) < 20:
        return None
    src_port, dst_port, seq, ack = struct.unpack_from(">HHII", payload)
    offset = (payload[12] >> 4) * 4
    if offset < 20 or len(payload) < offset:
        return None
    return TcpSegment(src_port, dst_port, seq, ack, payload[13], bytes(payload[offset:]))


class PcapWriter:
    """Little-endian microsecond libpcap writer; thread-safe."""

    def __init__(self, target: str | BinaryIO):
        self._own = isinstance(target, (str, bytes))
        self._fh: BinaryIO = open(target, "wb") if self._own else target
        self._lock = threading.Lock()
        self._fh.write(struct.pack("<IHHiIII", MAGIC_MICROS, 2, 4, 0, 0, SNAPLEN, LINKTYPE_ETHERNET))
        self._fh.flush()

    def write(self, timestamp: float, frame: bytes) -> None:
        sec = int(timestamp)
        usec = int(round((timestamp - sec) * 1_000_000))
        if usec >= 1_000_000:
            sec, usec = sec + 1, usec - 1_000_000
        record = struct.pack("<IIII", sec, usec, len(frame), len(frame)) + frame
        with self._lock:
            self._fh.write(record)
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._own and not self._fh.closed:
                self._fh.close()


class CaptureReader:
    """Iterates (timestamp, frame) records from a classic pcap file.

    Malformed records bump :attr:`skipped` and end the stream instead
    of raising; a wrong magic number is a FormatError up front.
    """

    def __init__(self, path: str):
        self.path = path
        self.skipped = 0
        self.link_type = LINKTYPE_ETHERNET
        with open(path, "rb") as fh:
            magic_raw = fh.read(4)
        if len(magic_raw) < 4:
            raise FormatError("capture file shorter than a pcap global header", offset=0)
        self._endian, self._nanos = self._classify_magic(magic_raw)

    @staticmethod
    def _classify_magic(raw: bytes) -> tuple[str, bool]:
        for endian in ("<", ">"):
            magic = struct.unpack(endian + "I", raw)[0]
            if magic == MAGIC_MICROS:
                return endian, False
            if magic == MAGIC_NANOS:
                return endian, True
        raise FormatError(f"not a libpcap capture (magic {raw.hex()})", offset=0)

    def __iter__(self) -> Iterator[tuple[float, bytes]]:
        divisor = 1e9 if self._nanos else 1e6
        with open(self.path, "rb") as fh:
            header = fh.read(24)
            if len(header) < 24:
                raise FormatError("truncated pcap global header", offset=len(header))
            self.link_type = struct.unpack(self._endian + "I", header[20:24])[0]
            while True:
                record = fh.read(16)
                if not record:
                    return
                if len(record) < 16:
                    self.skipped += 1
                    return
                sec, frac, incl, orig = struct.unpack(self._endian + "IIII", record)
                if incl > SNAPLEN * 4:
                    # implausible length: count it and stop, the stream
                    # offset can no longer be trusted
                    self.skipped += 1
                    return
                frame = fh.read(incl)
                if len(frame) < incl:
                    self.skipped += 1
                    return
                yield sec + frac / divisor, frame


class TcpFlowRecord:
    """Sequence-tracked view of one TCP connection being recorded."""

    def __init__(self, recorder: "TrafficRecorder", client: tuple[str, int], server: tuple[str, int]):
        self._recorder = recorder
        self.client = client
        self.server = server
        self._client_seq = 1001
        self._server_seq = 42001
        self._open = False

    def handshake(self) -> None:
        rec, (cip, cport), (sip, sport) = self._recorder, self.client, self.server
        rec._tcp(cip, sip, cport, sport, self._client_seq - 1, 0, TCP_SYN)
        rec._tcp(sip, cip, sport, cport, self._server_seq - 1, self._client_seq, TCP_SYN | TCP_ACK)
        rec._tcp(cip, sip, cport, sport, self._client_seq, self._server_seq, TCP_ACK)
        self._open = True

    def refused(self) -> None:
        rec, (cip, cport), (sip, sport) = self._recorder, self.client, self.server
        rec._tcp(cip, sip, cport, sport, self._client_seq - 1, 0, TCP_SYN)
        rec._tcp(sip, cip, sport, cport, 0, self._client_seq, TCP_RST | TCP_ACK)

    def unanswered(self) -> None:
        (cip, cport), (sip, sport) = self.client, self.server
        self._recorder._tcp(cip, sip, cport, sport, self._client_seq - 1, 0, TCP_SYN)

    def client_payload(self, data: bytes) -> None:
        (cip, cport), (sip, sport) = self.client, self.server
        self._recorder._tcp(cip, sip, cport, sport, self._client_seq, self._server_seq, TCP_PSH | TCP_ACK, data)
        self._client_seq += len(data)

    def server_payload(self, data: bytes) -> None:
        (cip, cport), (sip, sport) = self.client, self.server
        self._recorder._tcp(sip, cip, sport, cport, self._server_seq, self._client_seq, TCP_PSH | TCP_ACK, data)
        self._server_seq += len(data)

    def close(self, reset: bool = False) -> None:
        if not self._open:
            return
        (cip, cport), (sip, sport) = self.client, self.server
        flags = TCP_RST | TCP_ACK if reset else TCP_FIN | TCP_ACK
        self._recorder._tcp(cip, sip, cport, sport, self._client_seq, self._server_seq, flags)
        self._open = False


class TrafficRecorder:
    """Synthesizes mirror-port style frames for everything it is told.

    All knowledge is logical (IPs, MACs, payload bytes); the recorder
    fabricates well-formed link/network/transport layers around it.
    """

    def __init__(self, writer: PcapWriter | None, clock: Callable[[], float] = time.time):
        self._writer = writer
        self._clock = clock
        self._lock = threading.Lock()
        self._macs: dict[str, str] = {}
        self._icmp_ident = 0
        self._ip_ident = 0

    @property
    def active(self) -> bool:
        return self._writer is not None

    def register_mac(self, ip: str, mac: str) -> None:
        self._macs[ip] = mac

    def mac_for(self, ip: str) -> str:
        mac = self._macs.get(ip)
        if mac is None:
            # locally administered placeholder derived from the address
            octets = ip_bytes(ip)
            mac = mac_text(bytes([0x02, 0x00]) + octets)
            self._macs[ip] = mac
        return mac

    def _emit(self, frame: bytes) -> None:
        if self._writer is not None:
            self._writer.write(self._clock(), frame)

    def _next_ip_ident(self) -> int:
        with self._lock:
            self._ip_ident = (self._ip_ident + 1) & 0xFFFF
            return self._ip_ident

    def arp_exchange(self, src_ip: str, target_ip: str, answered: bool) -> None:
        src_mac = self.mac_for(src_ip)
        self._emit(arp_frame(1, src_mac, src_ip, BROADCAST_MAC, target_ip))
        if answered:
            target_mac = self.mac_for(target_ip)
            self._emit(arp_frame(2, target_mac, target_ip, src_mac, src_ip))

    def icmp_echo_exchange(self, src_ip: str, dst_ip: str, answered: bool) -> None:
        with self._lock:
            self._icmp_ident = (self._icmp_ident + 1) & 0xFFFF
            ident = self._icmp_ident
        self._ip_payload(src_ip, dst_ip, PROTO_ICMP, icmp_echo(ident, 1, reply=False))
        if answered:
            self._ip_payload(dst_ip, src_ip, PROTO_ICMP, icmp_echo(ident, 1, reply=True))

    def _ip_payload(self, src_ip: str, dst_ip: str, proto: int, payload: bytes) -> None:
        packet = ipv4(src_ip, dst_ip, proto, payload, ident=self._next_ip_ident())
        self._emit(ethernet(self.mac_for(dst_ip), self.mac_for(src_ip), ETHERTYPE_IPV4, packet))

    def _tcp(self, src_ip: str, dst_ip: str, src_port: int, dst_port: int,
             seq: int, ack: int, flags: int, payload: bytes = b"") -> None:
        segment = tcp_segment(src_ip, dst_ip, src_port, dst_port, seq, ack, flags, payload)
        self._ip_payload(src_ip, dst_ip, PROTO_TCP, segment)

    def tcp_flow(self, client: tuple[str, int], server: tuple[str, int]) -> TcpFlowRecord:
        return TcpFlowRecord(self, client, server)
