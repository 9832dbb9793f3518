"""Zero-packet asset extraction from mirrored traffic.

The analyzer never opens a sending socket: everything is derived from
capture records (offline pcap files, or a live interface behind the
same reader seam). Classification needs payload evidence, a port
number alone is never enough for a protocol claim; identity-bearing
replies are parsed with the shared codecs and lift assets to static /
deployment depth. Flow reassembly is deliberately minimal: in-order
segment concatenation per direction with a 64 KiB cap, out-of-order
segments are dropped and counted.
"""

from __future__ import annotations

import logging
import os
import socket
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Iterator

from .codecs import enip, modbus, s7
from .errors import IcsReconError, PrivilegeRequired
from .model import (
    DeploymentInfo,
    Inventory,
    Observation,
    PortSpec,
    StaticDeviceInfo,
    compute_depth,
    format_timestamp,
)
from .ouidb import load_enip_vendors, vendor_for_mac
from .pcapio import (
    CaptureReader,
    ETHERTYPE_ARP,
    ETHERTYPE_IPV4,
    PROTO_TCP,
    TCP_ACK,
    TCP_FIN,
    TCP_SYN,
    parse_arp,
    parse_ethernet,
    parse_ipv4,
    parse_tcp,
)

logger = logging.getLogger(__name__)

REASSEMBLY_CAP = 64 * 1024
WELL_KNOWN_SERVER_PORTS = (102, 502, 44818, 20000)


@dataclass(frozen=True)
class PcapFile:
    path: str


@dataclass(frozen=True)
class LiveInterface:
    name: str
    promiscuous: bool = True


CaptureSource = PcapFile | LiveInterface


def read_capture(source: CaptureSource) -> Iterator[tuple[float, bytes]]:
    """Yield (timestamp, link frame) records from the source.

    Malformed pcap records are skipped by the reader, never aborting
    the stream; a wrong magic number raises FormatError up front.
    """
    if isinstance(source, PcapFile):
        yield from CaptureReader(source.path)
        return
    if isinstance(source, LiveInterface):
        yield from _live_frames(source)
        return
    raise TypeError(f"not a capture source: {source!r}")


def _live_frames(source: LiveInterface) -> Iterator[tuple[float, bytes]]:
    if os.geteuid() != 0:
        raise PrivilegeRequired("live_capture")
    import time

    sock = socket.socket(socket.AF_PACKET, socket.SOCK_RAW, socket.htons(0x0003))
    sock.bind((source.name, 0))
    try:
        while True:
            frame = sock.recv(65536)
            yield time.time(), frame
    finally:
        sock.close()


def classify_flow(flow_bytes: bytes, flow_key: tuple | None = None) -> str | None:
    """Payload-level protocol classification of one direction.

    Requires at least one complete frame of the protocol in question;
    returns None when nothing matches (ports are deliberately ignored).
    """
    if not flow_bytes:
        return None
    frames, _rest = modbus.extract_frames(flow_bytes)
    if frames:
        return "modbus"
    frames, _rest = s7.extract_tpkt_frames(flow_bytes)
    if frames:
        try:
            s7.decode_envelope(frames[0])
            return "s7comm"
        except IcsReconError:
            pass
    frames, _rest = enip.extract_frames(flow_bytes)
    if frames:
        return "enip"
    if flow_bytes[:2] == b"\x05\x64":
        return "dnp3"
    return None


class _Direction:
    __slots__ = ("next_seq", "buffer", "capped")

    def __init__(self):
        self.next_seq: int | None = None
        self.buffer = bytearray()
        self.capped = False

    def add(self, seq: int, payload: bytes, flow: "_Flow") -> None:
        if self.next_seq is None:
            self.next_seq = seq
        if seq == self.next_seq:
            if not self.capped:
                room = REASSEMBLY_CAP - len(self.buffer)
                self.buffer += payload[:room]
                if room < len(payload):
                    self.capped = True
            self.next_seq = (self.next_seq + len(payload)) & 0xFFFFFFFF
        elif _seq_after(seq, self.next_seq):
            flow.out_of_order += 1  # dropped, by design
        # else: retransmission of already-consumed data; ignore

    def bump(self, seq: int, amount: int) -> None:
        # SYN/FIN consume one sequence number without carrying data
        if self.next_seq is None or seq == self.next_seq:
            self.next_seq = ((seq if self.next_seq is None else self.next_seq) + amount) & 0xFFFFFFFF


def _seq_after(a: int, b: int) -> bool:
    return ((a - b) & 0xFFFFFFFF) < 0x80000000 and a != b


class _Flow:
    def __init__(self, low, high):
        self.endpoints = (low, high)
        self.dirs = {low: _Direction(), high: _Direction()}
        self.client: tuple[str, int] | None = None
        self.out_of_order = 0
        self.last_seen = 0.0

    def server(self) -> tuple[str, int]:
        low, high = self.endpoints
        if self.client is not None:
            return high if self.client == low else low
        for endpoint in (low, high):
            if endpoint[1] in WELL_KNOWN_SERVER_PORTS:
                return endpoint
        return min((low, high), key=lambda e: e[1])

    def server_bytes(self) -> bytes:
        return bytes(self.dirs[self.server()].buffer)

    def client_bytes(self) -> bytes:
        server = self.server()
        low, high = self.endpoints
        return bytes(self.dirs[high if server == low else low].buffer)


def _flow_key(a: tuple[str, int], b: tuple[str, int]):
    return tuple(sorted((a, b)))


@dataclass
class PassiveReport:
    """Outcome of one capture analysis run."""

    inventory: Inventory
    per_asset_depth: dict[str, int]
    frames_read: int
    frames_skipped: int
    out_of_order_segments: int
    classified_flows: int
    source: str
    generated_at: datetime
    kind: str = "passive"
    nature: str = "offline"

    def to_document(self) -> dict[str, Any]:
        return {
            "version": 1,
            "kind": self.kind,
            "nature": self.nature,
            "source": self.source,
            "generated_at": format_timestamp(self.generated_at),
            "frames_read": self.frames_read,
            "frames_skipped": self.frames_skipped,
            "out_of_order_segments": self.out_of_order_segments,
            "classified_flows": self.classified_flows,
            "per_asset_depth": dict(sorted(self.per_asset_depth.items())),
            "anomalies": [],
            "inventory": self.inventory.to_document(),
        }


def _identity_observations(protocol: str, flow: _Flow) -> list[tuple[dict, dict]]:
    """Parse identity-bearing replies out of the server-side stream."""
    static: dict[str, str] = {}
    deployment: dict[str, str] = {}
    data = flow.server_bytes()
    if protocol == "modbus":
        frames, _ = modbus.extract_frames(data)
        for wire in frames:
            try:
                header, pdu = modbus.decode_modbus(wire)
            except IcsReconError:
                continue
            if pdu.is_exception:
                continue
            if pdu.function == modbus.FC_ENCAPSULATED:
                try:
                    static.update(modbus.device_id_to_fields(modbus.parse_device_id_response(wire)))
                except IcsReconError:
                    continue
            elif pdu.function == modbus.FC_REPORT_SLAVE_ID:
                try:
                    parsed = modbus.parse_report_slave_id_response(wire)
                except IcsReconError:
                    continue
                deployment["modbus_slave_id"] = str(parsed.slave_id)
                deployment["unit_id"] = str(header.unit_id)
    elif protocol == "s7comm":
        frames, _ = s7.extract_tpkt_frames(data)
        records: list[s7.SzlRecord] = []
        for wire in frames:
            try:
                records.extend(s7.parse_szl_response(wire))
            except IcsReconError:
                continue
        static, deployment = s7.szl_records_to_fields(records)
    elif protocol == "enip":
        frames, _ = enip.extract_frames(data)
        for wire in frames:
            try:
                message, payload = enip.decode_header(wire)
            except IcsReconError:
                continue
            if message.command != enip.CMD_LIST_IDENTITY or not payload:
                continue
            try:
                identity = enip.parse_list_identity(wire)
            except IcsReconError:
                continue
            static.update(enip.identity_to_fields(identity, load_enip_vendors().get(identity.vendor_id)))
    return [(static, deployment)] if (static or deployment) else []


def analyze_capture(source: CaptureSource) -> PassiveReport:
    """Single pass over the capture; builds the passive inventory."""
    senders: dict[str, dict] = {}
    flows: dict[tuple, _Flow] = {}
    frames_read = 0

    def saw_sender(ip: str, mac: str | None, when: float) -> None:
        if ip == "0.0.0.0":
            return
        entry = senders.setdefault(ip, {"mac": None, "last": when})
        entry["last"] = max(entry["last"], when)
        if mac and entry["mac"] is None:
            entry["mac"] = mac

    reader_skipped = 0
    reader_obj: CaptureReader | None = None
    if isinstance(source, PcapFile):
        reader_obj = CaptureReader(source.path)
        frame_iter: Iterator[tuple[float, bytes]] = iter(reader_obj)
    else:
        frame_iter = read_capture(source)
    for when, frame in frame_iter:
        frames_read += 1
        eth = parse_ethernet(frame)
        if eth is None:
            reader_skipped += 1
            continue
        if eth.ethertype == ETHERTYPE_ARP:
            arp = parse_arp(eth.payload)
            if arp is not None:
                saw_sender(arp.sender_ip, arp.sender_mac, when)
            continue
        if eth.ethertype != ETHERTYPE_IPV4:
            continue
        packet = parse_ipv4(eth.payload)
        if packet is None:
            reader_skipped += 1
            continue
        saw_sender(packet.src_ip, eth.src_mac, when)
        if packet.proto != PROTO_TCP:
            continue
        segment = parse_tcp(packet.payload)
        if segment is None:
            reader_skipped += 1
            continue
        src = (packet.src_ip, segment.src_port)
        dst = (packet.dst_ip, segment.dst_port)
        flow = flows.setdefault(_flow_key(src, dst), _Flow(*_flow_key(src, dst)))
        flow.last_seen = max(flow.last_seen, when)
        direction = flow.dirs[src]
        if segment.flags & TCP_SYN:
            if flow.client is None and not (segment.flags & TCP_ACK):
                flow.client = src
            direction.bump(segment.seq, 1)
        if segment.payload:
            direction.add(segment.seq, segment.payload, flow)
        if segment.flags & TCP_FIN:
            direction.bump(segment.seq + len(segment.payload), 1)

    inventory = Inventory()
    for ip, entry in senders.items():
        inventory.apply(
            Observation(
                ip=ip,
                source="passive",
                timestamp=datetime.fromtimestamp(entry["last"], tz=timezone.utc),
                mac=entry["mac"],
                oui_vendor=vendor_for_mac(entry["mac"]),
            )
        )

    classified = 0
    out_of_order = 0
    for flow in flows.values():
        out_of_order += flow.out_of_order
        protocol = None
        for data in (flow.server_bytes(), flow.client_bytes()):
            protocol = classify_flow(data)
            if protocol:
                break
        if protocol is None:
            continue
        classified += 1
        server_ip, server_port = flow.server()
        if server_ip not in senders:
            continue  # never transmitted; do not invent an asset
        when = datetime.fromtimestamp(flow.last_seen, tz=timezone.utc)
        inventory.apply(
            Observation(
                ip=server_ip,
                source="passive",
                timestamp=when,
                open_ports=frozenset({PortSpec(server_port)}),
                protocols=frozenset({protocol}),
            )
        )
        for static_fields, deployment in _identity_observations(protocol, flow):
            static = StaticDeviceInfo.from_fields(static_fields) if static_fields else None
            deploy = DeploymentInfo.from_dict(deployment) if deployment else None
            if static is None and deploy is None:
                continue
            inventory.apply(
                Observation(
                    ip=server_ip,
                    source="passive",
                    timestamp=when,
                    static_info=static,
                    deployment_info=deploy,
                )
            )

    skipped = reader_skipped + (reader_obj.skipped if reader_obj is not None else 0)
    depths = {asset.ip: int(compute_depth(asset)) for asset in inventory}
    return PassiveReport(
        inventory=inventory,
        per_asset_depth=depths,
        frames_read=frames_read,
        frames_skipped=skipped,
        out_of_order_segments=out_of_order,
        classified_flows=classified,
        source=source.path if isinstance(source, PcapFile) else source.name,
        generated_at=datetime.now(timezone.utc),
    )


def extract_assets(source: CaptureSource) -> Inventory:
    """Inventory extracted purely from observed traffic."""
    return analyze_capture(source).inventory
