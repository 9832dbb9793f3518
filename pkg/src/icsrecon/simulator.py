"""Protocol-faithful stand-ins for small ICS field stations.

Each simulated device is a real TCP server on a loopback port; an
address-mapping layer presents the set to the scanner as distinct
logical hosts on one subnet (CI cannot create interface aliases
portably). All framing goes through the shared codecs, so every reply
the simulator emits parses cleanly on the scanner side.

Fragility model: a fragile device faults when the observed packet rate
over a sliding one-second window exceeds its budget, or (optionally)
when a single malformed frame arrives. A faulted device still accepts
connections but never replies until reset, mimicking gear that needs a
power cycle. Real fault conditions are device-specific and mostly
undisclosed; this model is a deliberately generic stand-in.
"""

from __future__ import annotations

import collections
import json
import logging
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

from .codecs import enip, modbus, s7
from .errors import ConfigError, DecodeError, FormatError, IcsReconError, PortUnavailable
from .netbase import (
    ConnectResult,
    Network,
    recv_enip_frame,
    recv_modbus_frame,
    recv_tpkt_frame,
)
from .pcapio import PcapWriter, TrafficRecorder

logger = logging.getLogger(__name__)

MODBUS_FLAGS = {"device_id_fc2b", "report_slave_id_fc11"}
S7_FLAGS = {"szl_0011", "szl_001c"}
ENIP_FLAGS = {"list_identity"}

FLAGS_BY_PROTOCOL = {
    "modbus": MODBUS_FLAGS,
    "s7comm": S7_FLAGS,
    "enip": ENIP_FLAGS,
}

CONNECTION_IDLE_TIMEOUT = 5.0


class SimState(Enum):
    RUNNING = "running"
    FAULT = "fault"


@dataclass
class Counters:
    packets_received: int = 0
    packets_sent: int = 0
    malformed_seen: int = 0

    def snapshot(self) -> "Counters":
        return Counters(self.packets_received, self.packets_sent, self.malformed_seen)


@dataclass(frozen=True)
class SimDeviceConfig:
    """Identity plus fragility parameters for one simulated device."""

    name: str
    protocol: str
    ip: str
    listen_port: int
    mac: str = "02:00:00:00:00:01"
    identity: dict[str, str] = field(default_factory=dict)
    feature_flags: frozenset[str] = frozenset()
    fragile: bool = False
    max_pps: int = 50
    fault_on_malformed: bool = False
    accepted_tsaps: tuple[int, ...] | None = None
    unit_id: int = 1

    def __post_init__(self):
        if self.protocol not in FLAGS_BY_PROTOCOL:
            raise ConfigError(f"{self.name}: unsupported protocol {self.protocol!r}")
        allowed = FLAGS_BY_PROTOCOL[self.protocol]
        extra = frozenset(self.feature_flags) - allowed
        if extra:
            raise ConfigError(f"{self.name}: flags {sorted(extra)} not valid for {self.protocol}")
        if self.max_pps < 1:
            raise ConfigError(f"{self.name}: max_pps must be >= 1")
        object.__setattr__(self, "feature_flags", frozenset(self.feature_flags))


class SimDevice:
    """One simulated device: state machine, counters, protocol logic."""

    def __init__(self, config: SimDeviceConfig, station: "StationHandle"):
        self.config = config
        self.station = station
        self.state = SimState.RUNNING
        self.counters = Counters()
        self._window: collections.deque[float] = collections.deque()
        self._lock = threading.Lock()
        self._server: socketserver.ThreadingTCPServer | None = None
        self.bound_port: int | None = None

    # -- state & counters -------------------------------------------------

    def validates(self, packet: bytes) -> bool:
        """Does the frame decode under this device's protocol?"""
        try:
            if self.config.protocol == "modbus":
                modbus.decode_modbus(packet)
            elif self.config.protocol == "s7comm":
                s7.decode_envelope(packet)
            else:
                enip.decode_header(packet)
            return True
        except IcsReconError:
            return False

    def note_received(self, now: float | None = None) -> None:
        now = self.station.clock() if now is None else now
        with self._lock:
            self.counters.packets_received += 1
        self.station.note_packet(now)

    def note_sent(self) -> None:
        with self._lock:
            self.counters.packets_sent += 1

    def note_malformed(self) -> None:
        with self._lock:
            self.counters.malformed_seen += 1

    def _rate_exceeded(self, now: float) -> bool:
        window = self._window
        window.append(now)
        cutoff = now - 1.0
        while window and window[0] < cutoff:
            window.popleft()
        return len(window) > self.config.max_pps

    def reset(self) -> SimState:
        with self._lock:
            self.state = SimState.RUNNING
            self._window.clear()
        return self.state

    def get_state(self) -> SimState:
        return self.state

    def get_counters(self) -> Counters:
        with self._lock:
            return self.counters.snapshot()


def fragility_tick(device: SimDevice, packet: bytes | None, now: float | None = None) -> SimState:
    """Apply one incoming packet to the fragility model.

    Rate pressure: fragile devices fault when more than max_pps packets
    land inside any sliding one-second window. Malformed pressure: with
    fault_on_malformed set, one undecodable frame is enough. Faults
    latch until an explicit reset.
    """
    now = device.station.clock() if now is None else now
    with device._lock:
        if device.config.fragile and device._rate_exceeded(now) and device.state is SimState.RUNNING:
            device.state = SimState.FAULT
            logger.warning("device %s entered fault state (rate)", device.config.name)
    if (
        packet is not None
        and device.config.fault_on_malformed
        and device.state is SimState.RUNNING
        and not device.validates(packet)
    ):
        with device._lock:
            device.state = SimState.FAULT
        logger.warning("device %s entered fault state (malformed frame)", device.config.name)
    return device.state


def reset_device(device: SimDevice) -> SimState:
    return device.reset()


def get_state(device: SimDevice) -> SimState:
    return device.get_state()


def get_counters(device: SimDevice) -> Counters:
    return device.get_counters()


# -- protocol handlers ----------------------------------------------------


def _modbus_reply(device: SimDevice, request: bytes) -> bytes | None:
    header, pdu = modbus.decode_modbus(request)
    config = device.config
    if header.unit_id not in (config.unit_id, 0x00, 0xFF):
        # gateway-style answer for units that are not present
        return modbus.exception_frame(header.transaction_id, header.unit_id, pdu.function, 0x0B)
    if pdu.function == modbus.FC_ENCAPSULATED and pdu.payload[:1] == bytes([modbus.MEI_DEVICE_ID]):
        if "device_id_fc2b" not in config.feature_flags:
            return modbus.exception_frame(
                header.transaction_id, header.unit_id, pdu.function, modbus.EXC_ILLEGAL_FUNCTION
            )
        objects = {
            modbus.OBJ_VENDOR_NAME: config.identity.get("manufacturer", ""),
            modbus.OBJ_PRODUCT_CODE: config.identity.get("product_code", ""),
            modbus.OBJ_REVISION: config.identity.get("firmware_version", ""),
        }
        objects = {k: v for k, v in objects.items() if v}
        return modbus.build_device_id_response(header.transaction_id, header.unit_id, objects)
    if pdu.function == modbus.FC_REPORT_SLAVE_ID:
        if "report_slave_id_fc11" not in config.feature_flags:
            return modbus.exception_frame(
                header.transaction_id, header.unit_id, pdu.function, modbus.EXC_ILLEGAL_FUNCTION
            )
        slave_id = int(config.identity.get("slave_id", config.unit_id))
        extra = config.identity.get("product_code", "").encode("ascii", errors="replace")
        return modbus.build_report_slave_id_response(
            header.transaction_id, header.unit_id, slave_id, running=True, additional=extra
        )
    if pdu.function == modbus.FC_READ_HOLDING and len(pdu.payload) == 4:
        count = struct.unpack(">H", pdu.payload[2:4])[0]
        if 1 <= count <= 125:
            return modbus.build_read_holding_response(header.transaction_id, header.unit_id, [0] * count)
    return modbus.exception_frame(
        header.transaction_id, header.unit_id, pdu.function, modbus.EXC_ILLEGAL_FUNCTION
    )


class _S7Session:
    """Per-connection COTP/S7 state: connect, setup, then reads."""

    def __init__(self, device: SimDevice):
        self.device = device
        self.connected = False
        self.disconnect = False

    def reply(self, request: bytes) -> bytes | None:
        cotp = s7.decode_envelope(request).cotp
        config = self.device.config
        if isinstance(cotp, s7.CotpConnectionRequest):
            accepted = config.accepted_tsaps is None or cotp.dst_tsap in config.accepted_tsaps
            if not accepted:
                self.disconnect = True
                return s7.build_cotp_disconnect(reason=0x83)
            self.connected = True
            return s7.build_cotp_confirm(cotp)
        if not self.connected or not isinstance(cotp, s7.CotpData):
            self.disconnect = True
            return None
        message = s7.decode_s7(cotp.payload)
        if isinstance(message, s7.S7SetupCommunication) and message.is_request:
            return s7.build_setup_ack(message.pdu_ref)
        if isinstance(message, s7.S7SzlRequest):
            flag = {s7.SZL_MODULE_ID: "szl_0011", s7.SZL_COMPONENT_ID: "szl_001c"}.get(message.szl_id)
            if flag is None or flag not in config.feature_flags:
                refusal = s7.S7SzlResponse(
                    szl_id=message.szl_id, szl_index=message.szl_index, entries=(),
                    pdu_ref=message.pdu_ref, sequence=message.sequence, error_code=0x8104,
                )
                return s7.build_szl_response_frame(refusal)
            if message.szl_id == s7.SZL_MODULE_ID:
                entries = s7.module_id_entries(config.identity)
            else:
                entries = s7.component_id_entries(config.identity)
            response = s7.S7SzlResponse(
                szl_id=message.szl_id, szl_index=message.szl_index, entries=entries,
                pdu_ref=message.pdu_ref, sequence=message.sequence,
            )
            return s7.build_szl_response_frame(response)
        raise FormatError("unsupported S7 request")


def _enip_identity(config: SimDeviceConfig) -> enip.CipIdentity:
    identity = config.identity
    revision = identity.get("firmware_version", "1.0").split(".")
    major = int(revision[0]) if revision[0].isdigit() else 1
    minor = int(revision[1]) if len(revision) > 1 and revision[1].isdigit() else 0
    return enip.CipIdentity(
        vendor_id=int(identity.get("vendor_id", "1")),
        device_type=int(identity.get("device_type", "14")),
        product_code=int(identity.get("product_code_number", "0") or 0),
        revision=(major, minor),
        status=int(identity.get("status", "0x0060"), 0),
        serial=int(identity.get("serial_number", "0"), 0),
        product_name=identity.get("product_name", config.name),
        state=3,
    )


def _enip_reply(device: SimDevice, request: bytes) -> bytes | None:
    message, _payload = enip.decode_header(request)
    if message.command == enip.CMD_LIST_IDENTITY:
        if "list_identity" not in device.config.feature_flags:
            return enip.encode_header(enip.CMD_LIST_IDENTITY, b"", status=0x0001)
        return enip.build_list_identity_response(
            _enip_identity(device.config), ip=device.config.ip, port=device.config.listen_port
        )
    return enip.encode_header(message.command, b"", status=0x0001)


_FRAME_READERS = {
    "modbus": recv_modbus_frame,
    "s7comm": recv_tpkt_frame,
    "enip": recv_enip_frame,
}


class _DeviceServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, device: SimDevice):
        self.device = device
        super().__init__(("127.0.0.1", 0), _DeviceHandler)


class _DeviceHandler(socketserver.BaseRequestHandler):
    def handle(self):
        device: SimDevice = self.server.device
        station = device.station
        device.note_received()  # the connection attempt itself
        fragility_tick(device, None)
        flow = station.recorder.tcp_flow(
            (station.scanner_ip, self.client_address[1]),
            (device.config.ip, device.config.listen_port),
        )
        flow.handshake()
        reader = _FRAME_READERS[device.config.protocol]
        session = _S7Session(device) if device.config.protocol == "s7comm" else None
        reset = False
        try:
            while True:
                try:
                    request = reader(self.request, CONNECTION_IDLE_TIMEOUT)
                except socket.timeout:
                    return
                except (ConnectionError, OSError):
                    # unframeable input: treat whatever is pending as one
                    # malformed packet
                    device.note_received()
                    device.note_malformed()
                    fragility_tick(device, b"\xff")
                    reset = True
                    return
                device.note_received()
                fragility_tick(device, request)
                flow.client_payload(request)
                if device.state is SimState.FAULT:
                    continue  # accepts traffic, never replies
                try:
                    reply = self._reply(device, session, request)
                except (DecodeError, FormatError):
                    device.note_malformed()
                    fragility_tick(device, b"\xff" + request)
                    reset = True
                    return
                if reply is not None:
                    self.request.sendall(reply)
                    device.note_sent()
                    flow.server_payload(reply)
                if session is not None and session.disconnect:
                    return
        finally:
            flow.close(reset=reset)

    @staticmethod
    def _reply(device: SimDevice, session: _S7Session | None, request: bytes) -> bytes | None:
        if device.config.protocol == "modbus":
            return _modbus_reply(device, request)
        if device.config.protocol == "s7comm":
            return session.reply(request)
        return _enip_reply(device, request)


class StationHandle:
    """A set of simulated devices plus the address-mapping layer."""

    def __init__(
        self,
        configs: list[SimDeviceConfig],
        scanner_ip: str = "192.168.90.1",
        pcap_path: str | None = None,
        clock=time.time,
    ):
        self.scanner_ip = scanner_ip
        self.clock = clock
        self._pcap_writer = PcapWriter(pcap_path) if pcap_path else None
        self.recorder = TrafficRecorder(self._pcap_writer, clock=clock)
        self.recorder.register_mac(scanner_ip, "02:00:5e:00:00:01")
        self.devices: list[SimDevice] = []
        self._by_endpoint: dict[tuple[str, int], SimDevice] = {}
        self._by_ip: dict[str, SimDevice] = {}
        self._packet_lock = threading.Lock()
        self.packet_times: list[float] = []
        seen = set()
        for config in configs:
            endpoint = (config.ip, config.listen_port)
            if endpoint in seen:
                raise PortUnavailable(f"duplicate endpoint {config.ip}:{config.listen_port}")
            seen.add(endpoint)
            device = SimDevice(config, self)
            self.devices.append(device)
            self._by_endpoint[endpoint] = device
            self._by_ip.setdefault(config.ip, device)
            self.recorder.register_mac(config.ip, config.mac)

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "StationHandle":
        for device in self.devices:
            try:
                server = _DeviceServer(device)
            except OSError as exc:
                self.stop()
                raise PortUnavailable(f"{device.config.name}: {exc}") from exc
            device._server = server
            device.bound_port = server.server_address[1]
            thread = threading.Thread(target=server.serve_forever, daemon=True, name=f"sim-{device.config.name}")
            thread.start()
        return self

    def stop(self) -> None:
        for device in self.devices:
            if device._server is not None:
                device._server.shutdown()
                device._server.server_close()
                device._server = None
        if self._pcap_writer is not None:
            self._pcap_writer.close()

    def __enter__(self) -> "StationHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- address mapping ---------------------------------------------------

    def note_packet(self, now: float) -> None:
        with self._packet_lock:
            self.packet_times.append(now)

    def total_packets_received(self) -> int:
        with self._packet_lock:
            return len(self.packet_times)

    def device(self, name: str) -> SimDevice:
        for device in self.devices:
            if device.config.name == name:
                return device
        raise KeyError(name)

    def device_by_ip(self, ip: str) -> SimDevice | None:
        return self._by_ip.get(ip)

    def lookup(self, ip: str, port: int) -> int | None:
        device = self._by_endpoint.get((ip, port))
        if device is None or device.bound_port is None:
            return None
        return device.bound_port

    def ping(self, ip: str) -> bool:
        device = self._by_ip.get(ip)
        if device is None:
            self.recorder.icmp_echo_exchange(self.scanner_ip, ip, answered=False)
            return False
        device.note_received()
        fragility_tick(device, None)
        answered = device.state is SimState.RUNNING
        self.recorder.icmp_echo_exchange(self.scanner_ip, ip, answered=answered)
        return answered

    def arp(self, ip: str) -> str | None:
        device = self._by_ip.get(ip)
        if device is None:
            self.recorder.arp_exchange(self.scanner_ip, ip, answered=False)
            return None
        # link-layer resolution keeps working even for faulted devices
        device.note_received()
        fragility_tick(device, None)
        self.recorder.arp_exchange(self.scanner_ip, ip, answered=True)
        return device.config.mac

    def unmapped_syn(self, ip: str, port: int, client_port: int = 0) -> str:
        flow = self.recorder.tcp_flow((self.scanner_ip, client_port or 65000), (ip, port))
        device = self._by_ip.get(ip)
        if device is None:
            flow.unanswered()
            return "timeout"
        device.note_received()
        fragility_tick(device, None)
        if device.state is SimState.RUNNING:
            flow.refused()
            return "refused"
        flow.unanswered()
        return "timeout"

    def address_map(self) -> dict:
        return {
            "scanner_ip": self.scanner_ip,
            "hosts": {
                device.config.ip: {
                    "mac": device.config.mac,
                    "name": device.config.name,
                    "ports": {str(device.config.listen_port): device.bound_port},
                }
                for device in self.devices
            },
        }


def start_station(
    configs: list[SimDeviceConfig],
    scanner_ip: str = "192.168.90.1",
    pcap_path: str | None = None,
) -> StationHandle:
    """Bind and start every configured device; see StationHandle."""
    return StationHandle(configs, scanner_ip=scanner_ip, pcap_path=pcap_path).start()


class SimNetwork(Network):
    """Scanner-facing view of a station: the drop-in Network."""

    def __init__(self, station: StationHandle):
        self.station = station
        self.source_ip = station.scanner_ip

    def require(self, method: str) -> None:
        if method not in ("icmp", "arp", "tcp_connect"):
            raise ValueError(f"unknown discovery method {method!r}")

    def ping(self, ip: str, timeout: float) -> bool:
        return self.station.ping(ip)

    def arp(self, ip: str, timeout: float) -> str | None:
        return self.station.arp(ip)

    def connect(self, ip: str, port: int, timeout: float) -> ConnectResult:
        real_port = self.station.lookup(ip, port)
        if real_port is None:
            return ConnectResult(self.station.unmapped_syn(ip, port))
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.settimeout(timeout)
        try:
            sock.connect(("127.0.0.1", real_port))
            return ConnectResult("open", sock)
        except (ConnectionRefusedError, socket.timeout, OSError):
            sock.close()
            return ConnectResult("timeout")


# -- remote control (separate-process simulator) ---------------------------


class _ControlServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, station: StationHandle):
        self.station = station
        self.shutdown_event = threading.Event()
        super().__init__(("127.0.0.1", 0), _ControlHandler)


class _ControlHandler(socketserver.StreamRequestHandler):
    def handle(self):
        station: StationHandle = self.server.station
        for line in self.rfile:
            request: dict = {}
            try:
                request = json.loads(line.decode("utf-8"))
                response = self._dispatch(station, request)
            except Exception as exc:  # never kill the control channel
                response = {"ok": False, "error": str(exc)}
            self.wfile.write((json.dumps(response) + "\n").encode("utf-8"))
            if isinstance(request, dict) and request.get("op") == "shutdown":
                self.server.shutdown_event.set()
                return

    def _dispatch(self, station: StationHandle, request: dict) -> dict:
        op = request.get("op")
        if op == "ping":
            return {"ok": True, "alive": station.ping(request["ip"])}
        if op == "arp":
            return {"ok": True, "mac": station.arp(request["ip"])}
        if op == "unmapped_syn":
            return {"ok": True, "status": station.unmapped_syn(request["ip"], request["port"])}
        if op == "state":
            return {"ok": True, "state": station.device(request["name"]).get_state().value}
        if op == "counters":
            counters = station.device(request["name"]).get_counters()
            return {"ok": True, "counters": vars(counters)}
        if op == "reset":
            return {"ok": True, "state": station.device(request["name"]).reset().value}
        if op == "info":
            return {"ok": True, "map": station.address_map()}
        if op == "shutdown":
            return {"ok": True}
        return {"ok": False, "error": f"unknown op {op!r}"}


class ControlledStation:
    """Station plus its control socket, as run by the simulate command."""

    def __init__(self, station: StationHandle):
        self.station = station
        self.control = _ControlServer(station)
        self.control_port = self.control.server_address[1]
        self._thread = threading.Thread(target=self.control.serve_forever, daemon=True, name="sim-control")
        self._thread.start()

    def map_document(self) -> dict:
        doc = self.station.address_map()
        doc["control_port"] = self.control_port
        return doc

    def wait(self, poll: float = 0.2) -> None:
        while not self.control.shutdown_event.wait(poll):
            pass

    def stop(self) -> None:
        self.control.shutdown()
        self.control.server_close()
        self.station.stop()


class ControlClient:
    """JSON-lines client for a ControlledStation."""

    def __init__(self, port: int, host: str = "127.0.0.1", timeout: float = 5.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._fh = self._sock.makefile("rwb")

    def call(self, op: str, **kwargs) -> dict:
        request = {"op": op, **kwargs}
        self._fh.write((json.dumps(request) + "\n").encode("utf-8"))
        self._fh.flush()
        line = self._fh.readline()
        if not line:
            raise IcsReconError("control channel closed")
        response = json.loads(line.decode("utf-8"))
        if not response.get("ok"):
            raise IcsReconError(f"control call {op} failed: {response.get('error')}")
        return response

    def close(self) -> None:
        try:
            self._fh.close()
            self._sock.close()
        except OSError:
            pass


class RemoteSimNetwork(Network):
    """Network backed by a simulator in another process, via map file."""

    def __init__(self, map_document: dict, timeout: float = 5.0):
        self.hosts = map_document["hosts"]
        self.scanner_ip = map_document["scanner_ip"]
        self.source_ip = self.scanner_ip
        self._client = ControlClient(map_document["control_port"], timeout=timeout)

    def require(self, method: str) -> None:
        if method not in ("icmp", "arp", "tcp_connect"):
            raise ValueError(f"unknown discovery method {method!r}")

    def ping(self, ip: str, timeout: float) -> bool:
        return bool(self._client.call("ping", ip=ip)["alive"])

    def arp(self, ip: str, timeout: float) -> str | None:
        return self._client.call("arp", ip=ip)["mac"]

    def connect(self, ip: str, port: int, timeout: float) -> ConnectResult:
        host = self.hosts.get(ip)
        real_port = host["ports"].get(str(port)) if host else None
        if real_port is None:
            return ConnectResult(self._client.call("unmapped_syn", ip=ip, port=port)["status"])
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.settimeout(timeout)
        try:
            sock.connect(("127.0.0.1", real_port))
            return ConnectResult("open", sock)
        except (ConnectionRefusedError, socket.timeout, OSError):
            sock.close()
            return ConnectResult("timeout")

    def close(self) -> None:
        self._client.close()
