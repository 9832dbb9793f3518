"""Active scanning pipeline: discovery, service identification,
enumeration, then optional vulnerability lookup.

Later phases only visit hosts that survived earlier ones, and
protocol enumeration is never attempted without a confirmed protocol
(the probe log makes that auditable). A single token bucket gates
every emitted packet across all workers; TCP connect scanning (full
handshake, closed immediately) is used instead of half-open scanning
because it needs no privilege and is gentler on fragile stacks.
"""

from __future__ import annotations

import ipaddress
import logging
import queue
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any

from .codecs import enip, modbus, s7
from .errors import (
    ConfigError,
    ConnectionRefusedByTsap,
    DecodeError,
    FormatError,
    IcsReconError,
    ModbusExceptionResponse,
    PrivilegeRequired,
)
from .model import (
    Asset,
    DeploymentInfo,
    Inventory,
    Observation,
    PortSpec,
    StaticDeviceInfo,
    compute_depth,
    format_timestamp,
    merge_observation,
    satisfied_levels,
)
from .netbase import Network, RealNetwork, recv_enip_frame, recv_modbus_frame, recv_tpkt_frame
from .ouidb import load_enip_vendors, vendor_for_mac
from .ratelimit import TokenBucket

logger = logging.getLogger(__name__)

REPORT_VERSION = 1

DEFAULT_PORTS = frozenset({102, 502, 44818})
METHOD_ORDER = ("arp", "icmp", "tcp_connect")

SAFE_MODE_MAX_PPS = 50


class ScanPhase(str, Enum):
    """Pipeline stages; later phases only visit survivors of earlier ones."""

    DEVICE_DISCOVERY = "device_discovery"
    SERVICE_IDENTIFICATION = "service_identification"
    ENUMERATION = "enumeration"
    VULNERABILITY_IDENTIFICATION = "vulnerability_identification"


@dataclass(frozen=True)
class ScanConfig:
    """Scan parameters; safe mode caps the rate and bans unit sweeps."""

    targets: tuple[str, ...]
    ports: frozenset[int] = DEFAULT_PORTS
    methods: frozenset[str] = frozenset({"icmp"})
    rate_limit_pps: int = 20
    safe_mode: bool = True
    unit_id_sweep: bool = False
    timeout_ms: int = 800
    vuln_db_path: str | None = None
    vuln_alias_path: str | None = None
    workers: int = 8
    modbus_unit: int = 1
    s7_tsap_pairs: tuple[tuple[int, int], ...] = s7.DEFAULT_TSAP_PAIRS
    pcap_out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "ports", frozenset(self.ports))
        object.__setattr__(self, "methods", frozenset(self.methods))
        if not self.methods:
            raise ConfigError("at least one discovery method is required")
        unknown = self.methods - set(METHOD_ORDER)
        if unknown:
            raise ConfigError(f"unknown discovery methods: {sorted(unknown)}")
        if self.rate_limit_pps < 1:
            raise ConfigError("rate_limit_pps must be positive")
        if self.timeout_ms < 1:
            raise ConfigError("timeout_ms must be positive")
        if any(not 1 <= p <= 65535 for p in self.ports):
            raise ConfigError("ports must be within 1..65535")
        if self.safe_mode and self.rate_limit_pps > SAFE_MODE_MAX_PPS:
            raise ConfigError(
                f"safe mode caps the rate at {SAFE_MODE_MAX_PPS} pps "
                f"(asked for {self.rate_limit_pps}); disable safe mode explicitly to go faster"
            )
        if self.safe_mode and self.unit_id_sweep:
            raise ConfigError("unit id sweeps are disabled in safe mode")
        if self.workers < 1:
            raise ConfigError("workers must be positive")

    @property
    def timeout(self) -> float:
        return self.timeout_ms / 1000.0


def expand_targets(targets: tuple[str, ...]) -> list[str]:
    """CIDR blocks and single addresses -> concrete IPv4 list."""
    out: list[str] = []
    seen: set[str] = set()
    for target in targets:
        target = target.strip()
        if not target:
            continue
        try:
            if "/" in target:
                network = ipaddress.IPv4Network(target, strict=False)
                hosts = [str(h) for h in network.hosts()] or [str(network.network_address)]
            else:
                hosts = [str(ipaddress.IPv4Address(target))]
        except (ipaddress.AddressValueError, ipaddress.NetmaskValueError, ValueError) as exc:
            raise ConfigError(f"bad scan target {target!r}: {exc}") from exc
        for host in hosts:
            if host not in seen:
                seen.add(host)
                out.append(host)
    return out


@dataclass
class ScanReport:
    """Everything one scan run produced, JSON-serializable."""

    inventory: Inventory
    per_asset_depth: dict[str, int]
    packets_sent: int
    duration: float
    anomalies: list[str]
    methods_used: list[str]
    unit_id_sweep_used: bool
    vuln_db_consulted: bool
    rate_limit_pps: int
    safe_mode: bool
    generated_at: datetime
    probe_log: list[dict[str, str]] = field(default_factory=list)
    kind: str = "active"

    def levels_achieved(self) -> list[int]:
        levels: set[int] = set()
        for asset in self.inventory:
            levels |= satisfied_levels(asset, self.vuln_db_consulted)
        return sorted(levels)

    def to_document(self) -> dict[str, Any]:
        return {
            "version": REPORT_VERSION,
            "kind": self.kind,
            "generated_at": format_timestamp(self.generated_at),
            "duration_seconds": round(self.duration, 6),
            "packets_sent": self.packets_sent,
            "rate_limit_pps": self.rate_limit_pps,
            "safe_mode": self.safe_mode,
            "methods_used": sorted(self.methods_used),
            "unit_id_sweep_used": self.unit_id_sweep_used,
            "vuln_db_consulted": self.vuln_db_consulted,
            "per_asset_depth": dict(sorted(self.per_asset_depth.items())),
            "levels_achieved": self.levels_achieved(),
            "anomalies": list(self.anomalies),
            "inventory": self.inventory.to_document(),
        }


class Scanner:
    """One scan run; hosts the worker pool and the observation merger."""

    def __init__(
        self,
        config: ScanConfig,
        network: Network | None = None,
        stop_event: threading.Event | None = None,
    ):
        self.config = config
        self.network = network if network is not None else RealNetwork()
        self._owns_recorder = False
        if config.pcap_out:
            from .audit import RecordingNetwork

            self.network = RecordingNetwork(self.network, config.pcap_out)
            self._owns_recorder = True
        self.limiter = TokenBucket(config.rate_limit_pps)
        self.inventory = Inventory()
        self.anomalies: list[str] = []
        self.probe_log: list[dict[str, str]] = []
        self._log_lock = threading.Lock()
        self._queue: "queue.Queue[Observation | None]" = queue.Queue()
        self._stop = stop_event or threading.Event()
        self._sweep_used = False

    # -- plumbing ----------------------------------------------------------

    def _now(self) -> datetime:
        return datetime.now(timezone.utc)

    def _note(self, phase: ScanPhase, ip: str, detail: str) -> None:
        with self._log_lock:
            self.probe_log.append({"phase": phase.value, "ip": ip, "detail": detail})

    def _anomaly(self, text: str) -> None:
        with self._log_lock:
            if text not in self.anomalies:
                self.anomalies.append(text)
        logger.warning("%s", text)

    def _emit(self, obs: Observation) -> None:
        self._queue.put(obs)

    def _merger(self) -> None:
        while True:
            obs = self._queue.get()
            if obs is None:
                return
            try:
                self.inventory.apply(obs)
            except IcsReconError as exc:
                self._anomaly(f"merge failed for {obs.ip}: {exc}")

    def _send_token(self) -> None:
        self.limiter.acquire()

    def _connect(self, ip: str, port: int):
        self._send_token()
        return self.network.connect(ip, port, self.config.timeout)

    # -- phase 1: device discovery ------------------------------------------

    def _usable_methods(self) -> list[str]:
        usable, missing = [], []
        for method in METHOD_ORDER:
            if method not in self.config.methods:
                continue
            try:
                self.network.require(method)
                usable.append(method)
            except PrivilegeRequired as exc:
                missing.append(method)
                self._anomaly(f"discovery method unavailable: {exc}")
        if not usable:
            raise PrivilegeRequired(missing[0] if missing else "none")
        return usable

    def _discover_one(self, ip: str, methods: list[str]) -> Asset | None:
        if self._stop.is_set():
            return None
        alive = False
        mac = None
        for method in methods:
            if method == "arp":
                self._send_token()
                mac = self.network.arp(ip, self.config.timeout)
                alive = alive or mac is not None
                self._note(ScanPhase.DEVICE_DISCOVERY, ip, "arp")
            elif method == "icmp":
                self._send_token()
                if self.network.ping(ip, self.config.timeout):
                    alive = True
                self._note(ScanPhase.DEVICE_DISCOVERY, ip, "icmp")
            elif method == "tcp_connect":
                for port in sorted(self.config.ports):
                    result = self._connect(ip, port)
                    self._note(ScanPhase.DEVICE_DISCOVERY, ip, f"tcp_connect:{port}")
                    if result.sock is not None:
                        result.sock.close()
                    if result.status in ("open", "refused"):
                        alive = True
                        break
        if not alive:
            return None
        vendor = vendor_for_mac(mac)
        self._emit(Observation(ip=ip, source="active", timestamp=self._now(), mac=mac, oui_vendor=vendor))
        return Asset.discovered(ip, self._now(), mac=mac, oui_vendor=vendor)

    def discover_hosts(self, pool: ThreadPoolExecutor | None = None) -> list[Asset]:
        """Phase 1: one asset per responding target address."""
        methods = self._usable_methods()
        targets = expand_targets(self.config.targets)
        if pool is None:
            found = [self._discover_one(ip, methods) for ip in targets]
        else:
            found = list(pool.map(lambda ip: self._discover_one(ip, methods), targets))
        return [asset for asset in found if asset is not None]

    # -- phase 2: service identification -------------------------------------

    def scan_ports(self, asset: Asset) -> Asset:
        """Connect scan: a port is open iff the handshake completes."""
        open_ports = set()
        for port in sorted(self.config.ports):
            if self._stop.is_set():
                break
            result = self._connect(asset.ip, port)
            self._note(ScanPhase.SERVICE_IDENTIFICATION, asset.ip, f"connect:{port}")
            if result.status == "open":
                open_ports.add(PortSpec(port))
                result.sock.close()  # evidence gathered; be brief
        if open_ports:
            obs = Observation(
                ip=asset.ip, source="active", timestamp=self._now(), open_ports=frozenset(open_ports)
            )
            self._emit(obs)
            asset = merge_observation(asset, obs)
        return asset

    def _exchange(self, sock: socket.socket, payload: bytes, reader) -> bytes:
        """Send one request and read one framed reply, one retry."""
        for attempt in (0, 1):
            self._send_token()
            sock.sendall(payload)
            try:
                return reader(sock, self.config.timeout)
            except socket.timeout:
                if attempt == 1:
                    raise
        raise socket.timeout  # unreachable

    def probe_protocol(self, asset: Asset, port: int) -> Asset:
        """Phase 2b: payload-level protocol confirmation on one port."""
        if PortSpec(port) not in asset.open_ports:
            raise ValueError(f"port {port} is not known open on {asset.ip}")
        confirmed: str | None = None
        try:
            if port == 502:
                confirmed = self._probe_modbus(asset.ip, port)
            elif port == 102:
                confirmed = self._probe_s7(asset.ip, port)
            elif port == 44818:
                confirmed = self._probe_enip(asset.ip, port)
        except (DecodeError, FormatError) as exc:
            self._anomaly(f"{asset.ip}:{port} malformed reply during probe: {exc}")
        except (socket.timeout, ConnectionError, OSError):
            pass  # absence of evidence
        self._note(ScanPhase.SERVICE_IDENTIFICATION, asset.ip, f"probe:{port}")
        if confirmed is None:
            return asset
        obs = Observation(
            ip=asset.ip, source="active", timestamp=self._now(), protocols=frozenset({confirmed})
        )
        self._emit(obs)
        return merge_observation(asset, obs)

    def _probe_modbus(self, ip: str, port: int) -> str | None:
        result = self._connect(ip, port)
        if result.sock is None:
            return None
        with result.sock as sock:
            request = modbus.build_device_id_request(unit=self.config.modbus_unit)
            try:
                reply = self._exchange(sock, request, recv_modbus_frame)
            except (socket.timeout, ConnectionError, OSError):
                return None
            # any well-formed reply, exceptions included, confirms Modbus
            modbus.decode_modbus(reply)
            return "modbus"

    def _s7_connect(self, ip: str, port: int) -> tuple[socket.socket | None, bool]:
        """Try the TSAP list in order; new TCP connection per attempt."""
        for _src, dst in self.config.s7_tsap_pairs:
            result = self._connect(ip, port)
            if result.sock is None:
                return None, False
            sock = result.sock
            try:
                reply = self._exchange(sock, s7.build_cotp_connect(0x0100, dst), recv_tpkt_frame)
                cotp = s7.decode_envelope(reply).cotp
            except (socket.timeout, ConnectionError, OSError):
                sock.close()
                return None, False
            if isinstance(cotp, s7.CotpConnectionConfirm):
                return sock, True
            sock.close()
            if not isinstance(cotp, s7.CotpDisconnectRequest):
                raise FormatError(f"unexpected COTP answer {type(cotp).__name__}")
        raise ConnectionRefusedByTsap(f"{ip}: every offered TSAP pair was refused")

    def _probe_s7(self, ip: str, port: int) -> str | None:
        try:
            sock, confirmed = self._s7_connect(ip, port)
        except ConnectionRefusedByTsap:
            return None
        if sock is not None:
            sock.close()
        return "s7comm" if confirmed else None

    def _probe_enip(self, ip: str, port: int) -> str | None:
        result = self._connect(ip, port)
        if result.sock is None:
            return None
        with result.sock as sock:
            try:
                reply = self._exchange(sock, enip.build_list_identity(), recv_enip_frame)
            except (socket.timeout, ConnectionError, OSError):
                return None
            message, _ = enip.decode_header(reply)
            if message.command != enip.CMD_LIST_IDENTITY:
                raise FormatError(f"probe got command 0x{message.command:04x}")
            return "enip"

    # -- phase 3: enumeration -------------------------------------------------

    def enumerate_modbus(self, asset: Asset) -> Asset:
        if "modbus" not in asset.protocols:
            raise ValueError(f"{asset.ip}: modbus not confirmed at protocol level")
        self._note(ScanPhase.ENUMERATION, asset.ip, "enumerate_modbus")
        result = self._connect(asset.ip, 502)
        if result.sock is None:
            return asset
        static_fields: dict[str, str] = {}
        deployment: dict[str, str] = {}
        with result.sock as sock:
            unit = self.config.modbus_unit
            try:
                static_fields = self._read_device_identification(sock, unit)
            except ModbusExceptionResponse:
                pass  # identification unsupported; deployment may still work
            except (socket.timeout, ConnectionError, OSError, DecodeError, FormatError):
                pass
            try:
                reply = self._exchange(sock, modbus.build_report_slave_id_request(unit), recv_modbus_frame)
                parsed = modbus.parse_report_slave_id_response(reply)
                deployment["modbus_slave_id"] = str(parsed.slave_id)
                deployment["unit_id"] = str(unit)
            except (ModbusExceptionResponse, socket.timeout, ConnectionError, OSError, DecodeError, FormatError):
                pass
            if self.config.unit_id_sweep and not self.config.safe_mode:
                responding = self._sweep_units(sock)
                if responding:
                    deployment["unit_ids"] = ",".join(str(u) for u in responding)
        return self._apply_identity(asset, static_fields, deployment)

    def _read_device_identification(self, sock: socket.socket, unit: int) -> dict[str, str]:
        objects: dict[int, str] = {}
        object_id = 0x00
        for _round in range(4):  # continuation guard
            request = modbus.build_device_id_request(unit=unit, object_id=object_id)
            reply = self._exchange(sock, request, recv_modbus_frame)
            ident = modbus.parse_device_id_response(reply)
            objects.update(ident.objects)
            if not ident.more_follows:
                break
            object_id = ident.next_object_id
        return modbus.device_id_to_fields(modbus.DeviceIdentification(objects))

    def _sweep_units(self, sock: socket.socket) -> list[int]:
        self._sweep_used = True
        responding = []
        for unit in range(1, 248):
            if self._stop.is_set():
                break
            try:
                reply = self._exchange(sock, modbus.build_report_slave_id_request(unit), recv_modbus_frame)
                modbus.parse_report_slave_id_response(reply)
                responding.append(unit)
            except (ModbusExceptionResponse, socket.timeout, ConnectionError, OSError, DecodeError, FormatError):
                continue
        return responding

    def enumerate_s7(self, asset: Asset) -> Asset:
        if "s7comm" not in asset.protocols:
            raise ValueError(f"{asset.ip}: s7comm not confirmed at protocol level")
        self._note(ScanPhase.ENUMERATION, asset.ip, "enumerate_s7")
        try:
            sock, confirmed = self._s7_connect(asset.ip, 102)
        except (ConnectionRefusedByTsap, FormatError):
            return asset
        if sock is None or not confirmed:
            return asset
        static_fields: dict[str, str] = {}
        deployment: dict[str, str] = {}
        with sock:
            try:
                reply = self._exchange(sock, s7.build_setup_communication(pdu_ref=1), recv_tpkt_frame)
                envelope = s7.decode_envelope(reply)
                if not isinstance(envelope.cotp, s7.CotpData):
                    return asset
            except (socket.timeout, ConnectionError, OSError, DecodeError, FormatError):
                return asset
            records: list[s7.SzlRecord] = []
            for szl_id in (s7.SZL_MODULE_ID, s7.SZL_COMPONENT_ID):
                try:
                    reply = self._exchange(sock, s7.build_szl_read(szl_id, pdu_ref=2), recv_tpkt_frame)
                    records.extend(s7.parse_szl_response(reply))
                except (socket.timeout, ConnectionError, OSError, DecodeError, FormatError):
                    continue  # refused list: partial info retained
            static_fields, deployment = s7.szl_records_to_fields(records)
        return self._apply_identity(asset, static_fields, deployment)

    def enumerate_enip(self, asset: Asset) -> Asset:
        if "enip" not in asset.protocols:
            raise ValueError(f"{asset.ip}: enip not confirmed at protocol level")
        self._note(ScanPhase.ENUMERATION, asset.ip, "enumerate_enip")
        result = self._connect(asset.ip, 44818)
        if result.sock is None:
            return asset
        with result.sock as sock:
            try:
                reply = self._exchange(sock, enip.build_list_identity(), recv_enip_frame)
                identity = enip.parse_list_identity(reply)
            except (socket.timeout, ConnectionError, OSError, DecodeError, FormatError):
                return asset
        vendor = load_enip_vendors().get(identity.vendor_id)
        static_fields = enip.identity_to_fields(identity, vendor)
        # the identity object carries nothing operator-set, so no
        # deployment info from this protocol
        return self._apply_identity(asset, static_fields, {})

    def _apply_identity(self, asset: Asset, static_fields: dict[str, str], deployment: dict[str, str]) -> Asset:
        static = StaticDeviceInfo.from_fields(static_fields) if static_fields else None
        deploy = DeploymentInfo.from_dict(deployment) if deployment else None
        if static is None and deploy is None:
            return asset
        obs = Observation(
            ip=asset.ip,
            source="active",
            timestamp=self._now(),
            static_info=static,
            deployment_info=deploy,
        )
        self._emit(obs)
        return merge_observation(asset, obs)

    def _enumerate(self, asset: Asset) -> Asset:
        handlers = {"modbus": self.enumerate_modbus, "s7comm": self.enumerate_s7, "enip": self.enumerate_enip}
        for protocol in sorted(asset.protocols):
            handler = handlers.get(protocol)
            if handler is None or self._stop.is_set():
                continue
            try:
                asset = handler(asset)
            except (IcsReconError, OSError) as exc:
                self._anomaly(f"enumeration failed for {asset.ip}/{protocol}: {exc}")
        return asset

    # -- phase 4: vulnerability identification --------------------------------

    def _match_vulnerabilities(self, assets: list[Asset]) -> list[Asset]:
        from . import vulnmatch

        db = vulnmatch.load_db(self.config.vuln_db_path, alias_path=self.config.vuln_alias_path)
        out = []
        for asset in assets:
            if asset.static_info is None or not (
                asset.static_info.manufacturer or asset.static_info.model
            ):
                out.append(asset)
                continue
            self._note(ScanPhase.VULNERABILITY_IDENTIFICATION, asset.ip, "cve_match")
            matches = vulnmatch.match(asset.static_info, db)
            if matches:
                obs = Observation(
                    ip=asset.ip,
                    source="active",
                    timestamp=self._now(),
                    vulnerabilities=tuple(matches),
                )
                self._emit(obs)
                asset = merge_observation(asset, obs)
            out.append(asset)
        return out

    # -- whole pipeline --------------------------------------------------------

    def _phase_map(self, pool: ThreadPoolExecutor, fn, assets: list[Asset], phase: str) -> list[Asset]:
        def guarded(asset: Asset) -> Asset:
            try:
                return fn(asset)
            except (IcsReconError, OSError) as exc:
                self._anomaly(f"{phase} failed for {asset.ip}: {exc}")
                return asset

        return list(pool.map(guarded, assets))

    def _probe_all(self, asset: Asset) -> Asset:
        for port in sorted(p.port for p in asset.open_ports):
            if self._stop.is_set():
                break
            asset = self.probe_protocol(asset, port)
        return asset

    def run(self) -> ScanReport:
        started = time.monotonic()
        merger = threading.Thread(target=self._merger, daemon=True, name="inventory-merger")
        merger.start()
        methods_used: list[str] = []
        assets: list[Asset] = []
        try:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                methods_used = self._usable_methods()
                assets = self.discover_hosts(pool)
                assets = self._phase_map(pool, self.scan_ports, assets, "service_identification")
                assets = self._phase_map(pool, self._probe_all, assets, "service_identification")
                assets = self._phase_map(pool, self._enumerate, assets, "enumeration")
            if self.config.vuln_db_path and not self._stop.is_set():
                assets = self._match_vulnerabilities(assets)
        finally:
            if self._stop.is_set():
                self._anomaly("scan cancelled; emitting partial results")
            self._queue.put(None)
            merger.join(timeout=10)
            if self._owns_recorder:
                self.network._writer.close()
        duration = time.monotonic() - started
        consulted = self.config.vuln_db_path is not None
        depths = {
            asset.ip: int(compute_depth(asset, consulted)) for asset in self.inventory
        }
        return ScanReport(
            inventory=self.inventory,
            per_asset_depth=depths,
            packets_sent=self.limiter.granted,
            duration=duration,
            anomalies=list(self.anomalies),
            methods_used=methods_used,
            unit_id_sweep_used=self._sweep_used,
            vuln_db_consulted=consulted,
            rate_limit_pps=self.config.rate_limit_pps,
            safe_mode=self.config.safe_mode,
            generated_at=self._now(),
            probe_log=list(self.probe_log),
        )


def run_scan(
    config: ScanConfig,
    network: Network | None = None,
    stop_event: threading.Event | None = None,
) -> ScanReport:
    """Execute the full phase pipeline for one configuration."""
    return Scanner(config, network=network, stop_event=stop_event).run()
