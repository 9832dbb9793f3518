"""Active scanner: config rules, phases, probe discipline."""

from __future__ import annotations

import threading

import pytest

from icsrecon.config import default_fixtures_path, load_fixtures
from icsrecon.errors import ConfigError, PrivilegeRequired
from icsrecon.model import PortSpec, compute_depth
from icsrecon.netbase import RealNetwork
from icsrecon.scanner import ScanConfig, Scanner, expand_targets, run_scan
from icsrecon.simulator import SimNetwork, start_station

FIXTURE_IPS = ("192.168.90.10", "192.168.90.11", "192.168.90.12", "192.168.90.13", "192.168.90.14")


@pytest.fixture(scope="module")
def station():
    config = load_fixtures(default_fixtures_path())
    handle = start_station(list(config.devices), scanner_ip=config.scanner_ip)
    yield handle
    handle.stop()


def quick_config(**kw) -> ScanConfig:
    base = dict(
        targets=FIXTURE_IPS,
        methods=frozenset({"icmp"}),
        rate_limit_pps=50,
        timeout_ms=500,
        workers=4,
    )
    base.update(kw)
    return ScanConfig(**base)


# -- configuration rules -----------------------------------------------------


def test_methods_required():
    with pytest.raises(ConfigError):
        quick_config(methods=frozenset())


def test_safe_mode_caps_rate():
    with pytest.raises(ConfigError):
        quick_config(rate_limit_pps=200)  # safe_mode defaults to on
    config = quick_config(rate_limit_pps=200, safe_mode=False)
    assert config.rate_limit_pps == 200


def test_safe_mode_bans_unit_sweep():
    with pytest.raises(ConfigError):
        quick_config(unit_id_sweep=True)
    assert quick_config(unit_id_sweep=True, safe_mode=False).unit_id_sweep


def test_bad_cidr_is_config_error():
    with pytest.raises(ConfigError):
        expand_targets(("192.168.90.300/24",))
    with pytest.raises(ConfigError):
        expand_targets(("not-an-address",))


def test_expand_targets_cidr_and_dedup():
    hosts = expand_targets(("192.168.90.0/30", "192.168.90.1"))
    assert hosts == ["192.168.90.1", "192.168.90.2"]


# -- phase 1 -----------------------------------------------------------------


def test_discover_finds_live_hosts(station):
    scanner = Scanner(quick_config(targets=FIXTURE_IPS[:3] + ("192.168.90.99",)), network=SimNetwork(station))
    assets = scanner.discover_hosts()
    assert sorted(a.ip for a in assets) == sorted(FIXTURE_IPS[:3])
    assert all(compute_depth(a) == 1 for a in assets)


def test_discover_empty_target_list(station):
    scanner = Scanner(quick_config(targets=()), network=SimNetwork(station))
    assert scanner.discover_hosts() == []


def test_arp_discovery_fills_mac_and_vendor(station):
    scanner = Scanner(
        quick_config(targets=("192.168.90.10",), methods=frozenset({"arp"})), network=SimNetwork(station)
    )
    (asset,) = scanner.discover_hosts()
    assert asset.mac == "00:1b:1b:aa:10:01"
    assert asset.oui_vendor == "Siemens AG"


def test_tcp_connect_discovery(station):
    scanner = Scanner(
        quick_config(targets=("192.168.90.13", "192.168.90.99"), methods=frozenset({"tcp_connect"})),
        network=SimNetwork(station),
    )
    assets = scanner.discover_hosts()
    assert [a.ip for a in assets] == ["192.168.90.13"]


def test_arp_without_privilege_raises(monkeypatch):
    monkeypatch.setattr("icsrecon.netbase.os.geteuid", lambda: 1000)
    scanner = Scanner(quick_config(targets=("10.0.0.1",), methods=frozenset({"arp"})), network=RealNetwork())
    with pytest.raises(PrivilegeRequired) as err:
        scanner.discover_hosts()
    assert err.value.method == "arp"


def test_partial_privilege_keeps_tcp_connect(station, monkeypatch):
    class GatedNetwork(SimNetwork):
        def require(self, method):
            if method in ("icmp", "arp"):
                raise PrivilegeRequired(method)

    scanner = Scanner(
        quick_config(targets=("192.168.90.13",), methods=frozenset({"icmp", "tcp_connect"})),
        network=GatedNetwork(station),
    )
    assets = scanner.discover_hosts()
    assert [a.ip for a in assets] == ["192.168.90.13"]
    assert any("icmp" in a for a in scanner.anomalies)


# -- phase 2 -----------------------------------------------------------------


def test_scan_ports_iso_fixture(station):
    scanner = Scanner(quick_config(), network=SimNetwork(station))
    (asset,) = [a for a in scanner.discover_hosts() if a.ip == "192.168.90.10"]
    asset = scanner.scan_ports(asset)
    assert asset.open_ports == frozenset({PortSpec(102)})


def test_scan_ports_modbus_fixture(station):
    scanner = Scanner(quick_config(targets=("192.168.90.13",)), network=SimNetwork(station))
    (asset,) = scanner.discover_hosts()
    asset = scanner.scan_ports(asset)
    assert asset.open_ports == frozenset({PortSpec(502)})
    assert compute_depth(asset) == 2


def test_scan_ports_no_listeners_keeps_depth_one(station):
    scanner = Scanner(
        quick_config(targets=("192.168.90.13",), ports=frozenset({9999, 10000})),
        network=SimNetwork(station),
    )
    (asset,) = scanner.discover_hosts()
    asset = scanner.scan_ports(asset)
    assert asset.open_ports == frozenset()
    assert compute_depth(asset) == 1


# -- phase 2b / 3 --------------------------------------------------------------


def scanned_asset(station, ip):
    scanner = Scanner(quick_config(targets=(ip,)), network=SimNetwork(station))
    (asset,) = scanner.discover_hosts()
    return scanner, scanner.scan_ports(asset)


def test_probe_modbus_exception_still_confirms(station):
    # the RTU refuses identification reads, yet the exception reply is
    # well-formed Modbus and counts as protocol evidence
    scanner, asset = scanned_asset(station, "192.168.90.13")
    asset = scanner.probe_protocol(asset, 502)
    assert asset.protocols == frozenset({"modbus"})


def test_probe_s7_and_enip(station):
    scanner, asset = scanned_asset(station, "192.168.90.10")
    assert scanner.probe_protocol(asset, 102).protocols == frozenset({"s7comm"})
    scanner, asset = scanned_asset(station, "192.168.90.14")
    assert scanner.probe_protocol(asset, 44818).protocols == frozenset({"enip"})


def test_probe_refused_tsaps_makes_no_claim():
    import dataclasses

    config = load_fixtures(default_fixtures_path())
    (plc,) = [c for c in config.devices if c.name == "et200s_like"]
    locked = dataclasses.replace(plc, accepted_tsaps=(0x0FFF,), fragile=False)
    handle = start_station([locked])
    try:
        scanner, asset = scanned_asset(handle, "192.168.90.10")
        asset = scanner.probe_protocol(asset, 102)
        assert asset.protocols == frozenset()
        assert compute_depth(asset) == 2
    finally:
        handle.stop()


def test_probe_requires_open_port_evidence(station):
    scanner = Scanner(quick_config(targets=("192.168.90.13",)), network=SimNetwork(station))
    (asset,) = scanner.discover_hosts()
    with pytest.raises(ValueError):
        scanner.probe_protocol(asset, 502)


def test_enumerate_requires_protocol_evidence(station):
    scanner, asset = scanned_asset(station, "192.168.90.13")
    with pytest.raises(ValueError):
        scanner.enumerate_modbus(asset)


# -- full pipeline ---------------------------------------------------------------


def test_run_scan_fixture_depths(station):
    report = run_scan(quick_config(), network=SimNetwork(station))
    assert report.per_asset_depth == {
        "192.168.90.10": 5,
        "192.168.90.11": 5,
        "192.168.90.12": 3,
        "192.168.90.13": 5,
        "192.168.90.14": 4,
    }
    scadapack = report.inventory.get("192.168.90.13")
    assert scadapack.static_info is None
    assert scadapack.deployment_info.get("modbus_slave_id") == "5"
    et200s = report.inventory.get("192.168.90.10")
    assert et200s.deployment_info.get("system_name") == "SIMATIC ET200S Station"
    assert report.packets_sent > 0
    assert not report.unit_id_sweep_used


def test_run_scan_zero_reachable_targets(station):
    report = run_scan(quick_config(targets=("192.168.90.200", "192.168.90.201")), network=SimNetwork(station))
    assert len(report.inventory) == 0
    assert report.per_asset_depth == {}


def test_no_probe_without_evidence(station):
    report = run_scan(quick_config(), network=SimNetwork(station))
    confirmed = {
        (asset.ip, protocol) for asset in report.inventory for protocol in asset.protocols
    }
    protocol_of = {"enumerate_modbus": "modbus", "enumerate_s7": "s7comm", "enumerate_enip": "enip"}
    for entry in report.probe_log:
        if entry["phase"] != "enumeration":
            continue
        assert (entry["ip"], protocol_of[entry["detail"]]) in confirmed, entry


def test_phase_monotonicity(station):
    config = quick_config(targets=("192.168.90.10",))
    scanner = Scanner(config, network=SimNetwork(station))
    (asset,) = scanner.discover_hosts()
    depths = [int(compute_depth(asset))]
    asset = scanner.scan_ports(asset)
    depths.append(int(compute_depth(asset)))
    asset = scanner._probe_all(asset)
    depths.append(int(compute_depth(asset)))
    asset = scanner._enumerate(asset)
    depths.append(int(compute_depth(asset)))
    assert depths == sorted(depths)
    assert depths[-1] == 5


def test_cancellation_emits_partial_report(station):
    stop = threading.Event()
    stop.set()
    report = run_scan(quick_config(), network=SimNetwork(station), stop_event=stop)
    assert any("cancelled" in a for a in report.anomalies)


def test_report_document_shape(station):
    report = run_scan(quick_config(targets=("192.168.90.14",)), network=SimNetwork(station))
    doc = report.to_document()
    assert doc["version"] == 1
    assert doc["kind"] == "active"
    assert doc["per_asset_depth"] == {"192.168.90.14": 4}
    assert doc["levels_achieved"] == [1, 2, 3, 4]
    assert doc["inventory"]["version"] == 1


# -- capture-level invariants ----------------------------------------------------


def modbus_requests_in_capture(pcap_path):
    """All client->server Modbus frames in a capture, as (unit, function)."""
    from icsrecon.codecs import modbus
    from icsrecon.passive import PcapFile, read_capture
    from icsrecon.pcapio import parse_ethernet, parse_ipv4, parse_tcp, PROTO_TCP

    requests = []
    for _, frame in read_capture(PcapFile(str(pcap_path))):
        eth = parse_ethernet(frame)
        if eth is None or eth.ethertype != 0x0800:
            continue
        packet = parse_ipv4(eth.payload)
        if packet is None or packet.proto != PROTO_TCP:
            continue
        segment = parse_tcp(packet.payload)
        if segment is None or segment.dst_port != 502 or not segment.payload:
            continue
        frames, _ = modbus.extract_frames(segment.payload)
        for wire in frames:
            header, pdu = modbus.decode_modbus(wire)
            requests.append((header.unit_id, pdu.function))
    return requests


def test_safe_mode_scan_capture_has_no_sweep_packets(tmp_path):
    fixtures = load_fixtures(default_fixtures_path())
    pcap = tmp_path / "safe.pcap"
    handle = start_station(list(fixtures.devices), scanner_ip=fixtures.scanner_ip, pcap_path=str(pcap))
    try:
        report = run_scan(quick_config(targets=("192.168.90.13",)), network=SimNetwork(handle))
    finally:
        handle.stop()
    assert not report.unit_id_sweep_used
    requests = modbus_requests_in_capture(pcap)
    assert requests, "expected Modbus probe traffic in the capture"
    # every request went to the configured unit; nothing swept 1..247
    assert {unit for unit, _ in requests} == {1}
    fc11 = [unit for unit, function in requests if function == 0x11]
    assert len(fc11) == 1


def test_unsafe_unit_sweep_reaches_capture_and_report(tmp_path):
    fixtures = load_fixtures(default_fixtures_path())
    pcap = tmp_path / "sweep.pcap"
    handle = start_station(list(fixtures.devices), scanner_ip=fixtures.scanner_ip, pcap_path=str(pcap))
    try:
        config = quick_config(
            targets=("192.168.90.13",),
            safe_mode=False,
            unit_id_sweep=True,
            rate_limit_pps=400,
            timeout_ms=300,
        )
        report = run_scan(config, network=SimNetwork(handle))
    finally:
        handle.stop()
    assert report.unit_id_sweep_used
    asset = report.inventory.get("192.168.90.13")
    assert asset.deployment_info.get("unit_ids") == "1"  # only the real unit answers
    swept_units = {unit for unit, function in modbus_requests_in_capture(pcap) if function == 0x11}
    assert len(swept_units) == 247


def test_malformed_reply_recorded_as_anomaly_without_claim():
    import socketserver
    import threading

    class GarbageHandler(socketserver.BaseRequestHandler):
        def handle(self):
            try:
                self.request.recv(1024)
                # well-framed MBAP length, but a nonzero protocol id
                self.request.sendall(bytes.fromhex("000199990003012b00"))
            except OSError:
                pass

    server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), GarbageHandler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    port = server.server_address[1]

    from icsrecon.netbase import ConnectResult, Network
    import socket as socket_mod

    class RogueNetwork(Network):
        def require(self, method):
            pass

        def ping(self, ip, timeout):
            return True

        def arp(self, ip, timeout):
            return None

        def connect(self, ip, port_number, timeout):
            if port_number != 502:
                return ConnectResult("refused")
            sock = socket_mod.create_connection(("127.0.0.1", port), timeout=timeout)
            return ConnectResult("open", sock)

    try:
        scanner = Scanner(quick_config(targets=("10.9.9.9",)), network=RogueNetwork())
        (asset,) = scanner.discover_hosts()
        asset = scanner.scan_ports(asset)
        asset = scanner.probe_protocol(asset, 502)
        assert asset.protocols == frozenset()
        assert any("malformed reply" in a for a in scanner.anomalies)
    finally:
        server.shutdown()
        server.server_close()
