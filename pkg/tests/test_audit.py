"""Scanner-side audit capture of probe traffic."""

from __future__ import annotations

from icsrecon.config import default_fixtures_path, load_fixtures
from icsrecon.passive import PcapFile, analyze_capture
from icsrecon.scanner import ScanConfig, run_scan
from icsrecon.simulator import SimNetwork, start_station


def test_audit_capture_mirrors_probe_traffic(tmp_path):
    fixtures = load_fixtures(default_fixtures_path())
    station = start_station(list(fixtures.devices), scanner_ip=fixtures.scanner_ip)
    audit_path = tmp_path / "audit.pcap"
    try:
        config = ScanConfig(
            targets=tuple(d.ip for d in fixtures.devices),
            methods=frozenset({"icmp", "arp"}),
            rate_limit_pps=50,
            timeout_ms=500,
            pcap_out=str(audit_path),
        )
        report = run_scan(config, network=SimNetwork(station))
    finally:
        station.stop()

    assert audit_path.exists()
    passive = analyze_capture(PcapFile(str(audit_path)))
    # the scanner's own view carries the same identity evidence the
    # station mirror does, so depths agree
    for ip, depth in report.per_asset_depth.items():
        assert passive.per_asset_depth[ip] == depth
    # ARP answers were folded into the audit frames, so vendors resolve
    assert passive.inventory.get("192.168.90.10").oui_vendor == "Siemens AG"
