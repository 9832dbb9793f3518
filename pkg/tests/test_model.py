"""Asset model: depth semantics, merging, normalization."""

from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from icsrecon.errors import AddressMismatch
from icsrecon.model import (
    Asset,
    CveRecord,
    DeploymentInfo,
    DepthLevel,
    Observation,
    PortSpec,
    StaticDeviceInfo,
    compute_depth,
    evidence_depth,
    merge_observation,
    satisfied_levels,
)

from conftest import random_observation, ts


def oracle_depth(ports, protocols, static, deployment, vulns, consulted) -> int:
    """Independent predicate-table oracle: highest satisfied level."""
    predicates = {
        1: True,
        2: ports,
        3: protocols,
        4: static,
        5: deployment,
        6: vulns and consulted,
    }
    return max(level for level, holds in predicates.items() if holds)


def test_depth_agrees_with_predicate_table_on_all_64_cases():
    for bits in itertools.product([False, True], repeat=5):
        for consulted in (False, True):
            expected = oracle_depth(*bits, consulted)
            assert evidence_depth(*bits, consulted) == expected


def test_depth_ip_only_is_level_1():
    asset = Asset.discovered("192.168.90.10", ts())
    assert compute_depth(asset) == DepthLevel.IP_DISCOVERY == 1


def test_depth_open_port_is_level_2():
    asset = Asset.discovered("192.168.90.13", ts(), open_ports=frozenset({PortSpec(502)}))
    assert compute_depth(asset) == 2


def test_depth_deployment_without_static_is_level_5():
    # levels are independent predicates: deployment evidence without
    # static info still counts as level 5
    asset = Asset.discovered(
        "192.168.90.13",
        ts(),
        open_ports=frozenset({PortSpec(502)}),
        protocols=frozenset({"modbus"}),
        deployment_info=DeploymentInfo.from_dict({"unit_id": "1"}),
    )
    assert asset.static_info is None
    assert compute_depth(asset) == 5


def test_depth_level_6_requires_db_consultation():
    asset = Asset.discovered(
        "192.168.90.10",
        ts(),
        open_ports=frozenset({PortSpec(102)}),
        protocols=frozenset({"s7comm"}),
        static_info=StaticDeviceInfo(manufacturer="Siemens"),
        deployment_info=DeploymentInfo.from_dict({"system_name": "x"}),
        vulnerabilities=(CveRecord("CVE-2020-12345", "siemens", "et200s"),),
    )
    assert compute_depth(asset, vuln_db_consulted=True) == 6
    assert compute_depth(asset, vuln_db_consulted=False) == 5


def test_depth_level_order_and_range():
    assert list(DepthLevel) == sorted(DepthLevel)
    assert [level.value for level in DepthLevel] == [1, 2, 3, 4, 5, 6]


def test_satisfied_levels_sparse_ladder():
    asset = Asset.discovered(
        "192.168.90.13",
        ts(),
        open_ports=frozenset({PortSpec(502)}),
        protocols=frozenset({"modbus"}),
        deployment_info=DeploymentInfo.from_dict({"unit_id": "1"}),
    )
    assert satisfied_levels(asset) == {1, 2, 3, 5}


def naive_union(asset: Asset, obs: Observation) -> dict:
    """Reference merge: plain field-wise union, observation wins scalars."""
    static = obs.static_info or asset.static_info
    if asset.static_info and obs.static_info:
        merged = asset.static_info.to_dict()
        for key, value in obs.static_info.to_dict().items():
            if value is not None:
                merged[key] = value
        static = StaticDeviceInfo(**merged)
    deployment = obs.deployment_info or asset.deployment_info
    if asset.deployment_info and obs.deployment_info:
        entries = asset.deployment_info.as_dict()
        entries.update(obs.deployment_info.as_dict())
        deployment = DeploymentInfo.from_dict(entries)
    vuln_ids = list(dict.fromkeys([v.cve_id for v in asset.vulnerabilities + obs.vulnerabilities]))
    return {
        "mac": obs.mac or asset.mac,
        "oui_vendor": obs.oui_vendor or asset.oui_vendor,
        "open_ports": asset.open_ports | obs.open_ports,
        "protocols": asset.protocols | obs.protocols,
        "static_info": static,
        "deployment_info": deployment,
        "vuln_ids": vuln_ids,
        "last_seen": max(asset.last_seen, obs.timestamp),
        "sources": asset.sources | {obs.source},
    }


def test_merge_union_with_empty_port_set():
    asset = Asset.discovered("192.168.90.13", ts())
    obs = Observation("192.168.90.13", "active", ts(1), open_ports=frozenset({PortSpec(502)}))
    merged = merge_observation(asset, obs)
    assert merged.open_ports == frozenset({PortSpec(502)})
    assert merged.ip == asset.ip


def test_merge_gains_static_ports_unchanged():
    asset = Asset.discovered("192.168.90.10", ts(), open_ports=frozenset({PortSpec(102)}))
    obs = Observation(
        "192.168.90.10", "active", ts(1), static_info=StaticDeviceInfo(manufacturer="Siemens")
    )
    merged = merge_observation(asset, obs)
    reference = naive_union(asset, obs)
    assert merged.static_info == reference["static_info"]
    assert merged.open_ports == reference["open_ports"] == frozenset({PortSpec(102)})


def test_merge_ip_mismatch():
    asset = Asset.discovered("192.168.90.10", ts())
    obs = Observation("192.168.90.11", "active", ts(1))
    with pytest.raises(AddressMismatch):
        merge_observation(asset, obs)


def test_merge_matches_naive_union_on_random_observations(rng):
    for _ in range(500):
        asset = Asset.discovered("10.0.0.1", ts())
        for _ in range(rng.randint(1, 5)):
            obs = random_observation(rng, "10.0.0.1")
            reference = naive_union(asset, obs)
            asset = merge_observation(asset, obs)
            assert asset.mac == reference["mac"]
            assert asset.oui_vendor == reference["oui_vendor"]
            assert asset.open_ports == reference["open_ports"]
            assert asset.protocols == reference["protocols"]
            assert asset.static_info == reference["static_info"]
            assert asset.deployment_info is None or set(dict(asset.deployment_info.entries)) == set(
                reference["deployment_info"].as_dict()
            )
            assert [v.cve_id for v in asset.vulnerabilities] == reference["vuln_ids"]
            assert asset.last_seen == reference["last_seen"]
            assert asset.sources == reference["sources"]


def test_merge_newest_wins_keeps_provenance():
    asset = Asset.discovered(
        "192.168.90.10", ts(), static_info=StaticDeviceInfo(manufacturer="Siemens", firmware_version="3.2.5")
    )
    obs = Observation(
        "192.168.90.10",
        "passive",
        ts(5),
        static_info=StaticDeviceInfo(manufacturer="Siemens", firmware_version="3.2.6"),
    )
    merged = merge_observation(asset, obs)
    assert merged.static_info.firmware_version == "3.2.6"
    entries = [p for p in merged.provenance if p.field == "static_info.firmware_version"]
    assert len(entries) == 1
    assert entries[0].prior == "3.2.5"
    assert entries[0].current == "3.2.6"
    assert entries[0].source == "passive"


def test_depth_monotone_under_random_merges(rng):
    for _ in range(300):
        asset = Asset.discovered("10.1.2.3", ts())
        for consulted in (False, True):
            depth = compute_depth(asset, consulted)
        for _ in range(rng.randint(1, 6)):
            asset_next = merge_observation(asset, random_observation(rng, "10.1.2.3"))
            for consulted in (False, True):
                assert compute_depth(asset_next, consulted) >= compute_depth(asset, consulted)
            asset = asset_next


@settings(max_examples=200)
@given(data=st.data())
def test_depth_monotone_property(data):
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = random.Random(seed)
    asset = Asset.discovered("10.9.9.9", ts())
    for _ in range(data.draw(st.integers(1, 4))):
        merged = merge_observation(asset, random_observation(rng, "10.9.9.9"))
        assert compute_depth(merged) >= compute_depth(asset)
        asset = merged


def test_static_info_normalizes_empty_to_absent():
    info = StaticDeviceInfo(manufacturer="Siemens", model="  ", serial="")
    assert info.model is None
    assert info.serial is None
    with pytest.raises(ValueError):
        StaticDeviceInfo(manufacturer="", model=" ", firmware_version=None)
    assert StaticDeviceInfo.from_fields({"serial": "only-serial"}) is None


def test_deployment_info_rejects_empty():
    with pytest.raises(ValueError):
        DeploymentInfo(entries=(("", ""),))
    assert DeploymentInfo.from_dict({"": "x", "unit_id": ""}) is None


def test_vulnerabilities_require_static_info():
    with pytest.raises(ValueError):
        Asset.discovered(
            "10.0.0.1", ts(), vulnerabilities=(CveRecord("CVE-2020-12345", "v", "p"),)
        )


def test_port_spec_parse_and_render():
    assert str(PortSpec(502)) == "502/tcp"
    assert PortSpec.parse("44818/udp") == PortSpec(44818, "udp")
    with pytest.raises(ValueError):
        PortSpec.parse("0/tcp")
    with pytest.raises(ValueError):
        PortSpec.parse("not-a-port")
