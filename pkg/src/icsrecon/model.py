"""Canonical data model for discovered assets.

Everything the scanner and the passive analyzer learn about a device is
expressed as an :class:`Observation` and folded into an :class:`Asset`
by :func:`merge_observation`. Assets are immutable; merging returns a
new value. An :class:`Inventory` keys assets by IPv4 address and
round-trips through a versioned JSON document.

Depth semantics: six independent evidence predicates (IP seen, open
ports, confirmed protocols, static device info, deployment info,
vulnerability matches). :func:`compute_depth` returns the highest
satisfied level; the levels are deliberately not a strict ladder, a
device can hold level-5 evidence without level-4 evidence.
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import IntEnum
from typing import Any, Iterable, Iterator

from .errors import AddressMismatch, FormatError

INVENTORY_VERSION = 1

KNOWN_PROTOCOLS = {
    "modbus",
    "s7comm",
    "enip",
    "dnp3",
    "profinet",
    "bacnet",
    "opcua",
    "snmp",
}

SOURCES = {"active", "passive"}

RESERVED_DEPLOYMENT_KEYS = {
    "modbus_slave_id",
    "module_name",
    "plant_id",
    "system_name",
    "unit_id",
}

_CVE_ID_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")
_PROTOCOL_TOKEN_RE = re.compile(r"^[a-z0-9_]+$")


class DepthLevel(IntEnum):
    """How much a scan learned about one device, least to most."""

    IP_DISCOVERY = 1
    OPEN_PORTS = 2
    PROTOCOL_SERVICE = 3
    STATIC_INFO = 4
    DEPLOYMENT_INFO = 5
    VULNERABILITY = 6

    def describe(self) -> str:
        return _DEPTH_DESCRIPTIONS[self]


_DEPTH_DESCRIPTIONS = {
    DepthLevel.IP_DISCOVERY: "IP discovery",
    DepthLevel.OPEN_PORTS: "open ports identification",
    DepthLevel.PROTOCOL_SERVICE: "protocol & service identification",
    DepthLevel.STATIC_INFO: "static device info",
    DepthLevel.DEPLOYMENT_INFO: "deployment specific info",
    DepthLevel.VULNERABILITY: "vulnerability identification",
}


def normalize_protocol(token: str) -> str:
    """Validate a protocol token: nonempty, lowercase, [a-z0-9_]."""
    if not token or not _PROTOCOL_TOKEN_RE.match(token):
        raise ValueError(f"invalid protocol token {token!r}")
    return token


def _clean(text: str | None) -> str | None:
    """Normalize empty / whitespace-only strings to absent."""
    if text is None:
        return None
    text = text.strip()
    return text or None


@dataclass(frozen=True, order=True)
class PortSpec:
    """One open transport endpoint, rendered as e.g. ``502/tcp``."""

    port: int
    transport: str = "tcp"

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        if self.transport not in ("tcp", "udp"):
            raise ValueError(f"unknown transport: {self.transport!r}")

    def __str__(self) -> str:
        return f"{self.port}/{self.transport}"

    @classmethod
    def parse(cls, text: str) -> "PortSpec":
        try:
            port, transport = text.split("/", 1)
            return cls(int(port), transport)
        except (ValueError, TypeError) as exc:
            raise ValueError(f"bad port spec {text!r}") from exc


@dataclass(frozen=True)
class StaticDeviceInfo:
    """Factory-set device properties; absent rather than empty.

    At least one of manufacturer / model / firmware_version must be
    present, otherwise the whole value must be omitted.
    """

    manufacturer: str | None = None
    model: str | None = None
    firmware_version: str | None = None
    hardware_version: str | None = None
    serial: str | None = None

    def __post_init__(self):
        for name in ("manufacturer", "model", "firmware_version", "hardware_version", "serial"):
            object.__setattr__(self, name, _clean(getattr(self, name)))
        if not (self.manufacturer or self.model or self.firmware_version):
            raise ValueError("static info needs manufacturer, model or firmware_version")

    @classmethod
    def from_fields(cls, fields: dict[str, str | None]) -> "StaticDeviceInfo | None":
        """Build from a loose field dict; None when below the bar."""
        known = {
            k: _clean(v)
            for k, v in fields.items()
            if k in ("manufacturer", "model", "firmware_version", "hardware_version", "serial")
        }
        if not (known.get("manufacturer") or known.get("model") or known.get("firmware_version")):
            return None
        return cls(**known)

    def to_dict(self) -> dict[str, str | None]:
        return {
            "manufacturer": self.manufacturer,
            "model": self.model,
            "firmware_version": self.firmware_version,
            "hardware_version": self.hardware_version,
            "serial": self.serial,
        }


@dataclass(frozen=True)
class DeploymentInfo:
    """Operator-set properties such as slave IDs and station names.

    Entries are held in canonical key order; later duplicates win.
    """

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        cleaned: dict[str, str] = {}
        for key, value in self.entries:
            key, value = _clean(key), _clean(value)
            if key and value:
                cleaned[key] = value
        if not cleaned:
            raise ValueError("deployment info needs at least one nonempty entry")
        object.__setattr__(self, "entries", tuple(sorted(cleaned.items())))

    @classmethod
    def from_dict(cls, entries: dict[str, str]) -> "DeploymentInfo | None":
        pairs = [(k, v) for k, v in entries.items() if _clean(k) and _clean(v)]
        if not pairs:
            return None
        return cls(tuple(pairs))

    def as_dict(self) -> dict[str, str]:
        return dict(self.entries)

    def get(self, key: str) -> str | None:
        return self.as_dict().get(key)


@dataclass(frozen=True)
class CveRecord:
    """One vulnerability database entry (version bounds: [min, max))."""

    cve_id: str
    vendor: str
    product: str
    summary: str = ""
    version_min: str | None = None
    version_max: str | None = None
    severity: float | None = None
    note: str | None = None

    def __post_init__(self):
        if not _CVE_ID_RE.match(self.cve_id):
            raise ValueError(f"bad CVE id {self.cve_id!r}")
        if self.severity is not None and not 0.0 <= self.severity <= 10.0:
            raise ValueError(f"severity out of range: {self.severity}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "cve_id": self.cve_id,
            "vendor": self.vendor,
            "product": self.product,
            "summary": self.summary,
            "version_min": self.version_min,
            "version_max": self.version_max,
            "severity": self.severity,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "CveRecord":
        return cls(
            cve_id=raw["cve_id"],
            vendor=raw.get("vendor", ""),
            product=raw.get("product", ""),
            summary=raw.get("summary", ""),
            version_min=raw.get("version_min"),
            version_max=raw.get("version_max"),
            severity=raw.get("severity"),
            note=raw.get("note"),
        )


@dataclass(frozen=True)
class ProvenanceEntry:
    """Record of a scalar field being overwritten during a merge."""

    field: str
    prior: str
    current: str
    at: datetime
    source: str

    def to_dict(self) -> dict[str, str]:
        return {
            "field": self.field,
            "prior": self.prior,
            "current": self.current,
            "at": format_timestamp(self.at),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, str]) -> "ProvenanceEntry":
        return cls(raw["field"], raw["prior"], raw["current"], parse_timestamp(raw["at"]), raw["source"])


def format_timestamp(ts: datetime) -> str:
    """RFC 3339 UTC timestamp."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_timestamp(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00"))


def _check_ip(ip: str) -> str:
    try:
        return str(ipaddress.IPv4Address(ip))
    except ipaddress.AddressValueError as exc:
        raise ValueError(f"not an IPv4 address: {ip!r}") from exc


def _check_mac(mac: str | None) -> str | None:
    mac = _clean(mac)
    if mac is None:
        return None
    mac = mac.lower().replace("-", ":")
    if not re.match(r"^([0-9a-f]{2}:){5}[0-9a-f]{2}$", mac):
        raise ValueError(f"not a 48-bit hardware address: {mac!r}")
    return mac


@dataclass(frozen=True)
class Observation:
    """One batch of evidence about a single IP from one source."""

    ip: str
    source: str
    timestamp: datetime
    mac: str | None = None
    oui_vendor: str | None = None
    open_ports: frozenset[PortSpec] = frozenset()
    protocols: frozenset[str] = frozenset()
    static_info: StaticDeviceInfo | None = None
    deployment_info: DeploymentInfo | None = None
    vulnerabilities: tuple[CveRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ip", _check_ip(self.ip))
        object.__setattr__(self, "mac", _check_mac(self.mac))
        object.__setattr__(self, "oui_vendor", _clean(self.oui_vendor))
        object.__setattr__(self, "open_ports", frozenset(self.open_ports))
        object.__setattr__(self, "protocols", frozenset(normalize_protocol(p) for p in self.protocols))
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    @classmethod
    def from_asset(cls, asset: "Asset", source: str | None = None) -> "Observation":
        """View an asset as an observation (used by inventory upsert)."""
        src = source or (sorted(asset.sources)[0] if asset.sources else "active")
        return cls(
            ip=asset.ip,
            source=src,
            timestamp=asset.last_seen,
            mac=asset.mac,
            oui_vendor=asset.oui_vendor,
            open_ports=frozenset(asset.open_ports),
            protocols=frozenset(asset.protocols),
            static_info=asset.static_info,
            deployment_info=asset.deployment_info,
            vulnerabilities=tuple(asset.vulnerabilities),
        )


@dataclass(frozen=True)
class Asset:
    """One discovered device; immutable once constructed."""

    ip: str
    last_seen: datetime
    mac: str | None = None
    oui_vendor: str | None = None
    open_ports: frozenset[PortSpec] = frozenset()
    protocols: frozenset[str] = frozenset()
    static_info: StaticDeviceInfo | None = None
    deployment_info: DeploymentInfo | None = None
    vulnerabilities: tuple[CveRecord, ...] = ()
    sources: frozenset[str] = frozenset()
    provenance: tuple[ProvenanceEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ip", _check_ip(self.ip))
        object.__setattr__(self, "mac", _check_mac(self.mac))
        object.__setattr__(self, "oui_vendor", _clean(self.oui_vendor))
        object.__setattr__(self, "open_ports", frozenset(self.open_ports))
        object.__setattr__(self, "protocols", frozenset(normalize_protocol(p) for p in self.protocols))
        object.__setattr__(self, "vulnerabilities", tuple(self.vulnerabilities))
        object.__setattr__(self, "sources", frozenset(self.sources))
        if not self.sources <= SOURCES:
            raise ValueError(f"unknown sources: {self.sources - SOURCES}")
        if self.vulnerabilities and self.static_info is None:
            raise ValueError("vulnerability evidence requires static device info")

    @classmethod
    def discovered(cls, ip: str, when: datetime | None = None, source: str = "active", **extra) -> "Asset":
        when = when or datetime.now(timezone.utc)
        return cls(ip=ip, last_seen=when, sources=frozenset({source}), **extra)

    def to_dict(self) -> dict[str, Any]:
        return {
            "ip": self.ip,
            "mac": self.mac,
            "oui_vendor": self.oui_vendor,
            "open_ports": [str(p) for p in sorted(self.open_ports)],
            "protocols": sorted(self.protocols),
            "static_info": self.static_info.to_dict() if self.static_info else None,
            "deployment_info": self.deployment_info.as_dict() if self.deployment_info else None,
            "vulnerabilities": [v.to_dict() for v in self.vulnerabilities],
            "last_seen": format_timestamp(self.last_seen),
            "sources": sorted(self.sources),
            "provenance": [p.to_dict() for p in self.provenance],
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "Asset":
        static = raw.get("static_info")
        deployment = raw.get("deployment_info")
        return cls(
            ip=raw["ip"],
            mac=raw.get("mac"),
            oui_vendor=raw.get("oui_vendor"),
            open_ports=frozenset(PortSpec.parse(p) for p in raw.get("open_ports", [])),
            protocols=frozenset(raw.get("protocols", [])),
            static_info=StaticDeviceInfo(**static) if static and any(
                static.get(k) for k in ("manufacturer", "model", "firmware_version")
            ) else None,
            deployment_info=DeploymentInfo.from_dict(deployment) if deployment else None,
            vulnerabilities=tuple(CveRecord.from_dict(v) for v in raw.get("vulnerabilities", [])),
            last_seen=parse_timestamp(raw["last_seen"]),
            sources=frozenset(raw.get("sources", [])),
            provenance=tuple(ProvenanceEntry.from_dict(p) for p in raw.get("provenance", [])),
        )


def merge_observation(asset: Asset, obs: Observation) -> Asset:
    """Fold an observation into an asset, returning a new asset.

    Set-valued fields are unioned. Optional scalars follow newest-wins
    (arrival order decides newness; the merger applies observations in
    the order they were emitted) and the displaced value is retained in
    the provenance log. Evidence is never removed, so the computed
    depth never decreases.
    """
    if obs.ip != asset.ip:
        raise AddressMismatch(f"observation for {obs.ip} applied to asset {asset.ip}")

    provenance = list(asset.provenance)

    def pick(field_name: str, old: str | None, new: str | None) -> str | None:
        if new is None:
            return old
        if old is not None and old != new:
            provenance.append(ProvenanceEntry(field_name, old, new, obs.timestamp, obs.source))
        return new

    mac = pick("mac", asset.mac, obs.mac)
    oui_vendor = pick("oui_vendor", asset.oui_vendor, obs.oui_vendor)

    static = asset.static_info
    if obs.static_info is not None:
        if static is None:
            static = obs.static_info
        else:
            merged = static.to_dict()
            for key, new_val in obs.static_info.to_dict().items():
                merged[key] = pick(f"static_info.{key}", merged[key], new_val)
            static = StaticDeviceInfo(**merged)

    deployment = asset.deployment_info
    if obs.deployment_info is not None:
        if deployment is None:
            deployment = obs.deployment_info
        else:
            merged_entries = deployment.as_dict()
            for key, new_val in obs.deployment_info.entries:
                merged_entries[key] = pick(f"deployment_info.{key}", merged_entries.get(key), new_val)
            deployment = DeploymentInfo(tuple(merged_entries.items()))

    seen_ids = {v.cve_id for v in asset.vulnerabilities}
    vulns = list(asset.vulnerabilities)
    vulns.extend(v for v in obs.vulnerabilities if v.cve_id not in seen_ids)

    return Asset(
        ip=asset.ip,
        mac=mac,
        oui_vendor=oui_vendor,
        open_ports=asset.open_ports | obs.open_ports,
        protocols=asset.protocols | obs.protocols,
        static_info=static,
        deployment_info=deployment,
        vulnerabilities=tuple(vulns),
        last_seen=max(asset.last_seen, obs.timestamp),
        sources=asset.sources | {obs.source},
        provenance=tuple(provenance),
    )


def evidence_depth(
    has_ports: bool,
    has_protocols: bool,
    has_static: bool,
    has_deployment: bool,
    has_vulns: bool,
    vuln_db_consulted: bool,
) -> DepthLevel:
    """Highest level whose evidence predicate holds; level 1 is implied.

    Predicates are evaluated independently, not as a ladder.
    """
    level = DepthLevel.IP_DISCOVERY
    if has_ports:
        level = DepthLevel.OPEN_PORTS
    if has_protocols:
        level = DepthLevel.PROTOCOL_SERVICE
    if has_static:
        level = DepthLevel.STATIC_INFO
    if has_deployment:
        level = DepthLevel.DEPLOYMENT_INFO
    if has_vulns and vuln_db_consulted:
        level = DepthLevel.VULNERABILITY
    return level


def compute_depth(asset: Asset, vuln_db_consulted: bool = False) -> DepthLevel:
    """Depth achieved for one asset; total given asset.ip is present."""
    return evidence_depth(
        bool(asset.open_ports),
        bool(asset.protocols),
        asset.static_info is not None,
        asset.deployment_info is not None,
        bool(asset.vulnerabilities),
        vuln_db_consulted,
    )


def satisfied_levels(asset: Asset, vuln_db_consulted: bool = False) -> set[int]:
    """The set of individually satisfied levels (1 always holds)."""
    levels = {1}
    if asset.open_ports:
        levels.add(2)
    if asset.protocols:
        levels.add(3)
    if asset.static_info is not None:
        levels.add(4)
    if asset.deployment_info is not None:
        levels.add(5)
    if asset.vulnerabilities and vuln_db_consulted:
        levels.add(6)
    return levels


class Inventory:
    """Single-writer collection of assets keyed by IP."""

    def __init__(self, assets: Iterable[Asset] = ()):
        self._assets: dict[str, Asset] = {}
        for asset in assets:
            self.upsert(asset)

    def __len__(self) -> int:
        return len(self._assets)

    def __iter__(self) -> Iterator[Asset]:
        return iter(self.assets())

    def __contains__(self, ip: str) -> bool:
        return ip in self._assets

    def __eq__(self, other) -> bool:
        if not isinstance(other, Inventory):
            return NotImplemented
        return self._assets == other._assets

    def get(self, ip: str) -> Asset | None:
        return self._assets.get(ip)

    def assets(self) -> list[Asset]:
        """Assets in stable IP order."""
        return [self._assets[ip] for ip in sorted(self._assets, key=ipaddress.IPv4Address)]

    def upsert(self, asset: Asset) -> Asset:
        """Insert or merge by IP; merging reuses the observation rules."""
        existing = self._assets.get(asset.ip)
        if existing is None:
            self._assets[asset.ip] = asset
        else:
            merged = existing
            for source in sorted(asset.sources) or ["active"]:
                merged = merge_observation(merged, Observation.from_asset(asset, source))
            self._assets[asset.ip] = merged
        return self._assets[asset.ip]

    def apply(self, obs: Observation) -> Asset:
        """Merge an observation, creating the asset on first sight."""
        existing = self._assets.get(obs.ip)
        if existing is None:
            existing = Asset(ip=obs.ip, last_seen=obs.timestamp, sources=frozenset({obs.source}))
        self._assets[obs.ip] = merge_observation(existing, obs)
        return self._assets[obs.ip]

    def query(
        self,
        protocol: str | None = None,
        min_depth: int | None = None,
        subnet: str | None = None,
        has_vulnerabilities: bool | None = None,
        vuln_db_consulted: bool = False,
    ) -> list[Asset]:
        """Filter assets; all given conditions must hold."""
        net = ipaddress.IPv4Network(subnet) if subnet else None
        out = []
        for asset in self.assets():
            if protocol is not None and protocol not in asset.protocols:
                continue
            if min_depth is not None and compute_depth(asset, vuln_db_consulted) < min_depth:
                continue
            if net is not None and ipaddress.IPv4Address(asset.ip) not in net:
                continue
            if has_vulnerabilities is not None and bool(asset.vulnerabilities) != has_vulnerabilities:
                continue
            out.append(asset)
        return out

    def to_document(self) -> dict[str, Any]:
        return {"version": INVENTORY_VERSION, "assets": [a.to_dict() for a in self.assets()]}

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_document(cls, doc: dict[str, Any]) -> "Inventory":
        if not isinstance(doc, dict):
            raise FormatError("inventory document must be a JSON object", offset=0)
        if doc.get("version") != INVENTORY_VERSION:
            raise FormatError(f"unsupported inventory version {doc.get('version')!r}", offset=0)
        inv = cls()
        try:
            for raw in doc.get("assets", []):
                inv._assets[raw["ip"]] = Asset.from_dict(raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad asset record: {exc}", offset=0) from exc
        return inv

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Inventory":
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"inventory is not valid JSON: {exc.msg}", offset=exc.pos) from exc
        return cls.from_document(doc)
