"""Offline CVE lookup against static device info.

Matching is deliberately CPE-flavoured and therefore approximate:
vendor equality after alias normalization, product substring match,
and firmware inside [version_min, version_max). Every hit carries a
confidence note telling the operator to verify manually; public CPE
data is known to be patchy and nothing here pretends otherwise.
Clauses only bind when the device-side value exists (the caller must
supply at least a manufacturer or a model).

The database is a local JSON file; there is no network fetch, so scans
stay air-gap friendly.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .errors import FormatError
from .model import CveRecord, StaticDeviceInfo

logger = logging.getLogger(__name__)

CONFIDENCE_NOTE = "cpe-style match - verify manually"

_NON_ALNUM = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class CveDatabase:
    records: tuple[CveRecord, ...]
    aliases: dict[str, str]

    def __len__(self) -> int:
        return len(self.records)


def normalize_vendor(text: str) -> str:
    return " ".join(text.lower().split())


def normalize_product(text: str) -> str:
    return _NON_ALNUM.sub("", text.lower())


@lru_cache(maxsize=1)
def default_aliases() -> dict[str, str]:
    with resources.files("icsrecon.data").joinpath("vendor_aliases.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def load_aliases(path: str | None) -> dict[str, str]:
    if path is None:
        return dict(default_aliases())
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"alias table is not valid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(raw, dict) or not all(isinstance(v, str) for v in raw.values()):
        raise FormatError("alias table must map vendor alias -> canonical name")
    return {normalize_vendor(k): normalize_vendor(v) for k, v in raw.items()}


def load_db(path: str, alias_path: str | None = None) -> CveDatabase:
    """Load and validate a JSON array of CVE records."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"CVE database is not valid JSON: {exc.msg} (line {exc.lineno})", offset=exc.pos) from exc
    if not isinstance(raw, list):
        raise FormatError("CVE database must be a JSON array of records")
    records = []
    seen: set[str] = set()
    for position, entry in enumerate(raw):
        try:
            record = CveRecord(
                cve_id=entry["cve_id"],
                vendor=normalize_vendor(entry.get("vendor", "")),
                product=entry.get("product", ""),
                summary=entry.get("summary", ""),
                version_min=entry.get("version_min"),
                version_max=entry.get("version_max"),
                severity=entry.get("severity"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad CVE record at index {position}: {exc}") from exc
        if record.cve_id in seen:
            raise FormatError(f"duplicate CVE id {record.cve_id} at index {position}")
        if record.version_min and record.version_max:
            try:
                if compare_versions(record.version_min, record.version_max) > 0:
                    raise FormatError(
                        f"{record.cve_id}: version_min {record.version_min} above version_max {record.version_max}"
                    )
            except ValueError as exc:
                raise FormatError(f"{record.cve_id}: {exc}") from exc
        seen.add(record.cve_id)
        records.append(record)
    return CveDatabase(records=tuple(records), aliases=load_aliases(alias_path))


_SEGMENT = re.compile(r"^(\d*)(.*)$")


def parse_version(text: str) -> tuple[tuple[int, str], ...]:
    """Dotted version -> comparable key.

    Each dot-separated segment becomes (numeric prefix, remaining
    suffix); missing segments compare as (0, ""). A version with no
    digits anywhere does not parse.
    """
    cleaned = text.strip()
    if cleaned[:1] in ("v", "V"):
        cleaned = cleaned[1:]
    if not any(ch.isdigit() for ch in cleaned):
        raise ValueError(f"unparseable version {text!r}")
    key = []
    for segment in cleaned.split("."):
        match = _SEGMENT.match(segment.strip())
        digits, suffix = match.group(1), match.group(2)
        key.append((int(digits) if digits else 0, suffix))
    return tuple(key)


def compare_versions(a: str, b: str) -> int:
    """-1 / 0 / +1 with left-to-right segments, absent segments = 0."""
    ka, kb = parse_version(a), parse_version(b)
    width = max(len(ka), len(kb))
    ka += ((0, ""),) * (width - len(ka))
    kb += ((0, ""),) * (width - len(kb))
    if ka < kb:
        return -1
    if ka > kb:
        return 1
    return 0


def _canonical_vendor(name: str, aliases: dict[str, str]) -> str:
    norm = normalize_vendor(name)
    return aliases.get(norm, norm)


def record_applies(record: CveRecord, info: StaticDeviceInfo, aliases: dict[str, str]) -> bool:
    """The match predicate for one record.

    Device-side absences leave their clause unconstrained; an
    unparseable device version skips version-bounded records (logged,
    not silent).
    """
    if info.manufacturer is not None:
        if _canonical_vendor(record.vendor, aliases) != _canonical_vendor(info.manufacturer, aliases):
            return False
    if info.model is not None:
        product = normalize_product(record.product)
        if not product or product not in normalize_product(info.model):
            return False
    if info.firmware_version is not None and (record.version_min or record.version_max):
        try:
            if record.version_min and compare_versions(info.firmware_version, record.version_min) < 0:
                return False
            if record.version_max and compare_versions(info.firmware_version, record.version_max) >= 0:
                return False
        except ValueError:
            logger.warning(
                "VersionUnparseable: device firmware %r; skipping version-bounded record %s",
                info.firmware_version,
                record.cve_id,
            )
            return False
    return True


def match(info: StaticDeviceInfo, db: CveDatabase) -> list[CveRecord]:
    """All records applying to the device, highest severity first.

    Requires manufacturer or model to be present; results carry the
    manual-verification note.
    """
    if not (info.manufacturer or info.model):
        raise ValueError("matching needs a manufacturer or a model")
    hits = [record for record in db.records if record_applies(record, info, db.aliases)]
    hits.sort(key=lambda r: (-(r.severity if r.severity is not None else -1.0), r.cve_id))
    return [
        CveRecord(
            cve_id=r.cve_id,
            vendor=r.vendor,
            product=r.product,
            summary=r.summary,
            version_min=r.version_min,
            version_max=r.version_max,
            severity=r.severity,
            note=CONFIDENCE_NOTE,
        )
        for r in hits
    ]
