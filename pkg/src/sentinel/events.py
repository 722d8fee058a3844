"""Sysmon log ingestion: XML event records and normalized JSON Lines.

Supported Event IDs: 1 (process create), 3 (network connection),
7 (image load), 11 (file create).  Anything else parses to a Skipped
marker rather than an error so fuller Sysmon configs can be replayed
through the pipeline unchanged.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, Optional

SUPPORTED_EVENT_IDS = frozenset({1, 3, 7, 11})

# Sysmon digest algorithms and their expected hex lengths.
HASH_LENGTHS = {"MD5": 32, "SHA1": 40, "SHA256": 64, "IMPHASH": 32}

_HEX_RE = re.compile(r"^[0-9a-f]+$")
_XMLNS_RE = re.compile(r"""\s+xmlns(:\w+)?\s*=\s*("[^"]*"|'[^']*')""")

# normalized field name -> <Data Name="..."> name in the Windows Event schema
FIELD_TO_XML = {
    "utc_time": "UtcTime",
    "process_guid": "ProcessGuid",
    "process_id": "ProcessId",
    "image": "Image",
    "command_line": "CommandLine",
    "user": "User",
    "hashes": "Hashes",
    "parent_process_guid": "ParentProcessGuid",
    "parent_image": "ParentImage",
    "parent_command_line": "ParentCommandLine",
    "target_filename": "TargetFilename",
    "loaded_image": "ImageLoaded",
    "dest_ip": "DestinationIp",
    "dest_port": "DestinationPort",
    "dest_domain": "DestinationHostname",
}

# keys of the normalized JSON Lines schema, in emission order
JSON_KEYS = [
    "event_id", "utc_time", "host", "user", "process_guid", "process_id",
    "image", "command_line", "hashes", "parent_process_guid", "parent_image",
    "parent_command_line", "target_filename", "loaded_image",
    "loaded_image_hashes", "dest_ip", "dest_port", "dest_domain",
]


class EventError(Exception):
    """Base class for ingest failures."""


class EventParseError(EventError):
    """Structurally unparseable input (bad XML or bad JSON)."""

    def __init__(self, message: str, byte_offset: Optional[int] = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class EventValidationError(EventError):
    """A supported event id is missing a mandatory field or carries a bad value."""

    def __init__(self, field_name: str, message: Optional[str] = None):
        super().__init__(message or f"missing or invalid mandatory field: {field_name}")
        self.field_name = field_name


@dataclass(frozen=True)
class Skipped:
    """Marker for an event id outside the supported set."""

    event_id: int


@dataclass
class SysmonEvent:
    """One normalized Sysmon record."""

    event_id: int
    utc_time: datetime
    host: str
    user: str
    process_guid: str
    process_id: int
    image: str
    command_line: str
    hashes: dict[str, str] = field(default_factory=dict)
    parent_process_guid: Optional[str] = None
    parent_image: Optional[str] = None
    parent_command_line: Optional[str] = None
    target_filename: Optional[str] = None
    loaded_image: Optional[str] = None
    loaded_image_hashes: Optional[dict[str, str]] = None
    dest_ip: Optional[str] = None
    dest_port: Optional[int] = None
    dest_domain: Optional[str] = None

    def to_json_dict(self) -> dict:
        """Normalized JSON object; absent optionals are omitted."""
        out: dict = {
            "event_id": self.event_id,
            "utc_time": format_utc(self.utc_time),
            "host": self.host,
            "user": self.user,
            "process_guid": self.process_guid,
            "process_id": self.process_id,
            "image": self.image,
            "command_line": self.command_line,
            "hashes": dict(self.hashes),
        }
        for key in ("parent_process_guid", "parent_image", "parent_command_line",
                    "target_filename", "loaded_image", "loaded_image_hashes",
                    "dest_ip", "dest_port", "dest_domain"):
            value = getattr(self, key)
            if value is not None:
                out[key] = dict(value) if isinstance(value, dict) else value
        return out

    def to_json_line(self) -> str:
        return json.dumps(self.to_json_dict(), ensure_ascii=False)


def parse_utc(text: str) -> datetime:
    """Parse a Sysmon UtcTime ('YYYY-MM-DD HH:MM:SS.fff'), truncated to seconds.

    The fractional part and an ISO 'T' separator / trailing 'Z' are tolerated;
    timestamps are only used for ordering and cache windows.
    """
    cleaned = text.strip().replace("T", " ").rstrip("Z").strip()
    if "." in cleaned:
        cleaned = cleaned.split(".", 1)[0]
    try:
        parsed = datetime.strptime(cleaned, "%Y-%m-%d %H:%M:%S")
    except ValueError as exc:
        raise EventValidationError("UtcTime", f"unparseable timestamp: {text!r}") from exc
    return parsed.replace(tzinfo=timezone.utc)


def format_utc(moment: datetime) -> str:
    return moment.strftime("%Y-%m-%d %H:%M:%S")


def normalize_hashes(hash_field: str) -> tuple[dict[str, str], int]:
    """Split a Sysmon 'ALG=HEX,ALG=HEX' field into {ALG: lowercase hex}.

    Unknown algorithms are dropped silently; a known algorithm whose value
    fails hex/length validation is dropped and counted in the second return
    value.  The first occurrence wins on duplicate algorithms.
    """
    result: dict[str, str] = {}
    dropped = 0
    if not hash_field:
        return result, dropped
    for pair in hash_field.split(","):
        pair = pair.strip()
        if not pair or "=" not in pair:
            if pair:
                dropped += 1
            continue
        algorithm, value = pair.split("=", 1)
        algorithm = algorithm.strip().upper()
        value = value.strip().lower()
        if algorithm not in HASH_LENGTHS:
            continue
        if len(value) != HASH_LENGTHS[algorithm] or not _HEX_RE.match(value):
            dropped += 1
            continue
        if algorithm not in result:
            result[algorithm] = value
    return result, dropped


def validate_hex(algorithm: str, value: str) -> str:
    """Lowercase and length-check one digest; raises EventValidationError."""
    algorithm = algorithm.upper()
    value = value.lower()
    expected = HASH_LENGTHS.get(algorithm)
    if expected is None:
        raise EventValidationError(algorithm, f"unknown hash algorithm: {algorithm}")
    if len(value) != expected or not _HEX_RE.match(value):
        raise EventValidationError(algorithm, f"invalid {algorithm} digest: {value!r}")
    return value


def _clean_hash_map(raw: dict, field_name: str) -> dict[str, str]:
    cleaned: dict[str, str] = {}
    for algorithm, value in raw.items():
        algorithm = str(algorithm).upper()
        if algorithm not in HASH_LENGTHS:
            continue
        value = str(value).lower()
        if len(value) != HASH_LENGTHS[algorithm] or not _HEX_RE.match(value):
            raise EventValidationError(field_name, f"invalid {algorithm} digest in {field_name}")
        cleaned[algorithm] = value
    return cleaned


def _build_event(fields: dict, names: dict[str, str]) -> SysmonEvent:
    """Validate a normalized field dict and construct the record.

    `names` maps normalized field names to the caller's spelling (XML Data
    names or JSON keys) so validation errors name the field as the input
    spelled it.
    """

    def reported(key: str) -> str:
        return names.get(key, key)

    def require(key: str):
        value = fields.get(key)
        if value is None or value == "":
            raise EventValidationError(reported(key))
        return value

    event_id = fields.get("event_id")
    if not isinstance(event_id, int):
        raise EventValidationError(reported("event_id"))
    if event_id not in SUPPORTED_EVENT_IDS:
        return_skip = Skipped(event_id)
        raise _SkipSignal(return_skip)

    utc_raw = require("utc_time")
    utc_time = utc_raw if isinstance(utc_raw, datetime) else parse_utc(str(utc_raw))
    host = str(require("host"))
    process_guid = str(require("process_guid"))
    image = str(require("image"))

    pid_raw = fields.get("process_id")
    try:
        process_id = int(pid_raw) if pid_raw not in (None, "") else 0
    except (TypeError, ValueError):
        raise EventValidationError(reported("process_id"))

    hashes = fields.get("hashes") or {}
    if not isinstance(hashes, dict):
        raise EventValidationError(reported("hashes"))
    hashes = _clean_hash_map(hashes, reported("hashes"))

    loaded_hashes = fields.get("loaded_image_hashes")
    if loaded_hashes is not None:
        loaded_hashes = _clean_hash_map(loaded_hashes, reported("loaded_image_hashes"))

    dest_port = fields.get("dest_port")
    if dest_port not in (None, ""):
        try:
            dest_port = int(dest_port)
        except (TypeError, ValueError):
            raise EventValidationError(reported("dest_port"))
        if not 0 <= dest_port <= 65535:
            raise EventValidationError(reported("dest_port"), f"port out of range: {dest_port}")
    else:
        dest_port = None

    event = SysmonEvent(
        event_id=event_id,
        utc_time=utc_time,
        host=host,
        user=str(fields.get("user") or ""),
        process_guid=process_guid,
        process_id=process_id,
        image=image,
        command_line=str(fields.get("command_line") or ""),
        hashes=hashes,
        parent_process_guid=fields.get("parent_process_guid") or None,
        parent_image=fields.get("parent_image") or None,
        parent_command_line=fields.get("parent_command_line") or None,
        target_filename=fields.get("target_filename") or None,
        loaded_image=fields.get("loaded_image") or None,
        loaded_image_hashes=loaded_hashes,
        dest_ip=fields.get("dest_ip") or None,
        dest_port=dest_port,
        dest_domain=fields.get("dest_domain") or None,
    )

    # per-id mandatory fields beyond the common set
    if event_id == 1 and not event.hashes:
        raise EventValidationError(reported("hashes"))
    if event_id == 11 and not event.target_filename:
        raise EventValidationError(reported("target_filename"))
    if event_id == 7 and not event.loaded_image:
        raise EventValidationError(reported("loaded_image"))
    if event_id == 3 and not (event.dest_ip or event.dest_domain):
        raise EventValidationError(reported("dest_ip"), "Event ID 3 needs DestinationIp or DestinationHostname")
    return event


class _SkipSignal(Exception):
    """Internal control flow: carries a Skipped marker out of _build_event."""

    def __init__(self, skipped: Skipped):
        super().__init__(str(skipped.event_id))
        self.skipped = skipped


def _byte_offset(text: str, line: int, column: int) -> int:
    lines = text.split("\n")
    prefix = "\n".join(lines[: line - 1])
    if line > 1:
        prefix += "\n"
    return len(prefix.encode("utf-8")) + column


def parse_xml_event(xml_text: str):
    """Parse one Windows-Event-schema ``<Event>`` element.

    Returns a SysmonEvent, or a Skipped marker for unsupported event ids.
    Raises EventParseError (with byte offset) on malformed XML and
    EventValidationError when a mandatory field is missing.
    """
    cleaned = _XMLNS_RE.sub("", xml_text)
    try:
        root = ET.fromstring(cleaned)
    except ET.ParseError as exc:
        line, column = exc.position
        raise EventParseError(f"malformed XML: {exc}", _byte_offset(cleaned, line, column)) from exc
    return parse_xml_element(root)


def parse_xml_element(root: ET.Element):
    """Parse an already-built <Event> element (namespace-stripped tags tolerated)."""

    def local(tag: str) -> str:
        return tag.split("}", 1)[-1] if "}" in tag else tag

    if local(root.tag) != "Event":
        raise EventParseError(f"expected <Event> root, got <{local(root.tag)}>")

    system = None
    event_data = None
    for child in root:
        name = local(child.tag)
        if name == "System":
            system = child
        elif name == "EventData":
            event_data = child
    if system is None:
        raise EventValidationError("System")

    event_id_text = None
    host = ""
    for child in system:
        name = local(child.tag)
        if name == "EventID":
            event_id_text = (child.text or "").strip()
        elif name == "Computer":
            host = (child.text or "").strip()
    if not event_id_text or not event_id_text.isdigit():
        raise EventValidationError("EventID")
    event_id = int(event_id_text)
    if event_id not in SUPPORTED_EVENT_IDS:
        return Skipped(event_id)

    data: dict[str, str] = {}
    if event_data is not None:
        for element in event_data:
            if local(element.tag) != "Data":
                continue
            name = element.get("Name") or element.get("name")
            if name:
                data[name] = element.text or ""

    fields: dict = {"event_id": event_id, "host": host}
    names = {"host": "Computer", "event_id": "EventID"}
    for norm_key, xml_key in FIELD_TO_XML.items():
        names[norm_key] = xml_key
        if xml_key not in data:
            continue
        value = data[xml_key]
        if norm_key == "hashes":
            parsed, _ = normalize_hashes(value)
            # Event ID 7's Hashes field describes the loaded image, not the process
            if event_id == 7:
                fields["loaded_image_hashes"] = parsed
                names["loaded_image_hashes"] = "Hashes"
            else:
                fields["hashes"] = parsed
        else:
            fields[norm_key] = value

    try:
        return _build_event(fields, names)
    except _SkipSignal as signal:
        return signal.skipped


def parse_xml_batch(xml_text: str) -> Iterator[tuple[int, object]]:
    """Parse a document holding one <Event> or a container of them.

    Yields (index, SysmonEvent | Skipped | EventError) per event element,
    1-based, in document order.
    """
    cleaned = _XMLNS_RE.sub("", xml_text)
    try:
        root = ET.fromstring(cleaned)
    except ET.ParseError as exc:
        line, column = exc.position
        raise EventParseError(f"malformed XML: {exc}", _byte_offset(cleaned, line, column)) from exc

    def local(tag: str) -> str:
        return tag.split("}", 1)[-1] if "}" in tag else tag

    if local(root.tag) == "Event":
        elements = [root]
    else:
        elements = [child for child in root if local(child.tag) == "Event"]

    for index, element in enumerate(elements, start=1):
        try:
            yield index, parse_xml_element(element)
        except EventError as exc:
            yield index, exc


def event_from_json_dict(obj: dict) -> object:
    """Build a SysmonEvent from one normalized JSON object.

    Returns Skipped for unsupported ids; raises EventValidationError otherwise.
    """
    if not isinstance(obj, dict):
        raise EventParseError("JSON line is not an object")
    event_id = obj.get("event_id")
    if not isinstance(event_id, int):
        raise EventValidationError("event_id")
    fields = {key: obj.get(key) for key in JSON_KEYS if key in obj}
    fields["event_id"] = event_id
    try:
        return _build_event(fields, {})
    except _SkipSignal as signal:
        return signal.skipped


def parse_jsonl_stream(lines: Iterable[str]) -> Iterator[tuple[int, object]]:
    """Parse normalized JSON Lines.

    Yields (line_number, SysmonEvent | Skipped | EventError) in input order;
    a bad line never aborts the stream.  Blank lines are skipped entirely.
    """
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            yield number, EventParseError(f"line {number}: invalid JSON: {exc.msg}", exc.pos)
            continue
        try:
            yield number, event_from_json_dict(obj)
        except EventError as exc:
            yield number, exc
