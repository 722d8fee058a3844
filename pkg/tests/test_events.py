from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentinel import events
from sentinel.events import (EventParseError, EventValidationError, Skipped,
                             SysmonEvent, normalize_hashes, parse_jsonl_stream,
                             parse_utc, parse_xml_batch, parse_xml_event)

FIXTURES = Path(__file__).parent / "fixtures"
WCRY = "5ca1ab1e" * 8


# ---------------------------------------------------------------------------
# normalize_hashes
# ---------------------------------------------------------------------------

def test_normalize_hashes_multi_algorithm():
    field = "SHA256=" + WCRY.upper() + ",MD5=0BADF00D0BADF00D0BADF00D0BADF00D"
    parsed, dropped = normalize_hashes(field)
    assert parsed == {"SHA256": WCRY, "MD5": "0badf00d" * 4}
    assert dropped == 0


def test_normalize_hashes_empty():
    assert normalize_hashes("") == ({}, 0)


def test_normalize_hashes_invalid_hex_counted():
    parsed, dropped = normalize_hashes("SHA256=ZZZ")
    assert parsed == {}
    assert dropped == 1


def test_normalize_hashes_unknown_algorithm_dropped_silently():
    parsed, dropped = normalize_hashes("SHA512=" + "ab" * 64)
    assert parsed == {}
    assert dropped == 0


def test_normalize_hashes_duplicate_keeps_first():
    first = "aa" * 16
    second = "bb" * 16
    parsed, _ = normalize_hashes(f"MD5={first},MD5={second}")
    assert parsed == {"MD5": first}


def test_normalize_hashes_wrong_length_dropped():
    parsed, dropped = normalize_hashes("SHA256=abcd,MD5=" + "cd" * 16)
    assert parsed == {"MD5": "cd" * 16}
    assert dropped == 1


# ---------------------------------------------------------------------------
# XML parsing
# ---------------------------------------------------------------------------

def test_parse_xml_wannacry_fixture():
    xml_text = (FIXTURES / "wannacry_eid1.xml").read_text()
    event = parse_xml_event(xml_text)
    assert isinstance(event, SysmonEvent)
    assert event.event_id == 1
    assert event.host == "WS-042"
    assert event.user == "CORP\\alice"
    assert event.image == "C:\\Windows\\tasksche.exe"
    assert event.parent_image == "C:\\Windows\\System32\\services.exe"
    assert event.hashes == {"SHA256": WCRY, "MD5": "0badf00d" * 4}
    assert event.utc_time == datetime(2017, 5, 12, 7, 44, 1, tzinfo=timezone.utc)
    assert event.process_id == 2316


def _xml_event(event_id: int, data: dict[str, str], computer: str = "HOST-1") -> str:
    rows = "".join(f'<Data Name="{k}">{v}</Data>' for k, v in data.items())
    return (f"<Event><System><EventID>{event_id}</EventID>"
            f"<Computer>{computer}</Computer></System>"
            f"<EventData>{rows}</EventData></Event>")


BASE_EID1 = {
    "UtcTime": "2024-01-01 10:00:00.000",
    "ProcessGuid": "{G-1}",
    "ProcessId": "100",
    "Image": "C:\\tools\\a.exe",
    "CommandLine": "a.exe",
    "User": "X\\y",
    "Hashes": "SHA256=" + WCRY,
}


def test_parse_xml_unsupported_event_id_is_skip():
    result = parse_xml_event(_xml_event(255, {"UtcTime": "2024-01-01 00:00:00"}))
    assert result == Skipped(255)


def test_parse_xml_missing_mandatory_field_names_it():
    data = dict(BASE_EID1)
    del data["Image"]
    with pytest.raises(EventValidationError) as excinfo:
        parse_xml_event(_xml_event(1, data))
    assert excinfo.value.field_name == "Image"


def test_parse_xml_eid1_without_hashes_rejected():
    data = dict(BASE_EID1)
    data["Hashes"] = "SHA256=ZZZ"  # normalizes to nothing
    with pytest.raises(EventValidationError) as excinfo:
        parse_xml_event(_xml_event(1, data))
    assert excinfo.value.field_name == "Hashes"


def test_parse_xml_malformed_reports_byte_offset():
    with pytest.raises(EventParseError) as excinfo:
        parse_xml_event("<Event><System></Event>")
    assert excinfo.value.byte_offset is not None
    assert excinfo.value.byte_offset > 0


def test_parse_xml_eid11_requires_target_filename():
    data = {k: v for k, v in BASE_EID1.items() if k != "Hashes"}
    with pytest.raises(EventValidationError) as excinfo:
        parse_xml_event(_xml_event(11, data))
    assert excinfo.value.field_name == "TargetFilename"
    data["TargetFilename"] = "C:\\drop\\x.exe"
    event = parse_xml_event(_xml_event(11, data))
    assert event.target_filename == "C:\\drop\\x.exe"


def test_parse_xml_eid7_hashes_belong_to_loaded_image():
    data = {k: v for k, v in BASE_EID1.items() if k != "Hashes"}
    data["ImageLoaded"] = "C:\\Windows\\System32\\evil.dll"
    data["Hashes"] = "SHA256=" + WCRY
    event = parse_xml_event(_xml_event(7, data))
    assert event.loaded_image == "C:\\Windows\\System32\\evil.dll"
    assert event.loaded_image_hashes == {"SHA256": WCRY}
    assert event.hashes == {}


def test_parse_xml_eid3_requires_destination():
    data = {k: v for k, v in BASE_EID1.items() if k != "Hashes"}
    with pytest.raises(EventValidationError):
        parse_xml_event(_xml_event(3, data))
    data["DestinationIp"] = "203.0.113.9"
    data["DestinationPort"] = "445"
    event = parse_xml_event(_xml_event(3, data))
    assert event.dest_ip == "203.0.113.9"
    assert event.dest_port == 445


def test_parse_xml_batch_mixed():
    batch = ("<Events>"
             + _xml_event(1, BASE_EID1)
             + _xml_event(255, {"UtcTime": "2024-01-01 00:00:00"})
             + _xml_event(1, {k: v for k, v in BASE_EID1.items() if k != "Image"})
             + "</Events>")
    results = list(parse_xml_batch(batch))
    assert len(results) == 3
    assert isinstance(results[0][1], SysmonEvent)
    assert results[1][1] == Skipped(255)
    assert isinstance(results[2][1], EventValidationError)


# ---------------------------------------------------------------------------
# JSON Lines parsing
# ---------------------------------------------------------------------------

def _jsonl_record(**overrides) -> dict:
    record = {
        "event_id": 1,
        "utc_time": "2024-01-01 10:00:00",
        "host": "HOST-1",
        "user": "X\\y",
        "process_guid": "{G-1}",
        "process_id": 100,
        "image": "C:\\tools\\a.exe",
        "command_line": "a.exe",
        "hashes": {"SHA256": WCRY},
    }
    record.update(overrides)
    return record


def test_jsonl_stream_preserves_order():
    lines = [json.dumps(_jsonl_record(process_guid=f"{{G-{i}}}")) for i in range(3)]
    results = list(parse_jsonl_stream(lines))
    assert [n for n, _ in results] == [1, 2, 3]
    assert all(isinstance(r, SysmonEvent) for _, r in results)


def test_jsonl_stream_isolates_bad_line():
    lines = [json.dumps(_jsonl_record()), "{not json", json.dumps(_jsonl_record())]
    results = list(parse_jsonl_stream(lines))
    assert isinstance(results[0][1], SysmonEvent)
    assert results[1][0] == 2 and isinstance(results[1][1], EventParseError)
    assert isinstance(results[2][1], SysmonEvent)


def test_jsonl_stream_empty():
    assert list(parse_jsonl_stream([])) == []


def test_jsonl_totality_per_nonblank_line():
    lines = [json.dumps(_jsonl_record()), "oops", json.dumps({"event_id": 99}),
             json.dumps(_jsonl_record())]
    results = list(parse_jsonl_stream(lines))
    assert len(results) == len(lines)


# ---------------------------------------------------------------------------
# Round-trip and invariants
# ---------------------------------------------------------------------------

def _roundtrip(event: SysmonEvent) -> SysmonEvent:
    line = event.to_json_line()
    parsed = events.event_from_json_dict(json.loads(line))
    assert isinstance(parsed, SysmonEvent)
    return parsed


def test_roundtrip_all_event_ids():
    samples = [
        _jsonl_record(),
        _jsonl_record(event_id=3, hashes={}, dest_ip="198.51.100.7", dest_port=443,
                      dest_domain="c2.example.net"),
        _jsonl_record(event_id=7, hashes={}, loaded_image="C:\\w\\x.dll",
                      loaded_image_hashes={"MD5": "ab" * 16}),
        _jsonl_record(event_id=11, hashes={}, target_filename="C:\\drop\\x.exe"),
    ]
    for record in samples:
        event = events.event_from_json_dict(record)
        assert isinstance(event, SysmonEvent)
        assert _roundtrip(event) == event


_GUIDS = st.text(alphabet="0123456789ABCDEF-", min_size=8, max_size=20).map(lambda s: "{" + s + "}")
_TEXT = st.text(min_size=1, max_size=30).filter(lambda s: s.strip())
_HEX64 = st.text(alphabet="0123456789abcdef", min_size=64, max_size=64)


@settings(max_examples=60, deadline=None)
@given(
    guid=_GUIDS, host=_TEXT, user=st.text(max_size=20), image=_TEXT,
    command=st.text(max_size=60), sha=_HEX64,
    event_id=st.sampled_from([1, 3, 7, 11]),
    seconds=st.integers(min_value=0, max_value=2 ** 31 - 1),
)
def test_roundtrip_property(guid, host, user, image, command, sha, event_id, seconds):
    base = datetime.fromtimestamp(seconds, tz=timezone.utc).replace(microsecond=0)
    kwargs = dict(event_id=event_id, utc_time=base, host=host, user=user,
                  process_guid=guid, process_id=123, image=image,
                  command_line=command, hashes={"SHA256": sha} if event_id == 1 else {})
    if event_id == 3:
        kwargs["dest_ip"] = "192.0.2.1"
        kwargs["dest_port"] = 8443
    elif event_id == 7:
        kwargs["loaded_image"] = image
    elif event_id == 11:
        kwargs["target_filename"] = image
    event = SysmonEvent(**kwargs)
    assert _roundtrip(event) == event


def test_fuzzed_records_never_violate_type_invariants():
    # mutated fixtures: stripped mandatory fields must never produce a record
    base = _jsonl_record()
    for key in ("utc_time", "host", "process_guid", "image", "hashes"):
        broken = {k: v for k, v in base.items() if k != key}
        with pytest.raises(EventValidationError):
            events.event_from_json_dict(broken)
    bad_port = _jsonl_record(event_id=3, hashes={}, dest_ip="1.2.3.4", dest_port=70000)
    with pytest.raises(EventValidationError):
        events.event_from_json_dict(bad_port)


def test_parse_utc_truncates_to_seconds():
    assert parse_utc("2017-05-12 07:44:01.123") == datetime(2017, 5, 12, 7, 44, 1,
                                                            tzinfo=timezone.utc)
    assert parse_utc("2017-05-12T07:44:01Z") == datetime(2017, 5, 12, 7, 44, 1,
                                                         tzinfo=timezone.utc)
