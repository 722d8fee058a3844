"""OpenC2 course-of-action rendering, gating, and dispatch.

Knowledge-base CourseOfAction entities render into OpenC2 commands (an
action, exactly one target, optional args and actuator).  A disposition
policy keyed on (threat level, action) decides whether a command executes
automatically, queues for analyst approval, or is forbidden outright.
Actuators are journaling stubs: dispatch appends the serialized command to
an append-only JSON Lines journal per actuator.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

from .classify import ThreatLevel, Verdict
from .kb import KnowledgeBase, UnknownEntityError

ACTIONS = ("allow", "deny", "restore")
TARGET_TYPES = ("domain_name", "ip_connection", "file", "device")
DISPOSITIONS = ("auto", "recommend", "forbid")

STATUS_EXECUTED = "executed"
STATUS_PENDING = "pending-approval"
STATUS_DENIED = "denied"
STATUS_FORBIDDEN = "forbidden"

HOST_PLACEHOLDER = "$host"


class CoaError(Exception):
    pass


class UnknownRecordError(CoaError):
    pass


class TerminalRecordError(CoaError):
    pass


@dataclass
class OpenC2Command:
    action: str
    target: dict
    args: dict = field(default_factory=dict)
    actuator: Optional[dict] = None
    coa_id: Optional[str] = None  # provenance, not part of the wire shape

    @property
    def target_type(self) -> str:
        return next(iter(self.target))

    def to_dict(self) -> dict:
        out: dict = {"action": self.action, "target": self.target}
        if self.args:
            out["args"] = self.args
        if self.actuator:
            out["actuator"] = self.actuator
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _parse_kv(value: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        key, _, val = part.partition("=")
        out[key.strip()] = val.strip()
    return out


def _build_target(target_type: str, value: str, host: Optional[str]) -> dict:
    if target_type == "domain_name":
        return {"domain_name": value}
    if target_type == "ip_connection":
        fields = _parse_kv(value)
        conn: dict = {}
        if fields.get("dst_addr"):
            conn["dst_addr"] = fields["dst_addr"]
        if fields.get("dst_port"):
            conn["dst_port"] = int(fields["dst_port"])
        if fields.get("protocol"):
            conn["protocol"] = fields["protocol"]
        if not conn:
            raise CoaError(f"ip_connection target needs dst_addr/dst_port/protocol: {value!r}")
        return {"ip_connection": conn}
    if target_type == "file":
        hashes = {k.lower(): v.lower() for k, v in _parse_kv(value).items()}
        if not hashes:
            raise CoaError(f"file target needs ALG=HEX pairs: {value!r}")
        return {"file": {"hashes": dict(sorted(hashes.items()))}}
    if target_type == "device":
        hostname = value
        if hostname == HOST_PLACEHOLDER:
            if not host:
                raise CoaError("device target uses $host but no host context given")
            hostname = host
        return {"device": {"hostname": hostname}}
    raise CoaError(f"unmapped target type: {target_type}")


def render_commands(kb: KnowledgeBase, coa_ids: list[str],
                    host: Optional[str] = None) -> tuple[list[OpenC2Command], list[tuple[str, str]]]:
    """Render CourseOfAction entities to OpenC2 commands.

    Returns (commands in deterministic CoA-id order, per-item errors).  A
    device target value of $host is filled from the triggering event's host.
    """
    commands: list[OpenC2Command] = []
    errors: list[tuple[str, str]] = []
    for coa_id in sorted(set(coa_ids)):
        try:
            view = kb.describe(coa_id)
        except UnknownEntityError:
            errors.append((coa_id, "not-found"))
            continue
        if view.get("kind") != "CourseOfAction":
            errors.append((coa_id, f"not a CourseOfAction: {view.get('kind')}"))
            continue
        props = view["props"]
        action = str(props.get("action", "")).lower()
        if action not in ACTIONS:
            errors.append((coa_id, f"unknown action: {props.get('action')!r}"))
            continue
        target_type = str(props.get("target-type", ""))
        target_value = str(props.get("target-value", ""))
        try:
            target = _build_target(target_type, target_value, host)
        except CoaError as exc:
            errors.append((coa_id, str(exc)))
            continue
        actuator = None
        profile = props.get("actuator-profile")
        if profile:
            actuator = {"profile": str(profile)}
        commands.append(OpenC2Command(
            action=action, target=target,
            args=dict(sorted((props.get("args") or {}).items())),
            actuator=actuator, coa_id=coa_id))
    return commands, errors


# ---------------------------------------------------------------------------
# Disposition policy
# ---------------------------------------------------------------------------

@dataclass
class CoaPolicy:
    table: dict[tuple[str, str], str] = field(default_factory=dict)
    default: str = "recommend"

    @classmethod
    def load(cls, document) -> "CoaPolicy":
        if isinstance(document, str):
            document = json.loads(document)
        default = document.get("default", "recommend")
        if default not in DISPOSITIONS:
            raise CoaError(f"unknown default disposition: {default!r}")
        table: dict[tuple[str, str], str] = {}
        for row in document.get("rules", []):
            level = ThreatLevel.parse(row["level"]).value
            action = str(row["action"]).lower()
            disposition = str(row["disposition"])
            if action not in ACTIONS:
                raise CoaError(f"unknown action in policy: {action!r}")
            if disposition not in DISPOSITIONS:
                raise CoaError(f"unknown disposition: {disposition!r}")
            table[(level, action)] = disposition
        return cls(table=table, default=default)


def decide(policy: CoaPolicy, verdict: Verdict, command: OpenC2Command) -> str:
    """Disposition for one command under one verdict; forbid always wins."""
    disposition = policy.table.get((verdict.level.value, command.action), policy.default)
    return disposition


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

@dataclass
class DispatchRecord:
    record_id: str
    command: OpenC2Command
    disposition: str
    status: str
    created_at: datetime
    decided_at: Optional[datetime] = None
    approver: Optional[str] = None
    note: Optional[str] = None
    subject_id: Optional[str] = None

    def to_dict(self) -> dict:
        out = {
            "record_id": self.record_id,
            "coa_id": self.command.coa_id,
            "command": self.command.to_dict(),
            "disposition": self.disposition,
            "status": self.status,
            "created_at": self.created_at.strftime("%Y-%m-%d %H:%M:%S"),
        }
        if self.decided_at:
            out["decided_at"] = self.decided_at.strftime("%Y-%m-%d %H:%M:%S")
        if self.approver:
            out["approver"] = self.approver
        if self.note:
            out["note"] = self.note
        if self.subject_id:
            out["subject_id"] = self.subject_id
        return out


class JournalActuator:
    """Stub actuator: appends each executed command to a JSON Lines journal."""

    def __init__(self, name: str, journal_dir: Path):
        self.name = name
        self.path = Path(journal_dir) / f"{name}.jsonl"
        self._lock = threading.Lock()

    def handle(self, record: DispatchRecord, now: datetime) -> None:
        envelope = {
            "record_id": record.record_id,
            "timestamp": now.strftime("%Y-%m-%d %H:%M:%S"),
            "command": record.command.to_dict(),
        }
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(envelope) + "\n")

    def journal_entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        with self.path.open(encoding="utf-8") as handle:
            return [json.loads(line) for line in handle if line.strip()]


# target type -> actuator stub name
DEFAULT_ROUTES = {
    "domain_name": "firewall",
    "ip_connection": "firewall",
    "device": "host-restore",
}


class Dispatcher:
    """Routes decided commands to actuator stubs and tracks approvals."""

    def __init__(self, journal_dir, routes: Optional[dict[str, str]] = None):
        self.journal_dir = Path(journal_dir)
        self.routes = dict(DEFAULT_ROUTES if routes is None else routes)
        self.actuators: dict[str, JournalActuator] = {
            name: JournalActuator(name, self.journal_dir)
            for name in sorted(set(self.routes.values()))}
        self.forbidden_journal = JournalActuator("forbidden", self.journal_dir)
        self.records: dict[str, DispatchRecord] = {}
        self._sequence = 0
        self._lock = threading.RLock()

    def _next_id(self) -> str:
        self._sequence += 1
        return f"d-{self._sequence:04d}"

    def submit(self, command: OpenC2Command, disposition: str, now: datetime,
               subject_id: Optional[str] = None) -> DispatchRecord:
        with self._lock:
            record = DispatchRecord(
                record_id=self._next_id(), command=command, disposition=disposition,
                status=STATUS_PENDING, created_at=now, subject_id=subject_id)
            self.records[record.record_id] = record
            if disposition == "forbid":
                record.status = STATUS_FORBIDDEN
                record.decided_at = now
                self.forbidden_journal.handle(record, now)
            elif disposition == "auto":
                self._execute(record, now)
            return record

    def _execute(self, record: DispatchRecord, now: datetime) -> None:
        actuator_name = self.routes.get(record.command.target_type)
        if actuator_name is None:
            record.note = f"no actuator for target type {record.command.target_type}"
            return
        self.actuators[actuator_name].handle(record, now)
        record.status = STATUS_EXECUTED
        record.decided_at = now

    def approve(self, record_id: str, decision: str, approver: str,
                now: datetime) -> DispatchRecord:
        """Resolve a pending record; approving executes and journals it."""
        with self._lock:
            record = self.records.get(record_id)
            if record is None:
                raise UnknownRecordError(record_id)
            if record.status != STATUS_PENDING:
                raise TerminalRecordError(f"{record_id} is {record.status}")
            if decision == "approve":
                record.approver = approver
                self._execute(record, now)
                if record.status != STATUS_EXECUTED:
                    # still pending (no actuator); keep approver + note visible
                    return record
            elif decision == "deny":
                record.approver = approver
                record.status = STATUS_DENIED
                record.decided_at = now
            else:
                raise CoaError(f"decision must be approve or deny: {decision!r}")
            return record

    def pending(self) -> list[DispatchRecord]:
        with self._lock:
            return [r for r in self.records.values() if r.status == STATUS_PENDING]

    def all_records(self) -> list[DispatchRecord]:
        with self._lock:
            return list(self.records.values())
