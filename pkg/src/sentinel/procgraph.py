"""Per-host process tree keyed by Sysmon ProcessGuid.

Event ID 1 creates nodes (with synthetic placeholder parents when Sysmon
started mid-session); 3/7/11 append artifacts.  Artifacts arriving before
their process-create are parked as orphans and replayed when the node shows
up, so the final graph does not depend on transport reordering.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Optional

from .events import SysmonEvent

NODE_CREATED = "node-created"
ARTIFACT_APPENDED = "artifact-appended"
ORPHAN_RECORDED = "orphan-recorded"
DUPLICATE_IGNORED = "duplicate-ignored"

DEFAULT_MAX_ANCESTRY = 64
DEFAULT_ORPHAN_WINDOW_S = 24 * 3600
DEFAULT_RETENTION_S = 7 * 24 * 3600


@dataclass
class FileArtifact:
    path: str
    created_at: datetime


@dataclass
class ModuleArtifact:
    path: str
    hashes: dict[str, str]
    loaded_at: datetime


@dataclass
class ConnectionArtifact:
    dest_ip: Optional[str]
    dest_domain: Optional[str]
    dest_port: Optional[int]
    seen_at: datetime


@dataclass
class ProcessNode:
    process_guid: str
    host: str
    pid: int
    image: str
    command_line: str
    hashes: dict[str, str]
    parent_guid: Optional[str]
    created_at: datetime
    synthetic: bool = False
    files_created: list[FileArtifact] = field(default_factory=list)
    modules_loaded: list[ModuleArtifact] = field(default_factory=list)
    connections: list[ConnectionArtifact] = field(default_factory=list)
    verdict: object = None  # classify.Verdict once assessed
    analyst_cleared: bool = False


class ProcessGraph:
    """Single-writer process tree with hash and host indexes.

    All mutation goes through apply_event (the pipeline's single writer);
    readers take the same lock briefly, so queries always observe a
    consistent snapshot.
    """

    def __init__(self, max_ancestry: int = DEFAULT_MAX_ANCESTRY,
                 orphan_window_s: int = DEFAULT_ORPHAN_WINDOW_S,
                 retention_s: int = DEFAULT_RETENTION_S):
        self.nodes: dict[str, ProcessNode] = {}
        self.host_index: dict[str, set[str]] = {}
        self.hash_index: dict[tuple[str, str], set[str]] = {}
        self.max_ancestry = max_ancestry
        self.orphan_window = timedelta(seconds=orphan_window_s)
        self.retention = timedelta(seconds=retention_s)
        self.duplicate_count = 0
        self.orphans_dropped = 0
        self.latest_event_time: Optional[datetime] = None
        self._orphans: dict[str, list[SysmonEvent]] = {}
        self._lock = threading.RLock()

    # -- write path ---------------------------------------------------------

    def apply_event(self, event: SysmonEvent) -> str:
        with self._lock:
            if self.latest_event_time is None or event.utc_time > self.latest_event_time:
                self.latest_event_time = event.utc_time
            self._drop_stale_orphans()
            if event.event_id == 1:
                return self._apply_create(event)
            return self._apply_artifact(event)

    def _apply_create(self, event: SysmonEvent) -> str:
        existing = self.nodes.get(event.process_guid)
        if existing is not None and not existing.synthetic:
            # Sysmon GUIDs are unique in practice; a collision means replayed input.
            self.duplicate_count += 1
            return DUPLICATE_IGNORED

        if event.parent_process_guid and event.parent_process_guid not in self.nodes:
            placeholder = ProcessNode(
                process_guid=event.parent_process_guid,
                host=event.host,
                pid=0,
                image=event.parent_image or "",
                command_line=event.parent_command_line or "",
                hashes={},
                parent_guid=None,
                created_at=event.utc_time,
                synthetic=True,
            )
            self._insert(placeholder)

        if existing is not None:
            # real create arriving after a synthetic placeholder: upgrade in place
            self._unindex_hashes(existing)
            existing.host = event.host
            existing.pid = event.process_id
            existing.image = event.image
            existing.command_line = event.command_line
            existing.hashes = dict(event.hashes)
            existing.parent_guid = event.parent_process_guid
            existing.created_at = event.utc_time
            existing.synthetic = False
            self._index_hashes(existing)
            node = existing
        else:
            node = ProcessNode(
                process_guid=event.process_guid,
                host=event.host,
                pid=event.process_id,
                image=event.image,
                command_line=event.command_line,
                hashes=dict(event.hashes),
                parent_guid=event.parent_process_guid,
                created_at=event.utc_time,
            )
            self._insert(node)

        for orphan in self._orphans.pop(event.process_guid, []):
            self._append_artifact(node, orphan)
        return NODE_CREATED

    def _apply_artifact(self, event: SysmonEvent) -> str:
        node = self.nodes.get(event.process_guid)
        if node is None:
            self._orphans.setdefault(event.process_guid, []).append(event)
            return ORPHAN_RECORDED
        self._append_artifact(node, event)
        return ARTIFACT_APPENDED

    def _append_artifact(self, node: ProcessNode, event: SysmonEvent) -> None:
        if event.event_id == 11:
            node.files_created.append(FileArtifact(event.target_filename, event.utc_time))
            node.files_created.sort(key=lambda a: a.created_at)
        elif event.event_id == 7:
            node.modules_loaded.append(
                ModuleArtifact(event.loaded_image, dict(event.loaded_image_hashes or {}), event.utc_time))
            node.modules_loaded.sort(key=lambda a: a.loaded_at)
        elif event.event_id == 3:
            node.connections.append(
                ConnectionArtifact(event.dest_ip, event.dest_domain, event.dest_port, event.utc_time))
            node.connections.sort(key=lambda a: a.seen_at)

    def _insert(self, node: ProcessNode) -> None:
        self.nodes[node.process_guid] = node
        self.host_index.setdefault(node.host, set()).add(node.process_guid)
        self._index_hashes(node)

    def _index_hashes(self, node: ProcessNode) -> None:
        for algorithm, value in node.hashes.items():
            self.hash_index.setdefault((algorithm, value), set()).add(node.process_guid)

    def _unindex_hashes(self, node: ProcessNode) -> None:
        for algorithm, value in node.hashes.items():
            key = (algorithm, value)
            guids = self.hash_index.get(key)
            if guids:
                guids.discard(node.process_guid)
                if not guids:
                    del self.hash_index[key]

    def _drop_stale_orphans(self) -> None:
        if self.latest_event_time is None or not self._orphans:
            return
        cutoff = self.latest_event_time - self.orphan_window
        for guid in list(self._orphans):
            kept = [e for e in self._orphans[guid] if e.utc_time >= cutoff]
            dropped = len(self._orphans[guid]) - len(kept)
            if dropped:
                self.orphans_dropped += dropped
            if kept:
                self._orphans[guid] = kept
            else:
                del self._orphans[guid]

    def evict_aged(self, now: datetime) -> int:
        """Drop nodes past the retention window, except High verdicts.

        High nodes may have courses of action awaiting analyst approval;
        they stay until resolved.
        """
        removed = 0
        with self._lock:
            cutoff = now - self.retention
            for guid in list(self.nodes):
                node = self.nodes[guid]
                if node.created_at >= cutoff:
                    continue
                level = getattr(node.verdict, "level", None)
                if level is not None and getattr(level, "name", "") == "HIGH":
                    continue
                self._unindex_hashes(node)
                host_set = self.host_index.get(node.host)
                if host_set:
                    host_set.discard(guid)
                    if not host_set:
                        del self.host_index[node.host]
                del self.nodes[guid]
                removed += 1
        return removed

    # -- read path ----------------------------------------------------------

    def get(self, guid: str) -> Optional[ProcessNode]:
        with self._lock:
            return self.nodes.get(guid)

    def ancestry(self, guid: str) -> list[ProcessNode]:
        """Self first, then parents; cycle-safe and depth-bounded."""
        with self._lock:
            if guid not in self.nodes:
                raise KeyError(guid)
            chain: list[ProcessNode] = []
            seen: set[str] = set()
            current: Optional[str] = guid
            while current is not None and current in self.nodes and current not in seen:
                if len(chain) >= self.max_ancestry:
                    break
                seen.add(current)
                node = self.nodes[current]
                chain.append(node)
                current = node.parent_guid
            return chain

    def find_by_hash(self, algorithm: str, hex_value: str) -> set[str]:
        with self._lock:
            return set(self.hash_index.get((algorithm.upper(), hex_value.lower()), set()))

    def nodes_snapshot(self) -> list[ProcessNode]:
        with self._lock:
            return list(self.nodes.values())

    def orphan_count(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._orphans.values())

    def rebuild_indexes(self) -> tuple[dict, dict]:
        """Fresh indexes computed from nodes alone, for consistency checks."""
        with self._lock:
            host_index: dict[str, set[str]] = {}
            hash_index: dict[tuple[str, str], set[str]] = {}
            for node in self.nodes.values():
                host_index.setdefault(node.host, set()).add(node.process_guid)
                for algorithm, value in node.hashes.items():
                    hash_index.setdefault((algorithm, value), set()).add(node.process_guid)
            return host_index, hash_index
