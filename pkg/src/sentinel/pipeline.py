"""Operational flow: aggregate events, look up, classify, respond.

One Pipeline owns the process graph, the lookup tier, the classifier
policy, and the dispatcher.  Ingest is single-writer: events are applied
and assessed under one lock, verdicts land on an append-only cursor feed
that the service long-polls/streams, and courses of action fan out through
the disposition policy whenever a verdict with CoA references is emitted.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional

from . import classify, coa, events, query
from .classify import (FileSubject, Policy, ProcessSubject, ThreatLevel,
                       Verdict, file_subject_id)
from .coa import CoaPolicy, Dispatcher
from .intel import LookupTier, QueryMeter
from .kb import Admission, KnowledgeBase, SoftwareEntry
from .lookup import VerdictCache
from .procgraph import ProcessGraph, ProcessNode

DEFAULT_RECHECK_INTERVAL_S = 900


class PipelineError(Exception):
    pass


class UnknownSubjectError(PipelineError):
    pass


class SubjectStateError(PipelineError):
    """Subject is not in a state the requested transition allows."""


@dataclass
class FileRecord:
    creator: ProcessNode
    path: str
    host: str
    created_at: datetime
    verdict: Optional[Verdict] = None
    analyst_cleared: bool = False

    @property
    def subject_id(self) -> str:
        return file_subject_id(self.creator.process_guid, self.path)

    def subject(self) -> FileSubject:
        return FileSubject(self.creator, self.path, self.created_at)


@dataclass
class FeedRecord:
    cursor: int
    subject: str
    subject_kind: str
    host: str
    label: str
    level: str
    fired_rules: list[str]
    case_raised: bool
    evidence: list[str]
    assessed_at: str

    def to_dict(self) -> dict:
        return {
            "cursor": self.cursor,
            "subject": self.subject,
            "subject_kind": self.subject_kind,
            "host": self.host,
            "label": self.label,
            "level": self.level,
            "fired_rules": list(self.fired_rules),
            "case_raised": self.case_raised,
            "evidence": list(self.evidence),
            "assessed_at": self.assessed_at,
        }


class Pipeline:
    def __init__(self, kb: KnowledgeBase, policy: Policy, coa_policy: CoaPolicy,
                 journal_dir, cache_ttl_s: int = 3600, cache_capacity: int = 100_000,
                 recheck_interval_s: int = DEFAULT_RECHECK_INTERVAL_S,
                 graph: Optional[ProcessGraph] = None):
        self.kb = kb
        self.policy = policy
        self.coa_policy = coa_policy
        self.graph = graph or ProcessGraph()
        self.cache = VerdictCache(ttl_s=cache_ttl_s, capacity=cache_capacity)
        self.meter = QueryMeter()
        self.tier = LookupTier(kb, self.cache, self.meter)
        self.dispatcher = Dispatcher(journal_dir)
        self.recheck_interval_s = recheck_interval_s
        self.files: dict[str, FileRecord] = {}
        self.feed: list[FeedRecord] = []
        self.events_accepted = 0
        self.events_skipped = 0
        self.events_failed = 0
        self._feed_cond = threading.Condition()
        self._lock = threading.RLock()

    # -- ingest ---------------------------------------------------------------

    def ingest_results(self, results: Iterable[tuple[int, object]]) -> dict:
        """Run parser output through the pipeline; bad records never abort."""
        counts = {"accepted": 0, "skipped": 0, "errors": 0}
        details: list[str] = []
        for number, result in results:
            if isinstance(result, events.SysmonEvent):
                self.ingest_event(result)
                counts["accepted"] += 1
            elif isinstance(result, events.Skipped):
                counts["skipped"] += 1
            else:
                counts["errors"] += 1
                details.append(f"record {number}: {result}")
        if details:
            counts["error_details"] = details
        with self._lock:
            self.events_accepted += counts["accepted"]
            self.events_skipped += counts["skipped"]
            self.events_failed += counts["errors"]
        return counts

    def ingest_jsonl(self, text: str) -> dict:
        return self.ingest_results(events.parse_jsonl_stream(text.splitlines()))

    def ingest_xml(self, text: str) -> dict:
        return self.ingest_results(events.parse_xml_batch(text))

    def ingest_event(self, event: events.SysmonEvent) -> None:
        with self._lock:
            self.graph.apply_event(event)
            node = self.graph.get(event.process_guid)
            if node is None:
                return  # orphan artifact: assessed when its process appears
            now = event.utc_time
            if event.event_id == 11:
                self._track_file(node, event.target_filename, event.utc_time, now)
            elif event.event_id == 1:
                # orphan replay may have attached files recorded before the create
                for artifact in node.files_created:
                    self._track_file(node, artifact.path, artifact.created_at, now)
            if not node.synthetic:
                self._assess(ProcessSubject(node), node, now)

    def _track_file(self, node: ProcessNode, path: str, created_at: datetime,
                    now: datetime) -> None:
        record = self.files.get(file_subject_id(node.process_guid, path))
        if record is None:
            record = FileRecord(creator=node, path=path, host=node.host,
                                created_at=created_at)
            self.files[record.subject_id] = record
        self._assess(record.subject(), record, now)

    # -- assessment + response --------------------------------------------------

    def _assess(self, subject, holder, now: datetime) -> Optional[Verdict]:
        verdict = classify.evaluate(subject, self.graph, self.tier, self.kb,
                                    self.policy, now)
        previous = holder.verdict
        if previous is not None and verdict.same_outcome(previous):
            previous.assessed_at = now
            return None
        holder.verdict = verdict
        self._emit(subject, verdict)
        self._respond(subject, verdict, now)
        return verdict

    def _emit(self, subject, verdict: Verdict) -> None:
        with self._feed_cond:
            record = FeedRecord(
                cursor=len(self.feed) + 1,
                subject=subject.subject_id,
                subject_kind=subject.kind,
                host=subject.host,
                label=subject.label,
                level=verdict.level.value,
                fired_rules=list(verdict.fired_rules),
                case_raised=verdict.case_raised,
                evidence=list(verdict.evidence),
                assessed_at=events.format_utc(verdict.assessed_at),
            )
            self.feed.append(record)
            self._feed_cond.notify_all()

    def _respond(self, subject, verdict: Verdict, now: datetime) -> None:
        if not verdict.coa_refs:
            return
        commands, _errors = coa.render_commands(self.kb, verdict.coa_refs, host=subject.host)
        for command in commands:
            disposition = coa.decide(self.coa_policy, verdict, command)
            self.dispatcher.submit(command, disposition, now, subject_id=subject.subject_id)

    # -- feed -------------------------------------------------------------------

    def verdicts_after(self, cursor: int, wait_s: float = 0) -> list[FeedRecord]:
        with self._feed_cond:
            fresh = [r for r in self.feed if r.cursor > cursor]
            if fresh or wait_s <= 0:
                return fresh
            self._feed_cond.wait(timeout=wait_s)
            return [r for r in self.feed if r.cursor > cursor]

    # -- knowledge updates ---------------------------------------------------------

    def load_bundle(self, document: dict) -> tuple[dict, list[str]]:
        with self._lock:
            counts, warnings = self.kb.load_bundle(document)
            # new intelligence invalidates every cached element assessment
            self.cache.invalidate_all()
            return counts, warnings

    def load_triples(self, text: str) -> tuple[int, list]:
        with self._lock:
            inserted, errors = self.kb.load_triples(text)
            self.cache.invalidate_all()
            return inserted, errors

    def reevaluate(self, now: Optional[datetime] = None,
                   interval_s: Optional[int] = None) -> list[tuple[str, Verdict, Verdict]]:
        with self._lock:
            if now is None:
                now = self.graph.latest_event_time or datetime.now(timezone.utc)
            changes = classify.reevaluate_unknowns(
                self.graph, self.kb, self.tier, self.policy, now,
                interval_s=self.recheck_interval_s if interval_s is None else interval_s,
                extra_subjects=list(self.files.values()))
            for subject_id, _old, new_verdict in changes:
                subject, _holder = self._resolve_subject(subject_id)
                self._emit(subject, new_verdict)
                self._respond(subject, new_verdict, now)
            return changes

    # -- triage -----------------------------------------------------------------

    def _resolve_subject(self, ref: str):
        if ref in self.files:
            record = self.files[ref]
            return record.subject(), record
        node = self.graph.get(ref)
        if node is not None:
            return ProcessSubject(node), node
        # bare hash: pick the matching process nodes
        guess = {64: "SHA256", 40: "SHA1", 32: "MD5"}.get(len(ref))
        if guess:
            for algorithm in (guess, "IMPHASH") if guess == "MD5" else (guess,):
                guids = self.graph.find_by_hash(algorithm, ref.lower())
                if guids:
                    node = self.graph.get(sorted(guids)[0])
                    return ProcessSubject(node), node
        raise UnknownSubjectError(ref)

    def mark_benign(self, ref: str, annotator: str) -> tuple[Optional[Verdict], Admission]:
        """Analyst verification: whitelist the subject's hash and recompute.

        Admission can still reject (most importantly when the hash is known
        malicious); the verdict is left untouched in that case.
        """
        with self._lock:
            subject, holder = self._resolve_subject(ref)
            verdict = holder.verdict
            if verdict is None:
                raise SubjectStateError(f"{subject.subject_id} has no verdict yet")
            already_cleared = holder.analyst_cleared
            if not already_cleared:
                if verdict.level not in (ThreatLevel.UNKNOWN, ThreatLevel.MEDIUM):
                    raise SubjectStateError(
                        f"{subject.subject_id} is {verdict.level.value}, not triageable")
                if verdict.level == ThreatLevel.MEDIUM and not verdict.case_raised:
                    raise SubjectStateError(
                        f"{subject.subject_id} is Medium without a raised case")

            node = subject.context_node()
            preferred = next((a for a in ("SHA256", "SHA1", "MD5", "IMPHASH")
                              if a in subject.hashes), None)
            suffix = subject.hashes[preferred][:12] if preferred else "nohash"
            entry = SoftwareEntry(
                id=f"software--analyst-{suffix}",
                vendor="in-house",
                product=(subject.label.rsplit("\\", 1)[-1] or "unknown").lower(),
                version="analyst-verified",
                hashes={a.lower(): h for a, h in subject.hashes.items()},
                threat_level="Low",
                verified=True,
            )
            admission = self.kb.assert_software_entry(entry)
            if not admission.ok:
                return None, admission

            for key in classify.element_cache_keys(node):
                self.cache.invalidate_key(key)
            holder.analyst_cleared = True
            now = self.graph.latest_event_time or datetime.now(timezone.utc)
            self._assess(subject, holder, now)
            return holder.verdict, admission

    def approve(self, record_id: str, decision: str, approver: str) -> coa.DispatchRecord:
        now = self.graph.latest_event_time or datetime.now(timezone.utc)
        return self.dispatcher.approve(record_id, decision, approver, now)

    def unknown_subjects(self) -> list[dict]:
        out = []
        with self._lock:
            for node in self.graph.nodes_snapshot():
                if node.verdict is None or node.analyst_cleared:
                    continue
                if node.verdict.level != ThreatLevel.UNKNOWN and not (
                        node.verdict.level == ThreatLevel.MEDIUM and node.verdict.case_raised):
                    continue
                try:
                    chain = [n.image for n in self.graph.ancestry(node.process_guid)]
                except KeyError:
                    chain = [node.image]
                out.append({
                    "subject": node.process_guid,
                    "subject_kind": "process",
                    "host": node.host,
                    "label": node.image,
                    "level": node.verdict.level.value,
                    "hashes": dict(node.hashes),
                    "ancestry": chain,
                    "assessed_at": events.format_utc(node.verdict.assessed_at),
                })
            for record in self.files.values():
                if record.verdict is None or record.analyst_cleared:
                    continue
                if record.verdict.level != ThreatLevel.UNKNOWN:
                    continue
                out.append({
                    "subject": record.subject_id,
                    "subject_kind": "file",
                    "host": record.host,
                    "label": record.path,
                    "level": record.verdict.level.value,
                    "hashes": {},
                    "ancestry": [record.creator.image],
                    "assessed_at": events.format_utc(record.verdict.assessed_at),
                })
        out.sort(key=lambda item: item["subject"])
        return out

    # -- reporting ---------------------------------------------------------------

    def final_verdicts(self) -> list[dict]:
        """Current verdict per subject, ordered by subject id."""
        rows = []
        with self._lock:
            for node in self.graph.nodes_snapshot():
                if node.verdict is None:
                    continue
                rows.append({
                    "subject": node.process_guid,
                    "subject_kind": "process",
                    "host": node.host,
                    "label": node.image,
                    "level": node.verdict.level.value,
                    "fired_rules": list(node.verdict.fired_rules),
                    "evidence": list(node.verdict.evidence),
                    "case_raised": node.verdict.case_raised,
                })
            for record in self.files.values():
                if record.verdict is None:
                    continue
                rows.append({
                    "subject": record.subject_id,
                    "subject_kind": "file",
                    "host": record.host,
                    "label": record.path,
                    "level": record.verdict.level.value,
                    "fired_rules": list(record.verdict.fired_rules),
                    "evidence": list(record.verdict.evidence),
                    "case_raised": record.verdict.case_raised,
                })
        rows.sort(key=lambda row: row["subject"])
        return rows

    def stats(self) -> dict:
        with self._lock:
            by_level = {level.value: 0 for level in ThreatLevel}
            for row in self.final_verdicts():
                by_level[row["level"]] += 1
            dispatch_status: dict[str, int] = {}
            for record in self.dispatcher.all_records():
                dispatch_status[record.status] = dispatch_status.get(record.status, 0) + 1
            return {
                "events": {
                    "accepted": self.events_accepted,
                    "skipped": self.events_skipped,
                    "errors": self.events_failed,
                },
                "verdicts": by_level,
                "feed_length": len(self.feed),
                "cache": {
                    "hits": self.cache.hits,
                    "misses": self.cache.misses,
                    "hit_rate": round(self.cache.hit_rate(), 4),
                    "entries": len(self.cache),
                },
                "query_engine_invocations": self.meter.count,
                "graph": {
                    "nodes": len(self.graph.nodes),
                    "orphans": self.graph.orphan_count(),
                    "duplicates": self.graph.duplicate_count,
                },
                "dispatch": dispatch_status,
                "kb_triples": len(self.kb),
            }
