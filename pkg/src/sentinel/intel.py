"""Lookup tier wiring the whitelist, the element cache, and the query engine.

This is the path every classifier condition takes to reach intelligence:
whitelist first (an already-classified process never touches the query
engine), then the element cache, then a metered query.  Cache entries hold
element-scoped verdicts, so hits replay exactly what the knowledge base
said when the element was first seen.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Optional

from . import query
from .classify import element_verdict
from .kb import KnowledgeBase
from .lookup import VerdictCache

HASH_PREFERENCE = ("SHA256", "SHA1", "MD5", "IMPHASH")


@dataclass
class QueryMeter:
    count: int = 0

    def tick(self) -> None:
        self.count += 1


class LookupTier:
    def __init__(self, kb: KnowledgeBase, cache: VerdictCache, meter: Optional[QueryMeter] = None):
        self.kb = kb
        self.cache = cache
        self.meter = meter or QueryMeter()

    def whitelist_hit(self, hashes: dict[str, str]) -> Optional[tuple[str, str]]:
        return self.kb.whitelist.lookup_any(hashes)

    def hash_intel(self, hashes: dict[str, str], now: datetime) -> list[str]:
        """Entity ids evidencing that one of these digests is known malicious.

        Whitelisted subjects short-circuit: consistency checking keeps the
        whitelist disjoint from indicator/malware hashes, so the query would
        come back empty anyway.
        """
        if not hashes or self.whitelist_hit(hashes) is not None:
            return []
        ordered = [a for a in HASH_PREFERENCE if a in hashes]
        ordered += sorted(set(hashes) - set(ordered))
        for algorithm in ordered:
            hex_value = hashes[algorithm]
            key = ("hash", f"{algorithm.lower()}:{hex_value}")
            entry = self.cache.get(key, now)
            if entry is not None:
                if entry.evidence:
                    return list(entry.evidence)
                continue
            self.meter.tick()
            intel = query.indicator_for_hash(self.kb, algorithm, hex_value)
            ids = intel.entity_ids() if intel else []
            self.cache.put(key, element_verdict(bool(ids), ids, now), ids, now)
            if ids:
                return ids
        return []

    def c2_intel(self, dest_domain: Optional[str], dest_ip: Optional[str],
                 now: datetime) -> list[str]:
        """Entity ids of infrastructure/malware tied to a connection target."""
        evidence: set[str] = set()
        for element_type, value, domain_arg, ip_arg in (
                ("domain", (dest_domain or "").lower(), dest_domain, None),
                ("ip", dest_ip or "", None, dest_ip)):
            if not value:
                continue
            key = (element_type, value)
            entry = self.cache.get(key, now)
            if entry is not None:
                evidence.update(entry.evidence)
                continue
            self.meter.tick()
            rows = query.c2_intel(self.kb, domain_arg, ip_arg)
            ids = sorted({binding for row in rows for binding in row.values()})
            self.cache.put(key, element_verdict(bool(ids), ids, now), ids, now)
            evidence.update(ids)
        return sorted(evidence)

    def coa_for(self, entity_id: str) -> list[str]:
        self.meter.tick()
        return query.coa_for(self.kb, entity_id)

    def execute(self, q: query.Query) -> list[dict[str, str]]:
        self.meter.tick()
        return query.execute(self.kb, q)
