"""Fast pre-query tier: whitelist hash index and a TTL'd element cache.

Both structures keep the query engine out of the hot path.  Cached entries
are element-scoped: they record what the knowledge base said about one
element value (a hash, command line, domain, or IP), never a subject's
contextual verdict, so a hit is always equivalent to re-asking the KB as of
insertion time.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable, Optional

ELEMENT_TYPES = ("hash", "command_line", "domain", "ip")

DEFAULT_TTL_S = 3600
DEFAULT_CAPACITY = 100_000


@dataclass
class CacheEntry:
    key: tuple[str, str]
    verdict: object  # element-scoped classify.Verdict
    evidence: list[str]
    inserted_at: datetime


class VerdictCache:
    """TTL + LRU cache keyed by (element_type, value).

    Timestamps are event time supplied by the caller.  The TTL boundary is
    inclusive: an entry inserted at t is still live at t+TTL.  A TTL of 0
    disables the cache outright (every get misses, puts are dropped), which
    makes the pipeline behave identically with the tier on or off.
    """

    def __init__(self, ttl_s: int = DEFAULT_TTL_S, capacity: int = DEFAULT_CAPACITY):
        self.ttl = timedelta(seconds=ttl_s)
        self.enabled = ttl_s > 0
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._entries: OrderedDict[tuple[str, str], CacheEntry] = OrderedDict()
        self._lock = threading.RLock()

    def get(self, key: tuple[str, str], now: datetime) -> Optional[CacheEntry]:
        if not self.enabled:
            self.misses += 1
            return None
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                self.misses += 1
                return None
            if now - entry.inserted_at > self.ttl:
                del self._entries[key]  # lazy eviction of expired entries
                self.misses += 1
                return None
            self._entries.move_to_end(key)
            self.hits += 1
            return entry

    def put(self, key: tuple[str, str], verdict: object, evidence: list[str], now: datetime) -> None:
        if not self.enabled:
            return
        with self._lock:
            self._entries[key] = CacheEntry(key, verdict, list(evidence), now)
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def invalidate(self, predicate: Callable[[tuple[str, str]], bool]) -> int:
        with self._lock:
            doomed = [key for key in self._entries if predicate(key)]
            for key in doomed:
                del self._entries[key]
            return len(doomed)

    def invalidate_all(self) -> int:
        return self.invalidate(lambda key: True)

    def invalidate_key(self, key: tuple[str, str]) -> int:
        return self.invalidate(lambda k: k == key)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


@dataclass
class WhitelistEntry:
    entry_id: str
    threat_level: str


class WhitelistIndex:
    """(algorithm, hex) -> admitted software entry, mirroring the KB."""

    def __init__(self):
        self._by_hash: dict[tuple[str, str], WhitelistEntry] = {}
        self._lock = threading.RLock()

    def put(self, entry_id: str, hashes: dict[str, str], threat_level: str) -> None:
        with self._lock:
            for algorithm, value in hashes.items():
                self._by_hash[(algorithm.upper(), value.lower())] = WhitelistEntry(entry_id, threat_level)

    def remove_entry(self, entry_id: str) -> int:
        with self._lock:
            doomed = [key for key, entry in self._by_hash.items() if entry.entry_id == entry_id]
            for key in doomed:
                del self._by_hash[key]
            return len(doomed)

    def lookup_hash(self, algorithm: str, hex_value: str) -> Optional[tuple[str, str]]:
        """Returns (entry id, stored threat level) or None."""
        with self._lock:
            entry = self._by_hash.get((algorithm.upper(), hex_value.lower()))
            if entry is None:
                return None
            return entry.entry_id, entry.threat_level

    def lookup_any(self, hashes: dict[str, str]) -> Optional[tuple[str, str]]:
        for algorithm, value in hashes.items():
            found = self.lookup_hash(algorithm, value)
            if found is not None:
                return found
        return None

    def as_dict(self) -> dict[tuple[str, str], tuple[str, str]]:
        with self._lock:
            return {key: (entry.entry_id, entry.threat_level)
                    for key, entry in self._by_hash.items()}

    def __len__(self) -> int:
        with self._lock:
            return len(self._by_hash)
