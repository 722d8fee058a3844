"""Conjunctive triple-pattern queries with optional regex filters.

The language is deliberately small: a basic graph pattern (list of
subject/predicate/object patterns, variables spelled ``?name``), optional
per-variable regex filters, and a result limit.  Evaluation order is a
selectivity heuristic only; results are defined by brute-force semantics
(every instantiation of the patterns present in the store), deduplicated
and sorted lexicographically over the bound values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .events import HASH_LENGTHS
from .kb import KnowledgeBase, Lit, Triple, UnknownEntityError

Term = Union[str, int, Lit]


class QueryError(Exception):
    pass


def is_variable(term: Term) -> bool:
    return isinstance(term, str) and term.startswith("?")


@dataclass(frozen=True)
class TriplePattern:
    subject: Term
    predicate: Term
    object: Term

    @property
    def terms(self) -> tuple[Term, Term, Term]:
        return (self.subject, self.predicate, self.object)

    def variables(self) -> set[str]:
        return {t for t in self.terms if is_variable(t)}

    def has_constant(self) -> bool:
        return any(not is_variable(t) for t in self.terms)


@dataclass
class Query:
    patterns: list[TriplePattern]
    filters: list[tuple[str, str]] = field(default_factory=list)  # (variable, regex)
    limit: Optional[int] = None
    full_scan: bool = False


def parse_query(document: dict) -> Query:
    """Build a Query from its JSON form; raises QueryError on shape problems."""
    if not isinstance(document, dict):
        raise QueryError("query must be a JSON object")
    raw_patterns = document.get("patterns")
    if not isinstance(raw_patterns, list) or not raw_patterns:
        raise QueryError("query needs a non-empty 'patterns' list")
    patterns = []
    for row in raw_patterns:
        if not isinstance(row, list) or len(row) != 3:
            raise QueryError(f"pattern must be [subject, predicate, object]: {row!r}")
        patterns.append(TriplePattern(*row))
    filters = []
    for flt in document.get("filters") or []:
        if not isinstance(flt, dict) or "var" not in flt or "regex" not in flt:
            raise QueryError(f"filter must be {{'var': ..., 'regex': ...}}: {flt!r}")
        filters.append((flt["var"], flt["regex"]))
    limit = document.get("limit")
    if limit is not None and (not isinstance(limit, int) or limit < 0):
        raise QueryError("limit must be a non-negative integer")
    return Query(patterns=patterns, filters=filters, limit=limit,
                 full_scan=bool(document.get("full_scan", False)))


def _validate(query: Query) -> list[re.Pattern]:
    if not query.patterns:
        raise QueryError("query has no patterns")
    all_vars: set[str] = set()
    any_constant = False
    for pattern in query.patterns:
        all_vars |= pattern.variables()
        any_constant = any_constant or pattern.has_constant()
    if not any_constant and not query.full_scan:
        raise QueryError("fully unbound query refused without full_scan flag")
    compiled = []
    for variable, regex in query.filters:
        if variable not in all_vars:
            raise QueryError(f"filter variable {variable} not bound by any pattern")
        try:
            compiled.append(re.compile(regex))
        except re.error as exc:
            raise QueryError(f"invalid regex for {variable}: {exc}") from exc
    return compiled


def _object_forms(term: Term) -> list[Union[str, Lit]]:
    """Concrete store forms an object constant can take."""
    if isinstance(term, Lit):
        return [term]
    if isinstance(term, int):
        return [Lit(term)]
    forms: list[Union[str, Lit]] = [term, Lit(term)]
    if re.fullmatch(r"-?\d+", term):
        forms.append(Lit(int(term)))
    return forms


def _term_matches(term: Term, value: Union[str, Lit], position: int,
                  binding: dict) -> Optional[dict]:
    """Extend binding so `term` covers `value`, or None if impossible."""
    if is_variable(term):
        bound = binding.get(term)
        if bound is None:
            extended = dict(binding)
            extended[term] = value
            return extended
        return binding if bound == value else None
    if position == 2:
        return binding if any(value == form for form in _object_forms(term)) else None
    return binding if value == term else None


def _candidates(kb: KnowledgeBase, pattern: TriplePattern, binding: dict) -> list[Triple]:
    def concrete(term: Term) -> Optional[Term]:
        if is_variable(term):
            return binding.get(term)
        return term

    subject = concrete(pattern.subject)
    predicate = concrete(pattern.predicate)
    obj = concrete(pattern.object)
    if obj is None:
        return kb.match(subject, predicate, None)
    seen: set[Triple] = set()
    out: list[Triple] = []
    for form in _object_forms(obj):
        for triple in kb.match(subject, predicate, form):
            if triple not in seen:
                seen.add(triple)
                out.append(triple)
    return out


def execute(kb: KnowledgeBase, query: Query) -> list[dict[str, str]]:
    """Evaluate the query; returns one {variable: string value} dict per row."""
    compiled_filters = _validate(query)

    ordered = sorted(query.patterns, key=lambda p: len(_candidates(kb, p, {})))
    bindings: list[dict] = [{}]
    for pattern in ordered:
        extended: list[dict] = []
        for binding in bindings:
            for triple in _candidates(kb, pattern, binding):
                attempt: Optional[dict] = binding
                for position, (term, value) in enumerate(
                        zip(pattern.terms, (triple.subject, triple.predicate, triple.object))):
                    attempt = _term_matches(term, value, position, attempt)
                    if attempt is None:
                        break
                if attempt is not None:
                    extended.append(attempt)
        bindings = extended
        if not bindings:
            break

    variables = sorted({v for p in query.patterns for v in p.variables()})
    rows: list[dict[str, str]] = []
    seen_rows: set[tuple] = set()
    for binding in bindings:
        row = {v: str(binding[v]) for v in variables}
        for (variable, _), pattern in zip(query.filters, compiled_filters):
            if not pattern.search(row[variable]):
                break
        else:
            key = tuple(row[v] for v in variables)
            if key not in seen_rows:
                seen_rows.add(key)
                rows.append(row)
    rows.sort(key=lambda r: tuple(r[v] for v in variables))
    if query.limit is not None:
        rows = rows[: query.limit]
    return rows


@dataclass(frozen=True)
class HashIntel:
    """What the KB knows about one digest: an indicator and/or a malware record."""

    indicator_id: Optional[str]
    malware_id: Optional[str]

    def entity_ids(self) -> list[str]:
        return [e for e in (self.indicator_id, self.malware_id) if e]


def indicator_for_hash(kb: KnowledgeBase, algorithm: str, hex_value: str) -> Optional[HashIntel]:
    """The canonical first lookup: does an IoC exist for this digest?

    Checks indicator-held hashes first, then hashes recorded directly on
    malware entries.
    """
    algorithm = algorithm.upper()
    if algorithm not in HASH_LENGTHS:
        raise QueryError(f"unknown hash algorithm: {algorithm}")
    predicate = f"hash.{algorithm.lower()}"
    hex_value = hex_value.lower()

    rows = execute(kb, Query(patterns=[
        TriplePattern("?i", predicate, hex_value),
        TriplePattern("?i", "kind", "Indicator"),
        TriplePattern("?i", "indicates", "?m"),
    ]))
    if rows:
        return HashIntel(rows[0]["?i"], rows[0]["?m"])

    rows = execute(kb, Query(patterns=[
        TriplePattern("?i", predicate, hex_value),
        TriplePattern("?i", "kind", "Indicator"),
    ]))
    if rows:
        return HashIntel(rows[0]["?i"], None)

    rows = execute(kb, Query(patterns=[
        TriplePattern("?m", predicate, hex_value),
        TriplePattern("?m", "kind", "Malware"),
    ]))
    if rows:
        return HashIntel(None, rows[0]["?m"])
    return None


def coa_for(kb: KnowledgeBase, entity_id: str) -> list[str]:
    """Courses of action mitigating an entity (resolving indicators first)."""
    if not kb.exists(entity_id):
        raise UnknownEntityError(entity_id)
    coa_ids: set[str] = {str(o) for o in kb.objects(entity_id, "mitigated-by")}
    if kb.kind_of(entity_id) == "Indicator":
        for malware in kb.objects(entity_id, "indicates"):
            coa_ids |= {str(o) for o in kb.objects(str(malware), "mitigated-by")}
    return sorted(coa_ids)


def c2_intel(kb: KnowledgeBase, dest_domain: Optional[str], dest_ip: Optional[str]) -> list[dict[str, str]]:
    """Malware/infrastructure pairs communicating with a destination."""
    rows: list[dict[str, str]] = []
    if dest_domain:
        rows += execute(kb, Query(patterns=[
            TriplePattern("?i", "x-domain", dest_domain.lower()),
            TriplePattern("?m", "communicates-with", "?i"),
        ]))
    if dest_ip:
        rows += execute(kb, Query(patterns=[
            TriplePattern("?i", "x-ip", dest_ip),
            TriplePattern("?m", "communicates-with", "?i"),
        ]))
    return rows
