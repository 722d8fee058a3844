"""Brute-force reference semantics for the pattern query engine.

Deliberately dumb: per-pattern linear scans joined by a cartesian product
with consistency checks, filters applied afterward.  Kept independent of
sentinel.query internals (only the Lit/Triple value types are shared) so
the two implementations can disagree.
"""

from __future__ import annotations

import re
from typing import Optional, Union

from sentinel.kb import Lit, Triple


def _is_var(term) -> bool:
    return isinstance(term, str) and term.startswith("?")


def _object_constant_matches(term, value) -> bool:
    if isinstance(term, Lit):
        return value == term
    if isinstance(term, int):
        return value == Lit(term)
    if value == term:
        return True
    if isinstance(value, Lit):
        if value == Lit(term):
            return True
        if isinstance(term, str) and re.fullmatch(r"-?\d+", term) and value == Lit(int(term)):
            return True
    return False


def _match_one(pattern, triple: Triple, binding: dict) -> Optional[dict]:
    current = dict(binding)
    for position, (term, value) in enumerate(
            zip(pattern, (triple.subject, triple.predicate, triple.object))):
        if _is_var(term):
            if term in current:
                if current[term] != value:
                    return None
            else:
                current[term] = value
        elif position == 2:
            if not _object_constant_matches(term, value):
                return None
        elif term != value:
            return None
    return current


def brute_force_execute(triples: list[Triple], patterns: list,
                        filters: list[tuple[str, str]] = (),
                        limit: Optional[int] = None) -> list[dict[str, str]]:
    """patterns: list of (s, p, o) tuples with ?vars; returns sorted rows."""
    bindings: list[dict] = [{}]
    for pattern in patterns:
        next_bindings: list[dict] = []
        for binding in bindings:
            for triple in triples:
                extended = _match_one(pattern, triple, binding)
                if extended is not None:
                    next_bindings.append(extended)
        bindings = next_bindings

    variables = sorted({t for p in patterns for t in p if _is_var(t)})
    rows = []
    seen = set()
    for binding in bindings:
        row = {v: str(binding[v]) for v in variables}
        if all(re.search(regex, row[var]) for var, regex in filters):
            key = tuple(row[v] for v in variables)
            if key not in seen:
                seen.add(key)
                rows.append(row)
    rows.sort(key=lambda r: tuple(r[v] for v in variables))
    if limit is not None:
        rows = rows[:limit]
    return rows
