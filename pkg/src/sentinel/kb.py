"""Cyber-threat-intelligence knowledge base: triples plus a typed entity layer.

Entities (malware, indicators, actors, campaigns, courses of action,
software whitelist entries, ...) are stored as triples over a closed
predicate vocabulary, loaded either from JSON bundles or from an
N-Triples-like line format.  Software whitelist admission enforces the
extended-CPE criteria: complete vendor/product/version naming, at least one
process hash, an explicit verification flag, and no hash collision with
known-malicious entities.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .lookup import WhitelistIndex

ENTITY_KINDS = (
    "Malware", "MalwareFamily", "Indicator", "ThreatActor", "Campaign",
    "CourseOfAction", "Vulnerability", "SoftwareEntry", "AttackPattern",
    "Infrastructure", "Target", "Motivation",
)

# Closed predicate vocabulary; anything else must live in the x- namespace.
PREDICATES = frozenset({
    "kind", "name",
    "hash.md5", "hash.sha1", "hash.sha256", "hash.imphash",
    "indicates", "attributed-to", "part-of-campaign", "uses", "targets",
    "motivated-by", "mitigated-by", "communicates-with", "member-of-family",
    "loads-dll", "has-vulnerability", "pattern-value",
    "coa-action", "coa-target-type", "coa-target-value", "coa-arg",
})

# Predicates whose object is an entity reference (everything else is a literal).
REF_PREDICATES = frozenset({
    "indicates", "attributed-to", "part-of-campaign", "uses", "targets",
    "motivated-by", "mitigated-by", "communicates-with", "member-of-family",
    "has-vulnerability",
})

HASH_PREDICATES = {"md5": "hash.md5", "sha1": "hash.sha1",
                   "sha256": "hash.sha256", "imphash": "hash.imphash"}

# bundle prop key <-> predicate (hashes / args / loaded-dlls expand specially)
PROP_PREDICATES = {
    "name": "name",
    "pattern-value": "pattern-value",
    "action": "coa-action",
    "target-type": "coa-target-type",
    "target-value": "coa-target-value",
    "vendor": "x-vendor",
    "product": "x-product",
    "version": "x-version",
    "threat-level": "x-threat-level",
    "verified": "x-verified",
    "dual-use": "x-dual-use",
    "domain": "x-domain",
    "ip": "x-ip",
    "score": "x-cvss-score",
    "actuator-profile": "x-actuator-profile",
}
PREDICATE_PROPS = {v: k for k, v in PROP_PREDICATES.items()}

ENTITY_ID_RE = re.compile(r"^[a-z][a-z0-9-]*--[A-Za-z0-9.{}_:-]+$")

_TRIPLE_LINE_RE = re.compile(
    r'^(?P<s>\S+)\s+(?P<p>\S+)\s+(?P<o>"(?:[^"\\]|\\.)*"|\S+)\s+\.$')


@dataclass(frozen=True)
class Lit:
    """Tagged literal object of a triple (string or integer)."""

    value: Union[str, int]

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: Union[str, Lit]


@dataclass
class Violation:
    code: str
    entity_id: str
    detail: str


# consistency check codes
WHITELIST_HASH_COLLISION = "whitelist-hash-collision"
INDICATOR_MISSING_PATTERN = "indicator-missing-pattern"
DANGLING_REFERENCE = "dangling-reference"
KIND_CARDINALITY = "kind-cardinality"


@dataclass
class SoftwareEntry:
    """Extended-CPE whitelist record under consideration for admission."""

    id: str
    vendor: str
    product: str
    version: str
    hashes: dict[str, str] = field(default_factory=dict)  # lowercase alg -> hex
    threat_level: str = "Low"
    verified: bool = False
    cve_refs: list[str] = field(default_factory=list)
    dual_use: bool = False


@dataclass
class Admission:
    ok: bool
    reason: Optional[str] = None  # missing-cpe-field | no-hash | unverified | hash-known-malicious
    detail: Optional[str] = None


class KBError(Exception):
    pass


class UnknownEntityError(KBError):
    def __init__(self, entity_id: str):
        super().__init__(f"unknown entity: {entity_id}")
        self.entity_id = entity_id


class BundleError(KBError):
    def __init__(self, entity_id: str, field_name: str, message: str):
        super().__init__(f"{entity_id}: {field_name}: {message}")
        self.entity_id = entity_id
        self.field_name = field_name


def valid_predicate(predicate: str) -> bool:
    return predicate in PREDICATES or predicate.startswith("x-")


def is_entity_id(token: str) -> bool:
    return bool(ENTITY_ID_RE.match(token))


def encode_dll_hash(path: str, algorithm: str, hex_value: str) -> str:
    # '|' cannot appear in a Windows path, so 'path|ALG|hex' is unambiguous
    return f"{path}|{algorithm.upper()}|{hex_value.lower()}"


def decode_dll_hash(value: str) -> tuple[str, str, str]:
    path, algorithm, hex_value = value.rsplit("|", 2)
    return path, algorithm, hex_value


class KnowledgeBase:
    """Triple store with entity views, admission control, and consistency checks.

    Multi-reader/single-writer: every public method takes the store lock, and
    bundle/triple loads validate everything before inserting so readers never
    observe a half-loaded bundle.
    """

    def __init__(self):
        self._triples: set[Triple] = set()
        self._by_s: dict[str, set[Triple]] = {}
        self._by_p: dict[str, set[Triple]] = {}
        self._by_o: dict[Union[str, Lit], set[Triple]] = {}
        self.whitelist = WhitelistIndex()
        self._lock = threading.RLock()

    # -- raw triple access ----------------------------------------------------

    def __len__(self) -> int:
        with self._lock:
            return len(self._triples)

    def all_triples(self) -> list[Triple]:
        with self._lock:
            return list(self._triples)

    def match(self, subject: Optional[str] = None, predicate: Optional[str] = None,
              obj: Union[str, Lit, None] = None) -> list[Triple]:
        """All triples matching the given concrete terms (None = wildcard)."""
        with self._lock:
            candidates: Optional[set[Triple]] = None
            for index, key in ((self._by_s, subject), (self._by_p, predicate), (self._by_o, obj)):
                if key is None:
                    continue
                found = index.get(key, set())
                candidates = found if candidates is None else candidates & found
                if not candidates:
                    return []
            if candidates is None:
                return list(self._triples)
            return list(candidates)

    def objects(self, subject: str, predicate: str) -> list[Union[str, Lit]]:
        return [t.object for t in self.match(subject, predicate)]

    def subjects(self, predicate: str, obj: Union[str, Lit]) -> list[str]:
        return [t.subject for t in self.match(None, predicate, obj)]

    def _add(self, triple: Triple) -> bool:
        if triple in self._triples:
            return False
        self._triples.add(triple)
        self._by_s.setdefault(triple.subject, set()).add(triple)
        self._by_p.setdefault(triple.predicate, set()).add(triple)
        self._by_o.setdefault(triple.object, set()).add(triple)
        return True

    def _remove(self, triple: Triple) -> None:
        if triple not in self._triples:
            return
        self._triples.discard(triple)
        for index, key in ((self._by_s, triple.subject), (self._by_p, triple.predicate),
                           (self._by_o, triple.object)):
            bucket = index.get(key)
            if bucket is not None:
                bucket.discard(triple)
                if not bucket:
                    del index[key]

    def remove_subject(self, subject: str) -> int:
        with self._lock:
            doomed = list(self._by_s.get(subject, set()))
            for triple in doomed:
                self._remove(triple)
            return len(doomed)

    def kind_of(self, entity_id: str) -> Optional[str]:
        kinds = [str(o) for o in self.objects(entity_id, "kind")]
        return kinds[0] if len(kinds) == 1 else (kinds[0] if kinds else None)

    def exists(self, entity_id: str) -> bool:
        with self._lock:
            return entity_id in self._by_s

    def entities_of_kind(self, kind: str) -> list[str]:
        with self._lock:
            return sorted(t.subject for t in self._by_p.get("kind", set())
                          if str(t.object) == kind)

    # -- line-oriented triple import -------------------------------------------

    def load_triples(self, text: str) -> tuple[int, list[tuple[int, str]]]:
        """Load '<subject> <predicate> <object> .' lines; '#' starts a comment.

        Returns (newly inserted count, [(line number, error message), ...]).
        Valid lines are inserted even when other lines fail; re-loading the
        same text is a no-op (set semantics).
        """
        pending: list[Triple] = []
        errors: list[tuple[int, str]] = []
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            matched = _TRIPLE_LINE_RE.match(line)
            if not matched:
                errors.append((number, "expected '<subject> <predicate> <object> .'"))
                continue
            subject, predicate, obj_token = matched.group("s", "p", "o")
            if not is_entity_id(subject):
                errors.append((number, f"malformed subject id: {subject}"))
                continue
            if not valid_predicate(predicate):
                errors.append((number, f"unknown predicate outside x- namespace: {predicate}"))
                continue
            obj: Union[str, Lit]
            if obj_token.startswith('"'):
                obj = Lit(obj_token[1:-1].replace('\\"', '"').replace("\\\\", "\\"))
            elif re.fullmatch(r"-?\d+", obj_token):
                obj = Lit(int(obj_token))
            elif is_entity_id(obj_token):
                obj = obj_token
            elif predicate == "kind" and obj_token in ENTITY_KINDS:
                obj = Lit(obj_token)
            else:
                errors.append((number, f"object is neither an entity id nor a quoted literal: {obj_token}"))
                continue
            if predicate in REF_PREDICATES and isinstance(obj, Lit):
                errors.append((number, f"predicate {predicate} requires an entity id object"))
                continue
            pending.append(Triple(subject, predicate, obj))

        inserted = 0
        with self._lock:
            for triple in pending:
                if self._add(triple):
                    inserted += 1
            self._sync_whitelist({t.subject for t in pending})
        return inserted, errors

    # -- bundle import ----------------------------------------------------------

    def load_bundle(self, document: dict) -> tuple[dict[str, int], list[str]]:
        """Expand a JSON entity bundle into triples.

        Returns (per-kind entity counts, consistency warnings for dangling
        refs).  Raises BundleError on schema violations; nothing is inserted
        in that case.
        """
        if not isinstance(document, dict) or not isinstance(document.get("entities"), list):
            raise BundleError("<bundle>", "entities", "document must be {'entities': [...]}")

        pending: list[Triple] = []
        counts: dict[str, int] = {}
        seen_ids: set[str] = set()
        ref_targets: list[tuple[str, str, str]] = []

        for entity in document["entities"]:
            if not isinstance(entity, dict):
                raise BundleError("<bundle>", "entities", "entity must be an object")
            entity_id = entity.get("id")
            kind = entity.get("kind")
            if not isinstance(entity_id, str) or not is_entity_id(entity_id):
                raise BundleError(str(entity_id), "id", "missing or malformed entity id")
            if kind not in ENTITY_KINDS:
                raise BundleError(entity_id, "kind", f"unknown kind: {kind}")
            if entity_id in seen_ids:
                raise BundleError(entity_id, "id", "duplicate entity id in bundle")
            seen_ids.add(entity_id)
            counts[kind] = counts.get(kind, 0) + 1
            pending.append(Triple(entity_id, "kind", Lit(kind)))
            pending.extend(self._expand_props(entity_id, entity.get("props") or {}))
            for ref_key, targets in (entity.get("refs") or {}).items():
                if ref_key not in REF_PREDICATES:
                    raise BundleError(entity_id, ref_key, "unknown relationship")
                if isinstance(targets, str):
                    targets = [targets]
                if not isinstance(targets, list):
                    raise BundleError(entity_id, ref_key, "refs must be an id or list of ids")
                for target in targets:
                    if not isinstance(target, str) or not is_entity_id(target):
                        raise BundleError(entity_id, ref_key, f"malformed ref target: {target}")
                    pending.append(Triple(entity_id, ref_key, target))
                    ref_targets.append((entity_id, ref_key, target))

        warnings = []
        with self._lock:
            for triple in pending:
                self._add(triple)
            known = set(self._by_s)
            for entity_id, ref_key, target in ref_targets:
                if target not in known:
                    warnings.append(f"{entity_id}: {ref_key} -> {target} does not resolve")
            self._sync_whitelist(seen_ids)
        return counts, warnings

    def _expand_props(self, entity_id: str, props: dict) -> list[Triple]:
        triples: list[Triple] = []
        for key, value in props.items():
            if key == "hashes":
                if not isinstance(value, dict):
                    raise BundleError(entity_id, "hashes", "hashes must be {algorithm: hex}")
                for algorithm, hex_value in value.items():
                    predicate = HASH_PREDICATES.get(str(algorithm).lower())
                    if predicate is None:
                        raise BundleError(entity_id, "hashes", f"unknown algorithm: {algorithm}")
                    triples.append(Triple(entity_id, predicate, Lit(str(hex_value).lower())))
            elif key == "args":
                if not isinstance(value, dict):
                    raise BundleError(entity_id, "args", "args must be a string map")
                for arg_key, arg_value in value.items():
                    triples.append(Triple(entity_id, "coa-arg", Lit(f"{arg_key}={arg_value}")))
            elif key == "loaded-dlls":
                if not isinstance(value, list):
                    raise BundleError(entity_id, "loaded-dlls", "must be a list of {path, hashes}")
                for dll in value:
                    path = dll.get("path") if isinstance(dll, dict) else None
                    if not path:
                        raise BundleError(entity_id, "loaded-dlls", "each dll needs a path")
                    triples.append(Triple(entity_id, "loads-dll", Lit(path)))
                    for algorithm, hex_value in (dll.get("hashes") or {}).items():
                        triples.append(Triple(
                            entity_id, "x-dll-hash",
                            Lit(encode_dll_hash(path, algorithm, str(hex_value)))))
            elif key in PROP_PREDICATES:
                predicate = PROP_PREDICATES[key]
                if isinstance(value, bool):
                    literal = Lit("true" if value else "false")
                elif isinstance(value, int):
                    literal = Lit(value)
                else:
                    literal = Lit(str(value))
                triples.append(Triple(entity_id, predicate, literal))
            elif key.startswith("x-"):
                triples.append(Triple(entity_id, key, Lit(str(value))))
            else:
                raise BundleError(entity_id, key, "unknown property")
        return triples

    # -- entity views -------------------------------------------------------------

    def describe(self, entity_id: str) -> dict:
        """Re-serialize one entity from its triples, bundle-shaped."""
        with self._lock:
            triples = self._by_s.get(entity_id)
            if not triples:
                raise UnknownEntityError(entity_id)
            kind = None
            props: dict = {}
            refs: dict[str, list[str]] = {}
            dll_paths: list[str] = []
            dll_hashes: dict[str, dict[str, str]] = {}
            for triple in triples:
                predicate, obj = triple.predicate, triple.object
                if predicate == "kind":
                    kind = str(obj)
                elif predicate.startswith("hash."):
                    props.setdefault("hashes", {})[predicate.split(".", 1)[1]] = str(obj)
                elif predicate == "coa-arg":
                    arg_key, _, arg_value = str(obj).partition("=")
                    props.setdefault("args", {})[arg_key] = arg_value
                elif predicate == "loads-dll":
                    dll_paths.append(str(obj))
                elif predicate == "x-dll-hash":
                    path, algorithm, hex_value = decode_dll_hash(str(obj))
                    dll_hashes.setdefault(path, {})[algorithm.lower()] = hex_value
                elif predicate in REF_PREDICATES:
                    refs.setdefault(predicate, []).append(str(obj))
                elif predicate in PREDICATE_PROPS:
                    key = PREDICATE_PROPS[predicate]
                    if key in ("verified", "dual-use"):
                        props[key] = str(obj) == "true"
                    else:
                        props[key] = obj.value if isinstance(obj, Lit) else str(obj)
                else:
                    props[predicate] = obj.value if isinstance(obj, Lit) else str(obj)
            if dll_paths:
                props["loaded-dlls"] = [
                    {"path": path, **({"hashes": dll_hashes[path]} if path in dll_hashes else {})}
                    for path in sorted(dll_paths)]
            for key in refs:
                refs[key] = sorted(refs[key])
            out: dict = {"id": entity_id, "kind": kind, "props": props}
            if refs:
                out["refs"] = refs
            return out

    def software_entry_view(self, entity_id: str) -> SoftwareEntry:
        view = self.describe(entity_id)
        props = view["props"]
        return SoftwareEntry(
            id=entity_id,
            vendor=str(props.get("vendor", "")),
            product=str(props.get("product", "")),
            version=str(props.get("version", "")),
            hashes=dict(props.get("hashes", {})),
            threat_level=str(props.get("threat-level", "Unknown")),
            verified=bool(props.get("verified", False)),
            cve_refs=list(view.get("refs", {}).get("has-vulnerability", [])),
            dual_use=bool(props.get("dual-use", False)),
        )

    def malware_dll_inventory(self) -> list[tuple[str, str, dict[str, str]]]:
        """(malware id, dll path, dll hashes) for every known malicious DLL."""
        out = []
        with self._lock:
            for malware_id in self.entities_of_kind("Malware"):
                hashes_by_path: dict[str, dict[str, str]] = {}
                for obj in self.objects(malware_id, "x-dll-hash"):
                    path, algorithm, hex_value = decode_dll_hash(str(obj))
                    hashes_by_path.setdefault(path, {})[algorithm.upper()] = hex_value
                for obj in self.objects(malware_id, "loads-dll"):
                    path = str(obj)
                    out.append((malware_id, path, hashes_by_path.get(path, {})))
        return sorted(out)

    # -- whitelist admission --------------------------------------------------------

    def _malicious_hash_owner(self, hex_value: str) -> Optional[str]:
        """Entity id of an Indicator/Malware holding this digest, if any."""
        owners = []
        with self._lock:
            for predicate in HASH_PREDICATES.values():
                for triple in self._by_p.get(predicate, set()):
                    if str(triple.object) != hex_value:
                        continue
                    if self.kind_of(triple.subject) in ("Indicator", "Malware"):
                        owners.append(triple.subject)
        return min(owners) if owners else None

    def assert_software_entry(self, entry: SoftwareEntry) -> Admission:
        """Admission gate for whitelist entries (the verification function).

        Admitted iff all CPE naming fields are present, at least one hash is
        supplied, the entry is explicitly verified, and no hash is already
        attributed to an indicator or malware record.
        """
        for field_name in ("vendor", "product", "version"):
            if not getattr(entry, field_name):
                return Admission(False, "missing-cpe-field", field_name)
        if not entry.hashes:
            return Admission(False, "no-hash", entry.id)
        if not entry.verified:
            return Admission(False, "unverified", entry.id)
        with self._lock:
            for hex_value in entry.hashes.values():
                owner = self._malicious_hash_owner(str(hex_value).lower())
                if owner is not None:
                    return Admission(False, "hash-known-malicious", owner)
            triples = [Triple(entry.id, "kind", Lit("SoftwareEntry"))]
            triples.extend(self._expand_props(entry.id, {
                "vendor": entry.vendor,
                "product": entry.product,
                "version": entry.version,
                "hashes": entry.hashes,
                "threat-level": entry.threat_level,
                "verified": entry.verified,
                "dual-use": entry.dual_use,
            }))
            for cve in entry.cve_refs:
                triples.append(Triple(entry.id, "has-vulnerability", cve))
            for triple in triples:
                self._add(triple)
            self.whitelist.put(entry.id, {a.upper(): h for a, h in entry.hashes.items()},
                               entry.threat_level)
        return Admission(True)

    def revoke_software_entry(self, entity_id: str) -> int:
        with self._lock:
            removed = self.remove_subject(entity_id)
            self.whitelist.remove_entry(entity_id)
            return removed

    def _structurally_admissible(self, entry: SoftwareEntry) -> bool:
        # hash-collision is an admission-time gate only; membership here is
        # structural so a live index always equals a rebuild
        return bool(entry.vendor and entry.product and entry.version
                    and entry.hashes and entry.verified)

    def _sync_whitelist(self, touched_ids: Iterable[str]) -> None:
        for entity_id in touched_ids:
            if self.kind_of(entity_id) != "SoftwareEntry":
                continue
            entry = self.software_entry_view(entity_id)
            self.whitelist.remove_entry(entity_id)
            if self._structurally_admissible(entry):
                self.whitelist.put(entity_id, {a.upper(): h for a, h in entry.hashes.items()},
                                   entry.threat_level)

    def rebuild_whitelist(self) -> WhitelistIndex:
        fresh = WhitelistIndex()
        with self._lock:
            for entity_id in self.entities_of_kind("SoftwareEntry"):
                entry = self.software_entry_view(entity_id)
                if self._structurally_admissible(entry):
                    fresh.put(entity_id, {a.upper(): h for a, h in entry.hashes.items()},
                              entry.threat_level)
        return fresh

    # -- consistency ---------------------------------------------------------------

    def check_consistency(self) -> list[Violation]:
        """Fixed programmatic checks replacing description-logic reasoning.

        Reports: whitelist entries sharing a hash with malicious entities,
        indicators lacking a pattern value, dangling entity references, and
        subjects without exactly one kind triple.  Deterministic order.
        """
        violations: list[Violation] = []
        with self._lock:
            malicious_hashes: dict[str, str] = {}
            for predicate in HASH_PREDICATES.values():
                for triple in self._by_p.get(predicate, set()):
                    if self.kind_of(triple.subject) in ("Indicator", "Malware"):
                        malicious_hashes[str(triple.object)] = triple.subject

            for entity_id in self.entities_of_kind("SoftwareEntry"):
                for predicate in HASH_PREDICATES.values():
                    for obj in self.objects(entity_id, predicate):
                        owner = malicious_hashes.get(str(obj))
                        if owner:
                            violations.append(Violation(
                                WHITELIST_HASH_COLLISION, entity_id,
                                f"hash {obj} also held by {owner}"))

            for entity_id in self.entities_of_kind("Indicator"):
                if not self.objects(entity_id, "pattern-value"):
                    violations.append(Violation(
                        INDICATOR_MISSING_PATTERN, entity_id, "indicator has no pattern value"))

            known = set(self._by_s)
            for predicate in REF_PREDICATES:
                for triple in self._by_p.get(predicate, set()):
                    if isinstance(triple.object, str) and triple.object not in known:
                        violations.append(Violation(
                            DANGLING_REFERENCE, triple.subject,
                            f"{predicate} -> {triple.object} does not resolve"))

            for entity_id in sorted(self._by_s):
                kinds = self.objects(entity_id, "kind")
                if len(kinds) != 1:
                    violations.append(Violation(
                        KIND_CARDINALITY, entity_id,
                        f"{len(kinds)} kind triples (expected exactly 1)"))

        violations.sort(key=lambda v: (v.entity_id, v.code, v.detail))
        return violations

    # -- neighborhood extraction ------------------------------------------------------

    def neighborhood(self, entity_id: str, depth: int) -> list[Triple]:
        """Triples of every entity within `depth` undirected hops.

        Depth 0 is exactly the seed's own triples; each extra hop follows
        entity-to-entity references in either direction and pulls in the
        reached entities' triples.
        """
        with self._lock:
            if entity_id not in self._by_s:
                raise UnknownEntityError(entity_id)
            visited = {entity_id}
            frontier = {entity_id}
            for _ in range(depth):
                next_frontier: set[str] = set()
                for node in frontier:
                    for triple in self._by_s.get(node, set()):
                        if isinstance(triple.object, str) and triple.object in self._by_s:
                            if triple.object not in visited:
                                next_frontier.add(triple.object)
                    for triple in self._by_o.get(node, set()):
                        if triple.subject not in visited:
                            next_frontier.add(triple.subject)
                visited |= next_frontier
                frontier = next_frontier
                if not frontier:
                    break
            result: set[Triple] = set()
            for node in visited:
                result |= self._by_s.get(node, set())
            return sorted(result, key=lambda t: (t.subject, t.predicate, str(t.object)))
