"""Policy-rule classifier assigning High/Medium/Low/Unknown threat verdicts.

Rules are conjunctions of closed-set condition primitives evaluated against
a subject (a process node, or a file artifact keyed by creating process and
path), the process graph, the whitelist/cache lookup tier, and the
knowledge base.  Every rule whose conditions all hold fires; the verdict is
the maximum severity among fired rules, Unknown when none fire.
"""

from __future__ import annotations

import json
import ntpath
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Callable, Optional

from .procgraph import ProcessGraph, ProcessNode

FROM_KB = "from-kb"
FROM_WHITELIST = "from-whitelist"


class ThreatLevel(Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"
    UNKNOWN = "Unknown"

    @property
    def severity(self) -> int:
        return {"High": 3, "Medium": 2, "Low": 1, "Unknown": 0}[self.value]

    @classmethod
    def parse(cls, text: str) -> "ThreatLevel":
        for level in cls:
            if level.value.lower() == str(text).lower():
                return level
        raise ValueError(f"unknown threat level: {text}")


@dataclass
class Verdict:
    level: ThreatLevel
    fired_rules: list[str] = field(default_factory=list)
    evidence: list[str] = field(default_factory=list)
    case_raised: bool = False
    assessed_at: Optional[datetime] = None
    coa_refs: list[str] = field(default_factory=list)

    def same_outcome(self, other: "Verdict") -> bool:
        return (self.level == other.level
                and self.fired_rules == other.fired_rules
                and self.case_raised == other.case_raised)


def element_verdict(matched: bool, evidence: list[str], now: datetime) -> Verdict:
    """Element-scoped verdict for the lookup cache (what one value implies)."""
    level = ThreatLevel.HIGH if matched else ThreatLevel.UNKNOWN
    return Verdict(level=level, evidence=sorted(evidence), assessed_at=now)


# ---------------------------------------------------------------------------
# Subjects
# ---------------------------------------------------------------------------

class ProcessSubject:
    """A process node under assessment."""

    origin_event_id = 1
    kind = "process"

    def __init__(self, node: ProcessNode):
        self.node = node
        self.subject_id = node.process_guid
        self.host = node.host
        self.hashes = node.hashes
        self.label = node.image

    def context_node(self) -> ProcessNode:
        return self.node


class FileSubject:
    """A file artifact, keyed by (creating process guid, path)."""

    origin_event_id = 11
    kind = "file"

    def __init__(self, creator: ProcessNode, path: str, created_at: datetime):
        self.creator = creator
        self.path = path
        self.created_at = created_at
        self.subject_id = file_subject_id(creator.process_guid, path)
        self.host = creator.host
        self.hashes: dict[str, str] = {}
        self.label = path

    def context_node(self) -> ProcessNode:
        return self.creator


def file_subject_id(guid: str, path: str) -> str:
    return f"file:{guid}:{path}"


@dataclass
class EvalContext:
    graph: ProcessGraph
    kb: object  # kb.KnowledgeBase
    tier: object  # intel.LookupTier
    now: datetime


def _image_chain(subject, ctx: EvalContext) -> list[ProcessNode]:
    node = subject.context_node()
    try:
        return ctx.graph.ancestry(node.process_guid)
    except KeyError:
        return [node]  # evicted mid-flight: ancestry truncates at the missing link


# ---------------------------------------------------------------------------
# Condition primitives (closed set)
# ---------------------------------------------------------------------------

ConditionFn = Callable[[object, EvalContext], tuple[bool, list[str]]]


def _cond_hash_matches_indicator(params: dict) -> ConditionFn:
    def check(subject, ctx):
        intel_evidence = ctx.tier.hash_intel(subject.hashes, ctx.now)
        return bool(intel_evidence), list(intel_evidence)
    return check


def _cond_hash_in_whitelist(params: dict) -> ConditionFn:
    wanted = params.get("level")
    wanted_level = ThreatLevel.parse(wanted) if wanted else None

    def check(subject, ctx):
        hit = ctx.tier.whitelist_hit(subject.hashes)
        if hit is None:
            return False, []
        entry_id, level = hit
        if wanted_level is not None and ThreatLevel.parse(level) != wanted_level:
            return False, []
        return True, [entry_id]
    return check


def _cond_whitelist_entry_has_cve(params: dict) -> ConditionFn:
    def check(subject, ctx):
        hit = ctx.tier.whitelist_hit(subject.hashes)
        if hit is None:
            return False, []
        entry = ctx.kb.software_entry_view(hit[0])
        if not entry.cve_refs:
            return False, []
        return True, [entry.id] + list(entry.cve_refs)
    return check


def _cond_image_matches(params: dict) -> ConditionFn:
    pattern = re.compile(params["regex"])
    scope = params.get("on", "self")

    def check(subject, ctx):
        chain = _image_chain(subject, ctx)
        if scope == "self":
            candidates = chain[:1]
        elif scope == "parent":
            candidates = chain[1:2]
        else:  # ancestor: any strict ancestor
            candidates = chain[1:]
        for node in candidates:
            if node.image and pattern.search(node.image):
                return True, [node.process_guid]
        return False, []
    return check


def _cond_created_file(params: dict) -> ConditionFn:
    by_image = params.get("by_image_matches")
    creator_pattern = re.compile(by_image) if by_image else None

    def check(subject, ctx):
        if isinstance(subject, FileSubject):
            creator = subject.creator
            if creator_pattern is not None and not creator_pattern.search(creator.image):
                return False, []
            return True, [creator.process_guid]
        node = subject.context_node()
        if not node.files_created:
            return False, []
        if creator_pattern is not None and not creator_pattern.search(node.image):
            return False, []
        return True, [node.process_guid]
    return check


def _cond_loaded_module_matches_malware_dll(params: dict) -> ConditionFn:
    def check(subject, ctx):
        if isinstance(subject, FileSubject):
            return False, []
        modules = subject.context_node().modules_loaded
        if not modules:
            return False, []
        evidence: list[str] = []
        inventory = ctx.kb.malware_dll_inventory()
        for module in modules:
            base = ntpath.basename(module.path).lower()
            for malware_id, dll_path, dll_hashes in inventory:
                if base == ntpath.basename(dll_path).lower():
                    evidence.append(malware_id)
                    continue
                for algorithm, hex_value in dll_hashes.items():
                    if module.hashes.get(algorithm.upper()) == hex_value.lower():
                        evidence.append(malware_id)
                        break
        return bool(evidence), sorted(set(evidence))
    return check


def _cond_connects_to_known_c2(params: dict) -> ConditionFn:
    def check(subject, ctx):
        if isinstance(subject, FileSubject):
            return False, []
        evidence: list[str] = []
        for connection in subject.context_node().connections:
            evidence.extend(ctx.tier.c2_intel(connection.dest_domain, connection.dest_ip, ctx.now))
        return bool(evidence), sorted(set(evidence))
    return check


def _cond_event_id_is(params: dict) -> ConditionFn:
    wanted = int(params["value"])

    def check(subject, ctx):
        return subject.origin_event_id == wanted, []
    return check


CONDITION_TYPES: dict[str, Callable[[dict], ConditionFn]] = {
    "hash_matches_indicator": _cond_hash_matches_indicator,
    "hash_in_whitelist": _cond_hash_in_whitelist,
    "whitelist_entry_has_cve": _cond_whitelist_entry_has_cve,
    "image_matches": _cond_image_matches,
    "created_file": _cond_created_file,
    "loaded_module_matches_malware_dll": _cond_loaded_module_matches_malware_dll,
    "connects_to_known_c2": _cond_connects_to_known_c2,
    "event_id_is": _cond_event_id_is,
}

_CONDITION_PARAMS = {
    "hash_matches_indicator": set(),
    "hash_in_whitelist": {"level"},
    "whitelist_entry_has_cve": set(),
    "image_matches": {"regex", "on"},
    "created_file": {"by_image_matches"},
    "loaded_module_matches_malware_dll": set(),
    "connects_to_known_c2": set(),
    "event_id_is": {"value"},
}


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------

@dataclass
class Rule:
    id: str
    priority: int
    verdict: object  # ThreatLevel or FROM_WHITELIST
    raise_case: bool
    coa_refs: list[str]
    conditions: list[ConditionFn]
    condition_specs: list[dict]


@dataclass
class Policy:
    rules: list[Rule]

    def __len__(self) -> int:
        return len(self.rules)


@dataclass
class PolicyIssue:
    rule_id: str
    field: str
    message: str


class PolicyError(Exception):
    def __init__(self, issues: list[PolicyIssue]):
        super().__init__("; ".join(f"{i.rule_id}: {i.field}: {i.message}" for i in issues))
        self.issues = issues


def load_policy(document) -> Policy:
    """Parse and validate a policy document (dict or JSON text).

    All violations are collected and raised together as PolicyError, each
    naming the offending rule id and field.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise PolicyError([PolicyIssue("<document>", "json", exc.msg)])

    issues: list[PolicyIssue] = []
    rules: list[Rule] = []
    if not isinstance(document, dict) or not isinstance(document.get("rules"), list):
        raise PolicyError([PolicyIssue("<document>", "rules", "policy must be {'rules': [...]}")])

    seen_ids: set[str] = set()
    for index, raw in enumerate(document["rules"]):
        rule_id = str(raw.get("id") or f"<rule {index}>")
        if not raw.get("id"):
            issues.append(PolicyIssue(rule_id, "id", "missing rule id"))
        if rule_id in seen_ids:
            issues.append(PolicyIssue(rule_id, "id", "duplicate rule id"))
        seen_ids.add(rule_id)

        verdict_raw = raw.get("verdict")
        verdict: object = None
        if verdict_raw == FROM_WHITELIST:
            verdict = FROM_WHITELIST
        else:
            try:
                verdict = ThreatLevel.parse(verdict_raw)
            except (ValueError, TypeError):
                issues.append(PolicyIssue(rule_id, "verdict", f"invalid verdict: {verdict_raw!r}"))

        try:
            priority = int(raw.get("priority", 100))
        except (TypeError, ValueError):
            issues.append(PolicyIssue(rule_id, "priority", "priority must be an integer"))
            priority = 100

        coa_refs = raw.get("coa") or []
        if not isinstance(coa_refs, list):
            issues.append(PolicyIssue(rule_id, "coa", "coa must be a list"))
            coa_refs = []

        raw_conditions = raw.get("conditions")
        conditions: list[ConditionFn] = []
        specs: list[dict] = []
        if not isinstance(raw_conditions, list) or not raw_conditions:
            issues.append(PolicyIssue(rule_id, "conditions", "rule needs at least one condition"))
        else:
            for cond in raw_conditions:
                ctype = cond.get("type") if isinstance(cond, dict) else None
                factory = CONDITION_TYPES.get(ctype)
                if factory is None:
                    issues.append(PolicyIssue(rule_id, "conditions", f"unknown condition primitive: {ctype!r}"))
                    continue
                params = {k: v for k, v in cond.items() if k != "type"}
                unknown = set(params) - _CONDITION_PARAMS[ctype]
                if unknown:
                    issues.append(PolicyIssue(rule_id, "conditions",
                                              f"{ctype}: unknown parameters {sorted(unknown)}"))
                    continue
                try:
                    conditions.append(factory(params))
                    specs.append(dict(cond))
                except re.error as exc:
                    issues.append(PolicyIssue(rule_id, "conditions", f"{ctype}: invalid regex: {exc}"))
                except (KeyError, TypeError, ValueError) as exc:
                    issues.append(PolicyIssue(rule_id, "conditions", f"{ctype}: {exc}"))

        if verdict is not None and conditions and len(conditions) == len(raw_conditions or []):
            rules.append(Rule(id=rule_id, priority=priority, verdict=verdict,
                              raise_case=bool(raw.get("raise_case", False)),
                              coa_refs=[str(c) for c in coa_refs],
                              conditions=conditions, condition_specs=specs))

    if issues:
        raise PolicyError(issues)
    return Policy(rules=rules)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(subject, graph: ProcessGraph, lookups, kb, policy: Policy,
             now: datetime) -> Verdict:
    """Run every policy rule against one subject; combine by max severity.

    Equal-severity ties are reported in (priority, id) order.  Course-of-
    action references from fired rules are resolved here: explicit ids pass
    through, the from-kb marker expands to the CoAs mitigating the matched
    intel entities.
    """
    ctx = EvalContext(graph=graph, kb=kb, tier=lookups, now=now)
    fired: list[tuple[Rule, list[str]]] = []
    for rule in policy.rules:
        evidence: list[str] = []
        for condition in rule.conditions:
            ok, found = condition(subject, ctx)
            if not ok:
                break
            evidence.extend(found)
        else:
            fired.append((rule, evidence))

    fired.sort(key=lambda pair: (pair[0].priority, pair[0].id))
    if not fired:
        return Verdict(level=ThreatLevel.UNKNOWN, assessed_at=now)

    level = ThreatLevel.UNKNOWN
    all_evidence: set[str] = set()
    coa_refs: set[str] = set()
    case_raised = False
    for rule, evidence in fired:
        rule_level = rule.verdict
        if rule_level == FROM_WHITELIST:
            hit = lookups.whitelist_hit(subject.hashes)
            rule_level = ThreatLevel.parse(hit[1]) if hit else ThreatLevel.UNKNOWN
        if level == ThreatLevel.UNKNOWN or rule_level.severity > level.severity:
            level = rule_level
        all_evidence.update(evidence)
        case_raised = case_raised or rule.raise_case
        for ref in rule.coa_refs:
            if ref == FROM_KB:
                for entity_id in evidence:
                    if kb.kind_of(entity_id) in ("Indicator", "Malware"):
                        coa_refs.update(lookups.coa_for(entity_id))
            else:
                coa_refs.add(ref)

    return Verdict(
        level=level,
        fired_rules=[rule.id for rule, _ in fired],
        evidence=sorted(all_evidence),
        case_raised=case_raised,
        assessed_at=now,
        coa_refs=sorted(coa_refs),
    )


def element_cache_keys(node: ProcessNode) -> list[tuple[str, str]]:
    """Cache keys whose values feed this node's assessment."""
    keys = [("hash", f"{algorithm.lower()}:{hex_value}")
            for algorithm, hex_value in node.hashes.items()]
    for connection in node.connections:
        if connection.dest_domain:
            keys.append(("domain", connection.dest_domain.lower()))
        if connection.dest_ip:
            keys.append(("ip", connection.dest_ip))
    return keys


def reevaluate_unknowns(graph: ProcessGraph, kb, lookups, policy: Policy,
                        now: datetime, interval_s: int = 900,
                        extra_subjects: Optional[list] = None) -> list[tuple[str, Verdict, Verdict]]:
    """Re-assess stale Unknown subjects against current intelligence.

    Cache entries for each subject's elements are invalidated first so new
    intel is actually consulted.  Changed verdicts are applied in place and
    returned as (subject id, old, new).  Subjects an analyst already cleared
    are left alone.
    """
    interval = timedelta(seconds=interval_s)
    changes: list[tuple[str, Verdict, Verdict]] = []

    candidates: list[tuple[object, object]] = []
    for node in graph.nodes_snapshot():
        verdict = node.verdict
        if verdict is None or verdict.level != ThreatLevel.UNKNOWN or node.analyst_cleared:
            continue
        if verdict.assessed_at is not None and now - verdict.assessed_at < interval:
            continue
        candidates.append((ProcessSubject(node), node))
    for record in extra_subjects or []:
        verdict = record.verdict
        if verdict is None or verdict.level != ThreatLevel.UNKNOWN or record.analyst_cleared:
            continue
        if verdict.assessed_at is not None and now - verdict.assessed_at < interval:
            continue
        candidates.append((record.subject(), record))

    for subject, holder in candidates:
        for key in element_cache_keys(subject.context_node()):
            lookups.cache.invalidate_key(key)
        new_verdict = evaluate(subject, graph, lookups, kb, policy, now)
        old_verdict = holder.verdict
        if not new_verdict.same_outcome(old_verdict):
            holder.verdict = new_verdict
            changes.append((subject.subject_id, old_verdict, new_verdict))
        else:
            holder.verdict.assessed_at = now
    return changes
