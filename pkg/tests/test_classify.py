from __future__ import annotations

import itertools
import json
from datetime import datetime, timedelta, timezone

import pytest

from conftest import (DLL_SHA256, NOTEPAD_SHA256, SEVENZIP_SHA256,
                      UNKNOWN_SHA256, WCRY_SHA256, default_policy, load_json,
                      make_kb, FIXTURES)
from sentinel import classify
from sentinel.classify import (FileSubject, PolicyError, ProcessSubject,
                               ThreatLevel, evaluate, load_policy,
                               reevaluate_unknowns)
from sentinel.intel import LookupTier
from sentinel.lookup import VerdictCache
from sentinel.procgraph import ProcessGraph

from test_procgraph import T0, eid1, eid3, eid7, eid11


def make_tier(kb, ttl_s=3600):
    return LookupTier(kb, VerdictCache(ttl_s=ttl_s))


def assess_node(graph, guid, kb, tier=None, policy=None, now=None):
    tier = tier or make_tier(kb)
    policy = policy or default_policy()
    node = graph.get(guid)
    return evaluate(ProcessSubject(node), graph, tier, kb, policy, now or T0)


# ---------------------------------------------------------------------------
# default policy against fixture KB: the canonical traces
# ---------------------------------------------------------------------------

def test_ioc_hash_is_high(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("W1", image="C:\\Windows\\tasksche.exe", sha=WCRY_SHA256))
    verdict = assess_node(graph, "W1", fixture_kb)
    assert verdict.level == ThreatLevel.HIGH
    assert verdict.fired_rules == ["R1-hash-ioc"]
    assert "indicator--wcry-hash" in verdict.evidence
    assert set(verdict.coa_refs) == {"coa--wcry-killswitch", "coa--wcry-c2block",
                                     "coa--wcry-smb", "coa--wcry-restore"}


def test_office_spawned_powershell_is_medium_with_case(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("G1", image="C:\\Office\\WINWORD.EXE", sha="ba5eba11" * 8))
    graph.apply_event(eid1("G2", image="C:\\WindowsPowerShell\\powershell.exe",
                           parent="G1", sha="c0dec0de" * 8))
    verdict = assess_node(graph, "G2", fixture_kb)
    assert verdict.level == ThreatLevel.MEDIUM
    assert verdict.fired_rules == ["R3-office-spawn"]
    assert verdict.case_raised


def test_downloaded_file_by_office_powershell_is_high(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("G1", image="C:\\Office\\WINWORD.EXE", sha="ba5eba11" * 8))
    graph.apply_event(eid1("G2", image="C:\\WindowsPowerShell\\powershell.exe",
                           parent="G1", sha="c0dec0de" * 8))
    graph.apply_event(eid11("G2", "C:\\Users\\bob\\Downloads\\invoice.exe",
                            at=T0 + timedelta(seconds=10)))
    subject = FileSubject(graph.get("G2"), "C:\\Users\\bob\\Downloads\\invoice.exe",
                          T0 + timedelta(seconds=10))
    verdict = evaluate(subject, graph, make_tier(fixture_kb), fixture_kb,
                       default_policy(), T0 + timedelta(seconds=10))
    assert verdict.level == ThreatLevel.HIGH
    assert verdict.fired_rules == ["R2-office-ps-download"]


def test_r2_does_not_fire_on_the_process_itself(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("G1", image="C:\\Office\\WINWORD.EXE", sha="ba5eba11" * 8))
    graph.apply_event(eid1("G2", image="C:\\WindowsPowerShell\\powershell.exe",
                           parent="G1", sha="c0dec0de" * 8))
    graph.apply_event(eid11("G2", "C:\\Users\\bob\\Downloads\\invoice.exe"))
    verdict = assess_node(graph, "G2", fixture_kb)
    assert verdict.level == ThreatLevel.MEDIUM
    assert verdict.fired_rules == ["R3-office-spawn"]


def test_whitelisted_hash_is_low(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("N1", image="C:\\Windows\\System32\\notepad.exe",
                           sha=NOTEPAD_SHA256))
    verdict = assess_node(graph, "N1", fixture_kb)
    assert verdict.level == ThreatLevel.LOW
    assert verdict.fired_rules == ["R4-whitelist"]
    assert verdict.evidence == ["software--notepad-fixture"]


def test_whitelisted_with_cve_is_medium(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("Z1", image="C:\\Program Files\\7-Zip\\7z.exe",
                           sha=SEVENZIP_SHA256))
    verdict = assess_node(graph, "Z1", fixture_kb)
    assert verdict.level == ThreatLevel.MEDIUM
    assert verdict.fired_rules == ["R4-whitelist", "R5-whitelist-cve"]
    assert "vulnerability--cve-2016-2334" in verdict.evidence


def test_unknown_hash_is_unknown(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("U1", sha=UNKNOWN_SHA256))
    verdict = assess_node(graph, "U1", fixture_kb)
    assert verdict.level == ThreatLevel.UNKNOWN
    assert verdict.fired_rules == []


def test_malware_dll_load_is_high(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("D1", sha=UNKNOWN_SHA256))
    graph.apply_event(eid7("D1", "C:\\Temp\\WCRY-STAGE2.DLL"))
    verdict = assess_node(graph, "D1", fixture_kb)
    assert verdict.level == ThreatLevel.HIGH
    assert "R6-malware-dll" in verdict.fired_rules
    assert "malware--wannacry-fixture" in verdict.evidence


def test_malware_dll_matches_by_hash_too(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("D2", sha=UNKNOWN_SHA256))
    graph.apply_event(eid7("D2", "C:\\Temp\\renamed.dll",
                           hashes={"SHA256": DLL_SHA256}))
    verdict = assess_node(graph, "D2", fixture_kb)
    assert "R6-malware-dll" in verdict.fired_rules


def test_known_c2_connection_is_high(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("C1", sha=UNKNOWN_SHA256))
    graph.apply_event(eid3("C1", domain="c2abcdefgh.onion", port=9050))
    verdict = assess_node(graph, "C1", fixture_kb)
    assert verdict.level == ThreatLevel.HIGH
    assert "R7-known-c2" in verdict.fired_rules
    assert "infrastructure--wcry-c2" in verdict.evidence


def test_synthetic_parent_image_still_matches_rules(fixture_kb):
    # Sysmon started mid-session: winword never had its own EID1
    graph = ProcessGraph()
    graph.apply_event(eid1("P1", image="C:\\ps\\powershell.exe", parent="W0",
                           parent_image="C:\\Office\\winword.exe", sha="c0dec0de" * 8))
    verdict = assess_node(graph, "P1", fixture_kb)
    assert verdict.level == ThreatLevel.MEDIUM
    assert verdict.fired_rules == ["R3-office-spawn"]


# ---------------------------------------------------------------------------
# policy loading
# ---------------------------------------------------------------------------

def test_default_policy_loads_seven_rules():
    policy = default_policy()
    assert len(policy) == 7
    assert [rule.id for rule in policy.rules] == [
        "R1-hash-ioc", "R2-office-ps-download", "R3-office-spawn",
        "R4-whitelist", "R5-whitelist-cve", "R6-malware-dll", "R7-known-c2"]


def _policy_doc(rules):
    return {"rules": rules}


def test_duplicate_rule_id_rejected():
    rule = {"id": "R", "priority": 1, "verdict": "High",
            "conditions": [{"type": "hash_matches_indicator"}]}
    with pytest.raises(PolicyError) as excinfo:
        load_policy(_policy_doc([rule, dict(rule)]))
    assert any(i.field == "id" and i.rule_id == "R" for i in excinfo.value.issues)


def test_unknown_primitive_rejected_at_load():
    with pytest.raises(PolicyError) as excinfo:
        load_policy(_policy_doc([{"id": "R", "verdict": "High",
                                  "conditions": [{"type": "quantum_entangle"}]}]))
    issue = excinfo.value.issues[0]
    assert issue.rule_id == "R" and "quantum_entangle" in issue.message


def test_bad_regex_rejected_at_load():
    with pytest.raises(PolicyError):
        load_policy(_policy_doc([{"id": "R", "verdict": "High",
                                  "conditions": [{"type": "image_matches",
                                                  "regex": "(boom"}]}]))


def test_empty_conditions_rejected():
    with pytest.raises(PolicyError) as excinfo:
        load_policy(_policy_doc([{"id": "R", "verdict": "High", "conditions": []}]))
    assert excinfo.value.issues[0].field == "conditions"


def test_invalid_verdict_rejected():
    with pytest.raises(PolicyError):
        load_policy(_policy_doc([{"id": "R", "verdict": "Catastrophic",
                                  "conditions": [{"type": "hash_matches_indicator"}]}]))


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

def _behavior_graph():
    graph = ProcessGraph()
    graph.apply_event(eid1("G1", image="C:\\Office\\WINWORD.EXE", sha="ba5eba11" * 8))
    graph.apply_event(eid1("G2", image="C:\\ps\\powershell.exe", parent="G1",
                           sha="c0dec0de" * 8))
    graph.apply_event(eid1("W1", image="C:\\Windows\\tasksche.exe", sha=WCRY_SHA256))
    graph.apply_event(eid1("N1", image="C:\\Windows\\notepad.exe", sha=NOTEPAD_SHA256))
    graph.apply_event(eid1("U1", image="C:\\u\\x.exe", sha=UNKNOWN_SHA256))
    return graph


def test_determinism(fixture_kb):
    graph = _behavior_graph()
    for guid in ("G2", "W1", "N1", "U1"):
        first = assess_node(graph, guid, fixture_kb)
        second = assess_node(graph, guid, fixture_kb)
        assert first == second


def test_rule_order_independence(fixture_kb):
    graph = _behavior_graph()
    document = json.loads(
        (FIXTURES.parent.parent / "src/sentinel/data/default_policy.json").read_text())
    rules = document["rules"]
    baseline = {guid: assess_node(graph, guid, fixture_kb) for guid in ("G2", "W1", "N1")}
    for permutation in (list(reversed(rules)), rules[3:] + rules[:3]):
        policy = load_policy({"rules": permutation})
        for guid, expected in baseline.items():
            got = assess_node(graph, guid, fixture_kb, policy=policy)
            assert got.level == expected.level
            assert sorted(got.fired_rules) == sorted(expected.fired_rules)


def test_monotone_severity_adding_rule(fixture_kb):
    graph = _behavior_graph()
    document = json.loads(
        (FIXTURES.parent.parent / "src/sentinel/data/default_policy.json").read_text())
    base_policy = load_policy(document)
    extended = dict(document)
    extended["rules"] = document["rules"] + [{
        "id": "R8-everything-medium", "priority": 99, "verdict": "Medium",
        "conditions": [{"type": "event_id_is", "value": 1}]}]
    extended_policy = load_policy(extended)
    for guid in ("G2", "W1", "N1", "U1"):
        before = assess_node(graph, guid, fixture_kb, policy=base_policy)
        after = assess_node(graph, guid, fixture_kb, policy=extended_policy)
        if before.level == ThreatLevel.UNKNOWN:
            assert after.level != ThreatLevel.UNKNOWN or after.level == before.level
        else:
            assert after.level.severity >= before.level.severity


def test_unknown_iff_no_fired_rules(fixture_kb):
    graph = _behavior_graph()
    for guid in ("G1", "G2", "W1", "N1", "U1"):
        verdict = assess_node(graph, guid, fixture_kb)
        assert (verdict.level == ThreatLevel.UNKNOWN) == (verdict.fired_rules == [])


def test_lookup_tier_is_pure_optimization(fixture_kb):
    """Cache on/off and a rebuilt-from-KB whitelist give identical verdicts."""
    graph = _behavior_graph()
    graph.apply_event(eid3("U1", domain="c2abcdefgh.onion", port=9050,
                           at=T0 + timedelta(seconds=30)))
    graph.apply_event(eid7("G2", "C:\\Temp\\wcry-stage2.dll",
                           at=T0 + timedelta(seconds=31)))
    with_cache = make_tier(fixture_kb, ttl_s=3600)
    without_cache = make_tier(fixture_kb, ttl_s=0)
    for guid in ("G1", "G2", "W1", "N1", "U1"):
        warm = assess_node(graph, guid, fixture_kb, tier=with_cache)
        warm_again = assess_node(graph, guid, fixture_kb, tier=with_cache)
        cold = assess_node(graph, guid, fixture_kb, tier=without_cache)
        assert warm.level == cold.level == warm_again.level
        assert warm.fired_rules == cold.fired_rules == warm_again.fired_rules


# ---------------------------------------------------------------------------
# re-evaluation of unknowns
# ---------------------------------------------------------------------------

def test_reevaluation_picks_up_new_intel(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("U1", sha=UNKNOWN_SHA256))
    tier = make_tier(fixture_kb)
    policy = default_policy()
    node = graph.get("U1")
    node.verdict = evaluate(ProcessSubject(node), graph, tier, fixture_kb, policy, T0)
    assert node.verdict.level == ThreatLevel.UNKNOWN

    fixture_kb.load_bundle(load_json(FIXTURES / "late_indicator_bundle.json"))
    later = T0 + timedelta(seconds=1200)
    changes = reevaluate_unknowns(graph, fixture_kb, tier, policy, later, interval_s=900)
    assert len(changes) == 1
    subject_id, old, new = changes[0]
    assert subject_id == "U1"
    assert old.level == ThreatLevel.UNKNOWN
    assert new.level == ThreatLevel.HIGH
    assert node.verdict.level == ThreatLevel.HIGH


def test_reevaluation_noop_without_new_intel(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("U1", sha=UNKNOWN_SHA256))
    tier = make_tier(fixture_kb)
    policy = default_policy()
    node = graph.get("U1")
    node.verdict = evaluate(ProcessSubject(node), graph, tier, fixture_kb, policy, T0)
    changes = reevaluate_unknowns(graph, fixture_kb, tier, policy,
                                  T0 + timedelta(hours=1), interval_s=900)
    assert changes == []


def test_reevaluation_respects_interval(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("U1", sha=UNKNOWN_SHA256))
    tier = make_tier(fixture_kb)
    policy = default_policy()
    node = graph.get("U1")
    node.verdict = evaluate(ProcessSubject(node), graph, tier, fixture_kb, policy, T0)
    fixture_kb.load_bundle(load_json(FIXTURES / "late_indicator_bundle.json"))
    too_soon = reevaluate_unknowns(graph, fixture_kb, tier, policy,
                                   T0 + timedelta(seconds=60), interval_s=900)
    assert too_soon == []
    assert node.verdict.level == ThreatLevel.UNKNOWN


def test_reevaluation_skips_analyst_cleared(fixture_kb):
    graph = ProcessGraph()
    graph.apply_event(eid1("U1", sha=UNKNOWN_SHA256))
    tier = make_tier(fixture_kb)
    policy = default_policy()
    node = graph.get("U1")
    node.verdict = evaluate(ProcessSubject(node), graph, tier, fixture_kb, policy, T0)
    node.analyst_cleared = True
    fixture_kb.load_bundle(load_json(FIXTURES / "late_indicator_bundle.json"))
    changes = reevaluate_unknowns(graph, fixture_kb, tier, policy,
                                  T0 + timedelta(hours=1), interval_s=900)
    assert changes == []
