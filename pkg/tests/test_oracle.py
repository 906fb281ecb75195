import copy

import pytest

from natlm.ast_frontend import Comparison, CompilerOutput, Guard, extract_facts
from natlm.oracle import DefectType, detect_all, findings_to_json

from conftest import CONTRACTS


def facts_for(entry):
    out = CompilerOutput.load(CONTRACTS / f"{entry.fixture}.json")
    return extract_facts(out.tree(), entry.contract)


def test_manifest_covers_both_labels(manifest):
    assert len(manifest) == 16
    assert sum(1 for e in manifest if e.expected) >= 8
    assert sum(1 for e in manifest if not e.expected) >= 8


def test_exact_on_fixtures(manifest):
    mismatches = []
    for entry in manifest:
        got = {(f.defect_type, f.function) for f in detect_all(facts_for(entry))}
        if got != set(entry.expected):
            mismatches.append((entry.fixture, sorted(got), sorted(entry.expected)))
    assert mismatches == []


def by_fixture(manifest, name):
    return next(e for e in manifest if e.fixture == name)


def kinds(facts):
    return {f.defect_type for f in detect_all(facts)}


def test_reentrancy_guard_removes_finding(manifest):
    facts = facts_for(by_fixture(manifest, "reentrancy_mint"))
    assert DefectType.ERC721_REENTRANCY in kinds(facts)
    guarded = copy.deepcopy(facts)
    guarded.function("mint").modifiers.append("nonReentrant")
    assert DefectType.ERC721_REENTRANCY not in kinds(guarded)


def test_ownership_check_removes_public_burn(manifest):
    facts = facts_for(by_fixture(manifest, "public_burn"))
    assert DefectType.PUBLIC_BURN in kinds(facts)
    guarded = copy.deepcopy(facts)
    guarded.function("burn").guards.append(Guard("require", ["ownerOf", "tokenId", "msg", "sender"], 0))
    assert DefectType.PUBLIC_BURN not in kinds(guarded)


def test_access_modifier_removes_public_burn(manifest):
    facts = copy.deepcopy(facts_for(by_fixture(manifest, "public_destroy")))
    facts.function("destroy").guards.append(Guard("modifier", ["onlyOwner"], 0))
    assert DefectType.PUBLIC_BURN not in kinds(facts)


def test_supply_cap_removes_unlimited_minting(manifest):
    facts = facts_for(by_fixture(manifest, "unlimited_paid"))
    assert DefectType.UNLIMITED_MINTING in kinds(facts)
    capped = copy.deepcopy(facts)
    capped.function("mint").comparisons.append(Comparison("<=", ["nextTokenId"], ["MAX_SUPPLY"], 0))
    assert DefectType.UNLIMITED_MINTING not in kinds(capped)


def test_immutable_registry_is_not_flagged(manifest):
    facts = copy.deepcopy(facts_for(by_fixture(manifest, "mutable_registry")))
    assert DefectType.RISKY_MUTABLE_PROXY in kinds(facts)
    facts.state_var("registry").is_mutable = False
    assert DefectType.RISKY_MUTABLE_PROXY not in kinds(facts)


@pytest.mark.parametrize("text", ["PublicBurn", "public burn", "public-burn", "PUBLIC_BURN"])
def test_defect_type_parse(text):
    assert DefectType.parse(text) is DefectType.PUBLIC_BURN


def test_defect_type_parse_rejects_unknown():
    with pytest.raises(ValueError):
        DefectType.parse("Overflow")


def test_findings_json(manifest):
    findings = detect_all(facts_for(by_fixture(manifest, "reentrancy_mint")))
    text = findings_to_json(findings)
    assert '"defect_type": "Erc721Reentrancy"' in text and '"function": "mint"' in text
