"""Rule-based detectors for the four NFT defect classes.

These label knowledge-base entries and fixture ground truth. They are kept
deliberately simple and name-driven; see each detector for the exact rule.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from enum import Enum

from .ast_frontend import ContractFacts, FunctionFacts


class DefectType(str, Enum):
    ERC721_REENTRANCY = "Erc721Reentrancy"
    PUBLIC_BURN = "PublicBurn"
    RISKY_MUTABLE_PROXY = "RiskyMutableProxy"
    UNLIMITED_MINTING = "UnlimitedMinting"

    @classmethod
    def parse(cls, text: str) -> "DefectType":
        key = re.sub(r"[^a-z0-9]", "", text.lower())
        for member in cls:
            if re.sub(r"[^a-z0-9]", "", member.value.lower()) == key:
                return member
        raise ValueError(f"unknown defect type {text!r}")

    @property
    def title(self) -> str:
        return _TITLES[self]


_TITLES = {
    DefectType.ERC721_REENTRANCY: "ERC-721 Reentrancy",
    DefectType.PUBLIC_BURN: "Public Burn",
    DefectType.RISKY_MUTABLE_PROXY: "Risky Mutable Proxy",
    DefectType.UNLIMITED_MINTING: "Unlimited Minting",
}

DEFECT_TYPES: tuple[DefectType, ...] = tuple(DefectType)


@dataclass(frozen=True)
class Finding:
    defect_type: DefectType
    function: str
    span: tuple[int, int]
    evidence: str

    def to_json(self) -> dict:
        d = asdict(self)
        d["defect_type"] = self.defect_type.value
        d["span"] = list(self.span)
        return d


REENTRANCY_GUARD = re.compile(r"nonreentrant|noreentran|reentrancyguard|lock", re.IGNORECASE)
ACCESS_MODIFIER = re.compile(r"^only|auth|owner|admin|role", re.IGNORECASE)
OWNERSHIP_NAME = re.compile(r"owner|approv", re.IGNORECASE)
MAX_NAME = re.compile(r"max|cap|limit", re.IGNORECASE)
PROXY_NAME = re.compile(r"proxy|registry", re.IGNORECASE)


def _reaches(fn: FunctionFacts, needle: str) -> bool:
    names = [fn.name, *fn.internal_calls, *(c.callee for c in fn.external_calls)]
    return any(needle in n.lower() for n in names)


def detect_erc721_reentrancy(facts: ContractFacts) -> list[Finding]:
    """External call (safe-transfer callbacks included) followed by a state write."""
    out = []
    for fn in facts.functions:
        if fn.state_mutability in ("view", "pure"):
            continue
        if any(REENTRANCY_GUARD.search(m) for m in fn.modifiers):
            continue
        pending_call = None
        for ev in fn.events:
            if ev.kind == "call":
                pending_call = pending_call or ev
            elif pending_call is not None:
                out.append(Finding(
                    DefectType.ERC721_REENTRANCY, fn.name, fn.span,
                    f"state variable {ev.name} written after external call {pending_call.name}",
                ))
                break
    return out


def _has_ownership_check(fn: FunctionFacts) -> bool:
    for g in fn.guards:
        if g.kind == "modifier":
            if any(ACCESS_MODIFIER.search(n) for n in g.names):
                return True
        elif any(OWNERSHIP_NAME.search(n) for n in g.names):
            return True
    return False


def detect_public_burn(facts: ContractFacts) -> list[Finding]:
    """Public/external burn path with no owner, approval or access-control check."""
    out = []
    for fn in facts.functions:
        if not fn.is_entry_point or not _reaches(fn, "burn"):
            continue
        if _has_ownership_check(fn):
            continue
        out.append(Finding(DefectType.PUBLIC_BURN, fn.name, fn.span,
                           "burn reachable without an owner or approval check on the caller"))
    return out


def _is_proxy_var(name: str, type_string: str) -> bool:
    typed = type_string.startswith("address") or type_string.startswith("contract ")
    return typed and bool(PROXY_NAME.search(name))


def detect_risky_mutable_proxy(facts: ContractFacts) -> list[Finding]:
    """Proxy-registry address written by any function other than the constructor."""
    proxies = {v.name for v in facts.state_vars if v.is_mutable and _is_proxy_var(v.name, v.type)}
    out = []
    for fn in facts.functions:
        if fn.kind == "constructor":
            continue
        for name in fn.mutators:
            if name in proxies:
                out.append(Finding(DefectType.RISKY_MUTABLE_PROXY, fn.name, fn.span,
                                   f"proxy registry {name} is reassigned after deployment"))
                break
    return out


def _has_supply_cap(fn: FunctionFacts) -> bool:
    for c in fn.comparisons:
        left_max = any(MAX_NAME.search(n) for n in c.left)
        right_max = any(MAX_NAME.search(n) for n in c.right)
        if (left_max and c.right) or (right_max and c.left):
            return True
    return False


def detect_unlimited_minting(facts: ContractFacts) -> list[Finding]:
    """Public/external mint path without a comparison against a max-supply value."""
    out = []
    own = {f.name: f for f in facts.functions}
    for fn in facts.functions:
        if not fn.is_entry_point or not _reaches(fn, "mint"):
            continue
        capped = _has_supply_cap(fn) or any(
            _has_supply_cap(own[c]) for c in fn.internal_calls if c in own and c != fn.name
        )
        if capped:
            continue
        out.append(Finding(DefectType.UNLIMITED_MINTING, fn.name, fn.span,
                           "mint reachable without comparing supply against a maximum"))
    return out


DETECTORS = {
    DefectType.ERC721_REENTRANCY: detect_erc721_reentrancy,
    DefectType.PUBLIC_BURN: detect_public_burn,
    DefectType.RISKY_MUTABLE_PROXY: detect_risky_mutable_proxy,
    DefectType.UNLIMITED_MINTING: detect_unlimited_minting,
}


def detect_all(facts: ContractFacts) -> list[Finding]:
    out: list[Finding] = []
    for detector in DETECTORS.values():
        out.extend(detector(facts))
    return out


def findings_to_json(findings: list[Finding]) -> str:
    return json.dumps([f.to_json() for f in findings], indent=2)


@dataclass(frozen=True)
class ManifestEntry:
    fixture: str
    contract: str
    expected: tuple[tuple[DefectType, str], ...]

    @property
    def defect_types(self) -> set[DefectType]:
        return {t for t, _ in self.expected}


def load_manifest(path) -> list[ManifestEntry]:
    """Read a JSON-lines manifest of expected (defect_type, function) pairs."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                expected = tuple(
                    (DefectType.parse(e["defect_type"]), e.get("function", "")) for e in obj.get("expected", [])
                )
                entries.append(ManifestEntry(obj["fixture"], obj.get("contract", ""), expected))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest line: {exc}") from exc
    return entries
