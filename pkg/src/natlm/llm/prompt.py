"""Deterministic prompt template for retrieval-augmented defect analysis."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from ..ast_frontend import ContractFacts, FunctionFacts, summarize_facts
from ..oracle import DEFECT_TYPES

TEMPLATE_VERSION = "natlm-prompt/1"
DEFAULT_TOKEN_BUDGET = 6000
NO_HITS = "no similar defects retrieved"

INSTRUCTIONS = (
    "You audit one ERC-721 contract for four defect classes: "
    + ", ".join(t.value for t in DEFECT_TYPES)
    + ".\nUse the contract facts, the source and the retrieved known defects. "
    "For every class you believe is present, give a confidence in [0, 1], the functions involved "
    "and a one-line reason. Reply with exactly this block and nothing else:\n"
    "BEGIN_DEFECTS\n<Class>: <confidence> | fn=<name[,name]> | <reason>\nEND_DEFECTS"
)


def approx_tokens(text: str) -> int:
    return len(text) // 4


@dataclass
class PromptBundle:
    contract: str
    contract_source: str
    contract_facts_summary: str
    retrieved_defects: list[dict]
    priors: dict[str, float] = field(default_factory=dict)
    instructions: str = INSTRUCTIONS
    template_version: str = TEMPLATE_VERSION
    truncation_note: str = ""

    def text(self) -> str:
        parts = [f"[{self.template_version}]", "## Task", self.instructions, "## Contract facts",
                 self.contract_facts_summary, "## Retrieved defects"]
        if self.retrieved_defects:
            for hit in self.retrieved_defects:
                snippet = " ".join(hit["snippet"].split())
                parts.append(f"retrieved: {hit['defect_type']} | score={hit['score']:.4f} | {snippet}")
        else:
            parts.append(NO_HITS)
        if self.priors:
            parts.append("## Calibration priors")
            parts.extend(f"prior: {k}={v:.4f}" for k, v in sorted(self.priors.items()))
        parts.append("## Source")
        if self.truncation_note:
            parts.append(f"note: {self.truncation_note}")
        parts.append(self.contract_source)
        return "\n".join(parts) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _relevance(fn: FunctionFacts) -> int:
    return (2 * fn.is_entry_point + len(fn.external_calls) + len(fn.mutators)
            + len(fn.internal_calls) + len(fn.guards))


def assemble_prompt(source: str, facts: ContractFacts, hits: list[dict], priors: dict[str, float] | None = None,
                    token_budget: int = DEFAULT_TOKEN_BUDGET) -> PromptBundle:
    """Build the prompt bundle.

    ``hits`` are dicts with ``defect_type``, ``snippet`` and ``score``; they
    are put in descending score order. When the prompt exceeds the budget,
    whole function bodies of the contract are cut out, least relevant first,
    and the source is finally clipped if that is still not enough.
    """
    ordered = sorted(hits, key=lambda h: (-h["score"], h.get("entry_id", 0)))
    bundle = PromptBundle(facts.contract, source, summarize_facts(facts),
                          [dict(h) for h in ordered], dict(priors or {}))
    if approx_tokens(bundle.text()) <= token_budget:
        return bundle
    raw = source.encode()
    candidates = sorted((f for f in facts.functions if f.span and f.span[1] and sum(f.span) <= len(raw)),
                        key=lambda f: (_relevance(f), -f.span[0]))
    removed: list[FunctionFacts] = []
    for fn in candidates:
        removed.append(fn)
        text = raw
        for gone in sorted(removed, key=lambda f: -f.span[0]):
            start, length = gone.span
            text = text[:start] + f"/* {gone.name} omitted */".encode() + text[start + length:]
        bundle.contract_source = text.decode(errors="replace")
        bundle.truncation_note = "bodies omitted for budget: " + ", ".join(f.name for f in removed)
        if approx_tokens(bundle.text()) <= token_budget:
            return bundle
    overflow = approx_tokens(bundle.text()) - token_budget
    keep = max(0, len(bundle.contract_source) - 4 * overflow - 64)
    bundle.contract_source = bundle.contract_source[:keep]
    bundle.truncation_note = (bundle.truncation_note + "; " if bundle.truncation_note else "") + \
        f"source clipped to {keep} characters"
    return bundle
