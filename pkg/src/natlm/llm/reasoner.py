"""Sampling, confidence aggregation, threshold filtering and report rendering."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from .. import __version__
from ..ast_frontend import ContractFacts
from ..oracle import DefectType
from .backends import BackendConfig, BackendError, LlmBackend
from .prompt import PromptBundle

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.5
TOOL = "natlm"

REMEDIATION = {
    DefectType.ERC721_REENTRANCY: "Update state before any safe transfer or external call, or add a reentrancy guard.",
    DefectType.PUBLIC_BURN: "Require that the caller owns or is approved for the token before burning it.",
    DefectType.RISKY_MUTABLE_PROXY: "Set the proxy registry once in the constructor or restrict and time-lock changes.",
    DefectType.UNLIMITED_MINTING: "Compare the running supply against a fixed maximum in every mint path.",
}


@dataclass
class DefectPrediction:
    defect_type: DefectType
    confidence: float
    rationale: str = ""
    functions: list[str] = field(default_factory=list)
    locations: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        return {"type": self.defect_type.value, "confidence": round(self.confidence, 6),
                "rationale": self.rationale, "locations": self.locations,
                "remediation": REMEDIATION[self.defect_type]}


def filter_predictions(preds: list[DefectPrediction], tau: float) -> tuple[list[DefectPrediction], int]:
    """Keep predictions with confidence >= tau, in order; return (kept, dropped count)."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    kept = [p for p in preds if p.confidence >= tau]
    return kept, len(preds) - len(kept)


_BLOCK = re.compile(r"BEGIN_DEFECTS\s*\n(.*?)\n\s*END_DEFECTS", re.DOTALL)
_ROW = re.compile(r"^\s*([A-Za-z0-9_\- ]+?)\s*:\s*([0-9]*\.?[0-9]+)\s*(?:\|(.*))?$")


def parse_response(text: str) -> tuple[dict[DefectType, tuple[float, list[str], str]], list[str]]:
    """Extract ``{type: (confidence, functions, rationale)}`` from one reply.

    The structured block is preferred; a JSON object ``{"Type": conf}`` or
    ``{"defects": [{"type", "confidence", ...}]}`` is accepted as fallback.
    Anything else yields no predictions and a diagnostic.
    """
    diags: list[str] = []
    out: dict[DefectType, tuple[float, list[str], str]] = {}
    m = _BLOCK.search(text)
    if m:
        for line in m.group(1).splitlines():
            if not line.strip():
                continue
            row = _ROW.match(line)
            if not row:
                diags.append(f"unparsed line: {line.strip()[:80]}")
                continue
            try:
                kind = DefectType.parse(row.group(1))
            except ValueError:
                diags.append(f"unknown defect class {row.group(1)!r}")
                continue
            conf = min(1.0, max(0.0, float(row.group(2))))
            fns, rationale = [], ""
            for part in (row.group(3) or "").split("|"):
                part = part.strip()
                if part.startswith("fn="):
                    fns = [f for f in part[3:].split(",") if f and f != "-"]
                elif part:
                    rationale = part
            out[kind] = (conf, fns, rationale)
        return out, diags
    try:
        data = json.loads(text[text.index("{"): text.rindex("}") + 1])
    except ValueError:
        return {}, ["reply has no defect block; treated as confidence 0"]
    items = data.get("defects") if isinstance(data, dict) and "defects" in data else None
    if items is None and isinstance(data, dict):
        items = [{"type": k, "confidence": v} for k, v in data.items()]
    for item in items or []:
        try:
            kind = DefectType.parse(str(item["type"]))
            conf = min(1.0, max(0.0, float(item["confidence"])))
        except (KeyError, TypeError, ValueError):
            diags.append(f"unusable JSON item {item!r}"[:100])
            continue
        out[kind] = (conf, list(item.get("functions", [])), str(item.get("rationale", "")))
    return out, diags


def aggregate(samples: list[dict[DefectType, tuple[float, list[str], str]]]) -> list[DefectPrediction]:
    """Mean confidence per class over all samples; a class missing from a sample counts 0."""
    kinds = [t for t in DefectType if any(t in s for s in samples)]
    preds = []
    for kind in kinds:
        confs = [s[kind][0] if kind in s else 0.0 for s in samples]
        best = max((s[kind] for s in samples if kind in s), key=lambda r: r[0])
        fns = list(dict.fromkeys(f for s in samples if kind in s for f in s[kind][1]))
        preds.append(DefectPrediction(kind, sum(confs) / len(samples), best[2], fns))
    return preds


@dataclass
class Report:
    contract: str
    predictions: list[DefectPrediction]
    dropped: int
    meta: dict
    diagnostics: list[str] = field(default_factory=list)

    @property
    def available(self) -> bool:
        return self.meta.get("status") == "ok"

    @property
    def exit_code(self) -> int:
        if not self.available:
            return 2
        return 1 if self.predictions else 0

    def to_json(self) -> dict:
        return {"contract": self.contract, "predictions": [p.to_json() for p in self.predictions],
                "dropped": self.dropped, "meta": self.meta, "diagnostics": self.diagnostics}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, data: dict) -> "Report":
        preds = [DefectPrediction(DefectType.parse(p["type"]), p["confidence"], p.get("rationale", ""),
                                  [loc.get("function", "") for loc in p.get("locations", [])], p.get("locations", []))
                 for p in data.get("predictions", [])]
        return cls(data["contract"], preds, data.get("dropped", 0), data.get("meta", {}), data.get("diagnostics", []))


def render_text(report: Report) -> str:
    m = report.meta
    lines = [f"{m.get('tool', TOOL)} {m.get('version', '')} | seed={m.get('seed')} | tau={m.get('tau')} "
             f"| backend={m.get('backend')} T={m.get('temperature')} k={m.get('samples')}",
             f"contract: {report.contract}"]
    if not report.available:
        lines.append("status: analysis unavailable")
        lines.extend(f"  {d}" for d in report.diagnostics)
        return "\n".join(lines) + "\n"
    if not report.predictions:
        lines.append("no defects above threshold")
    for p in report.predictions:
        where = ", ".join(f"{loc['function']}@{loc['start']}" for loc in p.locations) or "-"
        lines += [f"[{p.defect_type.title}] confidence {p.confidence:.3f} at {where}",
                  f"  why: {p.rationale or '-'}",
                  f"  fix: {REMEDIATION[p.defect_type]}"]
    lines.append(f"dropped below threshold: {report.dropped}")
    return "\n".join(lines) + "\n"


def _locations(names: list[str], facts: ContractFacts | None) -> list[dict]:
    out = []
    for name in names:
        fn = facts.function(name) if facts else None
        if fn is not None and fn.span:
            out.append({"function": name, "start": fn.span[0], "length": fn.span[1]})
        else:
            out.append({"function": name, "start": -1, "length": 0})
    return out


def analyze(bundle: PromptBundle, config: BackendConfig, backend: LlmBackend, tau: float = DEFAULT_TAU,
            seed: int = 0, facts: ContractFacts | None = None) -> Report:
    """Sample the backend, average per-class confidence, filter at ``tau``."""
    meta = {"tool": TOOL, "version": __version__, "seed": seed, "tau": tau, "backend": config.backend,
            "temperature": config.temperature, "samples": config.samples,
            "template_version": bundle.template_version}
    try:
        replies = backend.complete(bundle.text(), config.temperature, config.samples, seed)
    except BackendError as exc:
        log.error("%s: %s", bundle.contract, exc)
        return Report(bundle.contract, [], 0, {**meta, "status": "analysis unavailable"}, [str(exc)])
    if not replies:
        return Report(bundle.contract, [], 0, {**meta, "status": "analysis unavailable"}, ["backend returned no candidates"])
    parsed, diags = [], []
    for i, reply in enumerate(replies):
        rows, d = parse_response(reply)
        parsed.append(rows)
        diags.extend(f"sample {i}: {msg}" for msg in d)
    preds = aggregate(parsed)
    for p in preds:
        p.locations = _locations(p.functions, facts)
    kept, dropped = filter_predictions(preds, tau)
    return Report(bundle.contract, kept, dropped, {**meta, "status": "ok"}, diags)
