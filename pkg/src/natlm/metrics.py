"""Per-class precision / recall / F1 from confusion counts or prediction files."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .oracle import DEFECT_TYPES, DefectType, ManifestEntry

log = logging.getLogger(__name__)

# Confusion counts reported for the 8,672-contract evaluation.
PUBLISHED_COUNTS = {
    DefectType.ERC721_REENTRANCY: (423, 59, 80),
    DefectType.PUBLIC_BURN: (42, 7, 2),
    DefectType.RISKY_MUTABLE_PROXY: (13, 1, 2),
    DefectType.UNLIMITED_MINTING: (712, 124, 69),
}
# Published percentages for the same classes: (precision, recall, f1).
PUBLISHED_TABLE = {
    DefectType.ERC721_REENTRANCY: (87.75, 84.09, 85.88),
    DefectType.PUBLIC_BURN: (85.74, 95.45, 90.32),
    DefectType.RISKY_MUTABLE_PROXY: (92.85, 86.66, 89.65),
    DefectType.UNLIMITED_MINTING: (85.16, 91.16, 88.06),
}
PUBLISHED_OVERALL_PRECISION = 87.72


@dataclass(frozen=True)
class MetricsRow:
    label: str
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def f1(self) -> float | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    @property
    def undefined(self) -> bool:
        return self.precision is None or self.recall is None or self.f1 is None

    def to_json(self) -> dict:
        pct = lambda v: None if v is None else round(100 * v, 4)  # noqa: E731
        return {"type": self.label, "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": pct(self.precision), "recall": pct(self.recall), "f1": pct(self.f1),
                "undefined": self.undefined}


@dataclass
class MetricsTable:
    rows: list[MetricsRow]
    micro: MetricsRow
    macro_precision: float | None
    macro_recall: float | None
    warnings: list[str]

    def to_json(self) -> dict:
        pct = lambda v: None if v is None else round(100 * v, 4)  # noqa: E731
        return {"rows": [r.to_json() for r in self.rows], "overall_micro": self.micro.to_json(),
                "overall_macro": {"precision": pct(self.macro_precision), "recall": pct(self.macro_recall)},
                "published_overall_precision": PUBLISHED_OVERALL_PRECISION, "warnings": self.warnings}

    def render(self) -> str:
        def cell(v):
            return "   n/a " if v is None else f"{100 * v:6.2f}%"
        lines = [f"{'type':<20} {'TP':>5} {'FP':>5} {'FN':>5} {'PRE':>8} {'RE':>8} {'F1':>8}"]
        for r in self.rows + [self.micro]:
            flag = "  (undefined)" if r.undefined else ""
            lines.append(f"{r.label:<20} {r.tp:>5} {r.fp:>5} {r.fn:>5} {cell(r.precision):>8} "
                         f"{cell(r.recall):>8} {cell(r.f1):>8}{flag}")
        lines.append(f"macro precision {cell(self.macro_precision).strip()}, recall {cell(self.macro_recall).strip()}")
        lines.append(f"note: the published overall precision is {PUBLISHED_OVERALL_PRECISION:.2f}%; "
                     "neither average of the per-class counts reproduces it")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines) + "\n"


def metrics_from_counts(counts: dict[str, tuple[int, int, int]], warnings: list[str] | None = None) -> MetricsTable:
    rows = [MetricsRow(label, *c) for label, c in counts.items()]
    micro = MetricsRow("overall (micro)", sum(r.tp for r in rows), sum(r.fp for r in rows), sum(r.fn for r in rows))
    precisions = [r.precision for r in rows if r.precision is not None]
    recalls = [r.recall for r in rows if r.recall is not None]
    return MetricsTable(rows, micro, sum(precisions) / len(precisions) if precisions else None,
                        sum(recalls) / len(recalls) if recalls else None, list(warnings or []))


def load_counts(path) -> dict[str, tuple[int, int, int]]:
    """JSON ``{"Type": {"tp":.., "fp":.., "fn":..}}`` or ``{"Type": [tp, fp, fn]}``."""
    data = json.loads(Path(path).read_text())
    out = {}
    for key, value in data.items():
        label = DefectType.parse(key).value
        if isinstance(value, dict):
            out[label] = (int(value["tp"]), int(value["fp"]), int(value["fn"]))
        else:
            tp, fp, fn = value
            out[label] = (int(tp), int(fp), int(fn))
    return out


def load_predictions(path) -> dict[str, set[DefectType]]:
    """Kept defect types per contract from report JSON (one object, a list, or JSON lines)."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
        reports = data if isinstance(data, list) else [data]
    except json.JSONDecodeError:
        reports = [json.loads(line) for line in text.splitlines() if line.strip()]
    out: dict[str, set[DefectType]] = {}
    for rep in reports:
        out.setdefault(rep["contract"], set()).update(DefectType.parse(p["type"]) for p in rep.get("predictions", []))
    return out


def compare(predicted: dict[str, set[DefectType]], manifest: list[ManifestEntry]) -> MetricsTable:
    """Count TP/FP/FN per class by matching contracts on name (or fixture id)."""
    counts = {t.value: [0, 0, 0] for t in DEFECT_TYPES}
    warnings = []
    truth = {}
    for e in manifest:
        truth[e.contract or e.fixture] = e.defect_types
        truth.setdefault(e.fixture, e.defect_types)
    for contract, types in sorted(predicted.items()):
        expected = truth.get(contract)
        if expected is None:
            warnings.append(f"{contract}: not in manifest; its predictions count as false positives")
            expected = set()
        for t in DEFECT_TYPES:
            if t in types and t in expected:
                counts[t.value][0] += 1
            elif t in types:
                counts[t.value][1] += 1
            elif t in expected:
                counts[t.value][2] += 1
    seen = set(predicted)
    for e in manifest:
        if (e.contract or e.fixture) not in seen and e.fixture not in seen:
            warnings.append(f"{e.fixture}: no prediction; expected defects count as false negatives")
            for t in e.defect_types:
                counts[t.value][2] += 1
    for w in warnings:
        log.warning(w)
    return metrics_from_counts({k: tuple(v) for k, v in counts.items()}, warnings)


def published_table() -> MetricsTable:
    return metrics_from_counts({t.value: c for t, c in PUBLISHED_COUNTS.items()})
