"""``natlm`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("natlm")

EXIT_CLEAN, EXIT_FINDINGS, EXIT_ERROR = 0, 1, 2


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------


def cmd_kb_build(args) -> int:
    from .pipeline import BuildConfig, PipelineError, kb_build, load_corpus

    seed = args.seed if args.seed is not None else _env_seed()
    items = load_corpus(args.manifest, args.contracts_dir)
    cfg = BuildConfig(seed=seed, labels=args.labels, cnn_epochs=args.cnn_epochs, gcn_epochs=args.gcn_epochs,
                      fusion_epochs=args.fusion_epochs)
    try:
        store = kb_build(items, cfg, args.out)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    counts: dict[str, int] = {}
    for e in store.entries:
        counts[e.defect_type.value] = counts.get(e.defect_type.value, 0) + 1
    summary = {"kb": str(args.out), "entries": len(store), "dim": store.dim, "by_type": counts, "seed": seed}
    _emit(_json(summary) if args.format == "json" else
          f"wrote {len(store)} entries (dim {store.dim}) to {args.out}: "
          + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())) + "\n", None)
    return EXIT_CLEAN


def cmd_kb_query(args) -> int:
    from .knowledge_base import KnowledgeBaseError, VectorStore
    from .pipeline import NatlmModel, load_contract, model_path

    try:
        store = VectorStore.load(args.kb)
        if args.vector:
            query = np.asarray(json.loads(Path(args.vector).read_text()), dtype=np.float64)
        else:
            model = NatlmModel.load(model_path(args.kb))
            query = model.query_vector(load_contract(args.contract_json, args.contract))
        hits = store.retrieve(query, args.k, (args.w_cos, args.w_dist))
    except (KnowledgeBaseError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    rows = []
    for h in hits:
        e = store.get(h.entry_id)
        rows.append({"entry_id": h.entry_id, "defect_type": e.defect_type.value, "score": h.score,
                     "cosine": h.cosine, "euclidean": h.euclidean, "contract": e.metadata.get("contract", "")})
    if args.format == "json":
        _emit(_json(rows), None)
    else:
        lines = [f"{r['entry_id']:>4} {r['defect_type']:<18} score={r['score']:.4f} cos={r['cosine']:.4f} "
                 f"dist={r['euclidean']:.4f} {r['contract']}" for r in rows]
        _emit("\n".join(lines) + "\n", None)
    return EXIT_CLEAN


def _env_seed() -> int:
    import os

    from .config import SEED_ENV
    return int(os.environ.get(SEED_ENV, "0"))


def cmd_scan(args) -> int:
    from .config import load_config
    from .llm.reasoner import render_text
    from .pipeline import Scanner, error_report, load_contract, scan_many

    try:
        config = load_config(args.config, {
            "kb": args.kb, "tau": args.tau, "k": args.k, "w_cos": args.w_cos, "w_dist": args.w_dist,
            "seed": args.seed, "workers": args.workers, "token_budget": args.token_budget,
            "exclude_self": False if args.include_self else None,
            "backend": args.backend, "temperature": args.temperature, "samples": args.samples,
            "base_url": args.base_url, "api_key_env": args.api_key_env, "script": args.script,
            "timeout": args.timeout, "retries": args.retries,
        })
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    if args.bytecode:
        if len(args.inputs) != 1:
            print("error: --bytecode needs exactly one input", file=sys.stderr)
            return EXIT_ERROR
        try:
            scanner = Scanner.open(config)
            item = load_contract(args.inputs[0], args.contract, Path(args.bytecode).read_text())
            reports = [scanner.scan(item)]
        except Exception as exc:  # every failure must surface as an error report
            reports = [error_report(args.contract or Path(args.inputs[0]).stem, str(exc), config)]
    else:
        reports = scan_many([(p, args.contract) for p in args.inputs], config)

    if args.format == "json":
        payload = reports[0].to_json() if len(reports) == 1 else [r.to_json() for r in reports]
        text = _json(payload)
    else:
        text = "\n".join(render_text(r) for r in reports)
    _emit(text, args.output)
    for r in reports:
        if not r.available:
            print(f"error: {r.contract}: analysis unavailable: {'; '.join(r.diagnostics)}", file=sys.stderr)
    codes = [r.exit_code for r in reports]
    return max(codes) if codes else EXIT_CLEAN


def cmd_disasm(args) -> int:
    from .ast_frontend import CompilerOutput
    from .bytecode_cfg import build_cfg, disassemble, parse_hex

    try:
        if args.input.endswith(".json"):
            out = CompilerOutput.load(args.input)
            unit = out.unit_for(args.contract)
            name = args.contract or next(n for (u, n), code in out.bytecode.items() if u == unit and code)
            code = out.deployed_bytecode(unit, name) or ""
        else:
            code = Path(args.input).read_text()
        instructions = disassemble(parse_hex(code))
    except (ValueError, KeyError, OSError, StopIteration) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not args.cfg:
        if args.format == "json":
            _emit(_json([{"offset": i.offset, "op": i.name, "immediate": None if i.immediate is None
                          else "0x" + i.immediate.hex(), "truncated": i.truncated} for i in instructions]), None)
        else:
            _emit("".join(f"{i.offset:#06x}  {i}\n" for i in instructions), None)
        return EXIT_CLEAN
    cfg = build_cfg(instructions)
    if args.format == "dot":
        _emit(cfg.to_dot(), None)
    elif args.format == "json":
        _emit(_json(cfg.to_json()), None)
    else:
        lines = []
        for b in cfg.blocks:
            succ = ", ".join(f"{e.kind.value}->{e.target}" for e in cfg.out_edges(b.id)) or "-"
            flag = "" if b.reachable else " (unreachable)"
            lines.append(f"block {b.id} @{b.start_offset:#06x} [{len(b.instructions)} ops]{flag} => {succ}")
        lines.extend(f"diagnostic: {d}" for d in cfg.diagnostics)
        _emit("\n".join(lines) + "\n", None)
    return EXIT_CLEAN


def cmd_metrics(args) -> int:
    from .metrics import compare, load_counts, load_predictions, metrics_from_counts, published_table
    from .oracle import load_manifest

    try:
        if args.counts:
            table = metrics_from_counts(load_counts(args.counts))
        elif args.predictions:
            if not args.manifest:
                print("error: --predictions needs --manifest", file=sys.stderr)
                return EXIT_ERROR
            table = compare(load_predictions(args.predictions), load_manifest(args.manifest))
        else:
            table = published_table()
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _emit(_json(table.to_json()) if args.format == "json" else table.render(), None)
    return EXIT_CLEAN


def cmd_report_render(args) -> int:
    from .llm.reasoner import Report, render_text

    try:
        data = json.loads(Path(args.report).read_text())
        reports = [Report.from_json(d) for d in (data if isinstance(data, list) else [data])]
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.format == "json":
        _emit(_json([r.to_json() for r in reports] if len(reports) > 1 else reports[0].to_json()), args.output)
    else:
        _emit("\n".join(render_text(r) for r in reports), args.output)
    return EXIT_CLEAN


DEFAULT_SIGNATURES = ("supportsInterface(bytes4 interfaceID)",)
DEFAULT_KEYWORDS = ("NFT", "ERC721")


def corpus_matches(text: str, signatures, keywords) -> list[str]:
    """Which signature or keyword patterns occur in ``text`` (keywords as whole words)."""
    hits = [s for s in signatures if s in text]
    hits += [k for k in keywords if re.search(rf"\b{re.escape(k)}\b", text)]
    return hits


def cmd_corpus_filter(args) -> int:
    signatures = args.signature or list(DEFAULT_SIGNATURES)
    keywords = args.keyword or list(DEFAULT_KEYWORDS)
    files = []
    for p in map(Path, args.paths):
        files.extend(sorted(p.rglob("*.sol")) if p.is_dir() else [p])
    rows = []
    for f in files:
        try:
            found = corpus_matches(f.read_text(errors="replace"), signatures, keywords)
        except OSError as exc:
            print(f"warning: {f}: {exc}", file=sys.stderr)
            continue
        if found:
            rows.append({"path": str(f), "matched": found})
    _emit(_json(rows) if args.format == "json" else "".join(f"{r['path']}\n" for r in rows), None)
    return EXIT_CLEAN


def cmd_oracle(args) -> int:
    from .ast_frontend import AstParseError, CompilerOutput, extract_facts
    from .oracle import detect_all, findings_to_json

    try:
        facts = extract_facts(CompilerOutput.load(args.input).tree(args.contract), args.contract)
    except (AstParseError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    findings = detect_all(facts)
    if args.format == "json":
        _emit(findings_to_json(findings) + "\n", None)
    else:
        _emit("".join(f"{f.defect_type.value} in {f.function}: {f.evidence}\n" for f in findings) or "no findings\n", None)
    return EXIT_FINDINGS if findings else EXIT_CLEAN


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="natlm", description="ERC-721 contract defect detection")
    p.add_argument("--version", action="version", version=f"natlm {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def fmt(sp, choices=("text", "json")):
        sp.add_argument("--format", choices=choices, default="text")

    kb = sub.add_parser("kb", help="knowledge base commands").add_subparsers(dest="kb_command", required=True)
    b = kb.add_parser("build", help="train encoders and build the vector store from a labeled corpus")
    b.add_argument("--manifest", required=True, help="JSON-lines manifest (fixture, contract, expected)")
    b.add_argument("--contracts-dir", required=True, help="directory holding <fixture>.json compiler outputs")
    b.add_argument("--out", required=True)
    b.add_argument("--labels", choices=("oracle", "manifest"), default="oracle")
    b.add_argument("--seed", type=int)
    b.add_argument("--cnn-epochs", type=int, default=5)
    b.add_argument("--gcn-epochs", type=int, default=5)
    b.add_argument("--fusion-epochs", type=int, default=30)
    fmt(b)
    b.set_defaults(func=cmd_kb_build)

    q = kb.add_parser("query", help="nearest stored defects for a contract or raw vector")
    q.add_argument("--kb", required=True)
    src = q.add_mutually_exclusive_group(required=True)
    src.add_argument("--contract-json", help="compiler output of the contract to encode")
    src.add_argument("--vector", help="JSON array file with a raw query vector")
    q.add_argument("--contract", help="contract name inside the compiler output")
    q.add_argument("-k", type=int, default=5)
    q.add_argument("--w-cos", type=float, default=0.7)
    q.add_argument("--w-dist", type=float, default=0.3)
    fmt(q)
    q.set_defaults(func=cmd_kb_query)

    s = sub.add_parser("scan", help="run the full pipeline on compiler outputs")
    s.add_argument("inputs", nargs="+", help="standard-JSON compiler output files")
    s.add_argument("--contract", help="contract name (default: last contract in the unit)")
    s.add_argument("--bytecode", help="hex bytecode file overriding the compiler's deployed code")
    s.add_argument("--config", help="INI file with [scan] and [backend] sections")
    s.add_argument("--kb")
    s.add_argument("--tau", type=float)
    s.add_argument("-k", type=int)
    s.add_argument("--w-cos", type=float)
    s.add_argument("--w-dist", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--token-budget", type=int)
    s.add_argument("--include-self", action="store_true",
                   help="allow retrieval of entries built from the scanned source file")
    s.add_argument("--backend", choices=("mock", "http"))
    s.add_argument("--base-url")
    s.add_argument("--api-key-env")
    s.add_argument("--script", help="scripted replies for the mock backend (JSON)")
    s.add_argument("--temperature", type=float)
    s.add_argument("--samples", type=int)
    s.add_argument("--timeout", type=float)
    s.add_argument("--retries", type=int)
    s.add_argument("-o", "--output")
    fmt(s)
    s.set_defaults(func=cmd_scan)

    d = sub.add_parser("disasm", help="decode bytecode or print its control-flow graph")
    d.add_argument("input", help="hex file, or compiler output ending in .json")
    d.add_argument("--contract")
    d.add_argument("--cfg", action="store_true")
    fmt(d, ("text", "json", "dot"))
    d.set_defaults(func=cmd_disasm)

    m = sub.add_parser("metrics", help="precision/recall/F1 from counts or predictions")
    m.add_argument("--counts", help='JSON {"Type": [tp, fp, fn]}')
    m.add_argument("--predictions", help="scan report JSON (object, list or JSON lines)")
    m.add_argument("--manifest")
    fmt(m)
    m.set_defaults(func=cmd_metrics)

    r = sub.add_parser("report", help="report utilities").add_subparsers(dest="report_command", required=True)
    rr = r.add_parser("render", help="render a JSON report as text")
    rr.add_argument("report")
    rr.add_argument("-o", "--output")
    fmt(rr)
    rr.set_defaults(func=cmd_report_render)

    c = sub.add_parser("corpus", help="corpus utilities").add_subparsers(dest="corpus_command", required=True)
    cf = c.add_parser("filter", help="select NFT contracts by signature/keyword")
    cf.add_argument("paths", nargs="+")
    cf.add_argument("--signature", action="append", help="literal signature (repeatable)")
    cf.add_argument("--keyword", action="append", help="whole-word keyword (repeatable)")
    fmt(cf)
    cf.set_defaults(func=cmd_corpus_filter)

    o = sub.add_parser("oracle", help="rule-based findings for one contract")
    o.add_argument("input")
    o.add_argument("--contract")
    fmt(o)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
