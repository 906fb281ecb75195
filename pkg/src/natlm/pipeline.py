"""End-to-end knowledge-base construction and contract scanning."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ast_frontend import (
    AstParseError, CompilerOutput, ContractFacts, extract_facts, linearize_dfs, select_contract, tokenize,
)
from .bytecode_cfg import Cfg, build_cfg, disassemble, parse_hex
from .config import ScanConfig
from .embedding_backend import EMBEDDING_DIM, HashEmbeddingBackend
from .encoders.checkpoint import load_tensors, save_tensors
from .encoders.embedding import (
    TOKEN_DIM, EmbeddingTable, ProjectionParams, embed_and_project, instruction_table, token_vocabulary,
)
from .encoders.gcn import GcnParams, gcn_forward, graph_input, train_gcn
from .encoders.textcnn import TextCnnParams, block_features, block_token_ids, train_block_classifier
from .encoders.transformer import TransformerEncoderConfig, TransformerParams, encode_ast
from .fusion import AlignmentParams, FusionParams, align_and_combine, fuse, train_fusion
from .knowledge_base import KnowledgeBaseError, VectorStore
from .llm.backends import BackendError, make_backend
from .llm.calibration import CLASSES, CLEAN, Calibrator, train_calibrator
from .llm.prompt import assemble_prompt
from .llm.reasoner import Report, analyze
from .oracle import DEFECT_TYPES, DefectType, detect_all, load_manifest

log = logging.getLogger(__name__)

TAIL_DIMS = 3
MAX_POSITIONS = 2048


class PipelineError(RuntimeError):
    pass


@dataclass
class BuildConfig:
    seed: int = 0
    labels: str = "oracle"  # oracle | manifest
    cnn_epochs: int = 5
    gcn_epochs: int = 5
    fusion_epochs: int = 30
    embedding_dim: int = EMBEDDING_DIM


@dataclass
class ContractInput:
    name: str
    fixture: str
    facts: ContractFacts
    source: str
    contract_source: str
    token_seq: object
    cfg: Cfg
    expected: list[tuple[DefectType, str]] | None = None

    @property
    def source_sha(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()

    def function_source(self, name: str) -> str:
        fn = self.facts.function(name)
        if fn is None or not fn.span:
            return ""
        start, length = fn.span
        return self.source.encode()[start:start + length].decode(errors="replace")

    def tail(self) -> np.ndarray:
        f = self.facts
        return np.log1p([len(f.functions), f.external_call_count, f.mint_site_count]).astype(np.float64)


def load_contract(path, contract: str | None = None, bytecode_hex: str | None = None,
                  fixture: str = "") -> ContractInput:
    """Parse compiler output (and optional hex bytecode) into pipeline inputs."""
    path = Path(path)
    out = CompilerOutput.load(path)
    unit = out.unit_for(contract)
    tree = out.tree(contract)
    node = select_contract(tree, contract)
    name = node.name
    facts = extract_facts(tree, name)
    src_path = out.source_path(unit)
    source = src_path.read_text() if src_path else ""
    span = node.span
    contract_source = source.encode()[span[0]:span[0] + span[1]].decode(errors="replace") if source and span else ""
    code = bytecode_hex if bytecode_hex is not None else out.deployed_bytecode(unit, name)
    instructions = disassemble(parse_hex(code)) if code else []
    cfg = build_cfg(instructions)
    return ContractInput(name, fixture or path.stem, facts, source, contract_source,
                         tokenize(linearize_dfs(node), MAX_POSITIONS), cfg)


@dataclass
class NatlmModel:
    seed: int
    token_table: EmbeddingTable
    proj: ProjectionParams
    tconfig: TransformerEncoderConfig
    transformer: TransformerParams
    instr_table: EmbeddingTable
    cnn: TextCnnParams
    gcn: GcnParams
    fusion: FusionParams
    align: AlignmentParams
    embed_seed: int = 0
    history: dict = field(default_factory=dict)

    @property
    def embedder(self) -> HashEmbeddingBackend:
        return HashEmbeddingBackend(self.align.W_emb.shape[1], self.embed_seed)

    def x_ast(self, item: ContractInput) -> np.ndarray:
        return encode_ast(embed_and_project(item.token_seq, self.token_table, self.proj), self.tconfig, self.transformer)

    def block_matrix(self, cfg: Cfg) -> np.ndarray:
        seqs = [block_token_ids(b, self.instr_table) for b in cfg.blocks]
        if not seqs:
            return np.zeros((0, self.cnn.out_dim))
        return block_features(seqs, self.instr_table, self.cnn)

    def x_cfg(self, item: ContractInput) -> np.ndarray:
        return gcn_forward(graph_input(item.cfg, self.block_matrix(item.cfg)), params=self.gcn)

    def combined(self, item: ContractInput) -> np.ndarray:
        return fuse(self.x_ast(item), self.x_cfg(item), self.fusion)

    def entry_vector(self, x_combined: np.ndarray, text: str, item: ContractInput) -> np.ndarray:
        e = align_and_combine(x_combined, self.embedder.embed_text(text), self.align)
        return np.concatenate([e, item.tail()])

    def query_vector(self, item: ContractInput, x_combined: np.ndarray | None = None) -> np.ndarray:
        if x_combined is None:
            x_combined = self.combined(item)
        return self.entry_vector(x_combined, item.contract_source or item.facts.contract, item)

    # persistence -----------------------------------------------------------

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"token.matrix": self.token_table.matrix, "token.positions": self.token_table.positions,
               "instr.matrix": self.instr_table.matrix, "proj.W": self.proj.W_proj, "proj.b": self.proj.b_proj}
        for prefix, group in (("transformer", self.transformer.tensors()), ("cnn", self.cnn.tensors()),
                              ("gcn", self.gcn.tensors()), ("fusion", self.fusion.tensors()),
                              ("align", self.align.tensors())):
            out.update({f"{prefix}.{k}": v for k, v in group.items()})
        return out

    def save(self, path) -> None:
        t = self.tconfig
        meta = {
            "tool": "natlm", "version": __version__, "seed": self.seed, "embed_seed": self.embed_seed,
            "transformer": {"layers": t.layers, "heads": t.heads, "model_dim": t.model_dim,
                            "ffn_dim": t.ffn_dim, "dropout": t.dropout},
            "cnn_heights": self.cnn.heights, "gcn_layers": len(self.gcn.layers),
            "gcn_aggregation": self.gcn.aggregation,
            "token_vocab": sorted(self.token_table.vocab, key=self.token_table.vocab.get),
            "instr_vocab": sorted(self.instr_table.vocab, key=self.instr_table.vocab.get),
            "history": self.history,
        }
        save_tensors(path, self.tensors(), meta)

    @classmethod
    def load(cls, path) -> "NatlmModel":
        t, meta = load_tensors(path)
        tconfig = TransformerEncoderConfig(**meta["transformer"])
        layers = []
        for i in range(tconfig.layers):
            pre = f"transformer.layer{i}."
            layers.append({k[len(pre):]: v for k, v in t.items() if k.startswith(pre)})
        cnn_keys = sorted({int(k[5:]) for k in t if k.startswith("cnn.W")})
        cnn = TextCnnParams([t[f"cnn.W{i}"] for i in cnn_keys], [t[f"cnn.b{i}"] for i in cnn_keys])
        from .encoders.gcn import GcnLayer
        gcn_layers = [GcnLayer(**{n: t[f"gcn.layer{i}.{n}"] for n in ("W_m", "b_m", "W_v", "U_v", "b_v", "P", "q")})
                      for i in range(meta["gcn_layers"])]
        gcn = GcnParams(gcn_layers, t["gcn.edge_embed"], t["gcn.pool_P"], t["gcn.pool_q"], t["gcn.pool_g"],
                        meta["gcn_aggregation"])
        return cls(
            meta["seed"],
            EmbeddingTable({tok: i for i, tok in enumerate(meta["token_vocab"])}, t["token.matrix"], t["token.positions"]),
            ProjectionParams(t["proj.W"], t["proj.b"]),
            tconfig, TransformerParams(tconfig, layers),
            EmbeddingTable({tok: i for i, tok in enumerate(meta["instr_vocab"])}, t["instr.matrix"]),
            cnn, gcn,
            FusionParams(t["fusion.W_ast"], t["fusion.b_ast"], t["fusion.W_cfg"], t["fusion.b_cfg"],
                         t["fusion.alpha_logit"]),
            AlignmentParams(t["align.W_comb"], t["align.b_comb"], t["align.W_emb"], t["align.b_emb"],
                            t["align.alpha2_logit"]),
            meta["embed_seed"], meta.get("history", {}),
        )


def model_path(kb_path) -> Path:
    return Path(str(kb_path) + ".model")


# ---------------------------------------------------------------------------
# build


def _class_index(labels: list[tuple[DefectType, str]]) -> int:
    """Primary class of a contract: its first defect in enum order, else clean."""
    types = {t for t, _ in labels}
    for i, t in enumerate(DEFECT_TYPES):
        if t in types:
            return i
    return len(DEFECT_TYPES)


def load_corpus(manifest_path, contracts_dir) -> list[ContractInput]:
    items = []
    for entry in load_manifest(manifest_path):
        path = Path(contracts_dir) / f"{entry.fixture}.json"
        item = load_contract(path, entry.contract or None, fixture=entry.fixture)
        item.expected = list(entry.expected)
        items.append(item)
    return items


def train_model(items: list[ContractInput], labels: list[int], config: BuildConfig) -> NatlmModel:
    seed = config.seed
    classes = len(CLASSES)
    vocab = token_vocabulary(i.token_seq for i in items)
    token_table = EmbeddingTable.build(vocab, TOKEN_DIM, seed + 1, MAX_POSITIONS)
    proj = ProjectionParams.init(seed + 2)
    tconfig = TransformerEncoderConfig()
    transformer = TransformerParams.init(tconfig, seed + 3)
    instr = instruction_table(seed + 4)
    cnn = TextCnnParams.init(instr.dim, seed + 5)
    history = {}

    blocks = [(block_token_ids(b, instr), y) for item, y in zip(items, labels) for b in item.cfg.blocks]
    if blocks:
        _, head = train_block_classifier(blocks, instr, cnn, classes, epochs=config.cnn_epochs, seed=seed + 6)
        history["textcnn"] = head.history

    gcn = GcnParams.init(cnn.out_dim, seed + 7)
    model = NatlmModel(seed, token_table, proj, tconfig, transformer, instr, cnn, gcn,
                       FusionParams.init(seed + 9), AlignmentParams.init(seed + 10, embedding_dim=config.embedding_dim),
                       embed_seed=seed, history=history)
    graphs = [(graph_input(item.cfg, model.block_matrix(item.cfg)), y) for item, y in zip(items, labels)]
    _, ghead = train_gcn(graphs, gcn, classes, epochs=config.gcn_epochs, seed=seed + 8)
    history["gcn"] = ghead.history

    data = [(model.x_ast(item), gcn_forward(g, params=gcn), y) for item, (g, y) in zip(items, graphs)]
    _, fhead = train_fusion(data, model.fusion, classes, epochs=config.fusion_epochs, seed=seed + 11)
    history["fusion"] = fhead.history
    history["fusion_alpha"] = model.fusion.alpha
    return model


def kb_build(items: list[ContractInput], config: BuildConfig, out_path,
             weights: tuple[float, float] = (0.7, 0.3), k: int = 5) -> VectorStore:
    """Train encoders on the corpus, write the store and its model checkpoint."""
    labeled = []
    for item in items:
        if config.labels == "manifest":
            if item.expected is None:
                log.warning("%s: no manifest label, skipped", item.fixture)
                continue
            found = list(item.expected)
        else:
            found = [(f.defect_type, f.function) for f in detect_all(item.facts)]
        labeled.append((item, found))
    if not any(found for _, found in labeled):
        raise PipelineError("no labeled entries")
    items = [i for i, _ in labeled]
    classes = [_class_index(found) for _, found in labeled]
    model = train_model(items, classes, config)

    store = VectorStore(model.align.W_comb.shape[0] + TAIL_DIMS,
                        {"seed": config.seed, "labels": config.labels, "version": __version__})
    combined = {}
    for item, found in labeled:
        combined[item.fixture] = x = model.combined(item)
        for defect, function in found:
            snippet = item.function_source(function) or function
            store.add(defect, model.entry_vector(x, snippet, item), snippet,
                      {"contract": item.name, "fixture": item.fixture, "function": function,
                       "provenance": config.labels, "source_sha": item.source_sha})

    samples = []
    for item, found in labeled:
        hits = hits_for(store, model.query_vector(item, combined[item.fixture]), k, weights, exclude_sha=item.source_sha)
        samples.append((hits, CLASSES[_class_index(found)] if found else CLEAN))
    store.meta["calibration"] = train_calibrator(samples).to_json()
    store.persist(out_path)
    model.save(model_path(out_path))
    return store


# ---------------------------------------------------------------------------
# scan


def hits_for(store: VectorStore, query: np.ndarray, k: int, weights, exclude_sha: str | None = None) -> list[dict]:
    """Top-k hits as prompt-ready dicts, optionally skipping entries from one source file."""
    if exclude_sha is None:
        raw = store.retrieve(query, k, weights)
    else:
        raw = [h for h in store.retrieve(query, len(store), weights)
               if store.get(h.entry_id).metadata.get("source_sha") != exclude_sha][:k]
    out = []
    for h in raw:
        e = store.get(h.entry_id)
        out.append({"entry_id": h.entry_id, "defect_type": e.defect_type.value, "snippet": e.snippet_source,
                    "score": h.score, "cosine": h.cosine, "euclidean": h.euclidean})
    return out


@dataclass
class Scanner:
    store: VectorStore
    model: NatlmModel
    config: ScanConfig

    @classmethod
    def open(cls, config: ScanConfig) -> "Scanner":
        store = VectorStore.load(config.kb)
        if not len(store):
            raise KnowledgeBaseError("knowledge base empty")
        mpath = model_path(config.kb)
        if not mpath.exists():
            raise KnowledgeBaseError(f"model checkpoint not found: {mpath}")
        return cls(store, NatlmModel.load(mpath), config)

    def scan(self, item: ContractInput) -> Report:
        cfg = self.config
        query = self.model.query_vector(item)
        hits = hits_for(self.store, query, cfg.k, cfg.weights, item.source_sha if cfg.exclude_self else None)
        priors = {}
        if "calibration" in self.store.meta:
            priors = Calibrator.from_json(self.store.meta["calibration"]).priors(hits)
        bundle = assemble_prompt(item.source or item.contract_source, item.facts, hits, priors, cfg.token_budget)
        try:
            backend = make_backend(cfg.backend)
        except (ValueError, OSError) as exc:
            raise BackendError(str(exc)) from exc
        report = analyze(bundle, cfg.backend, backend, cfg.tau, cfg.seed, item.facts)
        report.meta["fixture"] = item.fixture
        report.meta["retrieved"] = [{"entry_id": h["entry_id"], "type": h["defect_type"], "score": round(h["score"], 6)}
                                    for h in hits]
        if bundle.truncation_note:
            report.diagnostics.append(bundle.truncation_note)
        return report


def error_report(contract: str, message: str, config: ScanConfig) -> Report:
    meta = {"tool": "natlm", "version": __version__, "seed": config.seed, "tau": config.tau,
            "backend": config.backend.backend, "temperature": config.backend.temperature,
            "samples": config.backend.samples, "status": "analysis unavailable"}
    return Report(contract, [], 0, meta, [message])


def scan_many(paths: list[tuple[str, str | None]], config: ScanConfig) -> list[Report]:
    """Scan contracts concurrently (up to ``config.workers``); reports keep input order."""
    try:
        scanner = Scanner.open(config)
    except (KnowledgeBaseError, OSError, ValueError) as exc:
        return [error_report(c or Path(p).stem, str(exc), config) for p, c in paths]

    def one(arg):
        path, contract = arg
        try:
            item = load_contract(path, contract)
        except (AstParseError, KeyError, ValueError, OSError) as exc:
            return error_report(contract or Path(path).stem, f"cannot load {path}: {exc}", config)
        try:
            return scanner.scan(item)
        except BackendError as exc:
            return error_report(item.name, str(exc), config)

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(one, paths))
