"""EVM bytecode decoding and control-flow graph recovery."""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum

from . import kernels
from .opcodes import JUMP, JUMPDEST, JUMPI, is_terminator, mnemonic, push_width


class EdgeKind(str, Enum):
    FALLTHROUGH = "fallthrough"
    JUMP = "jump"
    BRANCH_TAKEN = "branch-taken"
    BRANCH_NOT_TAKEN = "branch-not-taken"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: int
    immediate: bytes | None = None
    # zero bytes appended because the PUSH ran past the end of code
    padded: int = 0

    @property
    def name(self) -> str:
        return mnemonic(self.opcode)

    @property
    def truncated(self) -> bool:
        return self.padded > 0

    @property
    def size(self) -> int:
        """Bytes this instruction occupies in the original code."""
        return 1 + (len(self.immediate) - self.padded if self.immediate is not None else 0)

    @property
    def value(self) -> int | None:
        if self.immediate is None:
            return None
        return int.from_bytes(self.immediate, "big")

    def to_bytes(self) -> bytes:
        """Re-serialize, dropping any padding added for a truncated PUSH."""
        out = bytes([self.opcode])
        if self.immediate is not None:
            out += self.immediate[: len(self.immediate) - self.padded]
        return out

    def __str__(self) -> str:
        if self.immediate is None:
            return self.name
        text = f"{self.name} 0x{self.immediate.hex()}"
        return text + " (truncated)" if self.truncated else text


@dataclass
class BasicBlock:
    id: int
    start_offset: int
    instructions: list[Instruction]
    reachable: bool = True

    @property
    def end_offset(self) -> int:
        """Offset one past the last byte of the block."""
        last = self.instructions[-1]
        return last.offset + last.size

    @property
    def last(self) -> Instruction:
        return self.instructions[-1]


@dataclass(frozen=True)
class CfgEdge:
    source: int
    target: int
    kind: EdgeKind


@dataclass
class Cfg:
    blocks: list[BasicBlock]
    edges: list[CfgEdge]
    entry: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def out_edges(self, block_id: int) -> list[CfgEdge]:
        return [e for e in self.edges if e.source == block_id]

    def block_at(self, offset: int) -> BasicBlock | None:
        for block in self.blocks:
            if block.start_offset == offset:
                return block
        return None

    def to_json(self) -> dict:
        return {
            "entry": self.entry,
            "blocks": [
                {
                    "id": b.id,
                    "start": b.start_offset,
                    "reachable": b.reachable,
                    "ops": [str(i) for i in b.instructions],
                }
                for b in self.blocks
            ],
            "edges": [{"from": e.source, "to": e.target, "kind": e.kind.value} for e in self.edges],
            "diagnostics": list(self.diagnostics),
        }

    def to_dot(self) -> str:
        lines = ["digraph cfg {", "  node [shape=box fontname=monospace];"]
        for b in self.blocks:
            body = "\\l".join(f"{i.offset:#06x} {i}" for i in b.instructions) + "\\l"
            style = "" if b.reachable else " style=dashed"
            lines.append(f'  b{b.id} [label="{body}"{style}];')
        for e in self.edges:
            lines.append(f'  b{e.source} -> b{e.target} [label="{e.kind.value}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


_HEX_RE = re.compile(r"^[0-9a-fA-F]*$")


def parse_hex(text: str) -> bytes:
    """Decode hex-encoded bytecode; tolerates a 0x prefix and whitespace."""
    cleaned = "".join(text.split())
    if cleaned[:2] in ("0x", "0X"):
        cleaned = cleaned[2:]
    if not _HEX_RE.match(cleaned):
        raise ValueError("bytecode contains non-hex characters")
    if len(cleaned) % 2:
        raise ValueError("bytecode has an odd number of hex digits")
    return bytes.fromhex(cleaned)


def disassemble(bytecode: bytes) -> list[Instruction]:
    """Decode every byte of ``bytecode`` into instructions.

    Decoding never fails. Bytes that are not defined opcodes keep their raw
    value and report the name INVALID. A PUSH cut off by the end of the code is
    zero-padded to its full width and marked via ``padded``.
    """
    bytecode = bytes(bytecode)
    offsets, ops, imm_len, pad = kernels.decode(bytecode)
    out = []
    for off, op, n_imm, n_pad in zip(offsets.tolist(), ops.tolist(), imm_len.tolist(), pad.tolist()):
        if push_width(op):
            imm = bytecode[off + 1 : off + 1 + n_imm] + b"\x00" * n_pad
            out.append(Instruction(off, op, imm, n_pad))
        else:
            out.append(Instruction(off, op))
    return out


def assemble(instructions: list[Instruction]) -> bytes:
    return b"".join(i.to_bytes() for i in instructions)


def build_cfg(instructions: list[Instruction], resolve: bool = True) -> Cfg:
    """Split instructions into basic blocks and connect them.

    Leaders are offset 0, every JUMPDEST and every instruction after a
    terminator. Jump and branch-taken edges start out as ``unresolved``
    self-loops on the source block; with ``resolve`` they are then passed
    through :func:`resolve_jump_targets`.
    """
    for a, b in zip(instructions, instructions[1:]):
        if b.offset <= a.offset:
            raise ValueError(f"instruction offsets not increasing at {b.offset}")
    blocks: list[BasicBlock] = []
    current: list[Instruction] = []
    for ins in instructions:
        if current and ins.opcode == JUMPDEST:
            blocks.append(BasicBlock(len(blocks), current[0].offset, current))
            current = []
        current.append(ins)
        if is_terminator(ins.opcode):
            blocks.append(BasicBlock(len(blocks), current[0].offset, current))
            current = []
    if current:
        blocks.append(BasicBlock(len(blocks), current[0].offset, current))

    edges: list[CfgEdge] = []
    diagnostics: list[str] = []
    for block in blocks:
        op = block.last.opcode
        has_next = block.id + 1 < len(blocks)
        if op == JUMP:
            edges.append(CfgEdge(block.id, block.id, EdgeKind.UNRESOLVED))
        elif op == JUMPI:
            edges.append(CfgEdge(block.id, block.id, EdgeKind.UNRESOLVED))
            if has_next:
                edges.append(CfgEdge(block.id, block.id + 1, EdgeKind.BRANCH_NOT_TAKEN))
            else:
                edges.append(CfgEdge(block.id, block.id, EdgeKind.UNRESOLVED))
                diagnostics.append(f"block {block.id}: JUMPI fallthrough runs past end of code")
        elif not is_terminator(op) and has_next:
            edges.append(CfgEdge(block.id, block.id + 1, EdgeKind.FALLTHROUGH))

    cfg = Cfg(blocks, edges, 0, diagnostics)
    if resolve:
        cfg = resolve_jump_targets(cfg, instructions)
    else:
        _mark_reachable(cfg)
    return cfg


def resolve_jump_targets(cfg: Cfg, instructions: list[Instruction] | None = None) -> Cfg:
    """Resolve jumps whose target is pushed by the instruction right before them.

    Anything else stays ``unresolved``. A pushed target that is not a JUMPDEST
    leaves the edge unresolved and adds a diagnostic. Returns a new Cfg.
    """
    # the blocks already carry the instructions; the list is accepted for symmetry
    del instructions
    by_start = {b.start_offset: b for b in cfg.blocks}
    diagnostics = list(cfg.diagnostics)
    edges: list[CfgEdge] = []
    for edge in cfg.edges:
        if edge.kind is not EdgeKind.UNRESOLVED or edge.source != edge.target:
            edges.append(edge)
            continue
        block = cfg.blocks[edge.source]
        last = block.last
        # the second placeholder of a JUMPI at end of code is not a jump target
        if last.opcode not in (JUMP, JUMPI) or _is_tail_placeholder(cfg, edge, edges):
            edges.append(edge)
            continue
        kind = EdgeKind.JUMP if last.opcode == JUMP else EdgeKind.BRANCH_TAKEN
        prev = block.instructions[-2] if len(block.instructions) >= 2 else None
        if prev is None or prev.immediate is None:
            edges.append(edge)
            continue
        target = prev.value
        dest = by_start.get(target)
        if dest is None or dest.instructions[0].opcode != JUMPDEST:
            diagnostics.append(
                f"block {block.id}: jump target {target:#x} at offset {last.offset:#x} is not a JUMPDEST"
            )
            edges.append(edge)
            continue
        edges.append(CfgEdge(block.id, dest.id, kind))
    blocks = [replace(b) for b in cfg.blocks]
    out = Cfg(blocks, edges, cfg.entry, diagnostics)
    _mark_reachable(out)
    return out


def _is_tail_placeholder(cfg: Cfg, edge: CfgEdge, seen: list[CfgEdge]) -> bool:
    already = sum(1 for e in seen if e.source == edge.source and e.kind in (EdgeKind.UNRESOLVED, EdgeKind.BRANCH_TAKEN))
    return cfg.blocks[edge.source].last.opcode == JUMPI and already >= 1


def _mark_reachable(cfg: Cfg) -> None:
    if not cfg.blocks:
        return
    succ: dict[int, list[int]] = {b.id: [] for b in cfg.blocks}
    dynamic_sources = set()
    for e in cfg.edges:
        succ[e.source].append(e.target)
        if e.kind is EdgeKind.UNRESOLVED:
            dynamic_sources.add(e.source)
    seen = {cfg.entry}
    queue = deque([cfg.entry])
    widened = False
    while queue:
        bid = queue.popleft()
        for nxt in succ[bid]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
        if not queue and not widened and seen & dynamic_sources:
            # a dynamic jump may land on any JUMPDEST
            widened = True
            for b in cfg.blocks:
                if b.instructions[0].opcode == JUMPDEST and b.id not in seen:
                    seen.add(b.id)
                    queue.append(b.id)
    for b in cfg.blocks:
        b.reachable = b.id in seen


def cfg_from_bytecode(bytecode: bytes) -> Cfg:
    return build_cfg(disassemble(bytecode))


def dump_json(cfg: Cfg) -> str:
    return json.dumps(cfg.to_json(), indent=2)
