import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natlm.bytecode_cfg import (
    EdgeKind, assemble, build_cfg, disassemble, dump_json, parse_hex, resolve_jump_targets,
)
from natlm.opcodes import JUMPI, OPCODES, TERMINATORS, is_terminator

from conftest import CONTRACTS


def ops(*names):
    return bytes(OPCODES[n] for n in names)


def check_invariants(code: bytes, cfg) -> list[str]:
    """Partition, terminator, JUMPDEST-first, JUMPI degree and edge validity."""
    problems = []
    covered = []
    for b in cfg.blocks:
        covered.extend(range(b.start_offset, b.end_offset))
        for ins in b.instructions[:-1]:
            if is_terminator(ins.opcode):
                problems.append(f"block {b.id}: terminator {ins.name} not last")
        for ins in b.instructions[1:]:
            if ins.opcode == OPCODES["JUMPDEST"]:
                problems.append(f"block {b.id}: JUMPDEST not first")
        out = cfg.out_edges(b.id)
        if b.last.opcode == JUMPI and len(out) != 2:
            problems.append(f"block {b.id}: JUMPI out-degree {len(out)}")
        if b.last.name in ("STOP", "RETURN", "REVERT") and out:
            problems.append(f"block {b.id}: halting block has edges")
    if covered != list(range(len(code))):
        problems.append("blocks do not partition the code")
    ids = {b.id for b in cfg.blocks}
    for e in cfg.edges:
        if e.source not in ids or e.target not in ids:
            problems.append(f"dangling edge {e}")
        if e.kind is EdgeKind.JUMP and cfg.blocks[e.target].instructions[0].opcode != OPCODES["JUMPDEST"]:
            problems.append(f"jump edge {e} not onto a JUMPDEST")
        if e.kind in (EdgeKind.BRANCH_TAKEN, EdgeKind.BRANCH_NOT_TAKEN) and cfg.blocks[e.source].last.opcode != JUMPI:
            problems.append(f"branch edge {e} from non-JUMPI block")
    if assemble(disassemble(code)) != code:
        problems.append("decode round-trip failed")
    return problems


def test_disassemble_push_add():
    out = disassemble(bytes.fromhex("6001600101"))
    assert [(i.name, i.offset, i.immediate) for i in out] == [
        ("PUSH1", 0, b"\x01"), ("PUSH1", 2, b"\x01"), ("ADD", 4, None)]


def test_disassemble_empty():
    assert disassemble(b"") == []


def test_truncated_push_is_zero_padded_and_flagged():
    (ins,) = disassemble(b"\x60")
    assert ins.name == "PUSH1" and ins.immediate == b"\x00" and ins.truncated
    assert assemble([ins]) == b"\x60"


def test_unknown_opcode_decodes_as_invalid():
    (ins,) = disassemble(b"\x0c")
    assert ins.name == "INVALID" and ins.opcode == 0x0C


def test_parse_hex_tolerates_prefix_and_whitespace():
    assert parse_hex(" 0x60 01\n6001 ") == bytes.fromhex("60016001")
    with pytest.raises(ValueError):
        parse_hex("0x6")
    with pytest.raises(ValueError):
        parse_hex("zz")


def test_straight_line_single_block():
    cfg = build_cfg(disassemble(bytes.fromhex("600160020100")))
    assert len(cfg.blocks) == 1 and cfg.edges == []


def test_resolved_jump_to_jumpdest():
    code = ops("PUSH1") + b"\x04" + ops("JUMP", "INVALID", "JUMPDEST", "STOP")
    cfg = build_cfg(disassemble(code))
    reachable = [b for b in cfg.blocks if b.reachable]
    assert len(reachable) == 2
    assert [(e.source, e.target, e.kind) for e in cfg.edges] == [(0, 2, EdgeKind.JUMP)]
    assert not cfg.blocks[1].reachable  # the INVALID filler


def test_jumpi_has_two_out_edges():
    code = ops("PUSH1") + b"\x01" + ops("PUSH1") + b"\x07" + ops("JUMPI", "STOP", "INVALID", "JUMPDEST", "STOP")
    cfg = build_cfg(disassemble(code))
    kinds = sorted(e.kind.value for e in cfg.out_edges(0))
    assert kinds == ["branch-not-taken", "branch-taken"]


def test_computed_jump_stays_unresolved():
    code = ops("CALLDATASIZE", "JUMP", "JUMPDEST", "STOP")
    cfg = build_cfg(disassemble(code))
    assert [(e.source, e.target, e.kind) for e in cfg.out_edges(0)] == [(0, 0, EdgeKind.UNRESOLVED)]
    # a dynamic jump may land on any JUMPDEST, so that block counts as reachable
    assert cfg.blocks[1].reachable


def test_jump_to_non_jumpdest_is_unresolved_with_diagnostic():
    code = ops("PUSH1") + b"\x03" + ops("JUMP", "STOP")
    cfg = build_cfg(disassemble(code))
    assert cfg.out_edges(0)[0].kind is EdgeKind.UNRESOLVED
    assert any("not a JUMPDEST" in d for d in cfg.diagnostics)


def test_resolve_is_separate_step():
    code = ops("PUSH1") + b"\x04" + ops("JUMP", "INVALID", "JUMPDEST", "STOP")
    ins = disassemble(code)
    raw = build_cfg(ins, resolve=False)
    assert raw.edges[0].kind is EdgeKind.UNRESOLVED
    resolved = resolve_jump_targets(raw, ins)
    assert resolved.edges[0].kind is EdgeKind.JUMP
    assert raw.edges[0].kind is EdgeKind.UNRESOLVED  # input untouched


def test_jumpi_at_end_of_code_keeps_degree_two():
    code = ops("PUSH1") + b"\x00" + ops("PUSH1") + b"\x00" + ops("JUMPI")
    cfg = build_cfg(disassemble(code))
    assert len(cfg.out_edges(0)) == 2
    assert cfg.diagnostics


def test_json_and_dot_dump():
    code = ops("PUSH1") + b"\x04" + ops("JUMP", "INVALID", "JUMPDEST", "STOP")
    cfg = build_cfg(disassemble(code))
    data = json.loads(dump_json(cfg))
    assert {"blocks", "edges"} <= set(data)
    assert data["edges"][0] == {"from": 0, "to": 2, "kind": "jump"}
    assert data["blocks"][0]["ops"] == ["PUSH1 0x04", "JUMP"]
    assert cfg.to_dot().startswith("digraph cfg {")


def test_offsets_must_increase():
    ins = disassemble(bytes.fromhex("6001600101"))
    with pytest.raises(ValueError):
        build_cfg([ins[1], ins[0]])


@pytest.mark.parametrize("path", sorted(CONTRACTS.glob("*.json")), ids=lambda p: p.stem)
def test_fixture_bytecode_invariants(path):
    data = json.loads(path.read_text())
    for unit in data["contracts"].values():
        for body in unit.values():
            code = bytes.fromhex(body["evm"]["deployedBytecode"]["object"])
            if code:
                assert check_invariants(code, build_cfg(disassemble(code))) == []


_VALID = list(range(256))  # every byte, including undefined ones


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(_VALID), max_size=120), st.binary(max_size=40))
def test_random_sequences_hold_invariants(opcodes, tail):
    code = bytes(opcodes) + tail
    assert check_invariants(code, build_cfg(disassemble(code))) == []


def test_terminator_set():
    assert {OPCODES[n] for n in ("STOP", "JUMP", "JUMPI", "RETURN", "REVERT", "INVALID", "SELFDESTRUCT")} == TERMINATORS


def test_random_valid_programs_roundtrip():
    rng = np.random.default_rng(7)
    for _ in range(50):
        code = bytes(rng.integers(0, 256, size=int(rng.integers(0, 300)), dtype=np.uint8))
        assert assemble(disassemble(code)) == code
