import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natlm.ast_frontend import (
    CLS, SEP, AstParseError, CompilerOutput, extract_facts, linearize_dfs, parse_ast,
    select_contract, split_identifier, summarize_facts, tokenize,
)

from conftest import CONTRACTS, FIXTURES

FACTS = json.loads((FIXTURES / "facts_manifest.json").read_text())


def tiny_ast():
    # children deliberately listed out of source order
    return {
        "nodeType": "SourceUnit", "id": 1, "src": "0:100:0",
        "nodes": [
            {"nodeType": "ContractDefinition", "id": 3, "src": "50:10:0", "name": "B",
             "contractKind": "contract", "nodes": []},
            {"nodeType": "ContractDefinition", "id": 2, "src": "10:20:0", "name": "mintTokens",
             "contractKind": "contract", "nodes": [
                 {"nodeType": "VariableDeclaration", "id": 4, "src": "12:5:0", "name": "max_supply2",
                  "stateVariable": True, "mutability": "mutable", "visibility": "public",
                  "typeDescriptions": {"typeString": "uint256"}},
             ]},
        ],
    }


def test_split_identifier_examples():
    assert split_identifier("mintTokens") == ["mint", "Tokens"]
    assert split_identifier("safe_transfer_from") == ["safe", "transfer", "from"]
    assert split_identifier("ERC721") == ["ERC", "721"]
    assert split_identifier("_owners") == ["owners"]
    assert split_identifier("") == []


def test_empty_sequence_is_cls_sep():
    seq = tokenize([])
    assert seq.tokens == [CLS, SEP] and seq.positions == [0, 1]


def test_parse_orders_children_by_source_position():
    tree = parse_ast(json.dumps(tiny_ast()))
    assert [n.id for n in linearize_dfs(tree)] == [1, 2, 4, 3]
    assert tree.size() == 4


def test_tokens_are_wrapped_and_positions_aligned():
    seq = tokenize(linearize_dfs(parse_ast(tiny_ast())))
    assert seq.tokens[0] == CLS and seq.tokens[-1] == SEP
    assert seq.positions == list(range(len(seq.tokens)))
    assert all(seq.tokens)
    assert seq.tokens[1:5] == ["SourceUnit", "ContractDefinition", "mint", "Tokens"]
    assert "max" in seq.tokens and "supply" in seq.tokens and "2" in seq.tokens


def test_truncation_keeps_wrappers():
    seq = tokenize(linearize_dfs(parse_ast(tiny_ast())), max_tokens=4)
    assert len(seq) == 4 and seq.truncated and seq.tokens[-1] == SEP


def test_missing_node_type():
    with pytest.raises(AstParseError, match="missing nodeType"):
        parse_ast("{}")


def test_error_names_json_path():
    doc = tiny_ast()
    del doc["nodes"][1]["nodes"][0]["id"]
    with pytest.raises(AstParseError, match=r"\$\.nodes\[1\]\.nodes\[0\]: missing id"):
        parse_ast(doc)


def test_duplicate_ids_rejected():
    doc = tiny_ast()
    doc["nodes"][0]["id"] = 2
    with pytest.raises(AstParseError, match="duplicate id"):
        parse_ast(doc)


def test_malformed_json():
    with pytest.raises(AstParseError, match="malformed JSON"):
        parse_ast("{not json")


def test_select_contract_defaults_to_last_concrete():
    tree = parse_ast(tiny_ast())
    assert select_contract(tree).name == "B"
    assert select_contract(tree, "mintTokens").id == 2
    with pytest.raises(KeyError):
        select_contract(tree, "Nope")


def load(fixture):
    out = CompilerOutput.load(CONTRACTS / f"{fixture}.json")
    return extract_facts(out.tree())


@pytest.mark.parametrize("fixture", sorted(FACTS))
def test_facts_match_hand_written_manifest(fixture):
    facts = load(fixture)
    expected = FACTS[fixture]
    own = {v.name: ("constant" if v.constant else "immutable" if v.immutable else "mutable")
           for v in facts.state_vars if not v.inherited}
    assert own == expected["state_vars"]
    assert [f.name for f in facts.functions] == expected["functions"]


def test_inherited_state_vars_are_flagged():
    facts = load("public_burn")
    inherited = {v.name for v in facts.state_vars if v.inherited}
    assert {"_owners", "_balances", "_tokenApprovals", "_operatorApprovals"} <= inherited


def test_call_order_for_reentrant_mint():
    fn = load("reentrancy_mint").function("mint")
    assert [(e.kind, e.name) for e in fn.events] == [("call", "_safeMint"), ("write", "nextId")]
    assert fn.external_calls[0].kind == "safe-transfer"


def test_call_order_for_checks_effects_interactions():
    fn = load("safe_cei_mint").function("mint")
    assert [(e.kind, e.name) for e in fn.events] == [("write", "nextId"), ("call", "_safeMint")]


def test_market_buy_sees_member_call_then_writes():
    fn = load("reentrancy_market").function("buy")
    assert [(e.kind, e.name) for e in fn.events] == [
        ("call", "safeTransferFrom"), ("write", "listings"), ("write", "sales")]
    assert fn.external_calls[0].receiver_type.startswith("contract IERC721")


def test_modifier_guards_are_inlined():
    fn = load("safe_guarded_mint").function("claim")
    assert fn.modifiers == ["nonReentrant"]
    assert any(g.kind == "require" and "_status" in g.names for g in fn.guards)


def test_comparisons_and_spans():
    facts = load("public_burn")
    mint = facts.function("mint")
    assert any(c.operator == "<" and c.right == ["MAX_SUPPLY"] for c in mint.comparisons)
    src = (CONTRACTS / "public_burn.sol").read_bytes()
    start, length = facts.function("burn").span
    assert src[start:start + length].startswith(b"function burn(")


def test_summary_is_stable():
    facts = load("reentrancy_mint")
    text = summarize_facts(facts)
    assert text.splitlines()[0] == "contract ReentrantMintNFT"
    assert "state nextId | type=uint256 | vis=public | mutable" in text
    assert "order=call:_safeMint>write:nextId" in text
    assert summarize_facts(load("reentrancy_mint")) == text


@settings(max_examples=300, deadline=None)
@given(st.from_regex(r"[A-Za-z0-9_]{0,24}", fullmatch=True))
def test_subtokens_concatenate_back_to_identifier(identifier):
    joined = "".join(split_identifier(identifier))
    assert joined.lower() == identifier.replace("_", "").lower()
    assert all(split_identifier(identifier))


def test_dfs_visits_every_node_once():
    tree = CompilerOutput.load(CONTRACTS / "reentrancy_market.json").tree()
    ids = [n.id for n in linearize_dfs(tree)]
    assert len(ids) == tree.size() == len(set(ids))
