"""Solidity compiler AST ingestion: tree, DFS order, subtokens, contract facts."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

CLS = "[CLS]"
SEP = "[SEP]"
DEFAULT_MAX_TOKENS = 2048


class AstParseError(ValueError):
    pass


@dataclass
class AstNode:
    id: int
    kind: str
    attributes: dict[str, str] = field(default_factory=dict)
    children: list["AstNode"] = field(default_factory=list)
    # key of the parent's JSON object this node came from (e.g. "leftHandSide")
    role: str = ""

    @property
    def name(self) -> str | None:
        return self.attributes.get("name")

    @property
    def span(self) -> tuple[int, int] | None:
        src = self.attributes.get("src")
        if not src:
            return None
        start, length, _ = src.split(":")
        return int(start), int(length)

    def child(self, role: str) -> "AstNode | None":
        for c in self.children:
            if c.role == role:
                return c
        return None

    def children_with(self, role: str) -> list["AstNode"]:
        return [c for c in self.children if c.role == role]

    def walk(self) -> Iterator["AstNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def size(self) -> int:
        return sum(1 for _ in self.walk())


def _scalar(value: Any) -> str | None:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float, str)):
        return str(value)
    return None


def _src_start(obj: dict) -> int:
    try:
        return int(str(obj.get("src", "")).split(":")[0])
    except ValueError:
        return -1


def parse_ast(document: str | bytes | dict) -> AstNode:
    """Build an :class:`AstNode` tree from a compiler ``ast`` object.

    ``document`` may be JSON text or an already-decoded dict. Children are
    ordered by source position. Errors name the JSON path of the bad node.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise AstParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise AstParseError("$: expected a JSON object")
    seen: set[int] = set()
    return _build(document, "$", "", seen)


def _build(obj: dict, path: str, role: str, seen: set[int]) -> AstNode:
    if "nodeType" not in obj:
        raise AstParseError(f"{path}: missing nodeType")
    if "id" not in obj:
        raise AstParseError(f"{path}: missing id")
    node_id = obj["id"]
    if not isinstance(node_id, int):
        raise AstParseError(f"{path}: id is not an integer")
    if node_id in seen:
        raise AstParseError(f"{path}: duplicate id {node_id}")
    seen.add(node_id)

    attrs: dict[str, str] = {}
    pending: list[tuple[int, int, str, str, dict]] = []
    order = 0
    for key, value in obj.items():
        if key in ("nodeType", "id"):
            continue
        if isinstance(value, dict):
            if "nodeType" in value:
                pending.append((_src_start(value), order, key, f"{path}.{key}", value))
                order += 1
            elif key == "typeDescriptions" and value.get("typeString") is not None:
                attrs["typeString"] = str(value["typeString"])
            continue
        if isinstance(value, list):
            if value and all(isinstance(v, dict) for v in value):
                for i, v in enumerate(value):
                    if "nodeType" not in v:
                        # e.g. argumentTypes: plain type records, not nodes
                        break
                    pending.append((_src_start(v), order, key, f"{path}.{key}[{i}]", v))
                    order += 1
            elif all(_scalar(v) is not None for v in value) and value:
                attrs[key] = ",".join(_scalar(v) for v in value)
            continue
        s = _scalar(value)
        if s is not None:
            attrs[key] = s
    pending.sort(key=lambda t: (t[0], t[1]))
    children = [_build(v, p, k, seen) for _, _, k, p, v in pending]
    return AstNode(node_id, str(obj["nodeType"]), attrs, children, role)


def linearize_dfs(tree: AstNode) -> list[AstNode]:
    """Pre-order depth-first sequence of all nodes, children in source order."""
    return list(tree.walk())


_SPLIT_SEPARATORS = re.compile(r"[^0-9A-Za-z]+")
_CAMEL = re.compile(r"(?<=[a-z])(?=[A-Z])|(?<=[A-Za-z])(?=[0-9])|(?<=[0-9])(?=[A-Za-z])")


def split_identifier(identifier: str) -> list[str]:
    """Split on separators, lower-to-upper case changes and letter/digit changes.

    >>> split_identifier("mintTokens")
    ['mint', 'Tokens']
    >>> split_identifier("safe_transfer_from")
    ['safe', 'transfer', 'from']
    """
    parts: list[str] = []
    for chunk in _SPLIT_SEPARATORS.split(identifier):
        if chunk:
            parts.extend(p for p in _CAMEL.split(chunk) if p)
    return parts


@dataclass
class TokenSequence:
    tokens: list[str]
    truncated: bool = False

    @property
    def positions(self) -> list[int]:
        return list(range(len(self.tokens)))

    def __len__(self) -> int:
        return len(self.tokens)


_TOKEN_ATTRS = ("name", "memberName", "value")


def node_tokens(node: AstNode) -> list[str]:
    """Kind tag followed by the subtokens of the node's name and literal values."""
    out = [node.kind]
    for key in _TOKEN_ATTRS:
        text = node.attributes.get(key)
        if text:
            out.extend(split_identifier(text))
    return out


def tokenize(sequence: list[AstNode], max_tokens: int = DEFAULT_MAX_TOKENS) -> TokenSequence:
    if max_tokens < 2:
        raise ValueError("max_tokens must leave room for [CLS] and [SEP]")
    body: list[str] = []
    for node in sequence:
        body.extend(node_tokens(node))
    truncated = len(body) > max_tokens - 2
    if truncated:
        body = body[: max_tokens - 2]
    return TokenSequence([CLS, *body, SEP], truncated)


# --------------------------------------------------------------------------
# contract facts

_LOW_LEVEL = {"call", "delegatecall", "staticcall", "send", "transfer"}
_SAFE_TRANSFER = re.compile(r"^_*safe(mint|transfer)", re.IGNORECASE)
_BUILTINS = {
    "require", "assert", "revert", "keccak256", "sha256", "ripemd160", "ecrecover",
    "addmod", "mulmod", "gasleft", "blockhash", "selfdestruct", "type",
}
_COMPARISONS = {"<", "<=", ">", ">="}
_HANDLED_KINDS = {
    "SourceUnit", "PragmaDirective", "ContractDefinition", "VariableDeclaration",
    "FunctionDefinition", "ModifierDefinition", "EventDefinition", "ErrorDefinition",
    "StructDefinition", "EnumDefinition", "UsingForDirective", "InheritanceSpecifier",
    "ImportDirective", "UserDefinedValueTypeDefinition", "StructuredDocumentation",
}


@dataclass
class StateVar:
    name: str
    type: str
    visibility: str
    is_mutable: bool
    id: int = 0
    constant: bool = False
    immutable: bool = False
    inherited: bool = False


@dataclass
class CallRecord:
    callee: str
    kind: str  # member | low-level | safe-transfer
    position: int
    span: tuple[int, int]
    receiver_type: str = ""


@dataclass
class Event:
    kind: str  # call | write
    name: str
    position: int


@dataclass
class Guard:
    kind: str  # require | assert | if-revert | modifier
    names: list[str]
    position: int


@dataclass
class Comparison:
    operator: str
    left: list[str]
    right: list[str]
    position: int


@dataclass
class FunctionFacts:
    name: str
    kind: str
    visibility: str
    state_mutability: str
    span: tuple[int, int]
    modifiers: list[str] = field(default_factory=list)
    mutators: list[str] = field(default_factory=list)
    external_calls: list[CallRecord] = field(default_factory=list)
    internal_calls: list[str] = field(default_factory=list)
    guards: list[Guard] = field(default_factory=list)
    comparisons: list[Comparison] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)

    @property
    def is_entry_point(self) -> bool:
        return self.visibility in ("public", "external") and self.kind == "function"


@dataclass
class ContractFacts:
    contract: str
    state_vars: list[StateVar]
    functions: list[FunctionFacts]
    diagnostics: Counter = field(default_factory=Counter)

    @property
    def call_order(self) -> dict[str, list[Event]]:
        return {f.name: f.events for f in self.functions}

    def function(self, name: str) -> FunctionFacts | None:
        for f in self.functions:
            if f.name == name:
                return f
        return None

    def state_var(self, name: str) -> StateVar | None:
        for v in self.state_vars:
            if v.name == name:
                return v
        return None

    @property
    def external_call_count(self) -> int:
        return sum(len(f.external_calls) for f in self.functions)

    @property
    def mint_site_count(self) -> int:
        return sum(1 for f in self.functions for c in f.internal_calls + [r.callee for r in f.external_calls]
                   if "mint" in c.lower())


def contract_definitions(tree: AstNode) -> list[AstNode]:
    return [n for n in tree.children if n.kind == "ContractDefinition"]


def select_contract(tree: AstNode, name: str | None = None) -> AstNode:
    """Pick a contract by name, or the last concrete contract in the unit."""
    contracts = contract_definitions(tree)
    if name is not None:
        for c in contracts:
            if c.name == name:
                return c
        raise KeyError(f"contract {name!r} not found in source unit")
    concrete = [c for c in contracts if c.attributes.get("contractKind") == "contract"]
    if not concrete:
        raise KeyError("source unit defines no contract")
    return concrete[-1]


def _names(node: AstNode) -> list[str]:
    out = []
    for n in node.walk():
        if n.kind == "Identifier" and n.name:
            out.append(n.name)
        elif n.kind == "MemberAccess" and n.attributes.get("memberName"):
            out.append(n.attributes["memberName"])
    return out


def _base_identifier(node: AstNode | None) -> AstNode | None:
    while node is not None:
        if node.kind == "Identifier":
            return node
        if node.kind == "IndexAccess":
            node = node.child("baseExpression")
        elif node.kind == "MemberAccess":
            node = node.child("expression")
        elif node.kind == "TupleExpression":
            comps = node.children_with("components")
            node = comps[0] if len(comps) == 1 else None
        else:
            return None
    return None


def _end(node: AstNode) -> int:
    span = node.span or (0, 0)
    return span[0] + span[1]


def _unwrap_callee(expr: AstNode | None) -> AstNode | None:
    while expr is not None and expr.kind == "FunctionCallOptions":
        expr = expr.child("expression")
    return expr


def classify_call(call: AstNode) -> tuple[str, str | None, str]:
    """Return (callee name, external kind or None, receiver type) for a FunctionCall."""
    expr = _unwrap_callee(call.child("expression"))
    if expr is None:
        return "", None, ""
    if expr.kind == "Identifier":
        name = expr.name or ""
        return name, ("safe-transfer" if _SAFE_TRANSFER.match(name) else None), ""
    if expr.kind == "MemberAccess":
        member = expr.attributes.get("memberName", "")
        receiver = expr.child("expression")
        rtype = receiver.attributes.get("typeString", "") if receiver else ""
        is_this = receiver is not None and receiver.kind == "Identifier" and receiver.name in ("this", "super")
        if rtype.startswith("address") and member in _LOW_LEVEL:
            return member, "low-level", rtype
        if rtype.startswith("contract ") and not rtype.startswith("contract super") and not is_this:
            kind = "safe-transfer" if _SAFE_TRANSFER.match(member) else "member"
            return member, kind, rtype
        if _SAFE_TRANSFER.match(member) and not is_this and not rtype.startswith("type("):
            return member, "safe-transfer", rtype
        return member, None, rtype
    return "", None, ""


def _condition_guard(node: AstNode) -> tuple[AstNode, str] | None:
    if node.kind == "FunctionCall":
        expr = node.child("expression")
        if expr is not None and expr.kind == "Identifier" and expr.name in ("require", "assert"):
            args = node.children_with("arguments")
            if args:
                return args[0], expr.name
    if node.kind == "IfStatement":
        body = node.child("trueBody")
        if body is not None and any(
            n.kind == "RevertStatement"
            or (n.kind == "FunctionCall" and (c := n.child("expression")) is not None and c.name == "revert")
            for n in body.walk()
        ):
            cond = node.child("condition")
            if cond is not None:
                return cond, "if-revert"
    return None


def _scan_body(fn: FunctionFacts, body: AstNode, state_ids: dict[int, str]) -> None:
    for node in body.walk():
        if node.kind == "FunctionCall" and node.attributes.get("kind") == "functionCall":
            name, ext, rtype = classify_call(node)
            if ext is not None:
                fn.external_calls.append(CallRecord(name, ext, _end(node), node.span or (0, 0), rtype))
                fn.events.append(Event("call", name, _end(node)))
            elif name and name not in _BUILTINS:
                expr = _unwrap_callee(node.child("expression"))
                if expr is not None and expr.kind == "Identifier":
                    fn.internal_calls.append(name)
        elif node.kind == "Assignment":
            _record_write(fn, node.child("leftHandSide"), node, state_ids)
        elif node.kind == "UnaryOperation" and node.attributes.get("operator") in ("++", "--", "delete"):
            _record_write(fn, node.child("subExpression"), node, state_ids)
        elif node.kind == "BinaryOperation" and node.attributes.get("operator") in _COMPARISONS:
            left, right = node.child("leftExpression"), node.child("rightExpression")
            fn.comparisons.append(Comparison(
                node.attributes["operator"],
                _names(left) if left else [],
                _names(right) if right else [],
                (node.span or (0, 0))[0],
            ))
        guard = _condition_guard(node)
        if guard is not None:
            cond, kind = guard
            fn.guards.append(Guard(kind, _names(cond), (node.span or (0, 0))[0]))


def _record_write(fn: FunctionFacts, target: AstNode | None, node: AstNode, state_ids: dict[int, str]) -> None:
    targets = [target]
    if target is not None and target.kind == "TupleExpression":
        targets = target.children_with("components")
    for t in targets:
        base = _base_identifier(t)
        if base is None:
            continue
        ref = base.attributes.get("referencedDeclaration")
        if ref is not None and int(ref) in state_ids:
            name = state_ids[int(ref)]
            fn.events.append(Event("write", name, _end(node)))
            if name not in fn.mutators:
                fn.mutators.append(name)


def extract_facts(tree: AstNode, contract: str | None = None) -> ContractFacts:
    """Collect state variables, functions, calls and write order for one contract.

    Inherited state variables are included when their defining contract is in
    the same source unit. Modifier bodies defined in the unit contribute their
    guards and comparisons to the functions that use them.
    """
    target = select_contract(tree, contract)
    by_id = {c.id: c for c in contract_definitions(tree)}
    lineage = [int(x) for x in target.attributes.get("linearizedBaseContracts", str(target.id)).split(",") if x]
    diagnostics: Counter = Counter()

    state_vars: list[StateVar] = []
    state_ids: dict[int, str] = {}
    modifiers: dict[int, AstNode] = {}
    for cid in reversed(lineage):
        cdef = by_id.get(cid)
        if cdef is None:
            diagnostics["missing base contract"] += 1
            continue
        for member in cdef.children:
            if member.kind == "VariableDeclaration" and member.attributes.get("stateVariable") == "true":
                mut = member.attributes.get("mutability", "mutable")
                sv = StateVar(
                    name=member.name or "",
                    type=member.attributes.get("typeString", ""),
                    visibility=member.attributes.get("visibility", "internal"),
                    is_mutable=mut == "mutable",
                    id=member.id,
                    constant=mut == "constant",
                    immutable=mut == "immutable",
                    inherited=cid != target.id,
                )
                state_vars.append(sv)
                state_ids[member.id] = sv.name
            elif member.kind == "ModifierDefinition":
                modifiers[member.id] = member

    functions: list[FunctionFacts] = []
    for member in target.children:
        if member.kind not in _HANDLED_KINDS:
            diagnostics[member.kind] += 1
            continue
        if member.kind != "FunctionDefinition":
            continue
        kind = member.attributes.get("kind", "function")
        fn = FunctionFacts(
            name=member.name or kind,
            kind=kind,
            visibility=member.attributes.get("visibility", "public"),
            state_mutability=member.attributes.get("stateMutability", "nonpayable"),
            span=member.span or (0, 0),
        )
        for inv in member.children_with("modifiers"):
            mname_node = inv.child("modifierName")
            mname = mname_node.name if mname_node is not None else None
            if not mname:
                continue
            fn.modifiers.append(mname)
            fn.guards.append(Guard("modifier", [mname], (inv.span or (0, 0))[0]))
            ref = mname_node.attributes.get("referencedDeclaration")
            mdef = modifiers.get(int(ref)) if ref is not None else None
            mbody = mdef.child("body") if mdef is not None else None
            if mbody is not None:
                scratch = FunctionFacts(fn.name, kind, fn.visibility, fn.state_mutability, fn.span)
                _scan_body(scratch, mbody, state_ids)
                fn.guards.extend(scratch.guards)
                fn.comparisons.extend(scratch.comparisons)
        body = member.child("body")
        if body is not None:
            _scan_body(fn, body, state_ids)
        fn.events.sort(key=lambda e: e.position)
        fn.external_calls.sort(key=lambda c: c.position)
        functions.append(fn)
    return ContractFacts(target.name or "", state_vars, functions, diagnostics)


def summarize_facts(facts: ContractFacts) -> str:
    """One line per state variable and function, stable for prompts and tests."""
    lines = [f"contract {facts.contract}"]
    for v in facts.state_vars:
        flags = "constant" if v.constant else "immutable" if v.immutable else "mutable"
        lines.append(f"state {v.name} | type={v.type} | vis={v.visibility} | {flags}")
    for f in facts.functions:
        order = ">".join(f"{e.kind}:{e.name}" for e in f.events) or "-"
        guards = ";".join(f"{g.kind}({','.join(g.names)})" for g in f.guards) or "-"
        comps = ";".join(f"{'+'.join(c.left) or '?'}{c.operator}{'+'.join(c.right) or '?'}" for c in f.comparisons) or "-"
        calls = ",".join(dict.fromkeys(f.internal_calls)) or "-"
        lines.append(
            f"fn {f.name} | kind={f.kind} | vis={f.visibility} | mut={f.state_mutability} | "
            f"mods={','.join(f.modifiers) or '-'} | order={order} | guards={guards} | "
            f"compares={comps} | calls={calls} | writes={','.join(f.mutators) or '-'}"
        )
    return "\n".join(lines)


@dataclass
class CompilerOutput:
    """The parts of a standard-JSON compiler output this package uses."""

    path: Path | None
    asts: dict[str, dict]
    bytecode: dict[tuple[str, str], str]

    @classmethod
    def load(cls, path: str | Path) -> "CompilerOutput":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise AstParseError(f"{path}: malformed JSON: {exc}") from exc
        return cls.from_dict(data, path)

    @classmethod
    def from_dict(cls, data: dict, path: Path | None = None) -> "CompilerOutput":
        if not isinstance(data, dict) or "sources" not in data:
            raise AstParseError("$: missing sources")
        asts = {}
        for unit, entry in data["sources"].items():
            if "ast" not in entry:
                raise AstParseError(f"$.sources.{unit}: missing ast")
            asts[unit] = entry["ast"]
        bytecode = {}
        for unit, contracts in data.get("contracts", {}).items():
            for name, body in contracts.items():
                code = body.get("evm", {}).get("deployedBytecode", {}).get("object")
                if code is not None:
                    bytecode[(unit, name)] = code
        return cls(path, asts, bytecode)

    def unit_for(self, contract: str | None) -> str:
        if contract is not None:
            for (unit, name) in self.bytecode:
                if name == contract:
                    return unit
            for unit, ast in self.asts.items():
                if any(n.get("nodeType") == "ContractDefinition" and n.get("name") == contract
                       for n in ast.get("nodes", [])):
                    return unit
            raise KeyError(f"contract {contract!r} not found in compiler output")
        return next(iter(self.asts))

    def tree(self, contract: str | None = None) -> AstNode:
        return parse_ast(self.asts[self.unit_for(contract)])

    def deployed_bytecode(self, unit: str, contract: str) -> str | None:
        return self.bytecode.get((unit, contract))

    def source_path(self, unit: str) -> Path | None:
        if self.path is None:
            return None
        ast = self.asts[unit]
        rel = ast.get("absolutePath", unit)
        candidate = self.path.parent / rel
        return candidate if candidate.exists() else None
