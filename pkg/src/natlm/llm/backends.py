"""LLM backends: a deterministic offline mock and a JSON-over-HTTP client.

Every backend implements ``complete(prompt, temperature, samples, seed)``
and returns ``samples`` candidate texts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from typing import Protocol

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    backend: str = "mock"
    temperature: float = 0.7
    samples: int = 3
    timeout: float = 60.0
    api_key_env: str = "NATLM_API_KEY"
    base_url: str = ""
    retries: int = 3
    backoff: float = 1.0
    script: str = ""  # path to a scripted-response JSON file for the mock

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.backend not in ("mock", "http"):
            raise ValueError(f"unknown backend {self.backend!r}")


class LlmBackend(Protocol):
    name: str

    def complete(self, prompt: str, temperature: float, samples: int, seed: int) -> list[str]: ...


def format_defect_block(items: list[tuple[str, float, str, str]]) -> str:
    """Render (type, confidence, functions, rationale) rows in the reply format."""
    lines = ["BEGIN_DEFECTS"]
    for name, conf, functions, rationale in items:
        lines.append(f"{name}: {conf:.4f} | fn={functions or '-'} | {rationale}")
    lines.append("END_DEFECTS")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# mock


_FN_LINE = re.compile(r"^fn (?P<name>\S+) \| (?P<body>.*)$")
_STATE_LINE = re.compile(r"^state (?P<name>\S+) \| type=(?P<type>[^|]*) \| vis=\S+ \| (?P<flag>\S+)$")
_RETRIEVED = re.compile(r"^retrieved: (?P<type>\w+) \| score=(?P<score>[0-9.]+)")
_PRIOR = re.compile(r"^prior: (?P<type>\w+)=(?P<p>[0-9.]+)")
_CONTRACT = re.compile(r"^contract (\S+)$", re.MULTILINE)

_GUARD_WORDS = re.compile(r"nonreentrant|lock", re.IGNORECASE)
_AUTH_WORDS = re.compile(r"owner|approv|only|auth|admin|role", re.IGNORECASE)
_CAP_WORDS = re.compile(r"max|cap|limit", re.IGNORECASE)
_PROXY_WORDS = re.compile(r"proxy|registry", re.IGNORECASE)


def _fields(body: str) -> dict[str, str]:
    out = {}
    for part in body.split(" | "):
        key, _, value = part.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_evidence(prompt: str) -> dict[str, tuple[float, list[str], str]]:
    """Score each defect class from the fact lines of a prompt.

    Returns ``{type: (evidence in [0, 1], functions, rationale)}`` for types
    with any evidence. This is how the mock "reads" a contract.
    """
    fns, proxies = [], set()
    for line in prompt.splitlines():
        m = _STATE_LINE.match(line)
        if m and m["flag"] == "mutable" and _PROXY_WORDS.search(m["name"]) and (
                m["type"].startswith("address") or m["type"].startswith("contract")):
            proxies.add(m["name"])
        m = _FN_LINE.match(line)
        if m:
            fns.append((m["name"], _fields(m["body"])))
    found: dict[str, list] = {}

    def note(kind, score, fn, why):
        cur = found.setdefault(kind, [0.0, [], why])
        if score > cur[0]:
            cur[0], cur[2] = score, why
        if fn not in cur[1]:
            cur[1].append(fn)

    for name, f in fns:
        entry = f.get("vis") in ("public", "external") and f.get("kind") == "function"
        mutating = f.get("mut") not in ("view", "pure")
        order = [] if f.get("order", "-") == "-" else f["order"].split(">")
        reach = " ".join([name, f.get("calls", ""), f.get("order", "")]).lower()
        if mutating and not _GUARD_WORDS.search(f.get("mods", "")):
            seen_call = False
            for ev in order:
                if ev.startswith("call:"):
                    seen_call = True
                elif seen_call and ev.startswith("write:"):
                    note("Erc721Reentrancy", 1.0, name,
                         f"{name} writes {ev[6:]} after an external call that can re-enter through a receiver hook")
                    break
        if entry and "burn" in reach:
            auth = _AUTH_WORDS.search(f.get("guards", "") + " " + f.get("mods", ""))
            if not auth:
                note("PublicBurn", 1.0, name, f"{name} burns tokens without checking that the caller owns or is approved for them")
        if entry and "mint" in reach and not _CAP_WORDS.search(f.get("compares", "")):
            own_calls = [c for c in f.get("calls", "").split(",") if c and c != "-"]
            capped = any(_CAP_WORDS.search(dict(fns).get(c, {}).get("compares", "")) for c in own_calls)
            if not capped:
                note("UnlimitedMinting", 1.0, name, f"{name} mints without comparing supply to a maximum")
        if f.get("kind") != "constructor":
            hit = [w for w in f.get("writes", "").split(",") if w in proxies]
            if hit:
                note("RiskyMutableProxy", 1.0, name, f"{name} can replace the proxy registry {hit[0]} after deployment")
    return {k: (v[0], v[1], v[2]) for k, v in found.items()}


def _jitter(*parts) -> float:
    """Deterministic value in [-1, 1] from the given parts."""
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2 ** 63 - 1.0


@dataclass
class MockBackend:
    """Offline, deterministic stand-in for the remote model.

    With a ``script`` (contract name -> reply text, or list of replies per
    sample, ``"*"`` as fallback) replies come from the script. Otherwise the
    mock reads the fact, ``retrieved:`` and ``prior:`` lines of the prompt
    and answers ``0.2 + 0.55 * evidence + 0.25 * prior`` per class, with a
    small seeded perturbation scaled by temperature. Only classes with
    evidence or a retrieved hit are mentioned.
    """

    script: dict[str, object] = field(default_factory=dict)
    name: str = "mock"

    @classmethod
    def from_file(cls, path) -> "MockBackend":
        with open(path) as fh:
            return cls(json.load(fh))

    def complete(self, prompt: str, temperature: float, samples: int, seed: int) -> list[str]:
        m = _CONTRACT.search(prompt)
        contract = m.group(1) if m else ""
        scripted = self.script.get(contract, self.script.get("*"))
        if scripted is not None:
            replies = scripted if isinstance(scripted, list) else [scripted]
            return [replies[i % len(replies)] for i in range(samples)]
        evidence = read_evidence(prompt)
        retrieved, priors = set(), {}
        for line in prompt.splitlines():
            r = _RETRIEVED.match(line)
            if r:
                retrieved.add(r["type"])
            p = _PRIOR.match(line)
            if p:
                priors[p["type"]] = float(p["p"])
        kinds = sorted(set(evidence) | retrieved)
        out = []
        for i in range(samples):
            rows = []
            for kind in kinds:
                ev, fns, why = evidence.get(kind, (0.0, [], "similar to retrieved defects but no supporting facts"))
                conf = 0.2 + 0.55 * ev + 0.25 * priors.get(kind, 0.0)
                conf += 0.05 * temperature * _jitter(seed, contract, kind, i)
                rows.append((kind, min(1.0, max(0.0, conf)), ",".join(fns), why))
            out.append(format_defect_block(rows))
        return out


# ---------------------------------------------------------------------------
# http


@dataclass
class HttpBackend:
    """POST ``{prompt, temperature, candidate_count}`` to ``base_url``.

    Expects ``{"candidates": ["...", ...]}`` back. The bearer token is read
    from the environment variable named by ``api_key_env``.
    """

    base_url: str
    api_key_env: str = "NATLM_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0
    name: str = "http"

    def complete(self, prompt: str, temperature: float, samples: int, seed: int) -> list[str]:
        import httpx

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {"prompt": prompt, "temperature": temperature, "candidate_count": samples}
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = httpx.post(self.base_url, json=payload, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                candidates = resp.json()["candidates"]
                if not isinstance(candidates, list) or not all(isinstance(c, str) for c in candidates):
                    raise ValueError("candidates must be a list of strings")
                return candidates
            except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
                last = exc
                log.warning("backend attempt %d/%d failed: %s", attempt + 1, self.retries, exc)
                if attempt + 1 < self.retries and self.backoff > 0:
                    time.sleep(self.backoff * 2 ** attempt)
        raise BackendError(f"backend failed after {self.retries} attempts: {last}")


def make_backend(config: BackendConfig) -> LlmBackend:
    if config.backend == "mock":
        return MockBackend.from_file(config.script) if config.script else MockBackend()
    if not config.base_url:
        raise ValueError("http backend needs a base_url")
    return HttpBackend(config.base_url, config.api_key_env, config.timeout, config.retries, config.backoff)
