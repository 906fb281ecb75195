"""Scan/build settings: defaults < INI file < environment < command line."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .llm.backends import BackendConfig

SEED_ENV = "NATLM_SEED"


@dataclass(frozen=True)
class ScanConfig:
    kb: str = "natlm.kb"
    tau: float = 0.5
    k: int = 5
    w_cos: float = 0.7
    w_dist: float = 0.3
    seed: int = 0
    token_budget: int = 6000
    workers: int = 4
    exclude_self: bool = True
    backend: BackendConfig = field(default_factory=BackendConfig)

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def weights(self) -> tuple[float, float]:
        return self.w_cos, self.w_dist


_SCAN_KEYS = {f.name: f.type for f in fields(ScanConfig) if f.name != "backend"}
_BACKEND_KEYS = {f.name: f.type for f in fields(BackendConfig)}


def _coerce(kind, raw: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config(path: str | None = None, overrides: dict | None = None, env=os.environ) -> ScanConfig:
    """Merge an optional INI file (``[scan]`` and ``[backend]`` sections), env and overrides.

    ``overrides`` keys are ScanConfig or BackendConfig field names; ``None``
    values are ignored so argparse defaults of ``None`` fall through.
    """
    scan: dict = {}
    backend: dict = {}
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(f"config file not found: {path}")
        for key, raw in (parser["scan"].items() if parser.has_section("scan") else []):
            if key not in _SCAN_KEYS:
                raise ValueError(f"{path}: unknown [scan] key {key!r}")
            scan[key] = _coerce(_SCAN_KEYS[key], raw)
        for key, raw in (parser["backend"].items() if parser.has_section("backend") else []):
            if key not in _BACKEND_KEYS:
                raise ValueError(f"{path}: unknown [backend] key {key!r}")
            backend[key] = _coerce(_BACKEND_KEYS[key], raw)
    if env.get(SEED_ENV):
        scan["seed"] = int(env[SEED_ENV])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in _SCAN_KEYS:
            scan[key] = value
        elif key in _BACKEND_KEYS:
            backend[key] = value
        else:
            raise KeyError(f"unknown setting {key!r}")
    cfg = ScanConfig(**scan)
    return replace(cfg, backend=BackendConfig(**backend))
