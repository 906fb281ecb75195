import sys
import time
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
CONTRACTS = FIXTURES / "contracts"
MANIFEST = FIXTURES / "manifest.jsonl"

sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture(scope="session")
def manifest():
    from natlm.oracle import load_manifest

    return load_manifest(MANIFEST)


@pytest.fixture(scope="session")
def corpus():
    from natlm.pipeline import load_corpus

    return load_corpus(MANIFEST, CONTRACTS)


@pytest.fixture(scope="session")
def built_kb(tmp_path_factory, corpus):
    """Knowledge base built once from the fixture corpus: (path, seconds)."""
    from natlm.pipeline import BuildConfig, kb_build

    path = tmp_path_factory.mktemp("kb") / "fixtures.kb"
    start = time.perf_counter()
    kb_build(corpus, BuildConfig(seed=0), path)
    return path, time.perf_counter() - start


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    print(ACCEPTANCE[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
