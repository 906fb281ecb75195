import numpy as np
import pytest

from natlm.config import load_config
from natlm.knowledge_base import VectorStore
from natlm.oracle import DefectType
from natlm.pipeline import (
    BuildConfig, NatlmModel, PipelineError, Scanner, kb_build, load_contract, model_path, scan_many,
)

from conftest import CONTRACTS

ONE_EACH = ("reentrancy_mint", "public_burn", "mutable_registry", "unlimited_paid")
FAST = dict(cnn_epochs=1, gcn_epochs=1, fusion_epochs=3)


@pytest.fixture(scope="module")
def four(corpus):
    return [i for i in corpus if i.fixture in ONE_EACH]


def test_one_entry_per_defect_type(four, tmp_path):
    store = kb_build(four, BuildConfig(seed=0, **FAST), tmp_path / "four.kb")
    assert len(store) == 4
    assert sorted(e.defect_type.value for e in store.entries) == sorted(t.value for t in DefectType)
    assert model_path(tmp_path / "four.kb").exists()


def test_same_seed_rebuild_is_bit_identical(four, tmp_path):
    a, b = tmp_path / "a.kb", tmp_path / "b.kb"
    kb_build(four, BuildConfig(seed=5, **FAST), a)
    kb_build(four, BuildConfig(seed=5, **FAST), b)
    assert a.read_bytes() == b.read_bytes()
    assert model_path(a).read_bytes() == model_path(b).read_bytes()


def test_no_labeled_entries(corpus, tmp_path):
    clean = [i for i in corpus if i.fixture.startswith("safe_")]
    with pytest.raises(PipelineError, match="no labeled entries"):
        kb_build(clean, BuildConfig(seed=0, **FAST), tmp_path / "x.kb")
    with pytest.raises(PipelineError, match="no labeled entries"):
        kb_build([], BuildConfig(seed=0, **FAST), tmp_path / "y.kb")


def test_model_checkpoint_round_trip(built_kb):
    path, _ = built_kb
    a = NatlmModel.load(model_path(path))
    b = NatlmModel.load(model_path(path))
    item = load_contract(CONTRACTS / "public_burn.json")
    assert np.array_equal(a.query_vector(item), b.query_vector(item))
    assert a.query_vector(item).shape == (VectorStore.load(path).dim,)


def test_self_exclusion(built_kb):
    path, _ = built_kb
    item = load_contract(CONTRACTS / "public_burn.json")
    for exclude in (True, False):
        scanner = Scanner.open(load_config(overrides={"kb": str(path), "exclude_self": exclude}, env={}))
        retrieved = {scanner.store.get(h["entry_id"]).metadata["source_sha"]
                     for h in scanner.scan(item).meta["retrieved"]}
        assert (item.source_sha in retrieved) is not exclude


def test_scan_many_keeps_input_order(built_kb):
    path, _ = built_kb
    names = ["safe_staking", "public_burn", "reentrancy_mint", "nope"]
    cfg = load_config(overrides={"kb": str(path), "workers": 3}, env={})
    reports = scan_many([(str(CONTRACTS / f"{n}.json"), None) for n in names], cfg)
    assert [r.meta.get("fixture") for r in reports[:3]] == names[:3]
    assert reports[3].meta["status"] == "analysis unavailable" and reports[3].exit_code == 2


def test_bytecode_override_changes_cfg():
    base = load_contract(CONTRACTS / "public_burn.json")
    patched = load_contract(CONTRACTS / "public_burn.json", bytecode_hex="0x6001600101")
    assert len(patched.cfg.blocks) == 1 and len(base.cfg.blocks) > 1
