import math
import threading

import numpy as np
import pytest

from natlm.embedding_backend import HashEmbeddingBackend, make_embedding_backend
from natlm.knowledge_base import KnowledgeBaseError, VectorStore, cosine, euclidean
from natlm.oracle import DefectType

import oracles

TYPES = list(DefectType)


def random_store(n, dim, seed):
    rng = np.random.default_rng(seed)
    store = VectorStore(dim, {"seed": seed})
    for i in range(n):
        store.add(TYPES[i % 4], rng.normal(size=dim), f"snippet {i}", {"i": i})
    return store


def test_cosine_example():
    assert cosine([1, 2, 3], [4, 5, 6]) == pytest.approx(32 / (math.sqrt(14) * math.sqrt(77)), abs=1e-15)
    assert cosine([1, 2, 3], [4, 5, 6]) == pytest.approx(0.9746318461970762, abs=1e-12)


def test_cosine_zero_vector_is_an_error():
    with pytest.raises(ValueError, match="undefined cosine for zero vector"):
        cosine([0, 0], [1, 0])


def test_euclidean_example_and_mismatch():
    assert euclidean([0, 0], [3, 4]) == 5.0
    with pytest.raises(ValueError, match="dimension mismatch"):
        euclidean([1, 2], [1, 2, 3])


def test_self_match_ranks_first():
    store = random_store(20, 16, 0)
    q = store.get(7).vector.copy()
    top = store.retrieve(q, k=3)[0]
    assert top.entry_id == 7
    assert top.cosine == pytest.approx(1.0, abs=1e-12) and top.euclidean == 0.0


def test_k_beyond_size_returns_everything_sorted():
    store = random_store(4, 8, 1)
    hits = store.retrieve(np.ones(8), k=10)
    assert len(hits) == 4
    assert all(a.score >= b.score for a, b in zip(hits, hits[1:]))


def test_ranking_matches_brute_force():
    store = random_store(50, 32, 2)
    q = np.random.default_rng(99).normal(size=32)
    got = [h.entry_id for h in store.retrieve(q, k=5)]
    assert got == oracles.brute_force_ranking(store.matrix.tolist(), q.tolist(), 5)


def test_hit_scores_match_formula():
    store = random_store(10, 8, 3)
    q = np.random.default_rng(4).normal(size=8)
    for h in store.retrieve(q, k=10, weights=(0.5, 0.5)):
        row = store.get(h.entry_id).vector
        c, d = oracles.cosine(row, q), oracles.euclidean(row, q)
        assert h.cosine == pytest.approx(c, abs=1e-12)
        assert h.score == pytest.approx(0.5 * c + 0.5 / (1 + d), abs=1e-12)


def test_ties_break_by_lower_id():
    store = VectorStore(2)
    for _ in range(3):
        store.add(DefectType.PUBLIC_BURN, [1.0, 0.0])
    assert [h.entry_id for h in store.retrieve(np.array([1.0, 1.0]), k=3)] == [0, 1, 2]


def test_raising_cosine_never_lowers_rank():
    # two entries at equal distance from the query, one better aligned
    store = VectorStore(2)
    store.add(DefectType.PUBLIC_BURN, [2.0, 0.0])
    store.add(DefectType.PUBLIC_BURN, [0.0, 2.0])
    q = np.array([1.0, 0.5])
    assert store.retrieve(q, k=1)[0].entry_id == 0


def test_empty_store_and_bad_queries():
    store = VectorStore(4)
    with pytest.raises(KnowledgeBaseError, match="knowledge base empty"):
        store.retrieve(np.ones(4))
    store.add(DefectType.PUBLIC_BURN, np.ones(4))
    with pytest.raises(ValueError, match="zero vector"):
        store.retrieve(np.zeros(4))
    with pytest.raises(ValueError, match="store dim"):
        store.retrieve(np.ones(3))
    with pytest.raises(ValueError):
        store.retrieve(np.ones(4), k=0)


def test_add_rejects_wrong_dim():
    with pytest.raises(ValueError, match="store dim is 4"):
        VectorStore(4).add(DefectType.PUBLIC_BURN, np.ones(5))


def test_round_trip_three_entries(tmp_path):
    store = random_store(3, 6, 5)
    path = tmp_path / "s.kb"
    store.persist(path)
    back = VectorStore.load(path)
    assert back.dim == 6 and back.meta == {"seed": 5}
    for a, b in zip(store.entries, back.entries):
        assert a.id == b.id and a.defect_type is b.defect_type
        assert np.array_equal(a.vector, b.vector)
        assert (a.snippet_source, a.metadata) == (b.snippet_source, b.metadata)
    assert back.to_bytes() == store.to_bytes()


def test_empty_round_trip():
    back = VectorStore.from_bytes(VectorStore(3).to_bytes())
    assert len(back) == 0 and back.dim == 3


def test_corrupted_magic(tmp_path):
    raw = bytearray(random_store(3, 4, 6).to_bytes())
    raw[0:4] = b"XXXX"
    with pytest.raises(KnowledgeBaseError, match="bad magic"):
        VectorStore.from_bytes(bytes(raw))


def test_flipped_byte_fails_checksum():
    raw = bytearray(random_store(3, 4, 6).to_bytes())
    raw[40] ^= 0xFF
    with pytest.raises(KnowledgeBaseError, match="checksum"):
        VectorStore.from_bytes(bytes(raw))


def test_truncated_file():
    raw = random_store(3, 4, 6).to_bytes()
    with pytest.raises(KnowledgeBaseError):
        VectorStore.from_bytes(raw[:30])


def test_missing_file(tmp_path):
    with pytest.raises(KnowledgeBaseError, match="not found"):
        VectorStore.load(tmp_path / "none.kb")


def test_concurrent_reads_and_writes():
    store = random_store(10, 8, 7)
    q = np.ones(8)
    errors = []

    def reader():
        try:
            for _ in range(50):
                assert store.retrieve(q, k=3)
        except Exception as exc:  # noqa: BLE001 - surfaced below
            errors.append(exc)

    def writer():
        for i in range(50):
            store.add(DefectType.UNLIMITED_MINTING, np.full(8, float(i + 1)))

    threads = [threading.Thread(target=reader) for _ in range(4)] + [threading.Thread(target=writer)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == [] and len(store) == 60
    assert [e.id for e in store.entries] == list(range(60))


def test_hash_embedding_is_seeded_and_normalized():
    a = HashEmbeddingBackend(seed=0).embed_text("function burn(uint256 tokenId)")
    b = HashEmbeddingBackend(seed=0).embed_text("function burn(uint256 tokenId)")
    c = HashEmbeddingBackend(seed=1).embed_text("function burn(uint256 tokenId)")
    assert a.shape == (256,) and np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert not np.any(HashEmbeddingBackend().embed_text("{}();"))


def test_similar_text_embeds_closer():
    emb = HashEmbeddingBackend()
    burn = emb.embed_text("function burn(uint256 tokenId) external { _burn(tokenId); }")
    burn2 = emb.embed_text("function destroy(uint256 tokenId) public { _burn(tokenId); }")
    mint = emb.embed_text("function setProxyRegistryAddress(address registry) onlyOwner")
    assert cosine(burn, burn2) > cosine(burn, mint)


def test_embedding_factory():
    assert make_embedding_backend("mock", seed=3).seed == 3
    with pytest.raises(ValueError):
        make_embedding_backend("http")
    with pytest.raises(ValueError):
        make_embedding_backend("other")
