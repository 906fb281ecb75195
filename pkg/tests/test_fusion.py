import numpy as np
import pytest

from natlm.fusion import (
    AlignmentParams, FusionParams, align_and_combine, fuse, fuse_backward, fuse_batch, train_fusion,
)

import oracles


def vectors(seed=0, ast=256, cfg=128):
    rng = np.random.default_rng(seed)
    return rng.normal(size=ast), rng.normal(size=cfg)


def with_biases(p, seed=1):
    rng = np.random.default_rng(seed)
    p.b_ast[:] = rng.normal(size=p.b_ast.shape)
    p.b_cfg[:] = rng.normal(size=p.b_cfg.shape)
    return p


def test_alpha_one_is_ast_projection_exactly():
    p = with_biases(FusionParams.init(0)).with_alpha(1.0)
    a, c = vectors()
    assert np.array_equal(fuse(a, c, p), p.W_ast @ a + p.b_ast)


def test_alpha_zero_is_cfg_projection_exactly():
    p = with_biases(FusionParams.init(0)).with_alpha(0.0)
    a, c = vectors()
    assert np.array_equal(fuse(a, c, p), p.W_cfg @ c + p.b_cfg)


def test_half_alpha_matches_scalar_reference():
    p = with_biases(FusionParams.init(2)).with_alpha(0.5)
    assert p.alpha == 0.5
    a, c = vectors(2)
    pa = [x + b for x, b in zip(oracles.matvec(p.W_ast, list(a)), p.b_ast)]
    pc = [x + b for x, b in zip(oracles.matvec(p.W_cfg, list(c)), p.b_cfg)]
    ref = [0.5 * x + 0.5 * y for x, y in zip(pa, pc)]
    assert np.allclose(fuse(a, c, p), ref, atol=1e-12)


def test_fusion_is_linear_in_inputs_for_fixed_alpha():
    p = FusionParams.init(3).with_alpha(0.3)  # zero biases
    a1, c1 = vectors(4)
    a2, c2 = vectors(5)
    lhs = fuse(2.0 * a1 + a2, 2.0 * c1 + c2, p)
    assert np.allclose(lhs, 2.0 * fuse(a1, c1, p) + fuse(a2, c2, p), atol=1e-10)


def test_dimension_mismatch_names_operand():
    p = FusionParams.init(0)
    with pytest.raises(ValueError, match="x_cfg"):
        fuse(np.zeros(256), np.zeros(64), p)
    with pytest.raises(ValueError, match="x_ast"):
        fuse(np.zeros(10), np.zeros(128), p)


def test_alpha_out_of_range():
    with pytest.raises(ValueError):
        FusionParams.init(0).with_alpha(1.5)


def test_fusion_gradients():
    rng = np.random.default_rng(6)
    p = with_biases(FusionParams.init(6, ast_dim=5, cfg_dim=4, out_dim=3))
    p.alpha_logit[:] = 0.4
    X_ast, X_cfg = rng.normal(size=(3, 5)), rng.normal(size=(3, 4))
    dout = rng.normal(size=(3, 3))

    def f():
        return float(np.sum(fuse_batch(X_ast, X_cfg, p)[0] * dout))

    _, cache = fuse_batch(X_ast, X_cfg, p)
    grads = fuse_backward(dout, cache, p)
    for name, arr in p.tensors().items():
        assert oracles.rel_error(grads[name], oracles.numeric_grad(f, arr)) <= 1e-3, name
    assert oracles.rel_error(grads["x_ast"], oracles.numeric_grad(f, X_ast)) <= 1e-3
    assert oracles.rel_error(grads["x_cfg"], oracles.numeric_grad(f, X_cfg)) <= 1e-3


def synthetic(informative: str, n=120, seed=0):
    """Labels depend on one modality only; the other is pure noise."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    a, c = rng.normal(size=(n, 6)), rng.normal(size=(n, 6))
    signal = a if informative == "ast" else c
    signal[:, 0] += np.where(y == 1, 3.0, -3.0)
    return [(a[i], c[i], int(y[i])) for i in range(n)]


@pytest.mark.parametrize("informative,above", [("ast", True), ("cfg", False)])
def test_gate_moves_toward_informative_modality(informative, above):
    p = FusionParams.init(0, ast_dim=6, cfg_dim=6, out_dim=4)
    p, _ = train_fusion(synthetic(informative), p, classes=2, epochs=40, lr=5e-2, batch_size=16)
    assert (p.alpha > 0.5) is above


def test_fusion_loss_decreases_over_five_epochs():
    p = FusionParams.init(1, ast_dim=6, cfg_dim=6, out_dim=4)
    _, head = train_fusion(synthetic("ast", seed=1), p, classes=2, epochs=5, lr=1e-2, batch_size=16)
    assert all(b < a for a, b in zip(head.history, head.history[1:]))


def test_alignment_alpha_one_ignores_embedding():
    p = AlignmentParams.init(0).with_alpha2(1.0)
    x = np.random.default_rng(0).normal(size=128)
    e1, e2 = np.zeros(256), np.random.default_rng(1).normal(size=256)
    assert np.array_equal(align_and_combine(x, e1, p), align_and_combine(x, e2, p))


def test_alignment_zero_params_give_zero():
    p = AlignmentParams.init(0)
    for arr in (p.W_comb, p.b_comb, p.W_emb, p.b_emb):
        arr[:] = 0.0
    out = align_and_combine(np.ones(128), np.ones(256), p)
    assert np.array_equal(out, np.zeros(128))


def test_alignment_matches_scalar_reference():
    p = AlignmentParams.init(3, combined_dim=4, embedding_dim=5, out_dim=3)
    p.alpha2_logit[:] = -0.7
    rng = np.random.default_rng(3)
    p.b_comb[:], p.b_emb[:] = rng.normal(size=3), rng.normal(size=3)
    x, e = rng.normal(size=4), rng.normal(size=5)
    a2 = 1.0 / (1.0 + np.exp(0.7))
    lc = [u + v for u, v in zip(oracles.matvec(p.W_comb, list(x)), p.b_comb)]
    le = [u + v for u, v in zip(oracles.matvec(p.W_emb, list(e)), p.b_emb)]
    ref = [a2 * u + (1 - a2) * v for u, v in zip(lc, le)]
    assert np.allclose(align_and_combine(x, e, p), ref, atol=1e-12)
