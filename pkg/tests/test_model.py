import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varlab.errors import InvalidArgument, NumericFailure
from varlab.gradcheck import grad_check
from varlab.init import InitSpec, apply_init
from varlab.model import (
    ARCHS, DECODER_2D_ROLES, REFERENCE_1B, Model, ModelConfig, backward, cross_entropy, forward, layernorm,
    loss_and_grads, param_iter, rmsnorm,
)
from varlab.numerics import Prng


def small(arch="glu_llama", **kw):
    base = dict(arch=arch, d_model=16, n_layers=3, n_heads=2, d_ff=24, vocab_size=32, ctx_len=8)
    base.update(kw)
    return ModelConfig(**base)


def init_model(cfg, seed=0, dtype="float64", sigma=0.2):
    m = Model(cfg, dtype)
    apply_init(m, InitSpec("gaussian", sigma), Prng(seed))
    return m


def test_rmsnorm_examples():
    assert np.allclose(rmsnorm([2, 2], [1, 1], 0.0), [1, 1])
    assert np.allclose(rmsnorm([3, 4], [1, 1], 0.0), [0.848528, 1.131371], atol=1e-6)
    assert np.array_equal(rmsnorm([0, 0], [1, 1], 1e-5), [0, 0])
    with pytest.raises(InvalidArgument):
        rmsnorm([1, 2, 3], [1, 1], 1e-5)


def test_layernorm_examples():
    assert np.allclose(layernorm([1, 3], [1, 1], [0, 0], 0.0), [-1, 1])
    assert np.allclose(layernorm([7, 7, 7], [1, 1, 1], [0, 0, 0], 1e-5), 0)
    assert np.allclose(layernorm([1, 3], [1, 1], [5, 5], 0.0), [4, 6])
    with pytest.raises(InvalidArgument):
        layernorm([1, 2], [1, 1], [0], 1e-5)


vec = st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=32).filter(lambda v: max(map(abs, v)) > 1e-3)


@settings(max_examples=80, deadline=None)
@given(vec, st.floats(1e-3, 1e3))
def test_rmsnorm_scale_invariant(h, k):
    h = np.array(h)
    g = np.ones_like(h)
    assert np.allclose(rmsnorm(k * h, g, 0.0), rmsnorm(h, g, 0.0), rtol=1e-6, atol=1e-9)


@settings(max_examples=80, deadline=None)
@given(vec)
def test_layernorm_standardizes(h):
    h = np.array(h)
    if np.std(h) < 1e-3:
        return
    out = layernorm(h, np.ones_like(h), np.zeros_like(h), 0.0)
    assert abs(out.mean()) < 1e-6 and abs(out.std() - 1) < 1e-6


def test_handles_and_roles():
    glu = Model(small(n_layers=2))
    layer1 = [h.path for h in glu.handles if h.layer == 1]
    assert layer1 == [
        "layers.1.attn.q", "layers.1.attn.k", "layers.1.attn.v", "layers.1.attn.o",
        "layers.1.mlp.gate", "layers.1.mlp.up", "layers.1.mlp.down",
        "layers.1.input_norm.weight", "layers.1.post_attn_norm.weight",
    ]
    gpt = Model(small("gpt2_nonglu", n_layers=2))
    roles = {h.path: h.role for h in gpt.handles if h.layer == 2}
    assert roles["layers.2.mlp.fc_in"] == "mlp_up" and roles["layers.2.mlp.fc_out"] == "mlp_down"
    assert "layers.2.input_norm.bias" in roles and "layers.2.post_attn_norm.bias" in roles
    assert not any(h.role == "mlp_gate" for h in gpt.handles)
    assert all(h.layer == 0 for h in gpt.handles if h.role in ("embedding", "pos_embedding", "lm_head", "final_norm"))
    q = glu.handle("layers.1.mlp.down")
    assert (q.n_out, q.n_in) == (16, 24)


def test_param_iter_counts_and_order():
    m = Model(small(n_layers=16))
    hs = param_iter(m)
    assert len(hs) == 16 * 7
    assert [h.role for h in hs[:7]] == list(DECODER_2D_ROLES)
    assert [h.layer for h in hs] == sorted(h.layer for h in hs)
    assert [h.path for h in param_iter(m, {"embedding"})] == ["embed"]
    assert [h.path for h in hs] == [h.path for h in param_iter(Model(small(n_layers=16)))]


def test_param_count_matches_tensors():
    for arch in ARCHS:
        cfg = small(arch)
        m = Model(cfg)
        assert cfg.param_count() == sum(p.size for p in m.params.values())


def test_reference_config_param_count():
    c = REFERENCE_1B
    assert (c.d_model, c.d_ff, c.n_layers, c.n_heads, c.vocab_size, c.ctx_len) == (2048, 5440, 16, 16, 65536, 2048)
    d, f, v = 2048, 5440, 65536
    per_layer = 4 * d * d + 3 * d * f + 2 * d
    assert c.param_count() == 16 * per_layer + 2 * v * d + d


def test_config_validation():
    with pytest.raises(InvalidArgument):
        ModelConfig(d_model=10, n_heads=3).validate()
    with pytest.raises(InvalidArgument):
        ModelConfig(arch="rnn").validate()


@pytest.mark.parametrize("arch", ARCHS)
def test_forward_shapes(arch):
    cfg = small(arch)
    m = init_model(cfg)
    tok = Prng(1).integers(2 * 5, cfg.vocab_size).reshape(2, 5)
    logits, res = forward(m, tok)
    assert logits.shape == (2, 5, cfg.vocab_size)
    assert len(res) == cfg.n_layers and res[0].shape == (2, 5, cfg.d_model)


@pytest.mark.parametrize("arch", ARCHS)
def test_forward_rejects_bad_tokens(arch):
    m = init_model(small(arch))
    with pytest.raises(InvalidArgument):
        forward(m, np.array([[0, 32]]))
    with pytest.raises(InvalidArgument):
        forward(m, np.zeros((1, 9), dtype=int))


@pytest.mark.parametrize("arch", ARCHS)
def test_zero_branches_pass_residual_through(arch):
    cfg = small(arch)
    m = init_model(cfg)
    for h in param_iter(m):
        m.params[h.path][:] = 0
    tok = np.array([[1, 5, 7, 2]])
    _, res = forward(m, tok)
    stream = m.params["embed"][tok[0]]
    if arch == "gpt2_nonglu":
        stream = stream + m.params["pos_embed"][:4]
    for r in res:
        assert np.array_equal(r[0], stream)


@pytest.mark.parametrize("arch", ARCHS)
def test_causality(arch):
    cfg = small(arch)
    m = init_model(cfg, seed=3)
    tok = Prng(2).integers(8, cfg.vocab_size).reshape(1, 8)
    logits, res = forward(m, tok)
    tok2 = tok.copy()
    tok2[0, 7] = (tok[0, 7] + 1) % cfg.vocab_size
    logits2, res2 = forward(m, tok2)
    assert np.array_equal(logits[0, :7], logits2[0, :7])
    assert not np.array_equal(logits[0, 7], logits2[0, 7])
    for t in range(1, 8):
        tok3 = tok.copy()
        tok3[0, t:] = (tok[0, t:] + 3) % cfg.vocab_size
        _, res3 = forward(m, tok3)
        for a, b in zip(res, res3):
            assert np.array_equal(a[0, :t], b[0, :t])


def test_cross_entropy_examples():
    assert cross_entropy(np.zeros((1, 3, 256)), np.array([[0, 5, 255]])) == pytest.approx(math.log(256), abs=1e-12)
    lg = np.zeros((1, 1, 10))
    lg[0, 0, 4] = 30.0
    assert cross_entropy(lg, np.array([[4]])) < 1e-9
    assert cross_entropy(np.zeros((1, 1, 2)), np.array([[0]])) == pytest.approx(0.693147, abs=1e-6)
    with pytest.raises(NumericFailure):
        cross_entropy(np.full((1, 1, 2), np.nan), np.array([[0]]))


@pytest.mark.parametrize("arch", ARCHS)
def test_gradient_shapes_and_scale(arch):
    cfg = small(arch)
    m = init_model(cfg, seed=4)
    tok = Prng(5).integers(16, cfg.vocab_size).reshape(2, 8)
    tgt = Prng(6).integers(16, cfg.vocab_size).reshape(2, 8)
    loss, g1 = loss_and_grads(m, tok, tgt)
    loss2, g2 = loss_and_grads(m, tok, tgt, loss_scale=2.0)
    assert loss2 == loss
    assert list(g1) == [h.path for h in m.handles]
    for p, g in g1.items():
        assert g.shape == m.params[p].shape
        # scaling by 2 is exact in binary floating point
        assert np.array_equal(g2[p], 2 * g)
    assert backward(m, tok, tgt).keys() == g1.keys()


def test_zero_gradient_for_disconnected_gain():
    # a zero mlp_down makes the post-attention norm gain irrelevant to the loss
    cfg = small()
    m = init_model(cfg, seed=7)
    m.params["layers.2.mlp.down"][:] = 0
    tok = Prng(8).integers(16, cfg.vocab_size).reshape(2, 8)
    _, g = loss_and_grads(m, tok, tok)
    assert np.abs(g["layers.2.post_attn_norm.weight"]).max() < 1e-15
    unused = np.setdiff1d(np.arange(cfg.vocab_size), tok)
    assert np.all(g["embed"][unused] == 0)


@pytest.mark.parametrize("arch", ARCHS)
def test_finite_difference_agreement(arch):
    report = grad_check(arch, seed=1)
    assert report.ok, report.per_role
    assert set(report.per_role) >= set(r for r in DECODER_2D_ROLES if arch == "glu_llama" or r != "mlp_gate")


def test_float32_training_model():
    cfg = small()
    m = init_model(cfg, dtype="float32", sigma=0.02)
    tok = np.zeros((1, 4), dtype=int)
    loss, g = loss_and_grads(m, tok, tok)
    assert all(v.dtype == np.float32 for v in g.values())
    assert np.isfinite(loss)
