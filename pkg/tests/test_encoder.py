import numpy as np
import pytest

from prompt_dqa.encoder import (BOS, EOS, PAD, BackboneParams, ModelConfig, VisionState, attention_maps,
                                embed_image_pair, embed_text, encode_image, encode_text, init_backbone,
                                text_layer_forward, text_layer_forward_prompted, tokenize, vision_layer_forward,
                                vision_layer_forward_prompted, vocabulary)
from prompt_dqa.prompting import init_prompt_bank
from prompt_dqa.tensor import ContractError, Tape, Tensor, finite_diff_gradient


def _with(backbone, **overrides):
    arrays = dict(backbone.arrays)
    arrays.update(overrides)
    return BackboneParams(backbone.config, arrays)


def _relerr(a, n):
    return np.abs(a - n).max() / max(np.abs(a).max(), np.abs(n).max(), 1e-12)


# --------------------------------------------------------------------- tokens
def test_tokenize_good_photo(toy_config):
    words = vocabulary()
    ids = tokenize("Good photo.", toy_config)
    assert ids[:5] == (BOS, words.index("good"), words.index("photo"), words.index("."), EOS)
    assert set(ids[5:]) == {PAD}
    assert len(ids) == toy_config.max_text_len


def test_tokenize_rejects_empty_and_is_deterministic(toy_config):
    with pytest.raises(ContractError):
        tokenize("", toy_config)
    assert tokenize("A hazy photo!", toy_config) == tokenize("A hazy photo!", toy_config)


def test_tokenize_truncates_keeping_eos(toy_config):
    ids = tokenize(" ".join(["photo"] * 40), toy_config)
    assert ids[-1] == EOS and len(ids) == toy_config.max_text_len


# ---------------------------------------------------------------- text branch
def test_embed_text_pad_rows_and_locality(toy_backbone):
    cfg = toy_backbone.config
    pads = [PAD] * cfg.max_text_len
    W = embed_text(pads, toy_backbone).data
    expected = toy_backbone.arrays["text.tok_emb"][PAD] + toy_backbone.arrays["text.pos"]
    np.testing.assert_array_equal(W, expected)
    other = list(pads)
    other[3] = 7
    diff = np.any(embed_text(other, toy_backbone).data != W, axis=1)
    assert diff.tolist() == [i == 3 for i in range(cfg.max_text_len)]
    np.testing.assert_array_equal(embed_text(pads, toy_backbone).data, W)


def test_zero_layer_weights_are_identity(toy_backbone):
    zeros = {k: np.zeros_like(v) for k, v in toy_backbone.arrays.items() if k.startswith("text.1.")}
    P = _with(toy_backbone, **zeros)
    W = embed_text(tokenize("good photo", P.config), P)
    np.testing.assert_array_equal(text_layer_forward(W, P, 1).data, W.data)


def test_text_layer_shape_and_prompt_discard(toy_backbone):
    cfg = toy_backbone.config
    W = embed_text(tokenize("bad photo", cfg), toy_backbone)
    assert text_layer_forward(W, toy_backbone, 1).shape == W.shape
    for m in (1, 3, 6):
        P = Tensor(np.random.default_rng(m).normal(size=(m, cfg.d_model)))
        assert text_layer_forward_prompted(W, P, toy_backbone, 2).shape == W.shape
    empty = Tensor(np.zeros((0, cfg.d_model)))
    np.testing.assert_array_equal(text_layer_forward_prompted(W, empty, toy_backbone, 1).data,
                                  text_layer_forward(W, toy_backbone, 1).data)


def test_uniform_attention_still_sees_prompts():
    cfg = ModelConfig(n_layers=1, d_model=2, n_heads=1, d_mlp=4, prompt_len=1, d_prompt=2,
                      image_side_local=8, image_side_global=8, patch_pixels=4)
    base = init_backbone(cfg, 5)
    # zero query/key weights make every attention row uniform
    P = _with(base, **{"text.1.attn.wq": np.zeros((2, 2)), "text.1.attn.wk": np.zeros((2, 2))})
    W = embed_text(tokenize("good", cfg), P)
    prompts = Tensor([[3.0, -1.0]])
    assert not np.allclose(text_layer_forward(W, P, 1, prompts).data, text_layer_forward(W, P, 1).data)


def test_text_layer_gradient_matches_finite_differences(toy_backbone):
    cfg = toy_backbone.config
    W = Tensor(embed_text(tokenize("good photo", cfg), toy_backbone).data, requires_grad=True)
    prompts = Tensor(np.random.default_rng(2).normal(size=(3, cfg.d_model)), requires_grad=True)
    weights = np.random.default_rng(3).normal(size=W.shape)

    def f():
        return (text_layer_forward(W, toy_backbone, 1, prompts) * weights).sum()

    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    num = finite_diff_gradient(lambda: f().item(), [W, prompts])
    assert _relerr(W.grad, num[0]) < 1e-4
    assert _relerr(prompts.grad, num[1]) < 1e-4


def test_encode_text_unit_norm_and_distinct(toy_backbone):
    bank = init_prompt_bank(toy_backbone.config, 0, "both")
    t_p = encode_text("Good photo.", toy_backbone, bank).data
    t_n = encode_text("Bad photo.", toy_backbone, bank).data
    assert abs(np.linalg.norm(t_p) - 1.0) < 1e-12
    assert not np.allclose(t_p, t_n)
    np.testing.assert_array_equal(encode_text("Good photo.", toy_backbone, bank).data, t_p)


# -------------------------------------------------------------- vision branch
def test_token_counts_for_small_config():
    cfg = ModelConfig(n_layers=1, d_model=8, n_heads=2, d_mlp=8, prompt_len=2, d_prompt=8,
                      image_side_local=8, image_side_global=8, patch_pixels=4)
    assert cfg.n_local == 4 and cfg.n_global == 4
    state = embed_image_pair(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)), init_backbone(cfg, 0))
    assert state.tokens.shape == (9, 8)


def test_black_image_rows_differ_only_by_position(toy_backbone):
    cfg = toy_backbone.config
    state = embed_image_pair(np.zeros((16, 16, 3)), np.zeros((32, 32, 3)), toy_backbone)
    np.testing.assert_allclose(state.E_l.data - toy_backbone.arrays["vision.pos_local"], 0.0, atol=0)
    np.testing.assert_allclose(state.E_g.data - toy_backbone.arrays["vision.pos_global"], 0.0, atol=0)
    assert state.E_l.shape[0] == cfg.n_local and state.E_g.shape[0] == cfg.n_global


def test_streams_are_not_symmetric():
    cfg = ModelConfig(n_layers=1, d_model=8, n_heads=2, d_mlp=8, prompt_len=2, d_prompt=8,
                      image_side_local=8, image_side_global=8, patch_pixels=4)
    P = init_backbone(cfg, 1)
    rng = np.random.default_rng(0)
    a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    s1, s2 = embed_image_pair(a, b, P), embed_image_pair(b, a, P)
    assert not np.allclose(s1.E_l.data, s2.E_g.data)


def test_vision_prompted_shapes_and_attention_row_length(toy_backbone):
    cfg = toy_backbone.config
    rng = np.random.default_rng(4)
    state = embed_image_pair(rng.random((16, 16, 3)), rng.random((32, 32, 3)), toy_backbone)
    M = 3
    prompts = Tensor(rng.normal(size=(M, cfg.d_model)))
    new, probs = vision_layer_forward(state, toy_backbone, 1, prompts, return_attention=True)
    assert new.tokens.shape == state.tokens.shape
    assert probs.shape[-1] == 1 + cfg.n_local + cfg.n_global + M
    empty = Tensor(np.zeros((0, cfg.d_model)))
    np.testing.assert_array_equal(vision_layer_forward_prompted(state, empty, toy_backbone, 1).tokens.data,
                                  vision_layer_forward(state, toy_backbone, 1).tokens.data)


def test_vision_prompt_gradient_matches_finite_differences(toy_backbone):
    cfg = toy_backbone.config
    rng = np.random.default_rng(5)
    state = embed_image_pair(rng.random((16, 16, 3)), rng.random((32, 32, 3)), toy_backbone)
    prompts = Tensor(rng.normal(size=(2, cfg.d_model)), requires_grad=True)
    weights = rng.normal(size=state.tokens.shape)

    def f():
        return (vision_layer_forward(state, toy_backbone, 2, prompts).tokens * weights).sum()

    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    (num,) = finite_diff_gradient(lambda: f().item(), [prompts])
    assert _relerr(prompts.grad, num) < 1e-4


def test_encode_image_unit_norm_and_not_permutation_invariant(toy_backbone):
    rng = np.random.default_rng(6)
    patch, glob = rng.random((16, 16, 3)), rng.random((32, 32, 3))
    bank = init_prompt_bank(toy_backbone.config, 0, "both")
    c = encode_image(patch, glob, toy_backbone, bank).data
    assert abs(np.linalg.norm(c) - 1.0) < 1e-12
    shuffled = patch.copy()
    block = shuffled[:8, :8].reshape(-1, 3)
    shuffled[:8, :8] = block[rng.permutation(len(block))].reshape(8, 8, 3)
    assert not np.allclose(encode_image(shuffled, glob, toy_backbone, bank).data, c)
    np.testing.assert_array_equal(encode_image(patch, glob, toy_backbone, bank).data, c)


def test_batched_encode_matches_single(toy_backbone):
    rng = np.random.default_rng(7)
    patches, globs = rng.random((3, 16, 16, 3)), rng.random((3, 32, 32, 3))
    batch = encode_image(patches, globs, toy_backbone).data
    for i in range(3):
        np.testing.assert_allclose(batch[i], encode_image(patches[i], globs[i], toy_backbone).data, atol=1e-13)


def test_attention_maps(toy_backbone):
    cfg = toy_backbone.config
    rng = np.random.default_rng(8)
    bank = init_prompt_bank(cfg, 0, "both")
    rec = attention_maps(rng.random((16, 16, 3)), rng.random((32, 32, 3)), toy_backbone, bank)
    assert rec.layer == cfg.n_layers
    assert np.abs(rec.per_head.sum(axis=-1) - 1.0).max() < 1e-9
    np.testing.assert_allclose(rec.mean, rec.per_head.mean(axis=0), atol=0)
    assert rec.cls_local.shape == (2, 2) and rec.cls_global.shape == (4, 4)
    assert rec.cls_local.size == cfg.n_local and rec.cls_global.size == cfg.n_global
    assert (rec.cls_local >= 0).all() and (rec.cls_global >= 0).all()
    local_only = attention_maps(rng.random((16, 16, 3)), None, toy_backbone, bank, layer=1)
    assert local_only.cls_global is None


def test_backbone_is_read_only(toy_backbone):
    with pytest.raises(ValueError):
        toy_backbone.arrays["text.proj"][0, 0] = 1.0


def test_fixed_init_scheme_uses_init_std():
    cfg = ModelConfig(init_scheme="fixed", n_layers=1)
    P = init_backbone(cfg, 0)
    assert abs(P.arrays["vision.1.mlp.w1"].std() - 0.02) < 2e-3
    fan = init_backbone(ModelConfig(n_layers=1), 0)
    assert abs(fan.arrays["vision.1.mlp.w1"].std() - 1 / 8) < 0.01


def test_config_rejects_bad_heads():
    with pytest.raises(ContractError):
        ModelConfig(d_model=10, n_heads=3)
