import numpy as np
import pytest

from satmamba.model import (
    VIT_BASE,
    VIT_LARGE,
    ModelConfig,
    count_params,
    desk_config,
    flops_estimate,
    init_model,
    satmamba_base,
    vit_block_params,
    vit_reference_params,
)


def test_count_matches_live_parameters():
    for cfg in (desk_config(), desk_config(directions=("row-fwd",)),
                ModelConfig(enc_dim=32, enc_depth=1, dec_dim=16, dec_depth=1,
                            state_dim=4, head_dim=16, patch_size=16)):
        live = sum(t.size for _, t in init_model(cfg, seed=0).named_parameters())
        assert count_params(cfg)["total"] == live


def test_count_hand_enumerated_tiny_config():
    """Every array of a depth-1 single-direction model, enumerated by hand."""
    cfg = ModelConfig(enc_dim=8, enc_depth=1, dec_dim=8, dec_depth=1,
                      state_dim=4, head_dim=8, patch_size=16, channels=3,
                      directions=("row-fwd",), expand=2, conv_width=4)
    ppc = 16 * 16 * 3  # 768
    inner = 16         # 2 * 8
    heads = 2          # 16 / 8
    block = (8              # norm_w
             + 8 * 32       # in_proj (8 -> 2*inner)
             + 16 * 4 + 16  # conv_w + conv_b
             + 16 * 2 + 2   # dt_proj + dt_bias
             + 16 * 4       # b_proj
             + 16 * 4       # c_proj
             + 2 + 2        # a_log + d_skip
             + 16 * 8)      # out_proj
    expected = ((ppc * 8 + 8)         # patch embed
                + block + 8           # encoder + final norm
                + (8 * 8 + 8)         # dec embed
                + 8                   # mask token
                + block               # decoder
                + (8 * ppc + ppc))    # head
    got = count_params(cfg)
    assert got["encoder_block"] == block
    assert got["total"] == expected


def test_count_additivity_in_depth():
    base = count_params(desk_config())
    deeper = count_params(desk_config(enc_depth=8))
    per_layer = base["encoder_layer"]
    assert deeper["total"] - base["total"] == 4 * per_layer


def test_vit_reference_reproduces_published_sizes():
    vb = vit_reference_params(**VIT_BASE)["total"]
    vl = vit_reference_params(**VIT_LARGE)["total"]
    assert abs(vb - 111.66e6) / 111.66e6 < 0.01
    assert abs(vl - 329.24e6) / 329.24e6 < 0.01


def test_block_parameter_ratio_about_half():
    ours = count_params(satmamba_base())["encoder_block"]
    theirs = vit_block_params(768)
    assert 0.3 <= ours / theirs <= 0.7


def test_total_parameter_ratio_about_two():
    ours = count_params(satmamba_base())["total"]
    theirs = vit_reference_params(**VIT_BASE)["total"]
    assert 1.8 <= ours / theirs <= 2.3


def test_flops_linear_in_sequence_length():
    cfg = satmamba_base()
    f224 = flops_estimate(cfg, 224, 224, "satmamba")
    f448 = flops_estimate(cfg, 448, 448, "satmamba")
    assert f448 == 4 * f224  # exactly, forced by the formulas
    v224 = flops_estimate(cfg, 224, 224, "vit-reference")
    v448 = flops_estimate(cfg, 448, 448, "vit-reference")
    assert v448 > 4 * v224  # the quadratic attention term grows 16x
    attn_224 = 2 * 196**2 * (768 * 12 + 512 * 8)
    attn_448 = 2 * 784**2 * (768 * 12 + 512 * 8)
    assert (v448 - attn_448) == 4 * (v224 - attn_224)
    assert attn_448 == 16 * attn_224


def test_flop_ratio_window_at_224():
    ours = flops_estimate(satmamba_base(), 224, 224, "satmamba")
    vit_b = flops_estimate(ModelConfig(**VIT_BASE), 224, 224, "vit-reference")
    vit_l = flops_estimate(ModelConfig(**VIT_LARGE, head_dim=64), 224, 224,
                           "vit-reference")
    assert 1.4 <= ours / vit_b <= 2.6
    assert ours < vit_l


def test_flops_rejects_bad_inputs():
    with pytest.raises(ValueError, match="divisible"):
        flops_estimate(desk_config(), 100, 100, "satmamba")
    with pytest.raises(ValueError, match="arch"):
        flops_estimate(desk_config(), 64, 64, "resnet")


def test_flops_deterministic():
    cfg = desk_config()
    assert flops_estimate(cfg, 128, 128) == flops_estimate(cfg, 128, 128)
