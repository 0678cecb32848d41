import dataclasses

import numpy as np
import pytest

from gpumem.data import VocabularyError, apply_scaler
from gpumem.gradcheck import check_unit
from gpumem.numerics import ConfigError, Tensor, make_rng
from gpumem.regressor import (FORWARD, PRESETS, HybridConfig, ModelParams, count_parameters, embed_batch,
                              embed_record, hybrid_forward, init_params)

TINY = HybridConfig.preset_named("tiny")
KINDS = ("hybrid", "transformer")


def no_dropout(cfg=TINY):
    return dataclasses.replace(cfg, dropout=0.0)


def shape_sum(kind, cfg, spec):
    """Parameter count from layer shapes, written out independently of the model code."""
    width = cfg.gru_hidden if kind == "hybrid" else cfg.d_model
    n = 0
    for f in spec.features:
        n += 2 * width if f.kind == "numeric" else len(f.vocab) * width
    if kind == "hybrid":
        H = cfg.gru_hidden
        n += 2 * (3 * H * width + 3 * H * H + 3 * H)
    d, ff = cfg.d_model, cfg.d_ff
    per_layer = 4 * d * d + (ff * d + ff) + (d * ff + d) + 4 * d
    return n + cfg.n_layers * per_layer + d + 1


# ---- config

def test_tiny_and_paper_presets():
    assert PRESETS["tiny"]["d_model"] == 32 and PRESETS["tiny"]["gru_hidden"] == 16
    paper = HybridConfig.preset_named("paper")
    assert (paper.n_layers, paper.d_model, paper.heads, paper.gru_hidden, paper.dropout, paper.d_ff) == \
        (6, 512, 8, 256, 0.1, 2048)


def test_hybrid_requires_matching_widths():
    with pytest.raises(ConfigError):
        HybridConfig(n_layers=1, d_model=32, heads=2, gru_hidden=8).validate("hybrid")
    HybridConfig(n_layers=1, d_model=32, heads=2, gru_hidden=8).validate("transformer")


def test_heads_divide_width():
    with pytest.raises(ConfigError):
        HybridConfig(n_layers=1, d_model=30, heads=4, gru_hidden=15).validate("hybrid")


def test_unknown_preset():
    with pytest.raises(ConfigError):
        HybridConfig.preset_named("huge")


# ---- embedding

def test_numeric_zero_gives_shift(small_data):
    params = init_params("hybrid", TINY, small_data.spec, 0)
    enc = apply_scaler(small_data.records[:1], small_data.scaler, small_data.spec)
    enc.numeric["input_dim"][:] = 0.0
    tokens = embed_batch(enc, small_data.spec, params).data[0]
    i = small_data.spec.names.index("input_dim")
    np.testing.assert_array_equal(tokens[i], params.embed["embed.input_dim.shift"].data)


def test_architecture_change_is_local(small_data):
    spec = small_data.spec
    params = init_params("hybrid", TINY, spec, 0)
    vocab = spec["model_arch"].vocab
    a = small_data.records[0]
    other = next(v for v in vocab if v != a.model_arch)
    b = dataclasses.replace(a, model_arch=other)
    ta = embed_record(a, spec, params, small_data.scaler).data
    tb = embed_record(b, spec, params, small_data.scaler).data
    differs = [i for i in range(len(spec.names)) if not np.array_equal(ta[i], tb[i])]
    assert differs == [spec.names.index("model_arch")]


def test_out_of_range_category(small_data):
    params = init_params("hybrid", TINY, small_data.spec, 0)
    enc = apply_scaler(small_data.records[:2], small_data.scaler, small_data.spec)
    enc.codes["model_arch"][1] = len(small_data.spec["model_arch"].vocab)
    with pytest.raises(VocabularyError, match="model_arch"):
        embed_batch(enc, small_data.spec, params)


# ---- forward passes

@pytest.mark.parametrize("kind", KINDS)
def test_batch_independence(kind, small_data):
    cfg = no_dropout()
    params = init_params(kind, cfg, small_data.spec, 1)
    enc = small_data.enc
    alone = FORWARD[kind](enc.subset([4]), small_data.spec, params, cfg).data
    pair = FORWARD[kind](enc.subset([2, 4]), small_data.spec, params, cfg).data
    full = FORWARD[kind](enc, small_data.spec, params, cfg).data
    assert abs(alone[0] - pair[1]) <= 1e-12
    assert abs(alone[0] - full[4]) <= 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_head_short_circuit(kind, small_data):
    params = init_params(kind, TINY, small_data.spec, 2)
    params.head_w.data[:] = 0.0
    params.head_b.data[:] = 0.37
    out = FORWARD[kind](small_data.enc, small_data.spec, params, TINY).data
    assert (out == 0.37).all()


@pytest.mark.parametrize("kind", KINDS)
def test_forward_is_pure_without_dropout(kind, small_data):
    params = init_params(kind, TINY, small_data.spec, 3)
    a = FORWARD[kind](small_data.enc, small_data.spec, params, TINY).data
    b = FORWARD[kind](small_data.enc, small_data.spec, params, TINY).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("kind", KINDS)
def test_training_mode_dropout_is_seeded(kind, small_data):
    params = init_params(kind, TINY, small_data.spec, 3)
    f = FORWARD[kind]
    a = f(small_data.enc, small_data.spec, params, TINY, training=True, rng=make_rng(5)).data
    b = f(small_data.enc, small_data.spec, params, TINY, training=True, rng=make_rng(5)).data
    c = f(small_data.enc, small_data.spec, params, TINY).data
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


@pytest.mark.parametrize("kind", KINDS)
def test_extreme_standardized_inputs_stay_finite(kind, small_data):
    params = init_params(kind, TINY, small_data.spec, 4)
    enc = apply_scaler(small_data.records, small_data.scaler, small_data.spec)
    for i, col in enumerate(enc.numeric.values()):
        col[:] = np.where(np.arange(len(col)) % 2 == 0, 10.0, -10.0) * (1 if i % 2 else -1)
    assert np.isfinite(FORWARD[kind](enc, small_data.spec, params, TINY).data).all()


def test_hybrid_is_order_sensitive(small_data):
    spec = small_data.spec
    params = init_params("hybrid", TINY, spec, 5)
    base = hybrid_forward(small_data.enc, spec, params, TINY).data
    names = list(spec.names)
    names[2], names[5] = names[5], names[2]
    swapped = hybrid_forward(small_data.enc, spec.reorder(names), params, TINY).data
    assert np.abs(base - swapped).max() > 1e-6


def test_transformer_single_feature_is_finite(small_data):
    spec = small_data.spec.reorder(["input_dim"])
    cfg = TINY
    params = init_params("transformer", cfg, spec, 6)
    out = FORWARD["transformer"](small_data.enc, spec, params, cfg).data
    assert out.shape == (len(small_data.records),)
    assert np.isfinite(out).all()


def test_transformer_token_swap_changes_output(small_data):
    spec = small_data.spec
    params = init_params("transformer", TINY, spec, 7)
    base = FORWARD["transformer"](small_data.enc, spec, params, TINY).data
    names = list(spec.names)
    names[0], names[3] = names[3], names[0]
    swapped = FORWARD["transformer"](small_data.enc, spec.reorder(names), params, TINY).data
    assert np.abs(base - swapped).max() > 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_full_model_gradients(kind):
    for seed in range(3):
        assert check_unit(kind, seed).passed


# ---- parameter bookkeeping

def test_head_only_count():
    p = ModelParams({}, [], head_w=Tensor(np.zeros((1, 4))), head_b=Tensor(np.zeros(1)))
    assert count_parameters(p) == 5


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("preset", ["tiny", "paper"])
def test_count_matches_shape_sum(kind, preset, small_data):
    cfg = HybridConfig.preset_named(preset)
    params = init_params(kind, cfg, small_data.spec, 0)
    assert count_parameters(params) == shape_sum(kind, cfg, small_data.spec)


def test_tiny_hybrid_count_is_frozen(small_data):
    # frozen from the shape-sum oracle above for this spec's 8 features and vocabulary
    params = init_params("hybrid", TINY, small_data.spec, 0)
    assert count_parameters(params) == shape_sum("hybrid", TINY, small_data.spec)
    assert len(small_data.spec["model_arch"].vocab) == 6
    # 320 embedding + 3168 BiGRU + 2 x 12576 encoder + 33 head
    assert count_parameters(params) == 28673


@pytest.mark.parametrize("kind", KINDS)
def test_named_roundtrip(kind, small_data):
    params = init_params(kind, TINY, small_data.spec, 8)
    named = params.named()
    assert len(named) == len(set(id(t) for t in named.values()))
    rebuilt = ModelParams.from_named(named, kind, TINY)
    assert list(rebuilt.named()) == list(named)
    assert count_parameters(rebuilt) == count_parameters(params)


def test_init_is_seeded(small_data):
    a = init_params("hybrid", TINY, small_data.spec, 9).named()
    b = init_params("hybrid", TINY, small_data.spec, 9).named()
    c = init_params("hybrid", TINY, small_data.spec, 10).named()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert not np.array_equal(a["head.weight"].data, c["head.weight"].data)
