"""Finite-difference audit of every differentiable unit.

Each unit builds a scalar loss ``sum(f(...) * C)`` with a fixed random
projection ``C`` (plain sums would make e.g. softmax gradients vanish) and
compares tape gradients with central differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .attention import DropoutSpec, EncoderLayerParams, MhaParams, encoder_layer, encoder_stack, multi_head_attention
from .data import FeatureSpec, apply_scaler, fit_scaler, generate_synthetic
from .numerics import (Tensor, activation, dropout, dropout_mask, grad_check, layer_norm, make_rng, matmul, mul,
                       softmax_rows, sum_all)
from .recurrent import BiGruParams, GruParams, bigru_forward, gru_cell, gru_sequence
from .regressor import FORWARD, HybridConfig, init_params
from .training import mse_loss

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class UnitResult:
    unit: str
    seed: int
    error: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, shape))


def _projected(out: Tensor, C: np.ndarray) -> Tensor:
    return sum_all(mul(out, C))


def _elementwise(kind):
    def build(rng):
        x = _t(rng, 3, 4)
        C = rng.normal(size=(3, 4))
        return (lambda: _projected(activation(x, kind), C)), [x]
    return build


def _matmul(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    C = rng.normal(size=(3, 2))
    return (lambda: _projected(matmul(a, b), C)), [a, b]


def _softmax(rng):
    x = _t(rng, 3, 5)
    C = rng.normal(size=(3, 5))
    return (lambda: _projected(softmax_rows(x), C)), [x]


def _layer_norm(rng):
    x, g, b = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
    C = rng.normal(size=(3, 6))
    return (lambda: _projected(layer_norm(x, g, b), C)), [x, g, b]


def _dropout(rng):
    x = _t(rng, 4, 5)
    mask = dropout_mask(x.shape, 0.3, rng)
    C = rng.normal(size=(4, 5))
    return (lambda: _projected(dropout(x, 0.3, True, mask=mask), C)), [x]


def _gru_params(rng, D, H) -> GruParams:
    p = GruParams.init(D, H, rng)
    for b in (p.b_z, p.b_r, p.b_h):
        b.data[:] = rng.normal(0.0, 0.5, b.shape)
    return p


def _gru_cell(rng):
    p = _gru_params(rng, 3, 4)
    x, h = _t(rng, 3), _t(rng, 4, scale=0.5)
    C = rng.normal(size=4)
    return (lambda: _projected(gru_cell(x, h, p), C)), [x, h, *p.named().values()]


def _gru_sequence(rng):
    p = _gru_params(rng, 3, 4)
    seq = _t(rng, 8, 3)
    C = rng.normal(size=(8, 4))
    return (lambda: _projected(gru_sequence(seq, p, reversed=False), C)), [seq, *p.named().values()]


def _bigru(rng):
    p = BiGruParams(_gru_params(rng, 3, 4), _gru_params(rng, 3, 4))
    seq = _t(rng, 5, 3)
    C = rng.normal(size=(5, 8))
    return (lambda: _projected(bigru_forward(seq, p), C)), [seq, *p.named().values()]


def _mha(rng):
    p = MhaParams.init(4, 2, rng)
    X = _t(rng, 3, 4)
    C = rng.normal(size=(3, 4))
    return (lambda: _projected(multi_head_attention(X, p), C)), [X, *p.named().values()]


def _frozen(rate, rng) -> DropoutSpec:
    return DropoutSpec(rate, training=True, rng=rng, freeze=True)


def _encoder_layer(rng):
    p = EncoderLayerParams.init(8, 2, 16, rng)
    X = _t(rng, 4, 8)
    C = rng.normal(size=(4, 8))
    drop = _frozen(0.1, make_rng(int(rng.integers(1 << 31))))

    def f():
        drop.rewind()
        return _projected(encoder_layer(X, p, drop), C)
    return f, [X, *p.named().values()]


def _encoder_stack(rng):
    layers = [EncoderLayerParams.init(8, 2, 16, rng) for _ in range(2)]
    X = _t(rng, 4, 8)
    C = rng.normal(size=(4, 8))
    params = [X] + [t for i, lp in enumerate(layers) for t in lp.named().values()]
    return (lambda: _projected(encoder_stack(X, layers), C)), params


def _full_model(kind):
    def build(rng):
        seed = int(rng.integers(1 << 31))
        records = generate_synthetic(6, seed)
        spec = FeatureSpec.from_records(records)
        scaler = fit_scaler(records, range(len(records)))
        enc = apply_scaler(records, scaler, spec)
        cfg = HybridConfig.preset_named("tiny")
        params = init_params(kind, cfg, spec, seed)
        drop = _frozen(cfg.dropout, make_rng(seed, 7))
        fwd = FORWARD[kind]

        def f():
            drop.rewind()
            return mse_loss(fwd(enc, spec, params, cfg, drop=drop), enc.y)
        return f, list(params.named().values())
    return build


UNITS: dict[str, Callable] = {
    "matmul": _matmul,
    "sigmoid": _elementwise("sigmoid"),
    "tanh": _elementwise("tanh"),
    "relu": _elementwise("relu"),
    "softmax": _softmax,
    "layer_norm": _layer_norm,
    "dropout": _dropout,
    "gru_cell": _gru_cell,
    "gru_sequence": _gru_sequence,
    "bigru_forward": _bigru,
    "multi_head_attention": _mha,
    "encoder_layer": _encoder_layer,
    "encoder_stack": _encoder_stack,
    "hybrid": _full_model("hybrid"),
    "transformer": _full_model("transformer"),
}

# coordinates sampled per tensor for the full models; small units check all
_SAMPLED = {"hybrid": 6, "transformer": 6}


def check_unit(name: str, seed: int) -> UnitResult:
    rng = make_rng(seed, 0x6C)
    f, params = UNITS[name](rng)
    err = grad_check(f, params, h=STEP, max_coords=_SAMPLED.get(name), rng=make_rng(seed, 0x6D))
    return UnitResult(name, seed, err)


def run_all(seeds=(0, 1, 2), units=None) -> list[UnitResult]:
    return [check_unit(u, s) for u in (units or UNITS) for s in seeds]
