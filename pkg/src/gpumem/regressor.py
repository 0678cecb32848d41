"""BiGRU-fronted Transformer regressor and the plain-Transformer ablation.

Each task record becomes a sequence of one token per feature, in
:class:`~gpumem.data.FeatureSpec` order. Numeric features get a learned
per-feature affine token ``scale * x + shift``; categorical features get an
embedding-table row.

hybrid:       tokens(width gru_hidden) -> BiGRU -> dropout -> encoder -> mean -> linear
transformer:  tokens(width d_model) + sinusoidal PE -> dropout -> encoder -> mean -> linear

Both return predictions in standardized target units.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .attention import DropoutSpec, EncoderLayerParams, MhaParams, encoder_stack, sinusoidal_pe
from .data import Encoded, FeatureSpec, Scaler, TaskRecord, VocabularyError, apply_scaler
from .numerics import (ConfigError, Tensor, add, embedding, linear, make_rng, mean, mul,
                       reshape, stack)
from .recurrent import BiGruParams, GruParams, bigru_forward, glorot_uniform

MODEL_KINDS = ("hybrid", "transformer")


@dataclass
class HybridConfig:
    n_layers: int = 6
    d_model: int = 512
    heads: int = 8
    gru_hidden: int = 256
    dropout: float = 0.1
    d_ff: int | None = None
    pooling: str = "mean"
    preset: str = "paper"

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model

    def validate(self, kind: str = "hybrid") -> None:
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown neural model kind {kind!r}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if kind == "hybrid" and 2 * self.gru_hidden != self.d_model:
            raise ConfigError(f"BiGRU output 2*{self.gru_hidden} must equal d_model={self.d_model}")
        if kind == "transformer" and self.d_model % 2:
            raise ConfigError("sinusoidal encoding needs an even d_model")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.pooling != "mean":
            raise ConfigError(f"unsupported pooling {self.pooling!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def preset_named(cls, name: str) -> "HybridConfig":
        try:
            return cls(**PRESETS[name])
        except KeyError:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


PRESETS = {
    "paper": dict(n_layers=6, d_model=512, heads=8, gru_hidden=256, dropout=0.1, preset="paper"),
    "tiny": dict(n_layers=2, d_model=32, heads=2, gru_hidden=16, dropout=0.1, preset="tiny"),
}


@dataclass
class ModelParams:
    embed: dict[str, Tensor]
    layers: list[EncoderLayerParams]
    head_w: Tensor
    head_b: Tensor
    bigru: BiGruParams | None = None

    def named(self) -> dict[str, Tensor]:
        """Every learnable tensor under a unique, stable checkpoint key."""
        out = dict(self.embed)
        if self.bigru is not None:
            out.update(self.bigru.named("bigru."))
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"encoder.{i}."))
        out["head.weight"] = self.head_w
        out["head.bias"] = self.head_b
        return out

    @classmethod
    def from_named(cls, named: dict[str, Tensor], kind: str, cfg: HybridConfig) -> "ModelParams":
        def gru(prefix):
            return GruParams(**{k: named[prefix + k] for k in
                                ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")})

        layers = []
        for i in range(cfg.n_layers):
            pre = f"encoder.{i}."
            mha = MhaParams(*(named[f"{pre}mha.{k}"] for k in ("W_Q", "W_K", "W_V", "W_O")), heads=cfg.heads)
            rest = {k: named[pre + k] for k in ("ffn_in", "ffn_in_b", "ffn_out", "ffn_out_b",
                                                 "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")}
            layers.append(EncoderLayerParams(mha=mha, **rest))
        bigru = BiGruParams(gru("bigru.fwd."), gru("bigru.bwd.")) if kind == "hybrid" else None
        embed = {k: v for k, v in named.items() if k.startswith("embed.")}
        return cls(embed, layers, named["head.weight"], named["head.bias"], bigru)


def init_params(kind: str, cfg: HybridConfig, spec: FeatureSpec, seed: int) -> ModelParams:
    cfg.validate(kind)
    rng = make_rng(seed, 0xC0FFEE)
    width = cfg.gru_hidden if kind == "hybrid" else cfg.d_model
    embed = {}
    for f in spec.features:
        if f.kind == "numeric":
            embed[f"embed.{f.name}.scale"] = Tensor(rng.normal(0.0, 1.0, width))
            embed[f"embed.{f.name}.shift"] = Tensor(rng.normal(0.0, 1.0, width))
        else:
            embed[f"embed.{f.name}.table"] = Tensor(rng.normal(0.0, 1.0, (len(f.vocab), width)))
    bigru = BiGruParams.init(width, cfg.gru_hidden, rng) if kind == "hybrid" else None
    layers = [EncoderLayerParams.init(cfg.d_model, cfg.heads, cfg.d_ff, rng) for _ in range(cfg.n_layers)]
    head_w = Tensor(glorot_uniform(rng, 1, cfg.d_model))
    return ModelParams(embed, layers, head_w, Tensor(np.zeros(1)), bigru)


def embed_batch(enc: Encoded, spec: FeatureSpec, params: ModelParams) -> Tensor:
    """[B, F, width] token sequences in spec order."""
    tokens = []
    for f in spec.features:
        if f.kind == "numeric":
            x = Tensor(enc.numeric[f.name][:, None])
            tokens.append(add(mul(x, params.embed[f"embed.{f.name}.scale"]),
                              params.embed[f"embed.{f.name}.shift"]))
        else:
            table = params.embed[f"embed.{f.name}.table"]
            codes = enc.codes[f.name]
            bad = (codes < 0) | (codes >= table.shape[0])
            if bad.any():
                raise VocabularyError(f"category index {int(codes[bad][0])} outside vocab of size "
                                      f"{table.shape[0]}", column=f.name)
            tokens.append(embedding(table, codes))
    return stack(tokens, axis=1)


def embed_record(rec: TaskRecord, spec: FeatureSpec, params: ModelParams, scaler: Scaler) -> Tensor:
    """[F, width] token sequence for one record."""
    return reshape(embed_batch(apply_scaler([rec], scaler, spec), spec, params), (len(spec.features), -1))


def _readout(H: Tensor, params: ModelParams) -> Tensor:
    pooled = mean(H, axis=-2)
    return reshape(linear(pooled, params.head_w, params.head_b), (-1,))


def _drop(cfg: HybridConfig, training: bool, rng, drop: DropoutSpec | None) -> DropoutSpec:
    return drop if drop is not None else DropoutSpec(cfg.dropout, training, rng)


def hybrid_forward(enc: Encoded, spec: FeatureSpec, params: ModelParams, cfg: HybridConfig,
                   training: bool = False, rng: np.random.Generator | None = None,
                   drop: DropoutSpec | None = None) -> Tensor:
    drop = _drop(cfg, training, rng, drop)
    seq = bigru_forward(embed_batch(enc, spec, params), params.bigru)
    return _readout(encoder_stack(drop(seq), params.layers, drop), params)


def baseline_transformer_forward(enc: Encoded, spec: FeatureSpec, params: ModelParams, cfg: HybridConfig,
                                 training: bool = False, rng: np.random.Generator | None = None,
                                 drop: DropoutSpec | None = None) -> Tensor:
    drop = _drop(cfg, training, rng, drop)
    tokens = embed_batch(enc, spec, params)
    x = add(tokens, sinusoidal_pe(len(spec.features), cfg.d_model))
    return _readout(encoder_stack(drop(x), params.layers, drop), params)


FORWARD = {"hybrid": hybrid_forward, "transformer": baseline_transformer_forward}


def count_parameters(params: ModelParams | dict[str, Tensor]) -> int:
    named = params.named() if isinstance(params, ModelParams) else params
    return int(sum(t.size for t in named.values()))
