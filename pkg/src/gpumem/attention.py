"""Encoder-side Transformer pieces: attention, post-norm layers, sinusoidal PE.

Sequences are [..., T, d_model]. No masks anywhere; regression over a
fixed-length token sequence never needs them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (ConfigError, ShapeError, Tensor, add, dropout, dropout_mask, layer_norm, linear, matmul,
                       mul, relu, reshape, softmax_rows, transpose)
from .recurrent import glorot_uniform


@dataclass
class DropoutSpec:
    """Dropout settings threaded through a forward pass.

    With ``freeze`` set, masks drawn on the first pass are stored and
    replayed after :meth:`rewind`, so repeated forwards are deterministic
    (what the gradient checker needs).
    """

    rate: float = 0.0
    training: bool = False
    rng: np.random.Generator | None = None
    freeze: bool = False
    masks: list[np.ndarray] = field(default_factory=list)
    _cursor: int = field(default=0, repr=False)

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        if not self.freeze:
            return dropout(x, self.rate, True, rng=self.rng)
        if self._cursor == len(self.masks):
            self.masks.append(dropout_mask(x.shape, self.rate, self.rng))
        mask = self.masks[self._cursor]
        self._cursor += 1
        return dropout(x, self.rate, True, mask=mask)

    def rewind(self) -> None:
        self._cursor = 0


NO_DROPOUT = DropoutSpec()


@dataclass
class MhaParams:
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    W_O: Tensor
    heads: int

    @property
    def d_model(self) -> int:
        return self.W_Q.shape[0]

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + k: getattr(self, k) for k in ("W_Q", "W_K", "W_V", "W_O")}

    @classmethod
    def init(cls, d_model: int, heads: int, rng: np.random.Generator) -> "MhaParams":
        if heads < 1 or d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        return cls(*(Tensor(glorot_uniform(rng, d_model, d_model)) for _ in range(4)), heads=heads)


@dataclass
class EncoderLayerParams:
    mha: MhaParams
    ffn_in: Tensor    # [d_ff x d_model]
    ffn_in_b: Tensor
    ffn_out: Tensor   # [d_model x d_ff]
    ffn_out_b: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = self.mha.named(prefix + "mha.")
        for k, v in vars(self).items():
            if k != "mha":
                out[prefix + k] = v
        return out

    @classmethod
    def init(cls, d_model: int, heads: int, d_ff: int, rng: np.random.Generator) -> "EncoderLayerParams":
        return cls(
            mha=MhaParams.init(d_model, heads, rng),
            ffn_in=Tensor(glorot_uniform(rng, d_ff, d_model)),
            ffn_in_b=Tensor(np.zeros(d_ff)),
            ffn_out=Tensor(glorot_uniform(rng, d_model, d_ff)),
            ffn_out_b=Tensor(np.zeros(d_model)),
            ln1_gain=Tensor(np.ones(d_model)),
            ln1_bias=Tensor(np.zeros(d_model)),
            ln2_gain=Tensor(np.ones(d_model)),
            ln2_bias=Tensor(np.zeros(d_model)),
        )


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d_k)) V`` over the last two axes."""
    if Q.shape[-2] != K.shape[-2] or K.shape[-2] != V.shape[-2] or Q.shape[-1] != K.shape[-1]:
        raise ShapeError(f"attention shape mismatch: Q {Q.shape}, K {K.shape}, V {V.shape}")
    d_k = Q.shape[-1]
    scores = mul(matmul(Q, transpose(K, _swap_last(K.data.ndim))), 1.0 / np.sqrt(d_k))
    weights = softmax_rows(scores)
    out = matmul(weights, V)
    return (out, weights) if return_weights else out


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, T, d = x.shape
    x = reshape(x, (*lead, T, heads, d // heads))
    n = len(lead)
    return transpose(x, (*range(n), n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, A, T, dk = x.shape
    n = len(lead)
    x = transpose(x, (*range(n), n + 1, n, n + 2))
    return reshape(x, (*lead, T, A * dk))


def multi_head_attention(X: Tensor, p: MhaParams, drop: DropoutSpec = NO_DROPOUT,
                         return_weights: bool = False):
    if p.d_model % p.heads:
        raise ConfigError(f"d_model={p.d_model} is not divisible by heads={p.heads}")
    if X.shape[-1] != p.d_model:
        raise ShapeError(f"input width {X.shape[-1]} != d_model {p.d_model}")
    Q = _split_heads(linear(X, p.W_Q), p.heads)
    K = _split_heads(linear(X, p.W_K), p.heads)
    V = _split_heads(linear(X, p.W_V), p.heads)
    heads, weights = scaled_dot_attention(Q, K, V, return_weights=True)
    out = drop(linear(_merge_heads(heads), p.W_O))
    return (out, weights) if return_weights else out


def feed_forward(X: Tensor, p: EncoderLayerParams) -> Tensor:
    return linear(relu(linear(X, p.ffn_in, p.ffn_in_b)), p.ffn_out, p.ffn_out_b)


def encoder_layer(X: Tensor, p: EncoderLayerParams, drop: DropoutSpec = NO_DROPOUT) -> Tensor:
    """Post-norm layer: LN(X + MHA(X)), then LN(Y + FFN(Y))."""
    Y = layer_norm(add(X, multi_head_attention(X, p.mha, drop)), p.ln1_gain, p.ln1_bias)
    return layer_norm(add(Y, drop(feed_forward(Y, p))), p.ln2_gain, p.ln2_bias)


def encoder_stack(X: Tensor, layers: list[EncoderLayerParams], drop: DropoutSpec = NO_DROPOUT) -> Tensor:
    if not layers:
        raise ConfigError("encoder stack needs at least one layer")
    for p in layers:
        X = encoder_layer(X, p, drop)
    return X


def sinusoidal_pe(T: int, d_model: int) -> Tensor:
    if d_model % 2:
        raise ConfigError(f"sinusoidal encoding needs an even d_model, got {d_model}")
    pos = np.arange(T, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((T, d_model))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return Tensor(pe)
