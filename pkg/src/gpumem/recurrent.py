"""GRU cell, single-direction GRU over a sequence, and the bidirectional layer.

Gate convention (fixed; tests depend on it)::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    hc = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * hc

Inputs may carry leading batch axes: ``x`` is [..., D], ``h`` is [..., H],
and sequences are [..., T, D].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ConfigError, ShapeError, Tensor, add, flip, linear, mul, sigmoid, stack, sub, tanh, concat


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + k: v for k, v in vars(self).items()}

    def validate(self) -> None:
        H, D = self.hidden_size, self.input_size
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (H, D):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(H, D)}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (H, H):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(H, H)}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (H,):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(H,)}")

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "GruParams":
        """Glorot-uniform matrices, zero biases."""
        H, D = hidden_size, input_size
        return cls(
            W_z=Tensor(glorot_uniform(rng, H, D)),
            W_r=Tensor(glorot_uniform(rng, H, D)),
            W_h=Tensor(glorot_uniform(rng, H, D)),
            U_z=Tensor(glorot_uniform(rng, H, H)),
            U_r=Tensor(glorot_uniform(rng, H, H)),
            U_h=Tensor(glorot_uniform(rng, H, H)),
            b_z=Tensor(np.zeros(H)),
            b_r=Tensor(np.zeros(H)),
            b_h=Tensor(np.zeros(H)),
        )


@dataclass
class BiGruParams:
    forward: GruParams
    backward: GruParams

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {**self.forward.named(prefix + "fwd."), **self.backward.named(prefix + "bwd.")}

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "BiGruParams":
        return cls(GruParams.init(input_size, hidden_size, rng), GruParams.init(input_size, hidden_size, rng))


def _step(xz: Tensor, xr: Tensor, xh: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    z = sigmoid(add(xz, linear(h_prev, p.U_z)))
    r = sigmoid(add(xr, linear(h_prev, p.U_r)))
    cand = tanh(add(xh, linear(mul(r, h_prev), p.U_h)))
    # (1 - z) * h + z * hc, written as h + z * (hc - h)
    return add(h_prev, mul(z, sub(cand, h_prev)))


def gru_cell(x_t: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ShapeError(
            f"gru_cell got x {x_t.shape}, h {h_prev.shape} for D={p.input_size}, H={p.hidden_size}")
    return _step(linear(x_t, p.W_z, p.b_z), linear(x_t, p.W_r, p.b_r), linear(x_t, p.W_h, p.b_h), h_prev, p)


def gru_sequence(seq: Tensor, p: GruParams, reversed: bool = False) -> Tensor:
    """Run a GRU over axis -2 starting from a zero state.

    Row ``t`` of the result is always aligned with input position ``t``,
    whichever direction the sequence was consumed in.
    """
    if seq.data.ndim < 2:
        raise ShapeError(f"sequence must be [..., T, D], got {seq.shape}")
    T = seq.shape[-2]
    if T == 0:
        raise ConfigError("empty sequence")
    if seq.shape[-1] != p.input_size:
        raise ShapeError(f"sequence width {seq.shape[-1]} != GRU input size {p.input_size}")
    # input projections for every step at once
    xz = linear(seq, p.W_z, p.b_z)
    xr = linear(seq, p.W_r, p.b_r)
    xh = linear(seq, p.W_h, p.b_h)
    h = Tensor(np.zeros(seq.shape[:-2] + (p.hidden_size,)))
    states: list[Tensor | None] = [None] * T
    order = range(T - 1, -1, -1) if reversed else range(T)
    for t in order:
        h = _step(xz[..., t, :], xr[..., t, :], xh[..., t, :], h, p)
        states[t] = h
    return stack(states, axis=-2)


def bigru_forward(seq: Tensor, p: BiGruParams) -> Tensor:
    """[..., T, D] -> [..., T, 2H]: forward states then backward states per position."""
    return concat([gru_sequence(seq, p.forward, reversed=False),
                   gru_sequence(seq, p.backward, reversed=True)], axis=-1)


def flip_sequence(seq: Tensor) -> Tensor:
    return flip(seq, axis=-2)
