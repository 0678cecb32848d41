"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when any
operand requires a gradient. Outside a tape everything is a plain numpy
forward pass, which is what inference uses.

    with Tape() as tape:
        loss = mse(model(x), y)
    tape.backward(loss)

Random streams come from :func:`make_rng`: numpy's PCG64 seeded through a
``SeedSequence`` built from integer keys, e.g. ``make_rng(seed, epoch, batch)``.
Streams are reproducible for a given numpy version.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


def make_rng(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


# ---------------------------------------------------------------- tape

class Tape:
    """Ordered log of differentiable operations.

    Backward walks the log in exact reverse execution order; gradients are
    summed into ``.grad`` so a tensor consumed twice gets both contributions.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if loss.size != 1:
                raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        _accumulate(loss, seed)
        for out, fn in reversed(self.records):
            if out.grad is not None:
                fn(out.grad)


def _active_tape() -> Tape | None:
    return Tape._stack[-1] if Tape._stack else None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.records.append((out, backward))
    return out


# Test-only hook: op names listed here get a corrupted backward pass so the
# gradient checker's negative control has something to catch.
FAULTS: set[str] = set()
FAULT_SITES = frozenset({"matmul", "sigmoid", "tanh", "relu", "softmax", "layer_norm"})


def _fault(name: str, g: np.ndarray) -> np.ndarray:
    return g * 1.01 + 1e-3 if name in FAULTS else g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, so neither branch overflows
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def activation(x: Tensor, kind: str) -> Tensor:
    x = as_tensor(x)
    if kind == "sigmoid":
        y = _sigmoid(x.data)
        deriv = lambda: y * (1.0 - y)
    elif kind == "tanh":
        y = np.tanh(x.data)
        deriv = lambda: 1.0 - y * y
    elif kind == "relu":
        y = np.maximum(x.data, 0.0)
        deriv = lambda: (x.data > 0).astype(np.float64)
    else:
        raise ConfigError(f"unknown activation {kind!r}")

    def backward(g):
        _accumulate(x, _fault(kind, g * deriv()))

    return _result(y, (x,), backward)


def sigmoid(x) -> Tensor:
    return activation(x, "sigmoid")


def tanh(x) -> Tensor:
    return activation(x, "tanh")


def relu(x) -> Tensor:
    return activation(x, "relu")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        g = _fault("matmul", g)
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), backward)


def linear(x, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as [out x in]."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g @ weight.data)
        if weight.requires_grad:
            _accumulate(weight, g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _result(y, parents, backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        _accumulate(x, np.transpose(g, inv))

    return _result(np.transpose(x.data, axes), (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def take(x: Tensor, idx) -> Tensor:
    """Basic indexing/slicing."""

    def backward(g):
        full = np.zeros_like(x.data)
        if _is_fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        _accumulate(x, full)

    return _result(np.array(x.data[idx], copy=True), (x,), backward)


def _is_fancy(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def embedding(table: Tensor, codes: np.ndarray) -> Tensor:
    """Row lookup ``table[codes]``; repeated codes accumulate gradient."""
    codes = np.asarray(codes, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, codes, g)
        _accumulate(table, full)

    return _result(table.data[codes], (table,), backward)


def stack(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def backward(g):
        for i, x in enumerate(xs):
            if x.requires_grad:
                _accumulate(x, np.take(g, i, axis=axis))

    return _result(np.stack([x.data for x in xs], axis=axis), xs, backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        for x, part in zip(xs, np.split(g, sizes, axis=axis)):
            _accumulate(x, part)

    return _result(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def flip(x: Tensor, axis: int) -> Tensor:
    def backward(g):
        _accumulate(x, np.flip(g, axis=axis))

    return _result(np.array(np.flip(x.data, axis=axis)), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(np.asarray(x.data.sum()), (x,), backward)


def mean(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]

    def backward(g):
        _accumulate(x, np.broadcast_to(np.expand_dims(g, axis) / n, x.shape))

    return _result(x.data.mean(axis=axis), (x,), backward)


# ---------------------------------------------------------------- normalization & friends

def softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        g = _fault("softmax", g)
        _accumulate(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _result(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def backward(g):
        g = _fault("layer_norm", g)
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            _accumulate(x, inv * (gx - gx.mean(axis=-1, keepdims=True)
                                  - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _result(y, (x, gain, bias), backward)


def dropout_mask(shape: Sequence[int], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, else ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None,
            mask: np.ndarray | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if mask is None:
        if rng is None:
            raise ConfigError("training-mode dropout needs an rng or a frozen mask")
        mask = dropout_mask(x.shape, rate, rng)

    def backward(g):
        _accumulate(x, g * mask)

    return _result(x.data * mask, (x,), backward)


# ---------------------------------------------------------------- gradient oracle

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must be a deterministic zero-argument closure over ``params``.
    The error for one coordinate is ``|a - n| / max(1, |a|, |n|)``. With
    ``max_coords`` set, that many coordinates per tensor are sampled.
    """
    params = list(params)
    if not 1e-6 <= h <= 1e-4:
        raise ConfigError(f"finite-difference step {h} outside [1e-6, 1e-4]")
    for p in params:
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise OracleError("loss is not finite")
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or make_rng(0)).choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise OracleError(f"non-finite loss while perturbing {p.name or 'tensor'}[{i}]")
            num = (up - down) / (2.0 * h)
            an = a.reshape(-1)[i]
            err = abs(an - num) / max(1.0, abs(an), abs(num))
            worst = max(worst, err)
    return worst
