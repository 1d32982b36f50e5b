"""Minimal reverse-mode autograd over (batch, channels, time) arrays.

Only what the enhancement model needs: causal dilated (grouped) 1-D
convolution, batch normalization, pointwise activations, dropout, channel
concat/slice and the two training losses.  Every op returns a new
:class:`Tensor`; when no input requires a gradient no closure is recorded,
so inference runs on the same code path without bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import DimensionError, GraphStateError

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_factory) -> Tensor:
    """Create an op output; ``backward_factory(out)`` returns the closure pushing out.grad to parents."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_factory(out)
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar ``loss``; frees the graph afterwards."""
    if loss._consumed:
        raise GraphStateError("backward already ran on this graph; run a new forward pass first")
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar output, got shape {loss.data.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
    for node in order:
        node._backward = None
        node._parents = ()
    loss._consumed = True


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and b.data.ndim != 0 and a.data.ndim != 0:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")

    def factory(out):
        def bw():
            for t in (a, b):
                g = out.grad if t.data.ndim else out.grad.sum()
                t._accum(g)
        return bw

    return _node(a.data + b.data, (a, b), factory)


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a python scalar or a constant array."""
    a = as_tensor(a)
    if np.isscalar(b):
        c = float(b)
        return _node(a.data * c, (a,), lambda out: lambda: a._accum(out.grad * c))
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")

    def factory(out):
        def bw():
            a._accum(out.grad * b.data)
            b._accum(out.grad * a.data)
        return bw

    return _node(a.data * b.data, (a, b), factory)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda out: lambda: x._accum(out.grad * mask))


def sigmoid(x: Tensor) -> Tensor:
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    s[~pos] = e / (1.0 + e)
    return _node(s, (x,), lambda out: lambda: x._accum(out.grad * s * (1.0 - s)))


def sqrt_eps(x: Tensor, eps: float) -> Tensor:
    """sqrt(x + eps) for x >= 0."""
    r = np.sqrt(x.data + eps)
    return _node(r, (x,), lambda out: lambda: x._accum(out.grad * 0.5 / r))


def log_eps(x: Tensor, eps: float) -> Tensor:
    """ln(x + eps) for x >= 0."""
    d = x.data + eps
    return _node(np.log(d), (x,), lambda out: lambda: x._accum(out.grad / d))


def square(x: Tensor) -> Tensor:
    return _node(x.data**2, (x,), lambda out: lambda: x._accum(out.grad * 2.0 * x.data))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda out: lambda: x._accum(out.grad * inside))


def dropout_apply(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * keep, (x,), lambda out: lambda: x._accum(out.grad * keep))


# --- channel plumbing --------------------------------------------------------


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def factory(out):
        def bw():
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                if p.requires_grad:
                    idx = [slice(None)] * out.grad.ndim
                    idx[axis] = slice(lo, hi)
                    p._accum(out.grad[tuple(idx)])
        return bw

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, factory)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    def factory(out):
        def bw():
            g = np.zeros_like(x.data)
            g[:, start:stop] = out.grad
            x._accum(g)
        return bw

    return _node(x.data[:, start:stop], (x,), factory)


# --- convolution ---------------------------------------------------------------


@dataclass(frozen=True)
class Conv1dSpec:
    in_channels: int
    out_channels: int
    kernel_time: int = 1
    dilation: int = 1
    groups: int = 1
    causal: bool = True
    bias: bool = True

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise DimensionError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups={self.groups}"
            )
        if self.kernel_time not in (1, 3):
            raise DimensionError(f"kernel_time must be 1 or 3, got {self.kernel_time}")
        if self.dilation < 1:
            raise DimensionError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel_time)

    @property
    def n_params(self) -> int:
        o, i, k = self.weight_shape
        return o * i * k + (self.out_channels if self.bias else 0)

    @property
    def flops_per_frame(self) -> int:
        o, i, k = self.weight_shape
        return 2 * o * i * k + (self.out_channels if self.bias else 0)


def init_conv(spec: Conv1dSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fan-in uniform weights in +-sqrt(1/(fan_in)), zero bias."""
    _, cin_g, k = spec.weight_shape
    bound = np.sqrt(1.0 / (cin_g * k))
    out = {"weight": rng.uniform(-bound, bound, size=spec.weight_shape)}
    if spec.bias:
        out["bias"] = np.zeros(spec.out_channels)
    return out


def _taps(x: np.ndarray, k: int, d: int) -> np.ndarray:
    """(B, C, T) -> (B, C, k, T); tap j holds x[t - (k-1-j)*d] with zeros before t=0."""
    if k == 1:
        return x[:, :, None, :]
    b, c, t = x.shape
    pad = (k - 1) * d
    xp = np.concatenate([np.zeros((b, c, pad)), x], axis=2)
    return np.stack([xp[:, :, j * d : j * d + t] for j in range(k)], axis=2)


def conv1d_forward(x: Tensor, spec: Conv1dSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Causal temporal convolution; output length equals input length."""
    if x.data.ndim != 3 or x.shape[1] != spec.in_channels:
        raise DimensionError(f"conv expects (B, {spec.in_channels}, T), got {x.shape}")
    if weight.shape != spec.weight_shape:
        raise DimensionError(f"weight shape {weight.shape} != {spec.weight_shape}")
    if not spec.causal:
        raise NotImplementedError("only causal convolution is supported")
    b, _, t = x.shape
    g, k, d = spec.groups, spec.kernel_time, spec.dilation
    cin_g = spec.in_channels // g
    cout_g = spec.out_channels // g
    cols = _taps(x.data, k, d).reshape(b, g, cin_g * k, t)
    w = weight.data.reshape(g, cout_g, cin_g * k)
    y = np.matmul(w, cols).reshape(b, spec.out_channels, t)
    if bias is not None:
        y = y + bias.data[None, :, None]
    parents = (x, weight) + ((bias,) if bias is not None else ())

    def factory(out):
        def bw():
            gy = out.grad.reshape(b, g, cout_g, t)
            if weight.requires_grad:
                gw = np.matmul(gy, cols.transpose(0, 1, 3, 2)).sum(axis=0)
                weight._accum(gw.reshape(spec.weight_shape))
            if bias is not None and bias.requires_grad:
                bias._accum(out.grad.sum(axis=(0, 2)))
            if x.requires_grad:
                gcols = np.matmul(w.transpose(0, 2, 1), gy).reshape(b, spec.in_channels, k, t)
                if k == 1:
                    x._accum(gcols[:, :, 0, :])
                else:
                    pad = (k - 1) * d
                    gxp = np.zeros((b, spec.in_channels, t + pad))
                    for j in range(k):
                        gxp[:, :, j * d : j * d + t] += gcols[:, :, j, :]
                    x._accum(gxp[:, :, pad:])
        return bw

    return _node(y, parents, factory)


# --- batch normalization ---------------------------------------------------------


@dataclass
class BatchNormState:
    """Running statistics (buffers, not trained)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm_forward(
    x: Tensor, state: BatchNormState, gamma: Tensor, beta: Tensor, training: bool
) -> Tensor:
    """Per-channel normalization over (batch, time).

    Training mode uses batch statistics and updates the running averages in
    place (``running = momentum*running + (1-momentum)*batch``).
    """
    c = x.shape[1]
    if state.running_mean.shape != (c,) or gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm over {c} channels got state/affine of different size")
    g = gamma.data[None, :, None]
    if training:
        n = x.shape[0] * x.shape[2]
        mean = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1 - m) * mean
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_var[...] = m * state.running_var + (1 - m) * unbiased
    else:
        n = None
        mean = state.running_mean.copy()
        var = state.running_var.copy()
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean[None, :, None]) * inv[None, :, None]
    y = g * xhat + beta.data[None, :, None]

    def factory(out):
        def bw():
            gy = out.grad
            gamma._accum((gy * xhat).sum(axis=(0, 2)))
            beta._accum(gy.sum(axis=(0, 2)))
            if x.requires_grad:
                gxhat = gy * g
                if training:
                    s1 = gxhat.sum(axis=(0, 2), keepdims=True)
                    s2 = (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
                    x._accum(inv[None, :, None] / n * (n * gxhat - s1 - xhat * s2))
                else:
                    x._accum(gxhat * inv[None, :, None])
        return bw

    return _node(y, (x, gamma, beta), factory)


# --- losses -----------------------------------------------------------------------


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error over every element."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred.data - target
    n = diff.size
    return _node(
        np.array(np.mean(diff**2)), (pred,), lambda out: lambda: pred._accum(out.grad * 2.0 * diff / n)
    )


def binary_cross_entropy2(pred: Tensor, target: np.ndarray, delta: float = 1e-7) -> Tensor:
    """Mean base-2 binary cross-entropy; predictions clamped to [delta, 1-delta]."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    p = np.clip(pred.data, delta, 1.0 - delta)
    inside = (pred.data >= delta) & (pred.data <= 1.0 - delta)
    n = p.size
    val = -np.mean(target * np.log2(p) + (1.0 - target) * np.log2(1.0 - p))

    def factory(out):
        def bw():
            d = -(target / p - (1.0 - target) / (1.0 - p)) / (np.log(2.0) * n)
            pred._accum(out.grad * d * inside)
        return bw

    return _node(np.array(val), (pred,), factory)
