"""Convolutional building blocks on top of :mod:`rlsrgan.tensor`."""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .tensor import Tensor, _make, default_dtype, leaky_relu, linear, prelu

__all__ = [
    "conv2d", "batch_norm", "pixel_shuffle", "pixel_unshuffle", "global_avg_pool",
    "Module", "Conv2d", "BatchNorm2d", "PReLU", "Linear",
]


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding, NCHW layout."""
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be NCHW, got shape {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be (Cout, Cin, k, k), got shape {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input has Cin={cin}, weight expects Cin={wcin}")
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d kernel must be square and odd, got {k}x{k2}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d needs stride >= 1 and pad >= 0 (got stride={stride}, pad={pad})")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d input height/width {h}x{w} too small for kernel {k} with pad {pad}")

    # channel-last, padded copy; one GEMM per kernel offset
    xl = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    if pad:
        xl = np.pad(xl, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    wt = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0))  # k, k, Cin, Cout
    rows = n * ho * wo
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1

    def patch(i, j):
        return xl[:, i:i + hspan:stride, j:j + wspan:stride, :].reshape(rows, cin)

    out = np.zeros((rows, cout), dtype=np.result_type(x.data, weight.data))
    for i in range(k):
        for j in range(k):
            out += patch(i, j) @ wt[i, j]
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(rows, cout)
        gx = np.zeros_like(xl) if x.requires_grad else None
        gw = np.empty_like(wt) if weight.requires_grad else None
        for i in range(k):
            for j in range(k):
                if gw is not None:
                    gw[i, j] = patch(i, j).T @ g2
                if gx is not None:
                    gx[:, i:i + hspan:stride, j:j + wspan:stride, :] += (g2 @ wt[i, j].T).reshape(n, ho, wo, cin)
        if gx is not None:
            if pad:
                gx = gx[:, pad:pad + h, pad:pad + w, :]
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        if gw is not None:
            gw = np.ascontiguousarray(gw.transpose(3, 2, 0, 1))
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation over (N, H, W).

    In training mode the running statistics are updated in place.
    """
    if x.ndim != 4:
        raise ValueError(f"batch_norm input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: gamma/beta must have shape ({c},)")
    xd = x.data
    bshape = (1, c, 1, 1)
    if training:
        m = n * h * w
        if m < 2:
            raise ValueError("batch_norm in training mode needs N*H*W >= 2 (variance undefined)")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        m = None
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape).astype(xd.dtype)) * inv_std.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = gd * xhat + beta.data.reshape(bshape)

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gd
        if training:
            s1 = dxhat.sum(axis=(0, 2, 3)).reshape(bshape)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(bshape)
            dx = (inv_std.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), bw)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r) periodic shuffle."""
    n, crr, h, w = x.shape
    if r < 1 or crr % (r * r):
        raise ValueError(f"pixel_shuffle: channel count {crr} not divisible by r^2={r * r}")
    c = crr // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def bw(g):
        return (g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, crr, h, w),)

    return _make(np.ascontiguousarray(out), (x,), bw)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    n, c, hr, wr = x.shape
    if r < 1 or hr % r or wr % r:
        raise ValueError(f"pixel_unshuffle: spatial dims {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    out = x.data.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)

    def bw(g):
        return (g.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, hr, wr),)

    return _make(np.ascontiguousarray(out), (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return x.mean(axis=(2, 3))


# -- modules ------------------------------------------------------------------

class Module:
    """Tiny parameter container: tensors, numpy buffers and child modules
    are discovered from instance attributes in definition order."""

    training: bool = True

    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            yield key, value

    def named_tensors(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        found = []
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                found.append((name, value))
            elif isinstance(value, Module):
                found.extend(value.named_tensors(name + "."))
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Module):
                        found.extend(item.named_tensors(f"{name}.{idx}."))
        return found

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_tensors(prefix) if t.requires_grad]

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> List[Tuple[str, np.ndarray]]:
        found = []
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, np.ndarray):
                found.append((name, value))
            elif isinstance(value, Module):
                found.extend(value.named_buffers(name + "."))
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Module):
                        found.extend(item.named_buffers(f"{name}.{idx}."))
        return found

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.named_tensors()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        tensors = dict(self.named_tensors())
        buffers = dict(self.named_buffers())
        expected = set(tensors) | set(buffers)
        missing = expected - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for name, t in tensors.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {t.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)
        for name, buf in buffers.items():
            arr = np.asarray(state[name])
            if arr.shape != buf.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {buf.shape}")
            buf[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, slope: float = 0.25) -> np.ndarray:
    gain = math.sqrt(2.0 / (1.0 + slope ** 2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, pad: Optional[int] = None, bias: bool = True):
        fan_in = cin * kernel * kernel
        self.weight = Tensor(_kaiming_uniform(rng, (cout, cin, kernel, kernel), fan_in), requires_grad=True)
        if bias:
            b = 1.0 / math.sqrt(fan_in)
            self.bias = Tensor(rng.uniform(-b, b, size=cout), requires_grad=True)
        else:
            self.bias = None
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=default_dtype())
        self.running_var = np.ones(channels, dtype=default_dtype())
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                          self.training, self.momentum, self.eps)


class PReLU(Module):
    def __init__(self, channels: int, init: float = 0.25):
        self.slope = Tensor(np.full(channels, init), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return prelu(x, self.slope)


class LeakyReLU(Module):
    def __init__(self, alpha: float = 0.2):
        self.alpha = alpha

    def forward(self, x: Tensor) -> Tensor:
        return leaky_relu(x, self.alpha)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator):
        self.weight = Tensor(_kaiming_uniform(rng, (fout, fin), fin), requires_grad=True)
        b = 1.0 / math.sqrt(fin)
        self.bias = Tensor(rng.uniform(-b, b, size=fout), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)
