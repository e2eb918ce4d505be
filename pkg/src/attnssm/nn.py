"""Minimal layer toolkit with hand-written backward passes.

Every layer caches what its backward needs during ``forward`` (one forward in
flight per layer) and accumulates parameter gradients into ``Param.grad``.
Activations are channels-last: ``(B, H, W, C)`` or ``(..., C)``.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np
from scipy.special import erf

from .tensor import DimensionError


class Param:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Param(shape={self.data.shape}, dtype={self.data.dtype})"


class Module:
    def named_parameters(self, prefix: str = "", _seen: set | None = None) -> Iterator[tuple[str, Param]]:
        """Parameters in definition order; a shared Param is reported once."""
        seen = set() if _seen is None else _seen
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(val, Param):
                if id(val) not in seen:
                    seen.add(id(val))
                    yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".", seen)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.", seen)

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng, fan_in, shape, dtype):
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, shape).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float32, bias: bool = True):
        self.weight = Param(_uniform(rng, n_in, (n_in, n_out), dtype))
        self.bias = Param(np.zeros(n_out, dtype=dtype)) if bias else None

    def forward(self, x):
        self._x = x
        y = x @ self.weight.data
        return y + self.bias.data if self.bias is not None else y

    def backward(self, g):
        x = self._x
        self.weight.grad += x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if self.bias is not None:
            self.bias.grad += g.reshape(-1, g.shape[-1]).sum(0)
        return g @ self.weight.data.T


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.weight = Param(np.ones(dim, dtype=dtype))
        self.bias = Param(np.zeros(dim, dtype=dtype))
        self._eps = eps

    def forward(self, x):
        mu = x.mean(-1, keepdims=True)
        xc = x - mu
        rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + self._eps)
        xhat = xc * rstd
        self._cache = (xhat, rstd)
        return xhat * self.weight.data + self.bias.data

    def backward(self, g):
        xhat, rstd = self._cache
        C = xhat.shape[-1]
        self.weight.grad += (g * xhat).reshape(-1, C).sum(0)
        self.bias.grad += g.reshape(-1, C).sum(0)
        gx = g * self.weight.data
        return rstd * (gx - gx.mean(-1, keepdims=True) - xhat * (gx * xhat).mean(-1, keepdims=True))


class GELU(Module):
    def forward(self, x):
        self._x = x
        return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))

    def backward(self, g):
        x = self._x
        cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return g * (cdf + x * pdf)


class FFN(Module):
    """Linear -> GELU -> Linear over the channel dimension."""

    def __init__(self, dim: int, expansion: float, rng, dtype=np.float32):
        hidden = int(round(dim * expansion))
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.act = GELU()
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, g):
        return self.fc1.backward(self.act.backward(self.fc2.backward(g)))


class Conv3x3(Module):
    """3x3 convolution, stride 1, zero padding 1; weights stored (3, 3, Cin, Cout)."""

    def __init__(self, c_in: int, c_out: int, rng, dtype=np.float32):
        self.weight = Param(_uniform(rng, 9 * c_in, (3, 3, c_in, c_out), dtype))
        self.bias = Param(np.zeros(c_out, dtype=dtype))

    def forward(self, x):
        Bn, H, W, C = x.shape
        if C != self.weight.shape[2]:
            raise DimensionError(f"conv expects {self.weight.shape[2]} channels, got {C}")
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        cols = np.stack([xp[:, i:i + H, j:j + W] for i in range(3) for j in range(3)], axis=3)
        cols = cols.reshape(Bn * H * W, 9 * C)
        self._cache = (cols, x.shape)
        out = cols @ self.weight.data.reshape(9 * C, -1) + self.bias.data
        return out.reshape(Bn, H, W, -1)

    def backward(self, g):
        cols, (Bn, H, W, C) = self._cache
        g2 = g.reshape(-1, g.shape[-1])
        self.weight.grad += (cols.T @ g2).reshape(self.weight.shape)
        self.bias.grad += g2.sum(0)
        gcols = (g2 @ self.weight.data.reshape(9 * C, -1).T).reshape(Bn, H, W, 9, C)
        gxp = np.zeros((Bn, H + 2, W + 2, C), dtype=g.dtype)
        for n, (i, j) in enumerate((i, j) for i in range(3) for j in range(3)):
            gxp[:, i:i + H, j:j + W] += gcols[:, :, :, n]
        return gxp[:, 1:-1, 1:-1]


class DepthwiseConv3x3(Module):
    def __init__(self, dim: int, rng, dtype=np.float32):
        self.weight = Param(_uniform(rng, 9, (3, 3, dim), dtype))
        self.bias = Param(np.zeros(dim, dtype=dtype))

    def forward(self, x):
        _, H, W, _ = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        self._xp = xp
        out = np.zeros_like(x)
        for i in range(3):
            for j in range(3):
                out += xp[:, i:i + H, j:j + W] * self.weight.data[i, j]
        return out + self.bias.data

    def backward(self, g):
        xp = self._xp
        _, H, W, C = g.shape
        gxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                self.weight.grad[i, j] += (g * xp[:, i:i + H, j:j + W]).reshape(-1, C).sum(0)
                gxp[:, i:i + H, j:j + W] += g * self.weight.data[i, j]
        self.bias.grad += g.reshape(-1, C).sum(0)
        return gxp[:, 1:-1, 1:-1]


def pixel_shuffle(x: np.ndarray, s: int) -> np.ndarray:
    """``(B, H, W, C*s*s) -> (B, s*H, s*W, C)``; channel ``c*s*s + i*s + j`` lands at offset ``(i, j)``."""
    Bn, H, W, Cs = x.shape
    if Cs % (s * s):
        raise DimensionError(f"{Cs} channels not divisible by scale^2={s * s}")
    C = Cs // (s * s)
    return x.reshape(Bn, H, W, C, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(Bn, H * s, W * s, C)


def pixel_unshuffle(y: np.ndarray, s: int) -> np.ndarray:
    Bn, Hs, Ws, C = y.shape
    H, W = Hs // s, Ws // s
    return y.reshape(Bn, H, s, W, s, C).transpose(0, 1, 3, 5, 2, 4).reshape(Bn, H, W, C * s * s)
