"""Restoration network: ASSM, ASSB (local window attention + global ASSM), ASSG, heads."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .ase import (PromptPool, Router, attentive_scan_backward, attentive_scan_with_states, route,
                  route_backward, select_prompts, select_prompts_backward)
from .attention import window_mhsa_backward, window_mhsa_forward
from .config import ModelConfig
from .nn import (FFN, Conv3x3, DepthwiseConv3x3, LayerNorm, Linear, Module, Param, pixel_shuffle,
                 pixel_unshuffle)
from .sgn import build_plan, sgn_fold, sgn_unfold
from .ssm import SsmParams, discretize, discretize_backward
from .tensor import RngState, StateError

DELTA_FLOOR = 1e-4
IMG_MEAN = 0.5


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class WindowAttention(Module):
    def __init__(self, dim: int, heads: int, window: int, rng, dtype):
        s = 1.0 / np.sqrt(dim)
        self.qkv_w = Param(rng.uniform(-s, s, (dim, 3 * dim)).astype(dtype))
        self.qkv_b = Param(np.zeros(3 * dim, dtype=dtype))
        self.proj_w = Param(rng.uniform(-s, s, (dim, dim)).astype(dtype))
        self.proj_b = Param(np.zeros(dim, dtype=dtype))
        self.rel_bias = Param((0.02 * rng.standard_normal(((2 * window - 1) ** 2, heads))).astype(dtype))
        self._heads, self._window = heads, window

    def weights(self) -> dict:
        return {k: getattr(self, k).data for k in ("qkv_w", "qkv_b", "proj_w", "proj_b", "rel_bias")}

    def forward(self, x):
        out, self._cache = window_mhsa_forward(x, self._heads, self._window, self.weights())
        return out

    def backward(self, g):
        gx, grads = window_mhsa_backward(g, self._cache)
        for k, v in grads.items():
            getattr(self, k).grad += v
        return gx


class ASSM(Module):
    """Positional encoding -> routing -> SGN unfold -> attentive scan -> SGN fold -> projection."""

    def __init__(self, dim: int, cfg: ModelConfig, shared_N: Param, rng, dtype, layer_index: int = 0):
        d, T, r = cfg.d_state, cfg.num_prompts, cfg.prompt_rank
        self.pe = DepthwiseConv3x3(dim, rng, dtype)
        self.route = Linear(dim, T, rng, dtype)
        self.prompt_M = Param((rng.standard_normal((T, r)) / np.sqrt(r)).astype(dtype))
        self.in_proj = Linear(dim, dim, rng, dtype)
        self.x_proj = Linear(dim, dim + 2 * d, rng, dtype)
        # Delta starts log-uniform in [1e-3, 1e-1]; bias is its softplus inverse
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), dim))
        self.dt_bias = Param((dt + np.log(-np.expm1(-dt))).astype(dtype))
        self.A_log = Param(np.zeros((dim, d), dtype=dtype))   # A = -exp(A_log) = -1
        self.D = Param(np.ones(dim, dtype=dtype))
        self.out_proj = Linear(dim, dim, rng, dtype)
        self._N = shared_N
        self._cfg = cfg
        self._layer = layer_index
        self.routing_mode = cfg.routing_mode

    def ssm_A(self):
        return -np.exp(self.A_log.data)

    def forward(self, x, rng: RngState | None = None):
        Bn, H, W, C = x.shape
        L, d = H * W, self._cfg.d_state
        xpe = x + self.pe.forward(x)
        xf = xpe.reshape(Bn, L, C)
        router = Router(self.route.weight.data, self.route.bias.data,
                        self._cfg.temperature, self.routing_mode)
        res = route(router, xf, None if rng is None else rng.split(self._layer))
        plan = build_plan(res.labels, self._cfg.num_prompts)
        pool = PromptPool(self.prompt_M.data, self._N.data)
        P = select_prompts(pool, res)
        xs = sgn_unfold(xf, plan)
        Ps = sgn_unfold(P, plan)
        u = self.in_proj.forward(xs)
        proj = self.x_proj.forward(u)
        dt_raw = proj[..., :C] + self.dt_bias.data
        Bm, Cm = proj[..., C:C + d], proj[..., C + d:]
        delta = softplus(dt_raw) + DELTA_FLOOR
        params = SsmParams(self.ssm_A(), Bm, Cm, delta, self.D.data)
        ds = discretize(params)
        ys, Hs = attentive_scan_with_states(ds, Cm, self.D.data, u, Ps)
        y = sgn_fold(ys, plan)
        out = self.out_proj.forward(y)
        self._cache = dict(shape=x.shape, router=router, res=res, plan=plan, pool=pool, Ps=Ps,
                           u=u, dt_raw=dt_raw, params=params, ds=ds, Hs=Hs)
        return out.reshape(Bn, H, W, C)

    def backward(self, g):
        c = getattr(self, "_cache", None)
        if c is None:
            raise StateError("ASSM.backward called before forward")
        Bn, H, W, C = c["shape"]
        plan, params, ds = c["plan"], c["params"], c["ds"]
        gy = self.out_proj.backward(g.reshape(Bn, H * W, C))
        gys = sgn_unfold(gy, plan)
        gs = attentive_scan_backward(ds, params.C_out, params.D, c["u"], c["Ps"], gys, H=c["Hs"])
        gd = discretize_backward(params, ds, gs["A_bar"], gs["B_bar"])
        self.A_log.grad += (gd["A"] * params.A).reshape(self.A_log.shape)
        self.D.grad += gs["D"]
        g_dt = gd["Delta"] * sigmoid(c["dt_raw"])
        self.dt_bias.grad += g_dt.reshape(-1, C).sum(0)
        gproj = np.concatenate([g_dt, gd["B"], gs["C_out"]], axis=-1)
        gu = gs["x"] + self.x_proj.backward(gproj)
        gxs = self.in_proj.backward(gu)
        gP = sgn_fold(gs["P"], plan)
        gsel = select_prompts_backward(c["pool"], c["res"], gP)
        self.prompt_M.grad += gsel["M"]
        self._N.grad += gsel["N"]
        groute = route_backward(c["router"], c["res"], gsel["R"])
        self.route.weight.grad += groute["proj"]
        self.route.bias.grad += groute["bias"]
        gxf = sgn_fold(gxs, plan) + groute["x"]
        gxpe = gxf.reshape(Bn, H, W, C)
        return gxpe + self.pe.backward(gxpe)

    def last_discrete(self):
        """``(A_bar, B_bar, C)`` from the latest forward, for decay analysis."""
        c = self._cache
        return c["ds"], c["params"].C_out


class ASSB(Module):
    """Local half (window MHSA + FFN) then global half (ASSM + FFN)."""

    def __init__(self, cfg: ModelConfig, shared_N: Param, rng, dtype, layer_index: int = 0):
        C = cfg.channels
        self.norm1 = LayerNorm(C, dtype)
        self.attn = WindowAttention(C, cfg.heads, cfg.window, rng, dtype)
        self.scale1 = Param(np.array(1.0, dtype=dtype))
        self.norm2 = LayerNorm(C, dtype)
        self.ffn1 = FFN(C, cfg.ffn_expansion, rng, dtype)
        self.norm3 = LayerNorm(C, dtype)
        self.assm = ASSM(C, cfg, shared_N, rng, dtype, layer_index)
        self.scale2 = Param(np.array(1.0, dtype=dtype))
        self.norm4 = LayerNorm(C, dtype)
        self.ffn2 = FFN(C, cfg.ffn_expansion, rng, dtype)

    def forward(self, x, rng: RngState | None = None):
        a = self.attn.forward(self.norm1.forward(x))
        x1 = x + self.scale1.data * a
        x2 = x1 + self.ffn1.forward(self.norm2.forward(x1))
        m = self.assm.forward(self.norm3.forward(x2), rng)
        x3 = x2 + self.scale2.data * m
        self._mix = (a, m)
        return x3 + self.ffn2.forward(self.norm4.forward(x3))

    def backward(self, g):
        a, m = self._mix
        g3 = g + self.norm4.backward(self.ffn2.backward(g))
        self.scale2.grad += (g3 * m).sum()
        g2 = g3 + self.norm3.backward(self.assm.backward(g3 * self.scale2.data))
        g1 = g2 + self.norm2.backward(self.ffn1.backward(g2))
        self.scale1.grad += (g1 * a).sum()
        return g1 + self.norm1.backward(self.attn.backward(g1 * self.scale1.data))


class ASSG(Module):
    def __init__(self, cfg: ModelConfig, shared_N: Param, rng, dtype, first_layer: int = 0):
        self.blocks = [ASSB(cfg, shared_N, rng, dtype, first_layer + i) for i in range(cfg.depth)]
        self.conv = Conv3x3(cfg.channels, cfg.channels, rng, dtype)

    def forward(self, x, rng=None):
        y = x
        for b in self.blocks:
            y = b.forward(y, rng)
        return x + self.conv.forward(y)

    def backward(self, g):
        gy = self.conv.backward(g)
        for b in reversed(self.blocks):
            gy = b.backward(gy)
        return g + gy


class RestorationNet(Module):
    """Shallow 3x3 conv -> ASSGs -> conv -> global residual -> task head.

    Images are channels-last in [0, 1]; a batch axis is optional.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.config = cfg
        dtype = cfg.np_dtype
        rng = np.random.Generator(np.random.Philox(key=seed))
        C, d, r = cfg.channels, cfg.d_state, cfg.prompt_rank
        self.prompt_N = Param((rng.standard_normal((r, d)) / np.sqrt(d)).astype(dtype))
        self.conv_first = Conv3x3(cfg.in_channels, C, rng, dtype)
        self.groups = [ASSG(cfg, self.prompt_N, rng, dtype, first_layer=g * cfg.depth)
                       for g in range(cfg.groups)]
        self.conv_body = Conv3x3(C, C, rng, dtype)
        if cfg.head == "pixelshuffle-sr":
            self.conv_up = Conv3x3(C, cfg.in_channels * cfg.scale ** 2, rng, dtype)
        else:
            self.conv_last = Conv3x3(C, cfg.in_channels, rng, dtype)

    # -- structure helpers
    def blocks(self) -> list[ASSB]:
        return [b for g in self.groups for b in g.blocks]

    def assms(self) -> list[ASSM]:
        return [b.assm for b in self.blocks()]

    def set_routing(self, mode: str) -> None:
        for m in self.assms():
            m.routing_mode = mode

    def forward(self, img: np.ndarray, rng: RngState | None = None) -> np.ndarray:
        squeeze = img.ndim == 3
        x = (img[None] if squeeze else img).astype(self.config.np_dtype, copy=False)
        self._squeeze = squeeze
        f0 = self.conv_first.forward(x - IMG_MEAN)
        b = f0
        for g in self.groups:
            b = g.forward(b, rng)
        feat = f0 + self.conv_body.forward(b)
        if self.config.head == "pixelshuffle-sr":
            out = pixel_shuffle(self.conv_up.forward(feat), self.config.scale) + IMG_MEAN
        else:
            out = x + self.conv_last.forward(feat)
        return out[0] if squeeze else out

    def backward(self, g_out: np.ndarray) -> np.ndarray:
        g = g_out[None] if self._squeeze else g_out
        if self.config.head == "pixelshuffle-sr":
            g_feat = self.conv_up.backward(pixel_unshuffle(g, self.config.scale))
            g_in = 0.0
        else:
            g_feat = self.conv_last.backward(g)
            g_in = g
        g_b = self.conv_body.backward(g_feat)
        for grp in reversed(self.groups):
            g_b = grp.backward(g_b)
        g_x = g_in + self.conv_first.backward(g_feat + g_b)
        return g_x[0] if self._squeeze else g_x

    # -- serialization
    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for n, p in own.items():
            if state[n].shape != p.data.shape:
                raise ValueError(f"{n}: shape {state[n].shape} != {p.data.shape}")
            p.data[...] = state[n]


def count_params(cfg: ModelConfig) -> list[tuple[str, int]]:
    """Element count of every named weight (shared tensors once)."""
    net = RestorationNet(cfg)
    return [(name, p.size) for name, p in net.named_parameters()]


def summarize_params(rows: list[tuple[str, int]]) -> "OrderedDict[str, int]":
    """Aggregate :func:`count_params` rows by top-level module."""
    out: OrderedDict[str, int] = OrderedDict()
    for name, n in rows:
        key = name.split(".")[0]
        if key == "groups":
            key = ".".join(name.split(".")[:2])
        out[key] = out.get(key, 0) + n
    return out
