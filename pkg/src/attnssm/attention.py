"""Causal linear attention, its SSM correspondence, and window self-attention."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ssm import DiscreteSsm, SsmParams, selective_scan
from .tensor import ConfigError, DimensionError, NumericError, softmax_lastdim


def elu_plus_one(u: np.ndarray) -> np.ndarray:
    return np.where(u > 0, u + 1.0, np.exp(np.minimum(u, 0.0)))


@dataclass
class QkvTriple:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        Q, K, V = (np.asarray(a) for a in (self.Q, self.K, self.V))
        if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
            raise DimensionError("Q, K, V must be 2-D (L x d)")
        if not (Q.shape[0] == K.shape[0] == V.shape[0]):
            raise DimensionError(f"sequence lengths differ: Q {Q.shape}, K {K.shape}, V {V.shape}")
        if Q.shape[1] != K.shape[1]:
            raise DimensionError(f"Q {Q.shape} and K {K.shape} widths differ")
        self.Q, self.K, self.V = Q, K, V

    def mapped(self, feature_map) -> "QkvTriple":
        if feature_map is None:
            return self
        return QkvTriple(feature_map(self.Q), feature_map(self.K), self.V)


def linear_attention_weights(t: QkvTriple, feature_map=elu_plus_one) -> np.ndarray:
    """Lower-triangular ``w[i, j] = Q_i K_j^T / sum_{t<=i} Q_i K_t^T``."""
    t = t.mapped(feature_map)
    scores = np.tril(t.Q @ t.K.T)
    denom = scores.sum(axis=1)
    bad = np.flatnonzero(denom == 0)
    if bad.size:
        raise NumericError(f"zero attention denominator at position {bad[0]}")
    return scores / denom[:, None]


def causal_linear_attention_direct(t: QkvTriple, feature_map=elu_plus_one) -> np.ndarray:
    """O(L^2) evaluation of the normalized causal linear attention."""
    return linear_attention_weights(t, feature_map) @ t.V


def causal_linear_attention_recurrent(t: QkvTriple, feature_map=elu_plus_one,
                                      normalize: bool = True) -> np.ndarray:
    """Running-sum form: ``S_i = S_{i-1} + K_i^T V_i``, ``Z_i = Z_{i-1} + K_i^T``.

    ``y_i = Q_i S_i / Q_i Z_i``; with ``normalize=False`` the denominator is
    dropped and ``y_i = Q_i S_i``.
    """
    m = t.mapped(feature_map)
    L, dk = m.Q.shape
    dv = m.V.shape[1]
    dtype = np.result_type(m.Q, m.K, m.V)
    S = np.zeros((dk, dv), dtype=dtype)
    Z = np.zeros(dk, dtype=dtype)
    y = np.empty((L, dv), dtype=dtype)
    for i in range(L):
        S = S + np.outer(m.K[i], m.V[i])
        Z = Z + m.K[i]
        num = m.Q[i] @ S
        if normalize:
            den = m.Q[i] @ Z
            if den == 0:
                raise NumericError(f"zero attention denominator at position {i}")
            num = num / den
        y[i] = num
    return y


@dataclass
class Correspondence:
    ssm_term: str
    attn_term: str
    ssm_shape: tuple
    attn_shape: tuple
    shape_valid: bool


@dataclass
class CorrespondenceReport:
    pairs: list[Correspondence] = field(default_factory=list)
    ssm_template: str = "h_i = A_bar h_{i-1} + B (Delta x_i);  y_i = C h_i / I + D x_i"
    attn_template: str = "S_i = I S_{i-1} + K_i^T V_i;  y_i = Q_i S_i / Q_i Z_i + O x_i"
    shared_template: bool = True

    @property
    def all_valid(self) -> bool:
        return self.shared_template and all(p.shape_valid for p in self.pairs)

    def __str__(self) -> str:
        rows = [f"{p.ssm_term:>3} ~ {p.attn_term:<4} {str(p.ssm_shape):>12} {str(p.attn_shape):>12}"
                f"  {'ok' if p.shape_valid else 'MISMATCH'}" for p in self.pairs]
        return "\n".join([self.ssm_template, self.attn_template] + rows)


def common_form_report(ssm: SsmParams, attn: QkvTriple) -> CorrespondenceReport:
    """Bind the SSM and linear-attention recurrences term by term.

    Both share ``state_i = transition * state_{i-1} + (key-like)^T (value-like)_i``
    with a query-like readout; this checks the shapes of the pairing
    ``h ~ S``, ``B ~ K^T``, ``C ~ Q``.
    """
    C, d = ssm.A.shape
    L = ssm.B.shape[-2]
    Lq, dk = attn.Q.shape
    dv = attn.V.shape[1]
    if d != dk:
        raise DimensionError(f"state size d={d} does not match query/key width {dk}")
    if L != Lq:
        raise DimensionError(f"sequence length {L} does not match attention length {Lq}")
    # h_i is stored channel-major (C x d); S_i is (d_k x d_v), so h ~ S^T.
    pairs = [
        Correspondence("h", "S^T", (C, d), (dv, dk), C == dv),
        Correspondence("B", "K", ssm.B.shape[-2:], attn.K.shape, ssm.B.shape[-2:] == attn.K.shape),
        Correspondence("C", "Q", ssm.C_out.shape[-2:], attn.Q.shape,
                       ssm.C_out.shape[-2:] == attn.Q.shape),
    ]
    return CorrespondenceReport(pairs=pairs)


def degenerate_correspondence_error(t: QkvTriple) -> float:
    """Max abs gap between the scan and unnormalized linear attention.

    The SSM is built with ``A_bar = 1``, ``D = 0``, ``B_bar = K`` (unit step),
    ``C = Q`` and the value columns as channels, which makes both recurrences
    identical term by term.
    """
    L, dk = t.Q.shape
    dv = t.V.shape[1]
    A_bar = np.ones((L, dv, dk))
    B_bar = np.broadcast_to(t.K[:, None, :], (L, dv, dk)).copy()
    y_scan, _ = selective_scan(DiscreteSsm(A_bar, B_bar), t.Q, np.zeros(dv), t.V)
    y_attn = causal_linear_attention_recurrent(t, feature_map=None, normalize=False)
    return float(np.max(np.abs(y_scan - y_attn)))


# ---------------------------------------------------------------------------
# window multi-head self-attention


def relative_position_index(window: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    return rel[0] * (2 * window - 1) + rel[1]


def init_window_weights(channels: int, heads: int, window: int, rng: np.random.Generator,
                        dtype=np.float64) -> dict[str, np.ndarray]:
    s = 1.0 / np.sqrt(channels)
    return {
        "qkv_w": rng.uniform(-s, s, (channels, 3 * channels)).astype(dtype),
        "qkv_b": np.zeros(3 * channels, dtype=dtype),
        "proj_w": rng.uniform(-s, s, (channels, channels)).astype(dtype),
        "proj_b": np.zeros(channels, dtype=dtype),
        "rel_bias": (0.02 * rng.standard_normal(((2 * window - 1) ** 2, heads))).astype(dtype),
    }


def _reflect_index(n: int, window: int) -> np.ndarray:
    pad = (-n) % window
    return np.pad(np.arange(n), (0, pad), mode="reflect") if pad else np.arange(n)


def window_mhsa_forward(x: np.ndarray, heads: int, window: int, weights: dict):
    """Non-overlapping window attention on ``(B, H, W, C)`` (or ``(H, W, C)``).

    Returns ``(out, cache)`` for :func:`window_mhsa_backward`.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    Bn, H, W, C = x.shape
    if C % heads:
        raise ConfigError(f"{heads} heads do not divide {C} channels")
    if window < 1:
        raise ConfigError("window must be positive")
    hd = C // heads
    ih, iw = _reflect_index(H, window), _reflect_index(W, window)
    xp = x[:, ih][:, :, iw]
    Hp, Wp = len(ih), len(iw)
    nh, nw = Hp // window, Wp // window
    N = window * window
    xw = (xp.reshape(Bn, nh, window, nw, window, C).transpose(0, 1, 3, 2, 4, 5)
          .reshape(Bn * nh * nw, N, C))
    qkv = xw @ weights["qkv_w"] + weights["qkv_b"]
    qkv = qkv.reshape(-1, N, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    scale = hd ** -0.5
    q, k, v = qkv[0] * scale, qkv[1], qkv[2]
    rpi = relative_position_index(window)
    bias = weights["rel_bias"][rpi].transpose(2, 0, 1)  # heads, N, N
    attn = softmax_lastdim(q @ k.swapaxes(-1, -2) + bias)
    o = (attn @ v).transpose(0, 2, 1, 3).reshape(-1, N, C)
    ow = o @ weights["proj_w"] + weights["proj_b"]
    outp = (ow.reshape(Bn, nh, nw, window, window, C).transpose(0, 1, 3, 2, 4, 5)
            .reshape(Bn, Hp, Wp, C))
    out = outp[:, :H, :W]
    cache = dict(x_shape=x.shape, squeeze=squeeze, ih=ih, iw=iw, xw=xw, q=q, k=k, v=v,
                 attn=attn, o=o, rpi=rpi, heads=heads, window=window, scale=scale,
                 weights=weights, nh=nh, nw=nw)
    return (out[0] if squeeze else out), cache


def window_mhsa(x: np.ndarray, heads: int, window: int, weights: dict) -> np.ndarray:
    return window_mhsa_forward(x, heads, window, weights)[0]


def window_mhsa_backward(grad_out: np.ndarray, cache: dict):
    """Returns ``(grad_x, grads)`` with ``grads`` keyed like the weights."""
    w = cache["weights"]
    Bn, H, W, C = cache["x_shape"]
    ih, iw = cache["ih"], cache["iw"]
    window, heads, nh, nw = cache["window"], cache["heads"], cache["nh"], cache["nw"]
    Hp, Wp = len(ih), len(iw)
    N = window * window
    hd = C // heads
    g = grad_out[None] if cache["squeeze"] else grad_out
    gp = np.zeros((Bn, Hp, Wp, C), dtype=g.dtype)
    gp[:, :H, :W] = g
    gow = (gp.reshape(Bn, nh, window, nw, window, C).transpose(0, 1, 3, 2, 4, 5)
           .reshape(-1, N, C))
    o, attn, q, k, v, xw = (cache[n] for n in ("o", "attn", "q", "k", "v", "xw"))
    grads = {
        "proj_w": o.reshape(-1, C).T @ gow.reshape(-1, C),
        "proj_b": gow.sum(axis=(0, 1)),
    }
    go = (gow @ w["proj_w"].T).reshape(-1, N, heads, hd).transpose(0, 2, 1, 3)
    gattn = go @ v.swapaxes(-1, -2)
    gv = attn.swapaxes(-1, -2) @ go
    glogits = attn * (gattn - (gattn * attn).sum(-1, keepdims=True))
    gq = glogits @ k * cache["scale"]
    gk = glogits.swapaxes(-1, -2) @ q
    gbias = glogits.sum(axis=0)  # heads, N, N
    grel = np.zeros_like(w["rel_bias"])
    np.add.at(grel, cache["rpi"].ravel(), gbias.reshape(heads, -1).T)
    grads["rel_bias"] = grel
    gqkv = np.stack([gq, gk, gv]).transpose(1, 3, 0, 2, 4).reshape(-1, N, 3 * C)
    grads["qkv_w"] = xw.reshape(-1, C).T @ gqkv.reshape(-1, 3 * C)
    grads["qkv_b"] = gqkv.sum(axis=(0, 1))
    gxw = gqkv @ w["qkv_w"].T
    gxp = (gxw.reshape(Bn, nh, nw, window, window, C).transpose(0, 1, 3, 2, 4, 5)
           .reshape(Bn, Hp, Wp, C))
    if (Hp, Wp) == (H, W):
        return (gxp[0] if cache["squeeze"] else gxp), grads
    # adjoint of the reflection-pad gather
    gx_rows = np.zeros((Bn, H, Wp, C), dtype=gxp.dtype)
    np.add.at(gx_rows, (slice(None), ih), gxp)
    gx = np.zeros((Bn, H, W, C), dtype=gxp.dtype)
    np.add.at(gx, (slice(None), slice(None), iw), gx_rows)
    return (gx[0] if cache["squeeze"] else gx), grads
