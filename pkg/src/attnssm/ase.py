"""Attentive state-space equation: prompt pool, routing and ``y = (C + P) h + D x``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import instrument
from .ssm import (DiscreteSsm, SsmParams, discretize, discretize_backward, scan_backward,
                  scan_with_states)
from .tensor import (ConfigError, DimensionError, RngState, StateError, log_softmax_lastdim,
                     softmax_lastdim)

ROUTING_MODES = ("hard", "soft", "argmax")


@dataclass
class PromptPool:
    """Low-rank prompt bank ``M @ N`` of ``T`` prompts of width ``d``.

    ``M`` (T x r) is block specific; ``N`` (r x d) is shared between blocks.
    """

    M: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        if self.M.ndim != 2 or self.N.ndim != 2 or self.M.shape[1] != self.N.shape[0]:
            raise DimensionError(f"M {self.M.shape} and N {self.N.shape} do not chain")

    @property
    def T(self) -> int:
        return self.M.shape[0]

    @property
    def r(self) -> int:
        return self.M.shape[1]

    @property
    def d(self) -> int:
        return self.N.shape[1]

    def pool(self) -> np.ndarray:
        return self.M @ self.N


@dataclass
class Router:
    proj: np.ndarray            # (C, T)
    bias: np.ndarray            # (T,)
    temperature: float = 1.0
    mode: str = "hard"

    def __post_init__(self):
        if self.mode not in ROUTING_MODES:
            raise ConfigError(f"unknown routing mode {self.mode!r}")


@dataclass
class RoutingResult:
    R: np.ndarray               # (..., L, T)
    labels: np.ndarray          # (..., L) int64
    log_probs: np.ndarray       # (..., L, T)
    mode: str
    soft: np.ndarray | None = None   # relaxed sample, kept for the backward pass
    temperature: float = 1.0
    x_flat: np.ndarray | None = None


def gumbel_noise(rng: RngState, shape) -> np.ndarray:
    return rng.generator().gumbel(size=shape)


def route(router: Router, x_flat: np.ndarray, rng: RngState | None = None) -> RoutingResult:
    """Assign each token to a prompt.

    ``log_probs = logsoftmax(x @ proj + bias)``. In ``hard`` mode the forward
    value is the one-hot argmax of the gumbel-perturbed log-probabilities and
    the backward pass treats it as ``softmax((log_probs + g) / tau)``
    (straight-through). ``soft`` returns that relaxation itself; ``argmax`` is
    deterministic and carries no gradient. ``rng=None`` disables the noise.
    """
    tau = router.temperature
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if x_flat.shape[-1] != router.proj.shape[0]:
        raise DimensionError(f"x_flat {x_flat.shape} vs router projection {router.proj.shape}")
    logits = x_flat @ router.proj + router.bias
    instrument.add("macs:routing", x_flat[..., 0].size * router.proj.size)
    log_probs = log_softmax_lastdim(logits)
    T = log_probs.shape[-1]
    if router.mode == "argmax":
        labels = np.argmax(log_probs, axis=-1)
        R = np.eye(T, dtype=log_probs.dtype)[labels]
        return RoutingResult(R, labels, log_probs, "argmax", temperature=tau, x_flat=x_flat)
    z = log_probs if rng is None else log_probs + gumbel_noise(rng, log_probs.shape).astype(log_probs.dtype)
    soft = softmax_lastdim(z / tau)
    labels = np.argmax(soft, axis=-1)
    R = np.eye(T, dtype=soft.dtype)[labels] if router.mode == "hard" else soft
    return RoutingResult(R, labels, log_probs, router.mode, soft=soft, temperature=tau,
                         x_flat=x_flat)


def route_backward(router: Router, res: RoutingResult, grad_R: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients w.r.t. ``proj``, ``bias`` and the routed features."""
    if res.x_flat is None:
        raise StateError("routing result carries no forward intermediates")
    x = res.x_flat
    if res.mode == "argmax":
        return {"proj": np.zeros_like(router.proj), "bias": np.zeros_like(router.bias),
                "x": np.zeros_like(x)}
    y = res.soft
    g_lp = y * (grad_R - (grad_R * y).sum(-1, keepdims=True)) / res.temperature
    g_logits = g_lp - np.exp(res.log_probs) * g_lp.sum(-1, keepdims=True)
    C, T = router.proj.shape
    return {
        "proj": x.reshape(-1, C).T @ g_logits.reshape(-1, T),
        "bias": g_logits.reshape(-1, T).sum(0),
        "x": g_logits @ router.proj.T,
    }


def select_prompts(pool: PromptPool, res: RoutingResult) -> np.ndarray:
    """``P = R @ (M @ N)``: one prompt row per token."""
    if res.R.shape[-1] != pool.T:
        raise DimensionError(f"routing over {res.R.shape[-1]} prompts, pool has {pool.T}")
    instrument.add("macs:routing", res.R[..., 0].size * pool.T * pool.d)
    return res.R @ pool.pool()


def select_prompts_backward(pool: PromptPool, res: RoutingResult,
                            grad_P: np.ndarray) -> dict[str, np.ndarray]:
    T, d = pool.T, pool.d
    g_pool = res.R.reshape(-1, T).T @ grad_P.reshape(-1, d)
    return {"M": g_pool @ pool.N.T, "N": pool.M.T @ g_pool, "R": grad_P @ pool.pool().T}


def attentive_scan(ds: DiscreteSsm, C_out: np.ndarray, D: np.ndarray, x: np.ndarray,
                   P: np.ndarray) -> np.ndarray:
    """Scan whose readout matrix is ``C_out + P``; the state recurrence is unchanged."""
    return attentive_scan_with_states(ds, C_out, D, x, P)[0]


def attentive_scan_with_states(ds: DiscreteSsm, C_out: np.ndarray, D: np.ndarray, x: np.ndarray,
                               P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if P.shape != C_out.shape:
        raise DimensionError(f"prompts {P.shape} do not match C_out {C_out.shape}")
    instrument.add("macs:ssm", P.size)
    return scan_with_states(ds, C_out + P, D, x)


def attentive_scan_backward(ds: DiscreteSsm, C_out: np.ndarray, D: np.ndarray, x: np.ndarray,
                            P: np.ndarray, grad_y: np.ndarray,
                            H: np.ndarray | None = None) -> dict[str, np.ndarray]:
    g = scan_backward(ds, C_out + P, D, x, grad_y, H=H)
    g["P"] = g["C_out"]
    return g


def ase_forward(x_route: np.ndarray, x: np.ndarray, params: SsmParams, pool: PromptPool,
                router: Router, rng: RngState | None = None):
    """Route, select prompts and run the attentive scan. Returns ``(y, cache)``."""
    res = route(router, x_route, rng)
    P = select_prompts(pool, res)
    ds = discretize(params)
    y, H = attentive_scan_with_states(ds, params.C_out, params.D, x, P)
    cache = dict(res=res, P=P, ds=ds, H=H, x=x, params=params, pool=pool, router=router)
    return y, cache


def ase_backward(grad_y: np.ndarray, cache: dict | None) -> dict[str, np.ndarray]:
    """Gradients for the pool factors, router, SSM parameters and both inputs."""
    needed = ("res", "P", "ds", "H", "x", "params", "pool", "router")
    if cache is None or any(k not in cache for k in needed):
        raise StateError("ase_backward needs the cache returned by ase_forward")
    p: SsmParams = cache["params"]
    g_scan = attentive_scan_backward(cache["ds"], p.C_out, p.D, cache["x"], cache["P"], grad_y,
                                     H=cache["H"])
    g_disc = discretize_backward(p, cache["ds"], g_scan["A_bar"], g_scan["B_bar"])
    g_sel = select_prompts_backward(cache["pool"], cache["res"], g_scan["P"])
    g_route = route_backward(cache["router"], cache["res"], g_sel["R"])
    return {
        "M": g_sel["M"], "N": g_sel["N"],
        "proj": g_route["proj"], "bias": g_route["bias"],
        "A": g_disc["A"], "B": g_disc["B"], "Delta": g_disc["Delta"],
        "C_out": g_scan["C_out"], "D": g_scan["D"],
        "x": g_scan["x"], "x_route": g_route["x"],
    }
