"""Discretized diagonal selective state-space scan.

Shapes (an optional leading batch extent ``...`` is allowed everywhere):

    A      (C, d)        continuous state matrix, one diagonal per channel
    B      (..., L, d)   input matrix, shared across channels
    C_out  (..., L, d)   output matrix, shared across channels
    Delta  (..., L, C)   positive step sizes
    D      (C,)          skip coefficient
    x      (..., L, C)

    A_bar, B_bar (..., L, C, d)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import instrument
from .tensor import DimensionError, DomainError


@dataclass
class SsmParams:
    A: np.ndarray
    B: np.ndarray
    C_out: np.ndarray
    Delta: np.ndarray
    D: np.ndarray

    def validate(self) -> None:
        if np.any(self.A > 0):
            raise DomainError("A must be <= 0 elementwise")
        if np.any(~(self.Delta > 0)):
            raise DomainError("Delta must be > 0 elementwise")
        C, d = self.A.shape
        if self.Delta.shape[-1] != C or self.D.shape != (C,):
            raise DimensionError(
                f"channel mismatch: A {self.A.shape}, Delta {self.Delta.shape}, D {self.D.shape}")
        if self.B.shape[-1] != d or self.C_out.shape[-1] != d:
            raise DimensionError(
                f"state mismatch: A {self.A.shape}, B {self.B.shape}, C {self.C_out.shape}")
        if self.B.shape[:-1] != self.Delta.shape[:-1] or self.C_out.shape != self.B.shape:
            raise DimensionError(
                f"length mismatch: B {self.B.shape}, C {self.C_out.shape}, Delta {self.Delta.shape}")


@dataclass
class DiscreteSsm:
    A_bar: np.ndarray
    B_bar: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.A_bar.shape


def discretize(p: SsmParams) -> DiscreteSsm:
    """``A_bar = exp(Delta*A)`` and the first-order input matrix ``B_bar = Delta*B``."""
    p.validate()
    dA = p.Delta[..., :, None] * p.A
    B_bar = p.Delta[..., :, None] * p.B[..., None, :]
    instrument.add("macs:ssm", 2 * dA.size)
    return DiscreteSsm(np.exp(dA), B_bar)


def discretize_backward(p: SsmParams, ds: DiscreteSsm, g_A_bar: np.ndarray,
                        g_B_bar: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the discretization w.r.t. ``A``, ``B`` and ``Delta``."""
    gdA = g_A_bar * ds.A_bar
    g_delta = (np.einsum("...ck,ck->...c", gdA, p.A)
               + np.einsum("...ck,...k->...c", g_B_bar, p.B))
    C, d = p.A.shape
    g_A = np.einsum("nck,nc->ck", gdA.reshape(-1, C, d), p.Delta.reshape(-1, C))
    g_B = np.einsum("...ck,...c->...k", g_B_bar, p.Delta)
    return {"A": g_A, "B": g_B, "Delta": g_delta}


def _check_scan_shapes(ds: DiscreteSsm, C_out: np.ndarray, D: np.ndarray, x: np.ndarray) -> None:
    if ds.A_bar.shape != ds.B_bar.shape:
        raise DimensionError(f"A_bar {ds.A_bar.shape} vs B_bar {ds.B_bar.shape}")
    *lead, L, C, d = ds.A_bar.shape
    if x.shape != (*lead, L, C):
        raise DimensionError(f"x {x.shape} does not match discrete system {ds.A_bar.shape}")
    if C_out.shape != (*lead, L, d):
        raise DimensionError(f"C_out {C_out.shape} does not match discrete system {ds.A_bar.shape}")
    if D.shape != (C,):
        raise DimensionError(f"D {D.shape} does not match {C} channels")


def scan_states(ds: DiscreteSsm, x: np.ndarray) -> np.ndarray:
    """All hidden states ``h_1..h_L`` from ``h_0 = 0``, strictly left to right."""
    A_bar, B_bar = ds.A_bar, ds.B_bar
    L = A_bar.shape[-3]
    Bx = B_bar * x[..., None]
    H = np.empty_like(Bx)
    h = np.zeros(Bx.shape[:-3] + Bx.shape[-2:], dtype=Bx.dtype)
    per_step = h.size
    for i in range(L):
        h = A_bar[..., i, :, :] * h + Bx[..., i, :, :]
        H[..., i, :, :] = h
    instrument.add("macs:ssm", 2 * per_step * L)
    return H


def _readout(H: np.ndarray, C_out: np.ndarray, D: np.ndarray, x: np.ndarray) -> np.ndarray:
    instrument.add("macs:ssm", H.size + x.size)
    return np.einsum("...lck,...lk->...lc", H, C_out) + D * x


def selective_scan(ds: DiscreteSsm, C_out: np.ndarray, D: np.ndarray,
                   x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run ``h_i = A_bar_i*h_{i-1} + B_bar_i*x_i``, ``y_i = <C_i, h_i> + D*x_i``.

    Returns ``(y, h_final)``.
    """
    y, H = scan_with_states(ds, C_out, D, x)
    if H.shape[-3] == 0:
        return y, np.zeros(H.shape[:-3] + H.shape[-2:], dtype=H.dtype)
    return y, H[..., -1, :, :].copy()


def scan_with_states(ds: DiscreteSsm, C_out: np.ndarray, D: np.ndarray,
                     x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`selective_scan` but returns every hidden state ``(..., L, C, d)``."""
    _check_scan_shapes(ds, C_out, D, x)
    instrument.add("scan_calls")
    H = scan_states(ds, x)
    return _readout(H, C_out, D, x), H


def unrolled_scan(ds: DiscreteSsm, C_out: np.ndarray, D: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Closed-form convolution view of the scan, by explicit O(L^2) summation.

    ``y_k = sum_j C_k * prod_{t=j+1..k} A_bar_t * B_bar_j * x_j + D*x_k``.
    Independent of :func:`selective_scan` and used as its oracle.
    """
    _check_scan_shapes(ds, C_out, D, x)
    L = x.shape[-2]
    y = np.empty(x.shape, dtype=np.result_type(x, ds.A_bar))
    ones = np.ones_like(ds.A_bar[..., :1, :, :])
    for k in range(L):
        # decay[j] = prod_{t=j+1..k} A_bar_t, built from t=k downwards
        tail = np.cumprod(ds.A_bar[..., k:0:-1, :, :], axis=-3)
        decay = np.concatenate([tail[..., ::-1, :, :], ones], axis=-3)
        coef = (C_out[..., k, None, None, :] * decay * ds.B_bar[..., :k + 1, :, :]).sum(-1)
        y[..., k, :] = (coef * x[..., :k + 1, :]).sum(-2) + D * x[..., k, :]
    return y


def scan_backward(ds: DiscreteSsm, C_out: np.ndarray, D: np.ndarray, x: np.ndarray,
                  grad_y: np.ndarray, H: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of :func:`selective_scan`'s ``y``.

    ``H`` (all hidden states) may be passed to skip recomputation.
    """
    _check_scan_shapes(ds, C_out, D, x)
    if grad_y.shape != x.shape:
        raise DimensionError(f"grad_y {grad_y.shape} vs y {x.shape}")
    if H is None:
        H = scan_states(ds, x)
    A_bar, B_bar = ds.A_bar, ds.B_bar
    L = x.shape[-2]
    lead = tuple(range(x.ndim - 2))

    g_C = np.einsum("...lc,...lck->...lk", grad_y, H)
    g_D = (grad_y * x).sum(axis=lead + (x.ndim - 2,))
    # dL/dh_i accumulated from the readout and from h_{i+1}
    g_H_out = grad_y[..., None] * C_out[..., None, :]
    g_H = np.empty_like(H)
    g = np.zeros_like(H[..., 0, :, :])
    for i in range(L - 1, -1, -1):
        g = g_H_out[..., i, :, :] + g
        g_H[..., i, :, :] = g
        g = g * A_bar[..., i, :, :]
    H_prev = np.zeros_like(H)
    H_prev[..., 1:, :, :] = H[..., :-1, :, :]
    g_A_bar = g_H * H_prev
    g_B_bar = g_H * x[..., None]
    g_x = np.einsum("...k,...k->...", g_H, B_bar) + grad_y * D
    return {"A_bar": g_A_bar, "B_bar": g_B_bar, "C_out": g_C, "D": g_D, "x": g_x}


def decay_profile(ds: DiscreteSsm, C_out: np.ndarray, distance_max: int) -> np.ndarray:
    """Mean coefficient magnitude ``|C| * A_bar**j * |B_bar|`` for ``j < distance_max``.

    Averaged over positions, channels and states; taking magnitudes per state
    makes the profile nonincreasing whenever ``A_bar <= 1``.
    """
    L = ds.A_bar.shape[-3]
    if distance_max > L or distance_max < 1:
        raise DomainError(f"distance_max {distance_max} must lie in [1, L={L}]")
    base = np.abs(C_out)[..., None, :] * np.abs(ds.B_bar)
    out = np.empty(distance_max, dtype=np.float64)
    power = np.ones_like(ds.A_bar)
    for j in range(distance_max):
        out[j] = (base * power).mean()
        power = power * ds.A_bar
    return out
