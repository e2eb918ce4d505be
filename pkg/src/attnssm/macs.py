"""Analytic multiply-accumulate counts, cross-checked by instrumented execution.

The SSM stage of one scan direction covers the per-direction projection that
produces ``Delta``, ``B`` and ``C`` plus discretization, recurrence and
readout. Projections shared by all directions (input/output) are reported
separately and excluded from the directional comparison.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import instrument
from .ase import PromptPool, Router, attentive_scan, route, select_prompts
from .config import ModelConfig
from .sgn import build_plan, sgn_fold, sgn_unfold
from .ssm import SsmParams, discretize, selective_scan
from .tensor import ConfigError, RngState

DIRECTIONS = (1, 2, 4)


def ssm_stage_macs(L: int, E: int, d: int, directions: int = 1,
                   semantic: bool = False) -> "OrderedDict[str, int]":
    """Per-component SSM-stage MACs for ``directions`` scans of ``L`` tokens.

    ``semantic=True`` is the single attentive scan, which adds the prompt
    residual ``C + P`` (``L*d``) to one directional scan.
    """
    if directions not in DIRECTIONS:
        raise ConfigError(f"directions must be one of {DIRECTIONS}")
    if semantic and directions != 1:
        raise ConfigError("the semantic scan is single-direction")
    n = directions
    table = OrderedDict()
    table["x_proj"] = n * L * E * (E + 2 * d)
    table["discretize"] = n * 2 * L * E * d
    table["recurrence"] = n * 2 * L * E * d
    table["readout"] = n * (L * E * d + L * E)
    if semantic:
        table["prompt_add"] = L * d
    table["total"] = sum(table.values())
    return table


def _orders(H: int, W: int, n: int) -> list[np.ndarray]:
    raster = np.arange(H * W)
    column = raster.reshape(H, W).T.ravel()
    return [raster, column, raster[::-1], column[::-1]][:n]


def instrumented_ssm_stage(H: int, W: int, E: int, d: int, directions: int = 1,
                           semantic: bool = False, T: int = 8, r: int = 4,
                           seed: int = 0) -> dict[str, int]:
    """Execute the SSM stage on random data and return the recorded counters."""
    g = RngState(seed).generator()
    L = H * W
    x = g.standard_normal((L, E))
    w_proj = g.standard_normal((E, E + 2 * d)) / np.sqrt(E)
    A = -np.exp(g.standard_normal((E, d)) * 0.1)
    D = np.ones(E)
    with instrument.recording() as rec:
        if semantic:
            router = Router(g.standard_normal((E, T)), np.zeros(T), 1.0, "argmax")
            res = route(router, x)
            plan = build_plan(res.labels, T)
            P = sgn_unfold(select_prompts(PromptPool(g.standard_normal((T, r)),
                                                     g.standard_normal((r, d))), res), plan)
            seqs = [(sgn_unfold(x, plan), plan)]
        else:
            seqs = [(x[o], None) for o in _orders(H, W, directions)]
        for seq, plan in seqs:
            proj = seq @ w_proj
            instrument.add("macs:ssm", seq.shape[0] * w_proj.size)
            delta = np.logaddexp(0.0, proj[:, :E]) + 1e-4
            p = SsmParams(A, proj[:, E:E + d], proj[:, E + d:], delta, D)
            ds = discretize(p)
            if plan is not None:
                sgn_fold(attentive_scan(ds, p.C_out, D, seq, P), plan)
            else:
                selective_scan(ds, p.C_out, D, seq)
    return dict(rec)


def scan_cost_report(cfg: ModelConfig, directions: int, height: int, width: int) -> dict:
    """Compare ``directions`` plain scans against the single semantic scan per ASSM."""
    L, E, d = height * width, cfg.channels, cfg.d_state
    multi = ssm_stage_macs(L, E, d, directions)
    single = ssm_stage_macs(L, E, d, 1)
    sem = ssm_stage_macs(L, E, d, 1, semantic=True)
    blocks = cfg.groups * cfg.depth
    return {
        "tokens": L,
        "blocks": blocks,
        "multi": multi,
        "single": single,
        "semantic": sem,
        "ratio_multi_vs_single": multi["total"] / single["total"],
        "ratio_semantic_vs_single": sem["total"] / single["total"],
        "ratio_multi_vs_semantic": multi["total"] / sem["total"],
        "network_multi": blocks * multi["total"],
        "network_semantic": blocks * sem["total"],
    }


def network_macs(cfg: ModelConfig, height: int, width: int) -> "OrderedDict[str, int]":
    """Analytic MACs of one forward pass on a ``height x width`` input (norms, softmax ignored)."""
    C, d, T, r = cfg.channels, cfg.d_state, cfg.num_prompts, cfg.prompt_rank
    HW = height * width
    N = cfg.window ** 2
    hidden = int(round(C * cfg.ffn_expansion))
    hp = -(-height // cfg.window) * cfg.window
    wp = -(-width // cfg.window) * cfg.window
    HWp = hp * wp
    ssm = ssm_stage_macs(HW, C, d, 1, semantic=True)["total"]
    per_block = OrderedDict()
    per_block["window_attn"] = HWp * C * 3 * C + 2 * HWp * N * C + HWp * C * C
    per_block["ffn"] = 2 * 2 * HW * C * hidden
    per_block["assm_pe"] = HW * 9 * C
    per_block["assm_routing"] = HW * C * T + T * r * d + HW * T * d
    per_block["assm_in_out_proj"] = 2 * HW * C * C
    per_block["assm_ssm_stage"] = ssm
    blocks = cfg.groups * cfg.depth
    table = OrderedDict()
    table["conv_first"] = HW * 9 * cfg.in_channels * C
    for k, v in per_block.items():
        table[f"blocks.{k}"] = blocks * v
    table["group_convs"] = cfg.groups * HW * 9 * C * C
    table["conv_body"] = HW * 9 * C * C
    if cfg.head == "pixelshuffle-sr":
        table["head"] = HW * 9 * C * cfg.in_channels * cfg.scale ** 2
    else:
        table["head"] = HW * 9 * C * cfg.in_channels
    table["total"] = sum(table.values())
    return table
