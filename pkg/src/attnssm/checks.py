"""Self-contained invariant suite behind ``attnssm check``.

Each property returns ``(passed, detail)``. ``fault`` names a deliberate
mutation (``scan``, ``attention``, ``sgn``, ``routing``) used to confirm that
the suite notices a broken implementation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import chisquare

from .ase import PromptPool, Router, attentive_scan, route, select_prompts
from .attention import (QkvTriple, causal_linear_attention_direct, causal_linear_attention_recurrent,
                        degenerate_correspondence_error, init_window_weights, window_mhsa_backward,
                        window_mhsa_forward)
from .sgn import build_plan, sgn_fold, sgn_unfold
from .ssm import DiscreteSsm, SsmParams, decay_profile, discretize, scan_backward, selective_scan, unrolled_scan
from .tensor import RngState
from .train import grad_check

FAULTS = ("scan", "attention", "sgn", "routing")


@dataclass
class Property:
    name: str
    group: str
    run: Callable[[np.random.Generator, str | None], tuple[bool, str]]


def random_ssm(g: np.random.Generator, L: int, C: int, d: int) -> SsmParams:
    return SsmParams(A=-np.exp(g.standard_normal((C, d))), B=g.standard_normal((L, d)),
                     C_out=g.standard_normal((L, d)), Delta=np.exp(g.standard_normal((L, C)) - 1),
                     D=g.standard_normal(C))


def _scan(fault):
    if fault != "scan":
        return selective_scan

    def broken(ds, C_out, D, x):
        y, h = selective_scan(ds, C_out, -D, x)
        return y, h
    return broken


def prop_scan_unroll(g, fault):
    scan = _scan(fault)
    worst = 0.0
    for _ in range(50):
        L, C, d = g.integers(1, 33), g.integers(1, 5), g.integers(1, 9)
        p = random_ssm(g, L, C, d)
        ds = discretize(p)
        x = g.standard_normal((L, C))
        worst = max(worst, np.abs(scan(ds, p.C_out, p.D, x)[0] - unrolled_scan(ds, p.C_out, p.D, x)).max())
    return worst <= 1e-12, f"max abs err {worst:.2e}"


def prop_scan_causal(g, fault):
    scan = _scan(fault)
    p = random_ssm(g, 24, 3, 4)
    ds = discretize(p)
    x = g.standard_normal((24, 3))
    y0 = scan(ds, p.C_out, p.D, x)[0]
    x2 = x.copy()
    x2[10] += 1.0
    y1 = scan(ds, p.C_out, p.D, x2)[0]
    ok = np.array_equal(y0[:10], y1[:10]) and not np.array_equal(y0[10:], y1[10:])
    return ok, "prefix unchanged" if ok else "prefix changed"


def prop_scan_gradcheck(g, fault):
    p = random_ssm(g, 12, 2, 3)
    ds = discretize(p)
    x = g.standard_normal((12, 2))
    gy = g.standard_normal((12, 2))
    grads = scan_backward(ds, p.C_out, p.D, x, gy)
    worst = 0.0
    for key, arr in (("A_bar", ds.A_bar), ("B_bar", ds.B_bar), ("C_out", p.C_out), ("D", p.D), ("x", x)):
        f = lambda _: float((selective_scan(ds, p.C_out, p.D, x)[0] * gy).sum())
        worst = max(worst, grad_check(f, arr, grads[key], n_coords=60))
    return worst <= 1e-4, f"max rel err {worst:.2e}"


def _attn(fault):
    if fault != "attention":
        return causal_linear_attention_recurrent
    return lambda t: causal_linear_attention_recurrent(t, normalize=False)


def prop_attention_equiv(g, fault):
    rec = _attn(fault)
    worst = 0.0
    for _ in range(50):
        L, d = g.integers(1, 33), g.integers(1, 9)
        t = QkvTriple(g.standard_normal((L, d)), g.standard_normal((L, d)), g.standard_normal((L, d)))
        a, b = causal_linear_attention_direct(t), rec(t)
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-12))))
    return worst <= 1e-10, f"max rel err {worst:.2e}"


def prop_degenerate_correspondence(g, fault):
    t = QkvTriple(g.standard_normal((16, 8)), g.standard_normal((16, 8)), g.standard_normal((16, 5)))
    err = degenerate_correspondence_error(t)
    return err <= 1e-10, f"max abs err {err:.2e}"


def prop_window_gradcheck(g, fault):
    w = init_window_weights(8, 2, 4, g)
    x = g.standard_normal((8, 8, 8))
    gy = g.standard_normal((8, 8, 8))
    out, cache = window_mhsa_forward(x, 2, 4, w)
    gx, grads = window_mhsa_backward(gy, cache)
    f = lambda _: float((window_mhsa_forward(x, 2, 4, w)[0] * gy).sum())
    worst = grad_check(f, x, gx, n_coords=60)
    for k in w:
        worst = max(worst, grad_check(f, w[k], grads[k], n_coords=30))
    return worst <= 1e-4, f"max rel err {worst:.2e}"


def prop_ase_reduction(g, fault):
    scan = _scan(fault)
    p = random_ssm(g, 20, 3, 4)
    ds = discretize(p)
    x = g.standard_normal((20, 3))
    same = np.array_equal(attentive_scan(ds, p.C_out, p.D, x, np.zeros_like(p.C_out)),
                          scan(ds, p.C_out, p.D, x)[0])
    return same, "bit-identical" if same else "differs"


def _fold(fault):
    if fault != "sgn":
        return sgn_fold
    return lambda y, plan: sgn_unfold(y, plan)


def prop_sgn_roundtrip(g, fault):
    fold = _fold(fault)
    for _ in range(100):
        L, T = g.integers(1, 64), g.integers(1, 9)
        labels = g.integers(0, T, L)
        plan = build_plan(labels, T)
        x = g.standard_normal((L, 3))
        if not np.array_equal(fold(sgn_unfold(x, plan), plan), x):
            return False, "fold(unfold(x)) != x"
        lp = labels[plan.perm]
        if np.any(np.diff(lp) < 0):
            return False, "labels not grouped"
        for t in range(T):
            members = plan.perm[lp == t]
            if np.any(np.diff(members) < 0):
                return False, "group order not stable"
    return True, "100 plans"


def _route(fault):
    if fault != "routing":
        return route

    def broken(router, x, rng=None):
        res = route(router, x, rng)
        res.R = res.soft * 0.5
        return res
    return broken


def prop_gumbel_stats(g, fault):
    rt = _route(fault)
    logits = np.log(np.array([2.0, 1.0, 1.0]))
    n = 10_000
    router = Router(np.eye(3), np.zeros(3), 1.0, "hard")
    res = rt(router, np.broadcast_to(logits, (n, 3)).copy(), RngState(int(g.integers(1 << 62))))
    onehot = np.all((res.R == 0) | (res.R == 1)) and np.all(res.R.sum(-1) == 1)
    counts = np.bincount(res.labels, minlength=3)
    p = chisquare(counts, n * np.array([0.5, 0.25, 0.25])).pvalue
    soft = rt(Router(np.eye(3), np.zeros(3), 1.0, "soft"), g.standard_normal((50, 3)), RngState(1))
    rows = np.abs(soft.R.sum(-1) - 1).max()
    ok = bool(onehot) and p > 0.01 and rows <= 1e-12
    return ok, f"chi2 p={p:.3f}, one-hot={bool(onehot)}, soft row err={rows:.1e}"


def prop_prompt_select(g, fault):
    pool = PromptPool(g.standard_normal((6, 2)), g.standard_normal((2, 5)))
    labels = g.integers(0, 6, 30)
    res = route(Router(np.eye(6), np.zeros(6), 1.0, "argmax"), np.eye(6)[labels] * 10.0)
    P = select_prompts(pool, res)
    ok = np.array_equal(P, (np.eye(6)[labels]) @ pool.pool()) and np.allclose(P, pool.pool()[labels], atol=1e-12)
    s = np.linalg.svd(pool.pool(), compute_uv=False)
    low_rank = bool(np.all(s[2:] < 1e-8))
    return ok and low_rank, f"gather==matmul: {ok}, rank<=r: {low_rank}"


def prop_decay(g, fault):
    A_bar = np.full((12, 1, 1), 0.5)
    prof = decay_profile(DiscreteSsm(A_bar, np.ones_like(A_bar)), np.ones((12, 1)), 12)
    exact = np.max(np.abs(prof - 0.5 ** np.arange(12)))
    p = random_ssm(g, 40, 3, 4)
    ds = discretize(p)
    rnd = decay_profile(ds, p.C_out, 40)
    mono = bool(np.all(np.diff(rnd) <= 0)) and bool(np.all((ds.A_bar > 0) & (ds.A_bar <= 1)))
    return exact <= 1e-15 and mono, f"geometric err {exact:.1e}, nonincreasing {mono}"


PROPERTIES = [
    Property("scan_unroll_equivalence", "ssm", prop_scan_unroll),
    Property("scan_causality", "ssm", prop_scan_causal),
    Property("scan_gradcheck", "grad", prop_scan_gradcheck),
    Property("decay_profile", "decay", prop_decay),
    Property("linear_attention_equivalence", "attention", prop_attention_equiv),
    Property("degenerate_correspondence", "attention", prop_degenerate_correspondence),
    Property("window_mhsa_gradcheck", "grad", prop_window_gradcheck),
    Property("ase_reduction", "ase", prop_ase_reduction),
    Property("prompt_selection", "ase", prop_prompt_select),
    Property("gumbel_statistics", "gumbel", prop_gumbel_stats),
    Property("sgn_roundtrip_stability", "sgn", prop_sgn_roundtrip),
]


def run_checks(filter_name: str | None = None, fault: str | None = None, seed: int = 0,
               out=print) -> bool:
    """Run the selected properties, print a table, return True iff all pass."""
    selected = [p for p in PROPERTIES
                if filter_name is None or filter_name == p.group or filter_name in p.name]
    if not selected:
        raise ValueError(f"no property matches {filter_name!r}")
    all_ok = True
    for i, prop in enumerate(selected):
        g = RngState(seed).split(i).generator()
        try:
            ok, detail = prop.run(g, fault)
        except Exception as exc:  # a crashing property is a failing property
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'}  {prop.group:<10} {prop.name:<32} {detail}")
    return all_ok
