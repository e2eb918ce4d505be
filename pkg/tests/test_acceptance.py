"""Acceptance suite: ten criteria at their stated tolerances and time budgets.

Each criterion prints one ``PASS``/``FAIL`` line. Run under pytest or directly
with ``python tests/test_acceptance.py``.
"""
import sys
import time

import numpy as np
import pytest
from scipy.stats import chisquare

from attnssm.ase import PromptPool, Router, attentive_scan, attentive_scan_backward, route
from attnssm.attention import (QkvTriple, causal_linear_attention_direct, causal_linear_attention_recurrent,
                               degenerate_correspondence_error, init_window_weights, window_mhsa,
                               window_mhsa_backward, window_mhsa_forward)
from attnssm.checks import random_ssm
from attnssm.config import ModelConfig, TrainConfig, preset
from attnssm.macs import instrumented_ssm_stage, scan_cost_report, ssm_stage_macs
from attnssm.model import ASSB, RestorationNet, count_params
from attnssm.nn import FFN, Param
from attnssm.sgn import build_plan, sgn_fold, sgn_unfold
from attnssm.ssm import DiscreteSsm, decay_profile, discretize, scan_backward, selective_scan, unrolled_scan
from attnssm.tensor import RngState, load_checkpoint, save_checkpoint
from attnssm.train import bicubic_baseline, grad_check, make_datasets, train

STEP = 1e-6
MIN_COORDS = 200


def report(n, ok, detail, seconds, budget):
    ok = bool(ok) and seconds < budget
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {detail}  [{seconds:.2f}s / {budget:g}s]"
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    return ok


def gen(n):
    return RngState(20240).split(n).generator()


# ---------------------------------------------------------------------------


def criterion_1():
    g = gen(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        L, C, d = int(g.integers(1, 65)), int(g.integers(1, 5)), int(g.integers(1, 9))
        p = random_ssm(g, L, C, d)
        ds = discretize(p)
        x = g.standard_normal((L, C))
        y, _ = selective_scan(ds, p.C_out, p.D, x)
        worst = max(worst, float(np.max(np.abs(y - unrolled_scan(ds, p.C_out, p.D, x)))))
    dt = time.perf_counter() - t0
    return report(1, worst <= 1e-12, f"scan vs unrolled, 1000 instances, max abs err {worst:.2e} <= 1e-12",
                  dt, 10)


def criterion_2():
    g = gen(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        L, dk, dv = int(g.integers(1, 65)), int(g.integers(1, 9)), int(g.integers(1, 9))
        t = QkvTriple(g.standard_normal((L, dk)), g.standard_normal((L, dk)), g.standard_normal((L, dv)))
        a, b = causal_linear_attention_direct(t), causal_linear_attention_recurrent(t)
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300))))
    dt = time.perf_counter() - t0
    return report(2, worst <= 1e-10, f"direct vs recurrent linear attention, max rel err {worst:.2e} <= 1e-10",
                  dt, 10)


def criterion_3():
    g = gen(3)
    t0 = time.perf_counter()
    identical = 0
    for _ in range(100):
        L, C, d = int(g.integers(1, 65)), int(g.integers(1, 5)), int(g.integers(1, 9))
        p = random_ssm(g, L, C, d)
        ds = discretize(p)
        x = g.standard_normal((L, C))
        identical += np.array_equal(attentive_scan(ds, p.C_out, p.D, x, np.zeros_like(p.C_out)),
                                    selective_scan(ds, p.C_out, p.D, x)[0])
    t = QkvTriple(g.standard_normal((32, 8)), g.standard_normal((32, 8)), g.standard_normal((32, 6)))
    err = degenerate_correspondence_error(t)
    dt = time.perf_counter() - t0
    return report(3, identical == 100 and err <= 1e-10,
                  f"zero-prompt scan bit-identical {identical}/100, degenerate correspondence {err:.2e} <= 1e-10",
                  dt, 5)


def criterion_4():
    g = gen(4)
    t0 = time.perf_counter()
    ok = 0
    for i in range(1000):
        L = int(g.integers(1, 129))
        if i % 3 == 0:
            T, labels = 1, np.zeros(L, dtype=int)
        elif i % 3 == 1:
            T, labels = L, g.permutation(L)
        else:
            T = int(g.integers(1, 17))
            labels = g.integers(0, T, L)
        plan = build_plan(labels, T)
        x = g.standard_normal((L, int(g.integers(1, 5))))
        roundtrip = np.array_equal(sgn_fold(sgn_unfold(x, plan), plan), x)
        grouped = labels[plan.perm]
        stable = bool(np.all(np.diff(grouped) >= 0)) and all(
            np.all(np.diff(plan.perm[plan.group_offsets[t]:plan.group_offsets[t + 1]]) > 0) for t in range(T))
        ok += roundtrip and stable
    dt = time.perf_counter() - t0
    return report(4, ok == 1000, f"SGN fold(unfold(x)) == x bit-exact and stable on {ok}/1000 pairs", dt, 5)


def _gc(f, arrays_and_grads, total=MIN_COORDS):
    """Worst error over several inputs, at least ``total`` coordinates in all.

    Small inputs are checked in full and their unused share moves to larger ones.
    """
    worst, coords = 0.0, 0
    order = sorted(range(len(arrays_and_grads)), key=lambda i: arrays_and_grads[i][0].size)
    left = total
    for pos, i in enumerate(order):
        arr, grad = arrays_and_grads[i]
        n = min(arr.size, max(1, -(-left // (len(order) - pos))))
        worst = max(worst, grad_check(f, arr, grad, step=STEP, n_coords=n))
        coords += n
        left -= n
    return worst, coords


def criterion_5():
    g = gen(5)
    t0 = time.perf_counter()
    results = {}

    p = random_ssm(g, 24, 3, 6)
    ds = discretize(p)
    x, gy = g.standard_normal((24, 3)), g.standard_normal((24, 3))
    gr = scan_backward(ds, p.C_out, p.D, x, gy)
    f = lambda _: float((selective_scan(ds, p.C_out, p.D, x)[0] * gy).sum())
    results["selective_scan"] = _gc(f, [(ds.A_bar, gr["A_bar"]), (ds.B_bar, gr["B_bar"]),
                                        (p.C_out, gr["C_out"]), (p.D, gr["D"]), (x, gr["x"])], 300)

    P = g.standard_normal(p.C_out.shape)
    ga = attentive_scan_backward(ds, p.C_out, p.D, x, P, gy)
    f = lambda _: float((attentive_scan(ds, p.C_out, p.D, x, P) * gy).sum())
    results["attentive_scan"] = _gc(f, [(ds.A_bar, ga["A_bar"]), (ds.B_bar, ga["B_bar"]),
                                        (p.C_out, ga["C_out"]), (P, ga["P"]), (x, ga["x"])], 300)

    w = init_window_weights(8, 2, 4, g)
    w["qkv_b"] = 0.1 * g.standard_normal(24)
    xw, gw = g.standard_normal((6, 7, 8)), g.standard_normal((6, 7, 8))
    _, cache = window_mhsa_forward(xw, 2, 4, w)
    gx, grads = window_mhsa_backward(gw, cache)
    f = lambda _: float((window_mhsa(xw, 2, 4, w) * gw).sum())
    results["window_mhsa"] = _gc(f, [(xw, gx)] + [(w[k], grads[k]) for k in w], 300)

    ffn = FFN(6, 2.0, g, np.float64)
    xf = g.standard_normal((3, 5, 6))
    gf = g.standard_normal(xf.shape)
    ffn.zero_grad()
    ffn.forward(xf)
    gxf = ffn.backward(gf)
    f = lambda _: float((ffn.forward(xf) * gf).sum())
    results["ffn"] = _gc(f, [(xf, gxf)] + [(q.data, q.grad) for _, q in ffn.named_parameters()], 200)

    cfg = ModelConfig(channels=8, depth=1, groups=1, d_state=4, num_prompts=6, prompt_rank=3, window=4,
                      heads=2, dtype="f64", routing_mode="argmax")
    block = ASSB(cfg, Param(g.standard_normal((3, 4))), g, np.float64)
    xb = g.standard_normal((1, 6, 6, 8))
    gb = g.standard_normal(xb.shape)
    block.zero_grad()
    block.forward(xb)
    gxb = block.backward(gb)
    f = lambda _: float((block.forward(xb) * gb).sum())
    pairs = [(xb, gxb)] + [(q.data, q.grad) for _, q in block.named_parameters()]
    worst_b, coords_b = _gc(f, pairs[:1], 200)
    w2, c2 = _gc(f, pairs[1:], 10 * (len(pairs) - 1))
    results["assb"] = (max(worst_b, w2), coords_b + c2)

    dt = time.perf_counter() - t0
    ok = all(err <= 1e-4 and n >= MIN_COORDS for err, n in results.values())
    detail = ", ".join(f"{k} {e:.1e} ({n})" for k, (e, n) in results.items())
    return report(5, ok, f"gradient checks rel err <= 1e-4 (coords): {detail}", dt, 120)


def criterion_6():
    g = gen(6)
    t0 = time.perf_counter()
    in_range, mono = True, True
    for _ in range(300):
        L = int(g.integers(1, 65))
        p = random_ssm(g, L, int(g.integers(1, 5)), int(g.integers(1, 9)))
        ds = discretize(p)
        in_range &= bool(np.all((ds.A_bar > 0) & (ds.A_bar <= 1)))
        mono &= bool(np.all(np.diff(decay_profile(ds, p.C_out, L)) <= 0))
    net = RestorationNet(preset("v2-toy"))
    net.set_routing("argmax")
    net.forward(gen(61).random((1, 16, 16, 3)))
    for m in net.assms():
        ds, C = m.last_discrete()
        in_range &= bool(np.all((ds.A_bar > 0) & (ds.A_bar <= 1)))
        mono &= bool(np.all(np.diff(decay_profile(ds, C, 64)) <= 0))
    A_bar = np.full((64, 1, 1), 0.5)
    geo = decay_profile(DiscreteSsm(A_bar, np.ones_like(A_bar)), np.ones((64, 1)), 64)
    geo_err = float(np.max(np.abs(geo - 0.5 ** np.arange(64))))
    dt = time.perf_counter() - t0
    return report(6, in_range and mono and geo_err <= 1e-15,
                  f"A_bar in (0,1]: {in_range}, profile nonincreasing: {mono}, "
                  f"0.5^k error {geo_err:.1e} <= 1e-15", dt, 5)


def criterion_7():
    t0 = time.perf_counter()
    n = 10_000
    logits = np.broadcast_to(np.array([np.log(2.0), 0.0, 0.0]), (n, 3)).copy()
    hard = route(Router(np.eye(3), np.zeros(3), 1.0, "hard"), logits, RngState(7))
    onehot = bool(np.all((hard.R == 0) | (hard.R == 1)) and np.all(hard.R.sum(-1) == 1))
    counts = np.bincount(hard.labels, minlength=3)
    pval = float(chisquare(counts, n * np.array([0.5, 0.25, 0.25])).pvalue)
    soft = route(Router(np.eye(3), np.zeros(3), 1.0, "soft"), gen(7).standard_normal((n, 3)), RngState(8))
    row_err = float(np.max(np.abs(soft.R.sum(-1) - 1)))
    dt = time.perf_counter() - t0
    return report(7, onehot and pval > 0.01 and row_err <= 1e-12,
                  f"gumbel counts {counts.tolist()} chi-square p={pval:.3f} > 0.01, one-hot {onehot}, "
                  f"soft row err {row_err:.1e} <= 1e-12", dt, 5)


def criterion_8():
    t0 = time.perf_counter()
    rep = scan_cost_report(preset("v2-toy"), 4, 720, 1280)
    r41 = rep["ratio_multi_vs_single"]
    rs1 = rep["ratio_semantic_vs_single"]
    # instrumented execution agrees with the analytic counter
    agree = all(instrumented_ssm_stage(8, 8, 16, 8, n, semantic=s)["macs:ssm"]
                == ssm_stage_macs(64, 16, 8, n, semantic=s)["total"]
                for n, s in ((1, False), (4, False), (1, True)))
    dt = time.perf_counter() - t0
    ok = abs(r41 - 4.0) <= 0.04 and abs(rs1 - 1.0) <= 0.01 and agree
    return report(8, ok, f"SSM-stage MACs 4-dir/1-dir {r41:.4f} (4.0 +-1%), semantic/1-dir {rs1:.4f} "
                         f"(1.0 +-1%), instrumented counter agrees: {agree}", dt, 5)


def criterion_9():
    mc = preset("v2-toy")
    tc = TrainConfig(steps=2000, batch_size=8, lr=2e-4, n_train=2000, patch_size=32, seed=0)
    _, (vlq, vhq) = make_datasets(mc, tc)
    bicubic = bicubic_baseline(vlq, vhq, mc.scale)
    t0 = time.perf_counter()
    _, res = train(mc, tc)
    dt = time.perf_counter() - t0
    # determinism: a fresh 40-step run on the same schedule reproduces the opening of the curve
    tc_short = TrainConfig(steps=40, batch_size=8, lr=2e-4, n_train=2000, patch_size=32, seed=0,
                           milestones=tc.effective_milestones(), eval_every=0)
    _, short = train(mc, tc_short)
    deterministic = short.losses == res.losses[:40]
    gain = res.final_psnr - bicubic
    decreasing = np.mean(res.losses[1800:2000]) < np.mean(res.losses[0:200])
    return report(9, gain >= 0.5 and deterministic and decreasing,
                  f"toy 2x SR: {res.final_psnr:.3f} dB vs bicubic {bicubic:.3f} dB (gain {gain:+.3f} >= +0.5), "
                  f"deterministic {deterministic}, loss decreasing {decreasing}", dt, 900)


def criterion_10(tmp_dir):
    t0 = time.perf_counter()
    cfg = preset("v2-toy")
    rows = count_params(cfg)
    total = sum(n for _, n in rows)
    path = f"{tmp_dir}/toy.atsm"
    save_checkpoint(RestorationNet(cfg).state_dict().items(), path)
    ck = sum(t.size for t in load_checkpoint(path).values())
    T, r, d = cfg.num_prompts, cfg.prompt_rank, cfg.d_state
    per_block = [n for name, n in rows if name.endswith("prompt_M")]
    shared = [n for name, n in rows if name == "prompt_N"]
    ok_pool = per_block == [T * r] * (cfg.groups * cfg.depth) and shared == [r * d]
    dt = time.perf_counter() - t0
    return report(10, total == ck and ok_pool,
                  f"count_params {total:,} == checkpoint elements {ck:,}; prompt pool {T}x{r} per block "
                  f"x{len(per_block)}, shared {r}x{d}: {ok_pool}", dt, 1)


# ---------------------------------------------------------------------------


def test_criterion_1_scan_unroll():
    assert criterion_1()


def test_criterion_2_linear_attention():
    assert criterion_2()


def test_criterion_3_ase_reduction():
    assert criterion_3()


def test_criterion_4_sgn_roundtrip():
    assert criterion_4()


def test_criterion_5_gradient_checks():
    assert criterion_5()


def test_criterion_6_long_range_decay():
    assert criterion_6()


def test_criterion_7_gumbel_statistics():
    assert criterion_7()


def test_criterion_8_scan_cost():
    assert criterion_8()


@pytest.mark.slow
def test_criterion_9_toy_training():
    assert criterion_9()


def test_criterion_10_parameter_accounting(tmp_path):
    assert criterion_10(tmp_path)


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        outcomes = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(),
                    criterion_6(), criterion_7(), criterion_8(), criterion_9(), criterion_10(d)]
    print(f"{sum(outcomes)}/10 criteria passed")
    sys.exit(0 if all(outcomes) else 1)
