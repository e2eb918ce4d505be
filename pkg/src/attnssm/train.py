"""Adam, losses, finite-difference gradient checks and the desk-scale training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ModelConfig, TrainConfig, dump_config
from .data import augment, bicubic_up, synth_dataset
from .metrics import psnr
from .model import RestorationNet
from .nn import Module
from .tensor import DimensionError, RngState, save_checkpoint

log = logging.getLogger(__name__)

CHARBONNIER_EPS = 1e-3


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses: each returns (scalar loss, gradient w.r.t. pred)


def l1_loss(pred: np.ndarray, target: np.ndarray):
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    # sign(0) = 0 fixes the subgradient at the kink
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def charbonnier_loss(pred: np.ndarray, target: np.ndarray, eps: float = CHARBONNIER_EPS):
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    r = np.sqrt(diff * diff + eps * eps)
    return float(r.mean()), diff / r / diff.size


LOSSES = {"l1": l1_loss, "charbonnier": charbonnier_loss}


# ---------------------------------------------------------------------------
# optimizer


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Initial lr halved once for every milestone already reached."""
    k = sum(step >= m for m in cfg.effective_milestones())
    return cfg.lr / (2 ** k)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, t: int, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8, name: str = "param") -> None:
    """One in-place bias-corrected Adam update (``t`` counts from 1)."""
    if param.shape != grad.shape:
        raise DimensionError(f"{name}: grad {grad.shape} vs param {param.shape}")
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient in {name}")
    b1, b2 = betas
    state.m[...] = b1 * state.m + (1 - b1) * grad
    state.v[...] = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1 ** t)
    v_hat = state.v / (1 - b2 ** t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)


class Adam:
    def __init__(self, module: Module, cfg: TrainConfig):
        self.named = list(module.named_parameters())
        self.state = {n: AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for n, p in self.named}
        self.cfg = cfg
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        for n, p in self.named:
            adam_step(p.data, p.grad, self.state[n], self.t, lr, (self.cfg.beta1, self.cfg.beta2),
                      self.cfg.eps, name=n)


def clip_grad_norm(module: Module, max_norm: float) -> float:
    params = module.parameters()
    total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params)))
    if max_norm > 0 and total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= s
    return total


# ---------------------------------------------------------------------------
# finite differences


def grad_check(f: Callable[[np.ndarray], float], x: np.ndarray, analytic: np.ndarray,
               step: float = 1e-6, n_coords: int = 200, seed: int = 0,
               floor: float = 1e-4) -> float:
    """Worst relative error between ``analytic`` and central differences of ``f``.

    Checks every coordinate when ``x`` has at most ``n_coords`` entries and a
    random subset of ``n_coords`` otherwise. ``x`` is perturbed in place and
    restored. The error at a coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    the floor keeps exactly-zero gradients from being judged on round-off.
    The difference quotient divides by the step actually realized in floating
    point, ``(x + h) - (x - h)``.
    """
    flat = x.reshape(-1)
    ga = np.asarray(analytic).reshape(-1)
    if flat.size <= n_coords:
        idx = np.arange(flat.size)
    else:
        idx = np.random.default_rng(seed).choice(flat.size, n_coords, replace=False)
    worst = 0.0
    for i in idx:
        old = flat[i]
        hi, lo = old + step, old - step
        flat[i] = hi
        fp = f(x)
        flat[i] = lo
        fm = f(x)
        flat[i] = old
        num = (fp - fm) / float(hi - lo)
        err = abs(num - ga[i]) / max(abs(num), abs(ga[i]), floor)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    val_psnr: dict[int, float] = field(default_factory=dict)
    final_psnr: float = float("nan")
    bicubic_psnr: float = float("nan")
    seconds: float = 0.0


def evaluate_psnr(net: RestorationNet, lq: np.ndarray, hq: np.ndarray, batch: int = 16) -> float:
    """Mean Y-channel PSNR with a ``scale``-pixel border crop, deterministic routing."""
    cfg = net.config
    prev = [m.routing_mode for m in net.assms()]
    net.set_routing("argmax")
    try:
        vals = []
        for i in range(0, len(lq), batch):
            out = np.clip(net.forward(lq[i:i + batch]), 0, 1)
            vals += [psnr(o, h, True, cfg.scale) for o, h in zip(out, hq[i:i + batch])]
    finally:
        for m, mode in zip(net.assms(), prev):
            m.routing_mode = mode
    return float(np.mean(vals))


def bicubic_baseline(lq: np.ndarray, hq: np.ndarray, scale: int) -> float:
    up = np.clip(bicubic_up(lq, scale), 0, 1)
    return float(np.mean([psnr(u, h, True, scale) for u, h in zip(up, hq)]))


def make_datasets(model_cfg: ModelConfig, cfg: TrainConfig):
    task = "sr" if model_cfg.head == "pixelshuffle-sr" else "denoise"
    scale = model_cfg.scale if task == "sr" else 1
    train = synth_dataset(cfg.dataset, cfg.n_train, cfg.patch_size, scale, cfg.seed, task,
                          cfg.noise_sigma)
    val = synth_dataset(cfg.dataset, cfg.n_val, cfg.patch_size, scale, cfg.seed + 7919, task,
                        cfg.noise_sigma)
    return train, val


def warm_start(net: RestorationNet, state: dict[str, np.ndarray]) -> tuple[list[str], list[str]]:
    """Copy every checkpoint tensor whose name and shape match; return ``(loaded, skipped)``.

    Lets a 3x or 4x model start from 2x weights: only the upsampling head differs.
    """
    loaded, skipped = [], []
    for name, p in net.named_parameters():
        t = state.get(name)
        if t is not None and t.shape == p.data.shape:
            p.data[...] = t
            loaded.append(name)
        else:
            skipped.append(name)
    return loaded, skipped


def train(model_cfg: ModelConfig, cfg: TrainConfig, out_dir=None,
          net: RestorationNet | None = None, checkpoint_every: int = 0) -> tuple[RestorationNet, TrainResult]:
    """Single-threaded deterministic training on synthetic pairs.

    Writes ``train_log.csv``, ``config.ini`` and checkpoints under ``out_dir``
    when given.
    """
    t0 = time.perf_counter()
    net = net or RestorationNet(model_cfg, seed=cfg.seed)
    (lq_tr, hq_tr), (lq_val, hq_val) = make_datasets(model_cfg, cfg)
    dtype = model_cfg.np_dtype
    lq_tr, hq_tr = lq_tr.astype(dtype), hq_tr.astype(dtype)
    loss_fn = LOSSES[cfg.loss]
    opt = Adam(net, cfg)
    root = RngState(cfg.seed)
    batch_rng = root.split(0xB47C).generator()
    result = TrainResult()
    if model_cfg.head == "pixelshuffle-sr":
        result.bicubic_psnr = bicubic_baseline(lq_val, hq_val, model_cfg.scale)

    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_config(out_dir / "config.ini", model_cfg, cfg)
        fh = open(out_dir / "train_log.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "psnr_val"])
    try:
        for step in range(cfg.steps):
            idx = batch_rng.choice(len(lq_tr), cfg.batch_size, replace=False)
            lq, hq = lq_tr[idx], hq_tr[idx]
            if cfg.augment:
                lq, hq = augment(lq, hq, batch_rng)
            net.zero_grad()
            pred = net.forward(lq, root.split(1, step))
            loss, g = loss_fn(pred, hq)
            net.backward(g.astype(dtype))
            if cfg.clip_grad_norm > 0:
                clip_grad_norm(net, cfg.clip_grad_norm)
            lr = lr_at(step, cfg)
            opt.step(lr)
            result.losses.append(loss)
            result.lrs.append(lr)
            val = ""
            if cfg.eval_every and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
                val = evaluate_psnr(net, lq_val, hq_val)
                result.val_psnr[step + 1] = val
                log.info("step %d loss %.5f lr %.2e val psnr %.3f", step + 1, loss, lr, val)
            if writer is not None:
                writer.writerow([step + 1, repr(loss), repr(lr), "" if val == "" else f"{val:.6f}"])
            if out_dir is not None and checkpoint_every and (step + 1) % checkpoint_every == 0:
                save_checkpoint(net.state_dict().items(), out_dir / f"ckpt_{step + 1:06d}.atsm")
    finally:
        if fh is not None:
            fh.close()
    result.final_psnr = evaluate_psnr(net, lq_val, hq_val)
    if out_dir is not None:
        save_checkpoint(net.state_dict().items(), out_dir / "model.atsm")
    result.seconds = time.perf_counter() - t0
    return net, result
