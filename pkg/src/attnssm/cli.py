"""attnssm command line: check, train, infer, decay, scan-cost, count-params, export-plan.

Exit codes: 0 success, 1 property failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig, load_config, preset
from .tensor import ConfigError, FormatError, RngState, load_checkpoint

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    """Reported as a clean message with exit code 2."""


def _configs(args) -> tuple[ModelConfig, TrainConfig]:
    if args.config:
        if not Path(args.config).is_file():
            raise CliError(f"config file not found: {args.config}")
        model, train = load_config(args.config)
    else:
        model, train = preset("v2-toy"), TrainConfig()
    model_over = {}
    if getattr(args, "scale", None) is not None:
        model_over["scale"] = args.scale
    if model_over:
        model = dataclasses.replace(model, **model_over)
    train_over = {}
    if getattr(args, "steps", None) is not None:
        train_over["steps"] = args.steps
    if args.seed is not None:
        train_over["seed"] = args.seed
    if train_over:
        train = dataclasses.replace(train, **train_over)
    return model, train


def _load_net(args, model_cfg: ModelConfig):
    from .model import RestorationNet

    ckpt = getattr(args, "checkpoint", None)
    if ckpt is None:
        return RestorationNet(model_cfg, seed=args.seed or 0)
    path = Path(ckpt)
    if not path.is_file():
        raise CliError(f"checkpoint not found: {ckpt}")
    if not args.config and (path.parent / "config.ini").is_file():
        model_cfg, _ = load_config(path.parent / "config.ini")
        if getattr(args, "scale", None) is not None:
            model_cfg = dataclasses.replace(model_cfg, scale=args.scale)
    net = RestorationNet(model_cfg)
    try:
        net.load_state_dict(load_checkpoint(path))
    except (KeyError, ValueError) as exc:
        raise CliError(f"checkpoint does not fit the configuration: {exc}") from exc
    return net


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    from .checks import run_checks

    try:
        ok = run_checks(args.filter, args.inject_fault, args.seed or 0)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    print("all properties passed" if ok else "property failure")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_train(args) -> int:
    from .model import RestorationNet
    from .train import train, warm_start

    model_cfg, train_cfg = _configs(args)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = _out_dir(args)
    net = None
    if args.init_from:
        if not Path(args.init_from).is_file():
            raise CliError(f"checkpoint not found: {args.init_from}")
        net = RestorationNet(model_cfg, seed=train_cfg.seed)
        loaded, skipped = warm_start(net, load_checkpoint(args.init_from))
        print(f"warm start: {len(loaded)} tensors loaded, {len(skipped)} kept fresh ({', '.join(skipped) or 'none'})")
    _, res = train(model_cfg, train_cfg, out_dir=out, net=net, checkpoint_every=args.checkpoint_every)
    print(f"final validation PSNR {res.final_psnr:.3f} dB"
          + (f" (bicubic {res.bicubic_psnr:.3f} dB)" if np.isfinite(res.bicubic_psnr) else ""))
    print(f"checkpoint written to {out / 'model.atsm'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .imageio import read_image, write_image
    from .metrics import psnr, ssim

    model_cfg, _ = _configs(args)
    net = _load_net(args, model_cfg)
    img = read_image(args.image)
    net.set_routing("argmax")
    out = np.clip(net.forward(img), 0, 1)
    dest = Path(args.out) if args.out else Path(args.image).with_name(Path(args.image).stem + "_restored.png")
    if dest.suffix == "" or dest.is_dir():
        dest.mkdir(parents=True, exist_ok=True)
        dest = dest / (Path(args.image).stem + "_restored.png")
    write_image(dest, out)
    print(f"wrote {dest} ({out.shape[1]}x{out.shape[0]})")
    if args.gt:
        gt = read_image(args.gt)
        crop = net.config.scale if net.config.head == "pixelshuffle-sr" else 0
        print(f"PSNR {psnr(out, gt, True, crop):.3f} dB  SSIM {ssim(out, gt, True, crop):.4f}")
    return EXIT_OK


def kde_below_one(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Gaussian KDE (Scott bandwidth) reflected at 1 so no mass lies above 1."""
    from scipy.stats import gaussian_kde

    kde = gaussian_kde(values)
    return kde(grid) + kde(2.0 - grid)


def cmd_decay(args) -> int:
    from .data import synth_dataset
    from .ssm import DiscreteSsm, decay_profile

    out = _out_dir(args)
    rows = []
    if args.synthetic is not None:
        a = float(args.synthetic)
        A_bar = np.full((args.k_max, 1, 1), a)
        prof = decay_profile(DiscreteSsm(A_bar, np.ones_like(A_bar)), np.ones((args.k_max, 1)), args.k_max)
        rows = [("synthetic", j, prof[j]) for j in range(args.k_max)]
        a_values = A_bar.ravel()
    else:
        model_cfg, _ = _configs(args)
        net = _load_net(args, model_cfg)
        net.set_routing("argmax")
        lq, _ = synth_dataset("tiny-natural", 1, 16 * net.config.scale, net.config.scale,
                              seed=args.seed or 0)
        net.forward(lq)
        a_values = []
        for i, m in enumerate(net.assms()):
            ds, C = m.last_discrete()
            k = min(args.k_max, ds.A_bar.shape[-3])
            prof = decay_profile(ds, C, k)
            rows += [(i, j, prof[j]) for j in range(k)]
            a_values.append(ds.A_bar.ravel())
        a_values = np.concatenate(a_values).astype(np.float64)
    with open(out / "decay_profile.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "distance", "mean_coefficient"])
        w.writerows((l, j, repr(float(v))) for l, j, v in rows)
    sample = a_values
    if sample.size > 20000:
        sample = RngState(args.seed or 0).generator().choice(sample, 20000, replace=False)
    grid = np.linspace(max(0.0, sample.min() - 0.05), 1.0, 256)
    with open(out / "abar_kde.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a_bar", "density"])
        if np.ptp(sample) > 0:
            w.writerows((repr(float(x)), repr(float(y))) for x, y in zip(grid, kde_below_one(sample, grid)))
    print(f"A_bar: n={a_values.size} mean={a_values.mean():.6f} min={a_values.min():.6f} "
          f"max={a_values.max():.6f}")
    print(f"wrote {out / 'decay_profile.csv'} and {out / 'abar_kde.csv'}")
    return EXIT_OK


def cmd_scan_cost(args) -> int:
    from .macs import instrumented_ssm_stage, network_macs, scan_cost_report

    model_cfg, _ = _configs(args)
    n = args.directions
    h, w = args.height, args.width
    rep = scan_cost_report(model_cfg, n, h, w)
    print(f"SSM stage per ASSM, {h}x{w} tokens, E={model_cfg.channels}, d={model_cfg.d_state}")
    print(f"{'component':<12}{f'{n}-direction':>18}{'1-direction':>18}{'semantic':>18}")
    for key in rep["semantic"]:
        print(f"{key:<12}{rep['multi'].get(key, 0):>18,}{rep['single'].get(key, 0):>18,}"
              f"{rep['semantic'][key]:>18,}")
    print(f"ratio {n}-direction / 1-direction : {rep['ratio_multi_vs_single']:.4f}")
    print(f"ratio semantic / 1-direction      : {rep['ratio_semantic_vs_single']:.4f}")
    print(f"ratio {n}-direction / semantic    : {rep['ratio_multi_vs_semantic']:.4f}")
    if args.verify:
        hs, ws = min(h, 16), min(w, 16)
        small = scan_cost_report(model_cfg, n, hs, ws)
        got = instrumented_ssm_stage(hs, ws, model_cfg.channels, model_cfg.d_state, n)["macs:ssm"]
        ok = got == small["multi"]["total"]
        print(f"instrumented check at {hs}x{ws}: counted {got:,} vs analytic {small['multi']['total']:,}"
              f" -> {'ok' if ok else 'MISMATCH'}")
        if not ok:
            return EXIT_FAIL
    table = network_macs(model_cfg, h, w)
    print(f"\nwhole network ({h}x{w} input):")
    for k, v in table.items():
        print(f"  {k:<24}{v:>18,}")
    return EXIT_OK


def cmd_count_params(args) -> int:
    from .model import count_params, summarize_params

    model_cfg, _ = _configs(args)
    rows = count_params(model_cfg)
    for name, v in summarize_params(rows).items():
        print(f"{name:<28}{v:>12,}")
    total = sum(v for _, v in rows)
    print(f"{'total':<28}{total:>12,}")
    T, r, d = model_cfg.num_prompts, model_cfg.prompt_rank, model_cfg.d_state
    print(f"prompt pool: {T}x{r} = {T * r} per block, shared {r}x{d} = {r * d}")
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        n = sum(t.size for t in ckpt.values())
        print(f"checkpoint elements {n:,} -> {'match' if n == total else 'MISMATCH'}")
        if n != total:
            return EXIT_FAIL
    if args.verbose:
        for name, v in rows:
            print(f"  {name:<48}{v:>10,}")
    return EXIT_OK


def cmd_export_plan(args) -> int:
    from .imageio import read_image
    from .sgn import write_plan_csv

    model_cfg, _ = _configs(args)
    net = _load_net(args, model_cfg)
    img = read_image(args.image)
    net.set_routing("argmax")
    net.forward(img)
    assms = net.assms()
    if not 0 <= args.layer < len(assms):
        raise CliError(f"layer must be in [0, {len(assms)})")
    cache = assms[args.layer]._cache
    labels, plan = cache["res"].labels[0], cache["plan"]
    width = cache["shape"][2]
    from .sgn import SemanticPlan
    single = SemanticPlan(plan.perm[0], plan.inv_perm[0], plan.group_offsets[0])
    dest = Path(args.out) if args.out else Path("plan.csv")
    if dest.is_dir():
        dest = dest / "plan.csv"
    write_plan_csv(dest, labels, single, width=width)
    print(f"wrote {dest} ({labels.size} rows, {len(np.unique(labels))} distinct labels)")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attnssm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", type=str, default=None)
        sp.add_argument("--out", type=str, default=None)

    sp = sub.add_parser("check", help="run the invariant suite")
    common(sp, config=False)
    sp.add_argument("--filter", type=str, default=None)
    sp.add_argument("--inject-fault", choices=("scan", "attention", "sgn", "routing"), default=None)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("train", help="train on synthetic pairs")
    common(sp)
    sp.add_argument("--scale", type=int, choices=(2, 3, 4), default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--checkpoint-every", type=int, default=0)
    sp.add_argument("--init-from", default=None, metavar="CHECKPOINT",
                    help="warm start from matching tensors, e.g. 2x weights for a 3x model")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="restore one image")
    common(sp)
    sp.add_argument("image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scale", type=int, choices=(2, 3, 4), default=None)
    sp.add_argument("--gt", type=str, default=None)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("decay", help="decay profiles and A_bar density")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--k-max", type=int, default=64)
    sp.add_argument("--synthetic", type=float, default=None, metavar="A_BAR")
    sp.set_defaults(func=cmd_decay)

    sp = sub.add_parser("scan-cost", help="SSM-stage MACs for n scan directions")
    common(sp)
    sp.add_argument("--directions", type=int, choices=(1, 2, 4), default=4)
    sp.add_argument("--height", type=int, default=360)
    sp.add_argument("--width", type=int, default=640)
    sp.add_argument("--verify", action="store_true", help="cross-check with instrumented execution")
    sp.set_defaults(func=cmd_scan_cost)

    sp = sub.add_parser("count-params", help="parameter table")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_count_params)

    sp = sub.add_parser("export-plan", help="routing labels and SGN permutation as CSV")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--image", required=True)
    sp.add_argument("--layer", type=int, default=0)
    sp.set_defaults(func=cmd_export_plan)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
