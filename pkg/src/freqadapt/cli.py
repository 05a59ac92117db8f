"""Command-line surface: data generation, training, evaluation, studies.

Exit codes: 0 success, 2 usage error (argparse), 1 runtime failure. Every
command is deterministic given --seed. The effective configuration is
echoed into the output directory of training commands, and the final
metrics of a command are printed last as a stable key=value block.

FREQADAPT_THREADS caps numeric worker threads; it must be honored before
numpy loads, which is why this module sets the BLAS thread variables
before importing the rest of the package.
"""

from __future__ import annotations

import os


def _cap_threads() -> None:
    n = os.environ.get("FREQADAPT_THREADS")
    if n:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, n)


_cap_threads()

import argparse
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import config as cfgmod
from . import network, pipeline, synth
from .data import write_manifest
from .freq_augment import amplitude_mixup
from .metrics import EvalReport
from .optim import gradient_check
from .spatial_augment import mixup_images
from .volume import Volume, read_volume, write_pgm_slice, write_volume


def _print_block(pairs: dict) -> None:
    for k, v in pairs.items():
        if isinstance(v, float):
            print(f"{k}={v:.6f}")
        else:
            print(f"{k}={v}")


def _report_block(report: EvalReport) -> dict:
    return {
        "acc": report.acc, "sen": report.sen, "spe": report.spe, "auc": report.auc,
        "n_pos": report.n_pos, "n_neg": report.n_neg, "threshold": report.threshold,
    }


def _effective(args, require_data: bool = True) -> tuple[dict, "pipeline.RunConfig"]:
    cfg = cfgmod.load_config(args.config)
    overrides = {
        ("run", "data_dir"): getattr(args, "data", None),
        ("run", "out_dir"): getattr(args, "out", None),
        ("run", "seed"): getattr(args, "seed", None),
    }
    cfgmod.apply_overrides(cfg, overrides)
    if require_data and not cfg["run"]["data_dir"]:
        raise cfgmod.ConfigError("no dataset directory: pass --data or set run.data_dir")
    if not cfg["run"]["out_dir"]:
        raise cfgmod.ConfigError("no output directory: pass --out or set run.out_dir")
    return cfg, cfgmod.to_run_config(cfg)


def _echo_config(cfg: dict, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.ini").write_text(cfgmod.render_config(cfg))


def cmd_gen_data(args) -> int:
    cfg = cfgmod.load_config(args.config)
    cfgmod.apply_overrides(
        cfg,
        {
            ("data", "seed"): args.seed,
            ("data", "dims"): args.dims,
            ("data", "n_per_class"): args.n_per_class,
        },
    )
    data = cfgmod.to_data_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.ini").write_text(cfgmod.render_config(cfg))
    manifests = [
        synth.generate_dataset(
            data[dom], data["classes"], data["n_per_class"], data["dims"], data["seed"], out
        )
        for dom in ("source", "target")
    ]
    merged = synth.merge_manifests(out, manifests)
    final = synth.split_holdout(merged, data["fractions"], data["seed"])
    write_manifest(final)
    counts = final.counts()
    for (domain, split, label), n in sorted(counts.items()):
        print(f"{domain}/{split}/class{label}: {n}")
    _print_block({"n_total": len(final.entries), "manifest": out / "manifest.tsv"})
    return 0


def cmd_pretrain(args) -> int:
    cfg, run_cfg = _effective(args)
    _echo_config(cfg, run_cfg.out_dir)
    result = pipeline.pretrain_stage(
        run_cfg, variant=args.variant, resume=args.resume, metrics_path=args.metrics_out
    )
    _print_block(
        {
            "checkpoint": result.checkpoint_path,
            "metrics": result.metrics_path,
            "best_val_auc": result.best_auc,
            "best_epoch": result.best_epoch,
        }
    )
    return 0


def cmd_adapt(args) -> int:
    cfg, run_cfg = _effective(args)
    if args.pretrained is None and args.resume is None:
        raise FileNotFoundError("adapt needs --pretrained (or --resume)")
    _echo_config(cfg, run_cfg.out_dir)
    result = pipeline.adapt_stage(
        run_cfg,
        args.pretrained,
        method=args.method,
        resume=args.resume,
        metrics_path=args.metrics_out,
    )
    _print_block(
        {
            "checkpoint": result.checkpoint_path,
            "metrics": result.metrics_path,
            "best_val_auc": result.best_auc,
            "best_epoch": result.best_epoch,
        }
    )
    return 0


def cmd_eval(args) -> int:
    report = pipeline.evaluate_model(
        args.checkpoint, args.data, args.domain, args.split, args.threshold
    )
    _print_block(_report_block(report))
    return 0


def cmd_baseline(args) -> int:
    cfg, run_cfg = _effective(args)
    _echo_config(cfg, run_cfg.out_dir)
    report, stage = pipeline.run_baseline(run_cfg, args.which, pretrained=args.pretrained)
    block = {"which": args.which, "checkpoint": stage.checkpoint_path}
    block.update(_report_block(report))
    _print_block(block)
    return 0


def cmd_augment(args) -> int:
    carrier = read_volume(args.carrier)
    needs_other = args.method in ("dymix", "mixup", "cutmix", "apr", "fda")
    if needs_other and args.other is None:
        raise ValueError(f"method {args.method!r} needs --other")
    other = read_volume(args.other).values if args.other else None
    rng = np.random.default_rng(args.seed)
    cfg = pipeline.RunConfig(data_dir=".", out_dir=".")
    if args.fda_beta is not None:
        cfg = replace(cfg, fda_beta=args.fda_beta)
    if args.lam is not None and args.method in ("dymix", "mixup"):
        if args.method == "dymix":
            out_v = amplitude_mixup(Volume(other), carrier, args.beta, args.lam)
        else:
            out_v = mixup_images(carrier, Volume(other), args.lam)
        out = out_v.values
    else:
        out = pipeline.apply_method(args.method, carrier.values, other, rng, cfg, args.beta)
    write_volume(Volume(out), args.out)
    if args.dump_pgm:
        stem = Path(args.out).with_suffix("")
        write_pgm_slice(carrier, f"{stem}_carrier.pgm")
        if other is not None:
            write_pgm_slice(Volume(other), f"{stem}_other.pgm")
        write_pgm_slice(Volume(out), f"{stem}_out.pgm")
    _print_block({"method": args.method, "out": args.out, "beta": args.beta})
    return 0


def _run_one_isolated(base_args: list[str], seed: int, which: str, pre, out_dir: Path) -> None:
    cmd = [
        sys.executable, "-m", "freqadapt.cli", "baseline",
        "--which", which, "--seed", str(seed), "--out", str(out_dir),
    ] + base_args
    if pre is not None:
        cmd += ["--pretrained", str(pre)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(
            f"isolated run {which}/seed{seed} failed with code {proc.returncode}:\n{proc.stderr}"
        )


def cmd_compare_aug(args) -> int:
    cfg, run_cfg = _effective(args)
    _echo_config(cfg, run_cfg.out_dir)
    methods = tuple(args.methods.split(","))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    for m in methods:
        if m not in pipeline.ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; valid: {pipeline.ALL_METHODS}")
    if not args.isolate:
        result = pipeline.run_benchmark(run_cfg, methods, seeds)
    else:
        base = []
        if args.config:
            base += ["--config", args.config]
        if args.data:
            base += ["--data", args.data]
        out_root = Path(run_cfg.out_dir)
        for seed in seeds:
            seed_cfg = replace(run_cfg, seed=seed, out_dir=str(out_root / f"seed{seed}"))
            pre_cache: dict[str, Path] = {}
            for which in methods:
                pre = None
                if which not in pipeline.SUPERVISED_BASELINES:
                    variant = "noint" if which == "dymix_noint" else "full"
                    if variant not in pre_cache:
                        pre_cache[variant] = pipeline.pretrain_stage(
                            seed_cfg, variant=variant
                        ).checkpoint_path
                    pre = pre_cache[variant]
                _run_one_isolated(base, seed, which, pre, out_root / f"seed{seed}")
        # assemble the table from the per-run checkpoints
        rows = []
        for seed in seeds:
            for which in methods:
                ckpt = out_root / f"seed{seed}" / f"{which}.ckpt"
                rep = pipeline.evaluate_model(
                    ckpt, run_cfg.data_dir, "target", "test",
                    run_cfg.threshold, run_cfg.eval_batch,
                )
                rows.append((which, seed, rep.acc, rep.sen, rep.spe, rep.auc))
        path = out_root / "results.tsv"
        means = pipeline.write_results_table(rows, methods, path)
        result = {"means": means, "results_path": path}
    print(Path(result["results_path"]).read_text(), end="")
    block = {"results": result["results_path"]}
    for m in methods:
        block[f"mean_auc.{m}"] = result["means"][m]["auc"]
    _print_block(block)
    return 0


def cmd_grad_check(args) -> int:
    dims = tuple(int(d) for d in args.dims.split(","))
    rng = np.random.default_rng(args.seed)
    arch = network.ArchConfig(dropout=0.0)
    model = network.init_model(arch, len(dims), rng)
    network.add_target_encoder(model, rng, copy_source=True)
    x_src = rng.uniform(size=(args.batch, *dims))
    x_mix = rng.uniform(size=(args.batch, *dims))
    labels = rng.integers(0, 2, size=args.batch)

    def loss_fn(params, need_grad):
        m = network.Model(arch=arch, ndim=len(dims), params=params)
        leaves = network.wrap(m)
        trace: list = []
        total, _ = network.adapt_loss(
            m, leaves, x_src, labels, x_mix, 0.5, 0.1,
            np.random.default_rng(0), trace, reverse=False,
        )
        if not need_grad:
            return float(total.value), None, trace
        ad.backward(total)
        grads = {n: t.grad for n, t in leaves.items() if t.grad is not None}
        return float(total.value), grads, trace

    report = gradient_check(
        loss_fn, model.params, eps=args.eps, tolerance=args.tol,
        max_per_tensor=args.max_per_tensor, rng=np.random.default_rng(args.seed + 1),
    )
    print(report.as_text())
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqadapt",
        description="Frequency-domain unsupervised domain adaptation, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override its keys")
    common.add_argument("--seed", type=int, help="run seed override")

    train_common = argparse.ArgumentParser(add_help=False)
    train_common.add_argument("--data", help="dataset directory (manifest.tsv inside)")
    train_common.add_argument("--out", help="output directory for checkpoints and metrics")
    train_common.add_argument("--metrics-out", help="metrics file path override")
    train_common.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic benchmark")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--dims", help="spatial dims, comma separated (e.g. 32,32)")
    p.add_argument("--n-per-class", type=int, help="samples per class per domain")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser(
        "pretrain", parents=[common, train_common], help="stage 1: source pretraining"
    )
    p.add_argument(
        "--variant", choices=("full", "noint", "plain"), default="full",
        help="full = intensity-adversarial, noint = augmentation only, plain = supervised",
    )
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser(
        "adapt", parents=[common, train_common], help="stage 2: adversarial adaptation"
    )
    p.add_argument("--pretrained", help="stage-1 checkpoint")
    p.add_argument("--method", choices=pipeline.AUG_METHODS, default="dymix")
    p.set_defaults(fn=cmd_adapt)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain", choices=("source", "target"), default="target")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser(
        "baseline", parents=[common, train_common], help="train and evaluate one method"
    )
    p.add_argument("--which", choices=pipeline.ALL_METHODS, required=True)
    p.add_argument("--pretrained", help="reuse an existing stage-1 checkpoint")
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("augment", parents=[common], help="apply one augmentation to volumes")
    p.add_argument("--method", choices=pipeline.AUG_METHODS, required=True)
    p.add_argument("--carrier", required=True, help="VOLB input keeping structure/label")
    p.add_argument("--other", help="VOLB input from the opposite domain")
    p.add_argument("--out", required=True, help="VOLB output path")
    p.add_argument("--beta", type=float, default=1.0, help="region fraction for dymix")
    p.add_argument("--lambda", dest="lam", type=float, help="explicit mixing weight")
    p.add_argument("--fda-beta", type=float, help="region fraction for fda")
    p.add_argument("--dump-pgm", action="store_true", help="also write middle-slice PGMs")
    p.set_defaults(fn=cmd_augment, seed=0)

    p = sub.add_parser(
        "compare-aug", parents=[common, train_common], help="augmentation comparison study"
    )
    p.add_argument("--methods", default="mixup,cutout,cutmix,apr,fda,dymix")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--isolate", action="store_true", help="one subprocess per training run")
    p.set_defaults(fn=cmd_compare_aug)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient audit")
    p.add_argument("--dims", default="16,16")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-per-tensor", type=int, default=20)
    p.set_defaults(fn=cmd_grad_check, seed=0)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # noqa: BLE001 - single surface for exit-code mapping
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
