"""Command-line entry point: ``sssa <command> [options]``.

Every command accepts ``--config FILE.json`` (keys are the command's long
option names with dashes turned into underscores), ``--out DIR`` (default
``$SSSA_OUT_DIR`` or ``./sssa_out``) and ``--seed``. Flags given on the
command line override the config file. Reports are JSON and carry the
resolved config, seed, package version and constants.

Exit codes: 0 success, 1 a verification check failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .conv import ConfigurationError
from .idx import IdxFormatError
from .ops import E_AC_PJ, E_MAC_PJ
from .tensor import DomainError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_OUT = "sssa_out"

log = logging.getLogger("sssa")


class UsageError(Exception):
    pass


def constants(**extra) -> dict:
    return {"e_ac_pj": E_AC_PJ, "e_mac_pj": E_MAC_PJ, **extra}


def write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2, default=_jsonable))
    return path


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def report(args, name: str, results: dict, consts: dict | None = None) -> Path:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config_file")}
    doc = {
        "command": args.command,
        "version": __version__,
        "seed": args.seed,
        "config": cfg,
        "constants": constants(**(consts or {})),
        "results": results,
    }
    path = write_json(args.out_dir / name, doc)
    print(f"report: {path}")
    return path


# -- commands ---------------------------------------------------------------


def cmd_analyze_ratio(args) -> int:
    from .analysis.ratio import (
        PUBLISHED_ANN_VARIANCE,
        PUBLISHED_SPIKE_VARIANCE,
        RatioStudyConfig,
        estimator_conventions,
        ratio_var_exact,
        ratio_var_mc,
    )

    cfg = RatioStudyConfig(
        mode=args.mode,
        p=args.p,
        d=args.d,
        mu=args.mu,
        sigma=args.sigma,
        sigma_is_variance=args.sigma_is_variance,
        trials=args.trials,
        seed=args.seed,
        fold=not args.no_fold,
        bins=args.bins,
    )
    res = ratio_var_mc(cfg, workers=args.workers)
    hist = res.write_histogram(args.out_dir / f"ratio_histogram_{cfg.mode}.csv")
    results = res.to_dict()
    results["histogram_csv"] = hist.name
    ok = True
    if cfg.mode == "spike":
        mean, var = ratio_var_exact(cfg.p, cfg.d, cfg.fold)
        rel = abs(res.variance - var) / var if var > 0 else abs(res.variance)
        results.update(exact_mean=mean, exact_variance=var, mc_relative_error=rel)
        results["conventions"] = estimator_conventions(cfg.p, cfg.d)
        results["published_variance"] = PUBLISHED_SPIKE_VARIANCE
        results["published_abs_difference"] = abs(PUBLISHED_SPIKE_VARIANCE - var)
        results["note"] = (
            "exact value from full enumeration of both spike counts, ratio sqrt(max/min) of squared norms, "
            "pairs with a zero norm excluded and mass renormalized; the published figure comes from an "
            "estimator whose folding and exclusion rules are only partly stated, see 'conventions' for "
            "alternatives"
        )
        ok = rel <= args.tolerance
        print(f"exact variance {var:.6g}  mc variance {res.variance:.6g}  relative error {rel:.3%}")
    else:
        results["published_variance"] = PUBLISHED_ANN_VARIANCE
        results["std_used"] = cfg.std
        print(f"gaussian variance {res.variance:.6g} (std {cfg.std:g})")
    report(args, f"ratio_report_{cfg.mode}.json", results)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_analyze_taylor(args) -> int:
    from .analysis.taylor import taylor_study

    a, b = args.range
    st = taylor_study(args.x0, a, b, args.grid)
    results = st.to_dict()
    results["max_error"] = st.max_abs_error
    print(json.dumps(results))
    report(args, "taylor_report.json", results)
    return EXIT_OK


def cmd_verify_equivalence(args) -> int:
    from .verify import verify_scaling_invariance, verify_v1_v2

    if args.variant == "v1v2":
        res = verify_v1_v2(args.trials, args.seed)
    elif args.variant == "v1v2-t1":
        res = verify_v1_v2(args.trials, args.seed, single_step=True)
    else:
        res = verify_scaling_invariance(args.trials, args.seed)
    print(res.summary())
    report(args, f"equivalence_{args.variant}.json", {"passed": res.passed, "trials": res.trials, "failures": res.failures[:20]})
    return EXIT_OK if res.ok else EXIT_FAIL


def cmd_verify_agreement(args) -> int:
    from .verify import counterexample, saccadic_agreement

    general = args.mixer == "general"
    rate = saccadic_agreement(args.trials, args.seed, general)
    ce = counterexample()
    print(f"train/infer agreement ({args.mixer} mixer): {rate:.4f}")
    print(f"counterexample disagrees: {ce['disagree']} (train {ce['train_spikes']}, infer {ce['infer_spikes']})")
    report(args, f"agreement_{args.mixer}.json", {"agreement": rate, "counterexample": ce})
    ok = ce["disagree"] and (general or rate == 1.0)
    return EXIT_OK if ok else EXIT_FAIL


BANDS = {("n", "v2-learned"): (0.8, 1.2), ("n", "ssa"): (1.8, 2.2), ("d", "v2-learned"): (0.8, 1.2)}


def cmd_bench_scaling(args) -> int:
    from .analysis.scaling import bench_scaling

    axes = ("n", "d") if args.axis == "both" else (args.axis,)
    results, rows, ok = {}, [], True
    for axis in axes:
        variants = args.variants or (("v2-learned", "ssa") if axis == "n" else ("v2-learned",))
        bench = bench_scaling(axis, args.sizes, variants, args.t, args.fixed, args.seed)
        results[axis] = bench.to_dict()
        for v, exp in bench.exponents.items():
            lo, hi = BANDS.get((axis, v), (-np.inf, np.inf))
            inside = lo <= exp <= hi
            ok &= inside
            print(f"{axis.upper()} sweep  {v:<12} exponent {exp:.4f}  band [{lo}, {hi}]  {'ok' if inside else 'OUT'}")
            rows += [(axis, s, v, c) for s, c in zip(bench.sizes, bench.totals[v])]
    csv_path = args.out_dir / "scaling_counts.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "size", "variant", "total_ops"])
        w.writerows(rows)
    results["bands"] = {f"{a}:{v}": band for (a, v), band in BANDS.items()}
    report(args, "scaling_report.json", results)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_count_energy(args) -> int:
    from .analysis.scaling import energy_comparison

    rows = energy_comparison(args.n, args.t, args.d, args.seed, args.e_ac, args.e_mac)
    for r in rows:
        print(f"N={r['n']:<4} V2 {r['v2_joules']:.4e} J  SSA {r['ssa_joules']:.4e} J  ratio {r['ssa_over_v2']:.1f}")
    report(args, "energy_report.json", {"rows": rows}, {"e_ac_pj": args.e_ac, "e_mac_pj": args.e_mac})
    return EXIT_OK


def _task_and_optim(args):
    from .training import OptimSpec, ToyTaskSpec

    task = ToyTaskSpec(
        image_size=args.image_size,
        samples_per_class=args.samples_per_class,
        t_steps=args.t_steps,
        seed=args.seed,
    )
    optim = OptimSpec(
        lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay, epochs=args.epochs, batch_size=args.batch_size
    )
    return task, optim


def cmd_train_toy(args) -> int:
    from dataclasses import replace

    from .checkpoint import save_checkpoint
    from .training import default_model_config, logistic_oracle, spec_dict, train_toy

    task, optim = _task_and_optim(args)
    model_cfg = replace(default_model_config(task), embed_dim=args.embed_dim, variant=args.variant)
    oracle = logistic_oracle(task)
    print(f"logistic oracle test accuracy: {oracle:.3f}")
    res = train_toy(task, model_cfg, optim)
    metrics = args.out_dir / "train_metrics.csv"
    with metrics.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_acc", "test_acc", "loss"])
        w.writeheader()
        w.writerows(res.metrics)
    ckpt = save_checkpoint(
        args.out_dir / "checkpoint.json",
        res.model,
        {"epoch": optim.epochs, "seed": task.seed, "diag_clamp": optim.diag_clamp},
    )
    print(f"final test accuracy {res.final_test_acc:.3f} (asynchronous inference {res.test_acc_async:.3f})")
    results = {
        "final_test_acc": res.final_test_acc,
        "test_acc_async": res.test_acc_async,
        "oracle_test_acc": oracle,
        "metrics_csv": metrics.name,
        "checkpoint": ckpt.name,
        "specs": {**spec_dict(task, optim), "ModelConfig": model_cfg.to_dict()},
    }
    report(args, "train_report.json", results)
    if args.min_acc is not None and res.final_test_acc < args.min_acc:
        return EXIT_FAIL
    return EXIT_OK


def _load_images(args, cfg):
    from .idx import read_idx
    from .training import ToyTaskSpec, make_bar_images

    if args.images:
        images = read_idx(args.images, ndim=3).astype(np.float64) / 255.0
        if images.shape[1:] != (cfg.image_size, cfg.image_size):
            raise UsageError(f"images are {images.shape[1:]}, model expects {cfg.image_size}x{cfg.image_size}")
        labels = read_idx(args.labels, ndim=1).astype(int) if args.labels else None
        if labels is not None and len(labels) != len(images):
            raise UsageError("label count does not match image count")
        return images[:, None], labels
    task = ToyTaskSpec(image_size=cfg.image_size, samples_per_class=args.samples, t_steps=cfg.t_steps, seed=args.seed)
    data = make_bar_images(task)
    return data.test_images, data.test_labels


def cmd_infer(args) -> int:
    from .checkpoint import load_checkpoint
    from .tensor import RngState
    from .training import rate_encode

    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model
    if model.cfg.in_channels != 1:
        raise UsageError("inference input expects single-channel models")
    images, labels = _load_images(args, model.cfg)
    spikes = rate_encode(images, model.cfg.t_steps, args.peak_rate, RngState(args.seed).stream(7))
    logits = model.forward(spikes, train=False, asynchronous=args.asynchronous).data
    pred = logits.argmax(axis=1)
    out = args.out_dir / "predictions.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "prediction"] + ([] if labels is None else ["label"]))
        for i, p in enumerate(pred):
            w.writerow([i, int(p)] + ([] if labels is None else [int(labels[i])]))
    results = {"count": int(len(pred)), "predictions_csv": out.name, "checkpoint_metadata": ckpt.metadata}
    if labels is not None:
        results["accuracy"] = float((pred == labels).mean())
        print(f"accuracy {results['accuracy']:.3f} on {len(pred)} images")
    else:
        print(f"wrote {len(pred)} predictions")
    report(args, "infer_report.json", results)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .verify import grad_checks

    errs = grad_checks(args.instances, args.seed, args.h)
    for name, e in errs.items():
        print(f"{name:<15} max relative error {e:.3e}")
    ok = max(errs.values()) < args.tol
    report(args, "grad_check_report.json", {"max_relative_error": errs, "tolerance": args.tol})
    return EXIT_OK if ok else EXIT_FAIL


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_file", help="JSON file with option values")
    common.add_argument("--out", dest="out", help="output directory (default $SSSA_OUT_DIR or ./sssa_out)")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sssa", description="Saccadic spike self-attention toolkit.")
    parser.add_argument("--version", action="version", version=f"sssa {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    p = add("analyze-ratio", cmd_analyze_ratio, "Magnitude-ratio spread: exact enumeration and Monte Carlo.")
    p.add_argument("--mode", choices=["spike", "gaussian"], default="spike")
    p.add_argument("--p", type=float, default=0.15)
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--mu", type=float, default=35.0)
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--sigma-is-variance", action="store_true")
    p.add_argument("--trials", type=int, default=1_000_000)
    p.add_argument("--no-fold", action="store_true")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--tolerance", type=float, default=0.02, help="allowed relative MC error (spike mode)")

    p = add("analyze-taylor", cmd_analyze_taylor, "Error of the tangent-line approximation to log.")
    p.add_argument("--x0", type=float, default=0.15)
    p.add_argument("--range", type=float, nargs=2, default=[0.1, 0.2], metavar=("A", "B"))
    p.add_argument("--grid", type=int, default=10_000)

    p = add("verify-equivalence", cmd_verify_equivalence, "Randomized equivalence checks.")
    p.add_argument("--variant", choices=["v1v2", "v1v2-t1", "heaviside-scaling"], default="v1v2")
    p.add_argument("--trials", type=int, default=1000)

    p = add("verify-agreement", cmd_verify_agreement, "Saccadic neuron train/infer branch agreement.")
    p.add_argument("--mixer", choices=["diagonal", "general"], default="diagonal")
    p.add_argument("--trials", type=int, default=1000)

    p = add("bench-scaling", cmd_bench_scaling, "Fit op-count scaling exponents over N and D.")
    p.add_argument("--axis", choices=["n", "d", "both"], default="both")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--variants", nargs="+", choices=["v2-learned", "v2-computed", "v1", "ssa"])
    p.add_argument("--t", type=int, default=4)
    p.add_argument("--fixed", type=int, default=32, help="value of the axis held fixed")

    p = add("count-energy", cmd_count_energy, "Energy of V2 versus dot-product attention from op counts.")
    p.add_argument("--n", type=int, nargs="+", default=[16, 32, 64, 128])
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--t", type=int, default=4)
    p.add_argument("--e-ac", type=float, default=E_AC_PJ, help="pJ per accumulate")
    p.add_argument("--e-mac", type=float, default=E_MAC_PJ, help="pJ per multiply-accumulate")

    p = add("train-toy", cmd_train_toy, "Train the tiny SNN-ViT on the synthetic bar task.")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--samples-per-class", type=int, default=200)
    p.add_argument("--image-size", type=int, default=16)
    p.add_argument("--t-steps", type=int, default=4)
    p.add_argument("--embed-dim", type=int, default=8)
    p.add_argument("--variant", choices=["v1", "v2"], default="v2")
    p.add_argument("--min-acc", type=float, help="exit 1 if final test accuracy is below this")

    p = add("infer", cmd_infer, "Classify IDX images (or synthetic bars) with a checkpoint.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", help="IDX file of uint8 images [M, H, W]")
    p.add_argument("--labels", help="IDX file of uint8 labels [M]")
    p.add_argument("--samples", type=int, default=50, help="synthetic images per class when --images is absent")
    p.add_argument("--peak-rate", type=float, default=0.5)
    p.add_argument("--asynchronous", action="store_true", help="use folded-threshold inference")

    p = add("grad-check", cmd_grad_check, "Finite differences against tape gradients.")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.command is None or not args.config_file:
        return args
    try:
        cfg = json.loads(Path(args.config_file).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {args.config_file}: {e}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions} - {"help", "config_file", "func"}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    # config supplies defaults, explicit flags still win
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def run(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = _apply_config(parser, argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    args.out_dir = Path(args.out or os.environ.get("SSSA_OUT_DIR") or DEFAULT_OUT)
    print(f"master seed: {args.seed}")
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (UsageError, ConfigurationError, DomainError, IdxFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        # checkpoint and parameter validation errors derive from ValueError
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
