"""Command-line interface.

Four subcommands cover the full workflow:

* ``generate`` — draw a synthetic dataset and its generator sidecar,
* ``train``    — pretrain + adversarially train on a dataset file,
* ``sweep``    — grid of (lambda, repeat) training runs, optionally parallel,
* ``report``   — render SVG figures from a finished run directory.

Exit codes: 0 success, 2 usage/configuration, 3 file or data problems,
4 training/numerical failures, 5 evaluation failures.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .adversary import HeadSpec, init_adversary
from .checkpoint import save_net
from .datasets import (
    SurrogateSpec,
    ToySpec,
    conditional_sampler,
    generate_surrogate_physics,
    generate_toy,
    read_dataset,
    read_generator_sidecar,
    write_dataset,
    write_generator_sidecar,
)
from .errors import (
    ConfigError,
    DataError,
    EvaluationError,
    NumericalError,
    PivotnetError,
    TrainingError,
)
from .evaluation import (
    GAUSSIAN_UNIT_ENTROPY,
    ams_scan,
    estimate_h_y_given_x,
    pivotality_report,
    write_ams_csv,
    write_density_csv,
    write_ks_csv,
    write_summary_kv,
)
from .manifest import RunManifest, save_manifest
from .nets import DenseNet, bce_with_logits, forward_cached, init_params
from .reporting import render_report
from .training import TrainConfig, run_training, split_train_eval, write_metrics_csv

RUN_DIR_ENV = "PIVOTNET_RUN_DIR"

TRAIN_DEFAULTS = {
    "lam": 1.0,
    "minibatch_size": 128,
    "adversary_steps": 50,
    "iterations": 200,
    "pretrain_epochs": 20,
    "classifier_lr": 1e-3,
    "adversary_lr": 1e-3,
    "seed": 0,
    "conditional_on_y": None,
    "head": "mixture",
    "head_size": 5,
    "optimizer": "adam",
    "eval_fraction": 0.1,
    "checkpoint_every": 10,
    "clf_hidden": "20,20",
    "clf_activations": "tanh,relu",
    "adv_hidden": "20,20",
    "adv_activations": "relu,relu",
    "eval_z_grid": None,
    "eval_samples": 100_000,
    "eval_seed": 99,
    "eval_data": None,
    "hyx_mc": 0,
    "thresholds": 201,
    "bce_only": False,
    "save_snapshots": False,
}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean value {text!r}")


def _opt_int(text: str):
    return None if text.strip().lower() in ("none", "") else int(text)


CONFIG_TYPES = {
    "lam": float,
    "minibatch_size": int,
    "adversary_steps": int,
    "iterations": int,
    "pretrain_epochs": int,
    "classifier_lr": float,
    "adversary_lr": float,
    "seed": int,
    "conditional_on_y": _opt_int,
    "head": str,
    "head_size": int,
    "optimizer": str,
    "eval_fraction": float,
    "checkpoint_every": int,
    "clf_hidden": str,
    "clf_activations": str,
    "adv_hidden": str,
    "adv_activations": str,
    "eval_z_grid": str,
    "eval_samples": int,
    "eval_seed": int,
    "eval_data": str,
    "hyx_mc": int,
    "thresholds": int,
    "bce_only": _parse_bool,
    "save_snapshots": _parse_bool,
    "lambdas": str,
    "repeats": int,
    "jobs": int,
}


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` option file; keys match long flag names."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        dest = key.strip().replace("-", "_")
        if dest == "lambda":
            dest = "lam"
        if dest not in CONFIG_TYPES:
            raise ConfigError(f"{path}:{line_no}: unknown option {key.strip()!r}")
        try:
            values[dest] = CONFIG_TYPES[dest](value.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{line_no}: bad value for {key.strip()}: {exc}")
    return values


def merge_options(args: argparse.Namespace, defaults: dict) -> None:
    """Fill unset flags from --config values, then built-in defaults."""
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for dest, default in defaults.items():
        if getattr(args, dest, None) is None:
            if dest in file_values:
                setattr(args, dest, file_values[dest])
            else:
                setattr(args, dest, default)


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip() != "")


def _runs_root() -> Path:
    return Path(os.environ.get(RUN_DIR_ENV, "runs"))


def build_train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        lam=args.lam,
        minibatch_size=args.minibatch_size,
        adversary_steps=args.adversary_steps,
        iterations=args.iterations,
        pretrain_epochs=args.pretrain_epochs,
        classifier_lr=args.classifier_lr,
        adversary_lr=args.adversary_lr,
        seed=args.seed,
        conditional_on_y=args.conditional_on_y,
        head=HeadSpec(args.head, args.head_size),
        optimizer=args.optimizer,
        eval_fraction=args.eval_fraction,
        checkpoint_every=args.checkpoint_every,
    )


def build_nets(input_dim: int, args: argparse.Namespace, config: TrainConfig):
    """Classifier and adversary with init seeds derived from the run seed."""
    init_seeds = np.random.SeedSequence(config.seed).spawn(4)[2:]
    hidden = _ints(args.clf_hidden)
    acts = _names(args.clf_activations)
    if len(acts) != len(hidden):
        raise ConfigError("clf-activations must list one tag per hidden layer")
    sizes = (input_dim, *hidden, 1)
    f = init_params(sizes, (*acts, "sigmoid"), init_seeds[0])
    adv_hidden = _ints(args.adv_hidden)
    adv_acts = _names(args.adv_activations)
    if len(adv_acts) != len(adv_hidden):
        raise ConfigError("adv-activations must list one tag per hidden layer")
    r = init_adversary(config.head, adv_hidden, adv_acts, init_seeds[1])
    return f, r


# --- generate -----------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if args.kind == "toy":
        spec = ToySpec(
            n=args.n,
            z_prior_sigma=args.z_sigma,
            seed=args.seed,
            z_scale=args.z_scale,
        )
        samples = generate_toy(spec)
    else:
        spec = SurrogateSpec(
            n=args.n,
            seed=args.seed,
            pileup_shift=args.pileup_shift,
            pileup_noise=args.pileup_noise,
            pileup_fraction=args.pileup_fraction,
            signal_fraction=args.signal_fraction,
            s_total=args.s_total,
            b_total=args.b_total,
        )
        samples = generate_surrogate_physics(spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, out)
    write_generator_sidecar(args.kind, spec, out)
    print(f"wrote {len(samples)} {args.kind} samples to {out}")
    return 0


# --- train ---------------------------------------------------------------


def _eval_split_stats(f: DenseNet, samples, eval_fraction: float):
    _, (x, y, _z, _w) = split_train_eval(samples, eval_fraction)
    cache = forward_cached(f, x)
    losses, _ = bce_with_logits(cache.final_preact[:, 0], y.astype(np.float64))
    scores = cache.output[:, 0]
    return float(losses.mean()), float(np.mean((scores > 0.5) == (y == 1)))


def _density_outputs(f, sidecar, args, config, run_dir, suffix=""):
    kind, spec = sidecar
    sampler = conditional_sampler(kind, spec)
    if args.eval_z_grid is not None:
        z_grid = _floats(args.eval_z_grid)
    else:
        z_grid = (0.0, 1.0) if kind == "surrogate" else (-1.0, 0.0, 1.0)
    report = pivotality_report(
        f,
        sampler,
        z_grid,
        n_samples=args.eval_samples,
        seed=args.eval_seed,
        y_restrict=config.conditional_on_y,
    )
    write_density_csv(report.densities, run_dir / f"densities{suffix}.csv")
    write_ks_csv(report, run_dir / f"ks{suffix}.csv")
    return report.max_ks


def cmd_train(args: argparse.Namespace) -> int:
    merge_options(args, TRAIN_DEFAULTS)
    config = build_train_config(args)
    if args.run_dir is not None:
        run_dir = Path(args.run_dir)
    else:
        run_dir = _runs_root() / f"lam{config.lam:g}_seed{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)

    samples = read_dataset(args.data)
    if not samples:
        raise DataError(f"{args.data}: dataset has no rows")
    sidecar = read_generator_sidecar(args.data)
    f0, r0 = build_nets(samples[0].x.shape[0], args, config)

    manifest = RunManifest(config=config)
    manifest.add_dataset(args.data)

    t0 = time.perf_counter()
    result = run_training(
        samples, config, f0, r0 if not args.bce_only else None, bce_only=args.bce_only
    )
    train_seconds = time.perf_counter() - t0

    save_net(result.f, run_dir / "classifier.json")
    manifest.add_artifact("classifier", run_dir / "classifier.json")
    if result.r is not None:
        save_net(result.r, run_dir / "adversary.json", head=config.head)
        manifest.add_artifact("adversary", run_dir / "adversary.json")
    write_metrics_csv(result.metrics, run_dir / "metrics.csv")
    manifest.add_artifact("metrics", run_dir / "metrics.csv")

    if args.save_snapshots and result.metrics.snapshots:
        snap_dir = run_dir / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for snap in result.metrics.snapshots:
            save_net(snap.f, snap_dir / f"iter{snap.iteration:05d}_f.json")
            save_net(
                snap.r, snap_dir / f"iter{snap.iteration:05d}_r.json", head=config.head
            )
        manifest.add_artifact("snapshots", snap_dir)

    t1 = time.perf_counter()
    summary: dict[str, object] = {
        "dataset": str(args.data),
        "n_samples": len(samples),
        "lambda": repr(config.lam),
        "seed": config.seed,
        "iterations": config.iterations,
        "mode": "bce-only" if args.bce_only else "adversarial",
        "h_z": repr(GAUSSIAN_UNIT_ENTROPY),
    }
    if result.metrics.records:
        last = result.metrics.records[-1]
        summary["final_loss_f"] = repr(last.loss_f)
        summary["final_loss_r"] = repr(last.loss_r)
        summary["final_e_lambda"] = repr(last.e_lambda)
        summary["final_accuracy"] = repr(result.metrics.snapshots[-1].accuracy)
    else:
        loss_f, accuracy = _eval_split_stats(result.f, samples, config.eval_fraction)
        summary["final_loss_f"] = repr(loss_f)
        summary["final_accuracy"] = repr(accuracy)

    if sidecar is not None and not args.bce_only:
        summary["max_ks"] = repr(
            _density_outputs(result.f, sidecar, args, config, run_dir)
        )
        manifest.add_artifact("densities", run_dir / "densities.csv")
        manifest.add_artifact("ks", run_dir / "ks.csv")
        pre = result.metrics.snapshots[0].f
        summary["max_ks_pretrain"] = repr(
            _density_outputs(pre, sidecar, args, config, run_dir, suffix="_pretrain")
        )
        if sidecar[0] == "toy" and args.hyx_mc > 0:
            estimate = estimate_h_y_given_x(sidecar[1], args.hyx_mc, seed=args.eval_seed)
            summary["h_y_given_x"] = repr(estimate.value)
            summary["h_y_given_x_se"] = repr(estimate.std_error)

    if args.eval_data is not None:
        eval_samples = read_dataset(args.eval_data)
        manifest.add_dataset(args.eval_data)
        scan = ams_scan(result.f, eval_samples, np.linspace(0.0, 1.0, args.thresholds))
        write_ams_csv(scan, run_dir / "ams.csv")
        manifest.add_artifact("ams", run_dir / "ams.csv")
        summary["best_ams"] = repr(scan.best_ams)
        summary["best_threshold"] = repr(scan.best_threshold)

    write_summary_kv(summary, run_dir / "summary.txt")
    manifest.add_artifact("summary", run_dir / "summary.txt")
    manifest.timings["train_seconds"] = round(train_seconds, 3)
    manifest.timings["eval_seconds"] = round(time.perf_counter() - t1, 3)
    save_manifest(manifest, run_dir / "manifest.json")

    headline = f"run complete: {run_dir}"
    if "final_loss_f" in summary:
        headline += f"  loss_f={float(summary['final_loss_f']):.4f}"
    if "final_loss_r" in summary:
        headline += f"  loss_r={float(summary['final_loss_r']):.4f}"
    print(headline)
    return 0


# --- sweep ----------------------------------------------------------------


def _sweep_member(payload: dict) -> dict:
    """One (lambda, repeat) member; runs in a worker process."""
    row = {
        "lambda": payload["lam"],
        "repeat": payload["repeat"],
        "seed": payload["seed"],
        "status": "ok",
        "best_ams": "",
        "best_threshold": "",
        "loss_f": "",
        "loss_r": "",
        "accuracy": "",
        "run_dir": payload["run_dir"],
    }
    try:
        args = argparse.Namespace(**payload["options"])
        config = build_train_config(args)
        samples = read_dataset(payload["data"])
        f0, r0 = build_nets(samples[0].x.shape[0], args, config)
        run_dir = Path(payload["run_dir"])
        run_dir.mkdir(parents=True, exist_ok=True)
        result = run_training(samples, config, f0, r0)
        save_net(result.f, run_dir / "classifier.json")
        save_net(result.r, run_dir / "adversary.json", head=config.head)
        write_metrics_csv(result.metrics, run_dir / "metrics.csv")
        eval_samples = read_dataset(payload["eval_data"])
        scan = ams_scan(
            result.f, eval_samples, np.linspace(0.0, 1.0, payload["options"]["thresholds"])
        )
        last = result.metrics.records[-1]
        row.update(
            best_ams=repr(scan.best_ams),
            best_threshold=repr(scan.best_threshold),
            loss_f=repr(last.loss_f),
            loss_r=repr(last.loss_r),
            accuracy=repr(result.metrics.snapshots[-1].accuracy),
        )
        write_summary_kv(
            {
                "lambda": repr(config.lam),
                "seed": config.seed,
                "final_loss_f": repr(last.loss_f),
                "final_loss_r": repr(last.loss_r),
                "final_accuracy": repr(result.metrics.snapshots[-1].accuracy),
                "best_ams": repr(scan.best_ams),
                "best_threshold": repr(scan.best_threshold),
            },
            run_dir / "summary.txt",
        )
    except PivotnetError as exc:
        row["status"] = f"failed: {exc}"
    return row


SWEEP_COLUMNS = (
    "lambda",
    "repeat",
    "seed",
    "status",
    "best_ams",
    "best_threshold",
    "loss_f",
    "loss_r",
    "accuracy",
    "run_dir",
)


def cmd_sweep(args: argparse.Namespace) -> int:
    defaults = dict(TRAIN_DEFAULTS)
    defaults.update({"lambdas": "0,1,10,500", "repeats": 5, "jobs": 1})
    merge_options(args, defaults)
    lambdas = _floats(args.lambdas)
    if not lambdas:
        raise ConfigError("sweep needs at least one lambda")
    if args.repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if args.eval_data is None:
        raise ConfigError("sweep requires --eval-data for the significance scans")
    out_dir = Path(args.out_dir) if args.out_dir else _runs_root() / f"sweep_seed{args.seed}"
    out_dir.mkdir(parents=True, exist_ok=True)

    option_keys = [k for k in TRAIN_DEFAULTS if k not in ("bce_only", "save_snapshots")]
    payloads = []
    for lam in lambdas:
        for repeat in range(args.repeats):
            options = {k: getattr(args, k) for k in option_keys}
            options["lam"] = lam
            options["seed"] = args.seed + repeat
            payloads.append(
                {
                    "lam": lam,
                    "repeat": repeat,
                    "seed": options["seed"],
                    "options": options,
                    "data": str(args.data),
                    "eval_data": str(args.eval_data),
                    "run_dir": str(out_dir / "runs" / f"lam{lam:g}_rep{repeat}"),
                }
            )

    t0 = time.perf_counter()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_member, payloads))
    else:
        rows = [_sweep_member(p) for p in payloads]
    elapsed = time.perf_counter() - t0

    rows.sort(key=lambda r: (r["lambda"], r["repeat"]))
    sweep_csv = out_dir / "sweep.csv"
    with open(sweep_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in SWEEP_COLUMNS])

    failed = [r for r in rows if r["status"] != "ok"]
    for row in failed:
        print(f"member lambda={row['lambda']} repeat={row['repeat']}: {row['status']}")
    summary_lines = []
    for lam in lambdas:
        values = [
            float(r["best_ams"])
            for r in rows
            if r["lambda"] == lam and r["status"] == "ok"
        ]
        if values:
            arr = np.asarray(values)
            summary_lines.append(
                f"lambda={lam:g}: mean_best_ams={arr.mean():.4f} sd={arr.std(ddof=1) if len(arr) > 1 else 0.0:.4f} n={len(arr)}"
            )
    (out_dir / "sweep_summary.txt").write_text(
        "\n".join(summary_lines) + ("\n" if summary_lines else "")
    )
    print(f"sweep complete in {elapsed:.1f}s: {sweep_csv} ({len(failed)} failures)")
    if len(failed) == len(rows):
        raise TrainingError("every sweep member failed")
    return 0


# --- report ----------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    written = render_report(run_dir, args.out)
    if not (run_dir / "ams.csv").exists():
        print("no ams.csv in run directory; skipping significance figure")
    for path in written:
        print(f"wrote {path}")
    return 0


# --- parser -----------------------------------------------------------------


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="training dataset file")
    parser.add_argument("--config", help="key = value option file; flags win")
    parser.add_argument("--lambda", dest="lam", type=float, help="pivotality weight")
    parser.add_argument("--minibatch-size", type=int, help="samples per update (M)")
    parser.add_argument(
        "--adversary-steps", type=int, help="adversary updates per iteration (K)"
    )
    parser.add_argument("--iterations", type=int, help="outer iterations (T)")
    parser.add_argument("--pretrain-epochs", type=int)
    parser.add_argument("--classifier-lr", type=float)
    parser.add_argument("--adversary-lr", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument(
        "--conditional-on-y",
        type=int,
        choices=(0, 1),
        help="restrict the adversary to one label class",
    )
    parser.add_argument("--head", choices=("mixture", "categorical"))
    parser.add_argument("--head-size", type=int, help="mixture components / categories")
    parser.add_argument("--optimizer", choices=("adam", "sgd"))
    parser.add_argument("--eval-fraction", type=float)
    parser.add_argument("--checkpoint-every", type=int)
    parser.add_argument("--clf-hidden", help="comma-separated hidden sizes")
    parser.add_argument("--clf-activations", help="comma-separated activation tags")
    parser.add_argument("--adv-hidden")
    parser.add_argument("--adv-activations")
    parser.add_argument("--eval-z-grid", help="nuisance values for score densities")
    parser.add_argument("--eval-samples", type=int, help="draws per density estimate")
    parser.add_argument("--eval-seed", type=int)
    parser.add_argument("--eval-data", help="held-out dataset for significance scans")
    parser.add_argument(
        "--hyx-mc", type=int, help="Monte Carlo draws for the H(Y|X) estimate (0 = off)"
    )
    parser.add_argument("--thresholds", type=int, help="points in the threshold scan")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pivotnet",
        description="Train classifiers whose scores stay independent of a nuisance value.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="draw a synthetic dataset")
    p_gen.add_argument("--kind", choices=("toy", "surrogate"), required=True)
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--z-sigma", type=float, default=1.0, help="toy nuisance prior width")
    p_gen.add_argument("--z-scale", type=float, default=1.0, help="toy nuisance coupling")
    p_gen.add_argument("--pileup-shift", type=float, default=0.5)
    p_gen.add_argument("--pileup-noise", type=float, default=0.5)
    p_gen.add_argument("--pileup-fraction", type=float, default=0.5, help="p(z=1)")
    p_gen.add_argument("--signal-fraction", type=float, default=0.5)
    p_gen.add_argument("--s-total", type=float, help="summed signal weight")
    p_gen.add_argument("--b-total", type=float, help="summed background weight")
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", help="train a classifier against an adversary")
    _add_train_flags(p_train)
    p_train.add_argument("--run-dir", help=f"output directory (default under ${RUN_DIR_ENV})")
    p_train.add_argument(
        "--bce-only",
        action=argparse.BooleanOptionalAction,
        help="skip the adversary; plain classification for the same step budget",
    )
    p_train.add_argument(
        "--save-snapshots",
        action=argparse.BooleanOptionalAction,
        help="write periodic network checkpoints under the run directory",
    )
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="train across a lambda grid with repeats")
    _add_train_flags(p_sweep)
    p_sweep.add_argument("--lambdas", help="comma-separated lambda values")
    p_sweep.add_argument("--repeats", type=int, help="seeds per lambda")
    p_sweep.add_argument("--jobs", type=int, help="parallel worker processes")
    p_sweep.add_argument("--out-dir", help="sweep output directory")
    p_sweep.set_defaults(func=cmd_sweep)

    p_report = sub.add_parser("report", help="render figures for a finished run")
    p_report.add_argument("--run-dir", required=True)
    p_report.add_argument("--out", help="figure directory (default: the run directory)")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (TrainingError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
