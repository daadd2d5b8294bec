"""Command-line interface.

Every subcommand accepts ``--config FILE`` plus per-field flags; a flag
given on the command line beats the file value. Failures print one
machine-parsable line ``ERROR[category] detail`` on stderr and exit with a
nonzero category-specific code.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, apply_overrides, config_from_dict, load_config
from .dataset import generate_synthetic, load_manifest, partition_dataset, save_manifest
from .experiment import emit_gradcam_gallery, run_experiment, sweep_labelled_fraction
from .metrics import metrics_text
from .training import DEFAULT_ITERATIONS, supervised_finetune, unsupervised_train

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_IO = 4
EXIT_CHECKPOINT = 5

_SWEEP_DEFAULT = "0.01,0.03,0.06,0.1"


class CliError(Exception):
    def __init__(self, category: str, exit_code: int, detail: str) -> None:
        super().__init__(detail)
        self.category = category
        self.exit_code = exit_code


def _fail(category: str, exit_code: int, detail: str) -> CliError:
    return CliError(category, exit_code, detail)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON experiment configuration")
    parser.add_argument("--corpus", help="manifest CSV path")
    parser.add_argument(
        "--synthetic", type=int, metavar="COUNT", help="generate COUNT synthetic images instead of reading a manifest"
    )
    parser.add_argument("--labelled-fraction", type=float)
    parser.add_argument("--iterations", type=int, help=f"adversarial iterations (default {DEFAULT_ITERATIONS})")
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--lr-g", type=float)
    parser.add_argument("--lr-d", type=float)
    parser.add_argument("--beta1", type=float)
    parser.add_argument("--beta2", type=float)
    parser.add_argument("--finetune-epochs-max", type=int)
    parser.add_argument("--early-stop-patience", type=int)
    sobel = parser.add_mutually_exclusive_group()
    sobel.add_argument("--sobel", dest="sobel", action="store_true", default=None)
    sobel.add_argument("--no-sobel", dest="sobel", action="store_false", default=None)
    parser.add_argument("--method", choices=("sclld", "gan-only", "cnn", "gp"))
    parser.add_argument("--out-dir")
    parser.add_argument("--seed", type=int)


def _config_from_args(args: argparse.Namespace, require_corpus: bool = True) -> ExperimentConfig:
    overrides = {
        "labelled_fraction": args.labelled_fraction,
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "lr_g": args.lr_g,
        "lr_d": args.lr_d,
        "beta1": args.beta1,
        "beta2": args.beta2,
        "finetune_epochs_max": args.finetune_epochs_max,
        "early_stop_patience": args.early_stop_patience,
        "sobel": args.sobel,
        "method": args.method,
        "out_dir": args.out_dir,
        "seed": args.seed,
    }
    if args.synthetic is not None and args.corpus is not None:
        raise _fail("config", EXIT_CONFIG, "--corpus and --synthetic are mutually exclusive")
    if args.synthetic is not None:
        overrides["corpus"] = {"synthetic": args.synthetic}
    elif args.corpus is not None:
        overrides["corpus"] = args.corpus
    if args.config is not None:
        base = load_config(args.config)
        return apply_overrides(base, overrides)
    merged = {k: v for k, v in overrides.items() if v is not None}
    if "corpus" not in merged and require_corpus:
        raise _fail("config", EXIT_CONFIG, "no corpus given: pass --config, --corpus or --synthetic")
    if "out_dir" not in merged:
        raise _fail("config", EXIT_CONFIG, "no output directory given: pass --config or --out-dir")
    return config_from_dict(merged)


def _cmd_synth(args: argparse.Namespace) -> int:
    if args.count <= 0 or args.count % 2 != 0:
        raise _fail("config", EXIT_CONFIG, f"count must be a positive even number, got {args.count}")
    samples, manifest = generate_synthetic(args.count, args.seed, Path(args.out_dir))
    print(f"wrote {len(samples)} images and {manifest}")
    return EXIT_OK


def _cmd_split(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if config.synthetic_count() is not None:
        samples, _ = generate_synthetic(
            config.synthetic_count(), config.seed, Path(config.out_dir) / "corpus"
        )
    else:
        samples = load_manifest(Path(config.corpus))
    split = partition_dataset(samples, config.labelled_fraction, config.seed)
    out = Path(config.out_dir)
    for name, pool in split.pools().items():
        save_manifest(pool, out / f"split_{name}.csv")
        print(f"{name}: {len(pool)} samples -> split_{name}.csv")
    return EXIT_OK


def _run_with_method(args: argparse.Namespace, method: str) -> int:
    args.method = method
    config = _config_from_args(args)
    record = run_experiment(config)
    print(f"method {method} finished in {record.duration}")
    print(metrics_summary_line(record.metrics))
    return EXIT_OK


def metrics_summary_line(metrics: dict) -> str:
    def cell(key: str) -> str:
        value = metrics.get(key)
        return "undefined" if value is None else f"{100.0 * value:.2f}%"

    return (
        f"accuracy {cell('accuracy')}  precision {cell('precision')}  "
        f"recall {cell('recall')}  specificity {cell('specificity')}  f1 {cell('f1')}"
    )


def _cmd_train_gan(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.synthetic_count() is not None:
        samples, _ = generate_synthetic(config.synthetic_count(), config.seed, out / "corpus")
    else:
        samples = load_manifest(Path(config.corpus))
    split = partition_dataset(samples, config.labelled_fraction, config.seed)
    disc, _ = unsupervised_train(
        split,
        config.train_config(),
        use_sobel=config.sobel,
        curve_path=out / "phase1_curve.csv",
    )
    ckpt = out / "discriminator_phase1.ckpt"
    save_checkpoint(disc, ckpt)
    print(f"phase-1 discriminator saved to {ckpt}")
    return EXIT_OK


def _cmd_finetune(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    disc = load_checkpoint(args.checkpoint)
    out = Path(config.out_dir)
    if config.synthetic_count() is not None:
        samples, _ = generate_synthetic(config.synthetic_count(), config.seed, out / "corpus")
    else:
        samples = load_manifest(Path(config.corpus))
    split = partition_dataset(samples, config.labelled_fraction, config.seed)
    model, _ = supervised_finetune(
        disc,
        split,
        config.train_config(),
        use_sobel=config.sobel,
        curve_path=out / "phase2_curve.csv",
    )
    ckpt = out / "discriminator_phase2.ckpt"
    save_checkpoint(model, ckpt)
    print(f"phase-2 classifier saved to {ckpt}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    from .experiment import _evaluate_scores, _write_eval_artifacts
    from .training import evaluate_probabilities

    config = _config_from_args(args)
    model = load_checkpoint(args.checkpoint)
    if model.phase != "phase2":
        raise _fail(
            "checkpoint",
            EXIT_CHECKPOINT,
            "evaluation needs a phase-2 checkpoint; fine-tune the discriminator first",
        )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.synthetic_count() is not None:
        samples, _ = generate_synthetic(config.synthetic_count(), config.seed, out / "corpus")
    else:
        samples = load_manifest(Path(config.corpus))
    split = partition_dataset(samples, config.labelled_fraction, config.seed)
    scores, preds, truths, loss = evaluate_probabilities(
        model, split.test, use_sobel=config.sobel
    )
    report, curve = _evaluate_scores(scores, preds, truths, loss)
    artifacts: dict[str, str] = {}
    _write_eval_artifacts(report, curve, out, artifacts)
    print(metrics_text(report), end="")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    try:
        fractions = [float(f) for f in args.fractions.split(",") if f]
    except ValueError:
        raise _fail("config", EXIT_CONFIG, f"bad fractions list {args.fractions!r}") from None
    if not fractions:
        raise _fail("config", EXIT_CONFIG, "fractions list is empty")
    records = sweep_labelled_fraction(config, fractions)
    for fraction, record in zip(fractions, records):
        print(f"fraction {fraction:g}: {metrics_summary_line(record.metrics)}")
    print(f"sweep results under {config.out_dir}/sweep.csv")
    return EXIT_OK


def _cmd_gp(args: argparse.Namespace) -> int:
    args.method = "gp"
    return _run_with_method(args, "gp")


def _cmd_gradcam(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    model = load_checkpoint(args.checkpoint)
    if config.synthetic_count() is not None:
        samples, _ = generate_synthetic(
            config.synthetic_count(), config.seed, Path(config.out_dir) / "corpus"
        )
    else:
        samples = load_manifest(Path(config.corpus))
    written = emit_gradcam_gallery(
        model, samples, Path(config.out_dir) / "gradcam", args.count, use_sobel=config.sobel
    )
    print(f"wrote {len(written)} gallery files")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sclld",
        description=(
            "Semi-supervised image classification: adversarial pretraining on "
            "unlabelled images, then supervised fine-tuning of the discriminator."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic PGM corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("split", help="partition a corpus and write the pool manifests")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_split)

    p = sub.add_parser("train-gan", help="phase 1: adversarial pretraining")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_train_gan)

    p = sub.add_parser("finetune", help="phase 2: supervised fine-tuning of a phase-1 checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a phase-2 checkpoint on the test pool")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("run", help="full pipeline for the configured method")
    _add_config_flags(p)
    p.set_defaults(handler=lambda a: _run_with_method(a, a.method or "sclld"))

    p = sub.add_parser("cnn", help="supervised CNN baseline end to end")
    _add_config_flags(p)
    p.set_defaults(handler=lambda a: _run_with_method(a, "cnn"))

    p = sub.add_parser("gp", help="GP baseline end to end")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_gp)

    p = sub.add_parser("sweep", help="rerun across labelled fractions")
    p.add_argument("--fractions", default=_SWEEP_DEFAULT, help="comma-separated labelled fractions")
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("gradcam", help="class-activation gallery from a phase-2 checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--count", type=int, required=True)
    _add_config_flags(p)
    p.set_defaults(handler=_cmd_gradcam)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except CliError as exc:
        print(f"ERROR[{exc.category}] {exc}", file=sys.stderr)
        return exc.exit_code
    except ConfigError as exc:
        print(f"ERROR[config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"ERROR[checkpoint] {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"ERROR[io] {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as exc:
        print(f"ERROR[data] {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
