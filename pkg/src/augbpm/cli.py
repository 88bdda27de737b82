"""Command-line entry point: ``augbpm <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import config as config_mod
from . import gan, ive, nn, pipeline, probit, stats
from .config import ExperimentConfig

log = logging.getLogger("augbpm")

EXPECTED_ERRORS = (
    probit.ConfigError,
    probit.DomainError,
    ive.IveFormatError,
    ive.DegenerateLikelihoodError,
    nn.CheckpointError,
    stats.AlignmentError,
    gan.TrainingDivergedError,
    OSError,
)


def _common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="experiment config file (YAML)")
    src.add_argument("--preset", choices=config_mod.PRESETS, help="built-in experiment config")
    p.add_argument("--out", help="output directory (default: the config's output_dir)")
    p.add_argument("--seed", type=int, help="master seed; overrides the config")
    p.add_argument("--desk-scale", action="store_true", help="apply the config's desk_scale training overrides")
    p.add_argument("--epochs", type=int, help="override the number of training epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="augbpm", description=__doc__)
    parser.add_argument("-q", "--quiet", action="store_true", help="only print errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-bpm", help="Monte Carlo sample an existing BPM or the performance target")
    _common(p)
    p.add_argument("--which", choices=("existing", "target"), default="existing")
    p.add_argument("--count", type=int, help="number of samples (default from config)")

    p = sub.add_parser("synth-ive", help="fit the HMM on the IVE corpus and synthesize records")
    _common(p)

    p = sub.add_parser("train", help="train the conditional GAN (augmented BPM)")
    _common(p)

    p = sub.add_parser("evaluate", help="compare augmented, existing and IVE curves with the target")
    _common(p)
    p.add_argument("--checkpoint", help="augmented BPM checkpoint (default: <out>/augmented_bpm.bin)")

    p = sub.add_parser("run", help="run every stage end to end")
    _common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        cfg = config_mod.load(args.config)
    else:
        cfg = config_mod.load_preset(args.preset or "experiment2")
    if args.desk_scale:
        cfg = cfg.with_desk_scale()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, gan=gan.GanConfig.from_dict({**cfg.gan.to_dict(), "epochs_n": args.epochs}))
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        cfg = resolve_config(args)
        if args.command == "sample-bpm":
            if args.count is not None and args.count < 1:
                raise probit.ConfigError("--count must be >= 1")
            pipeline.cmd_sample_bpm(cfg, args.which, args.count)
        elif args.command == "synth-ive":
            pipeline.cmd_synth_ive(cfg)
        elif args.command == "train":
            pipeline.cmd_train(cfg)
        elif args.command == "evaluate":
            report = pipeline.cmd_evaluate(cfg, args.checkpoint)
            if not args.quiet:
                print(report.text(), end="")
        elif args.command == "run":
            report = pipeline.cmd_run_experiment(cfg)
            if not args.quiet:
                print(report.text(), end="")
    except EXPECTED_ERRORS as exc:
        log.error("[%s] error: %s", args.command, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
