"""Command-line entry point: `stresskit <command> [flags]`."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Sequence

from . import __version__
from .errors import ConfigError, StressKitError
from .experiment import (
    COMMANDS,
    GRANULARITIES,
    IMPUTATION_METHODS,
    PRESETS,
    VOTING_MECHANISMS,
    ExperimentConfig,
    load_config_file,
)
from .synth_gen import GenConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

_GENERATOR_FLAGS = {
    "n_train": "n_train_hours",
    "n_test": "n_test_hours",
    "separation": "separation",
    "stress_minute_frac": "stress_minute_frac",
    "prevalence": "prevalence",
    "informative_frac": "informative_frac",
}


def _csv_list(text: str) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _threshold(text: str):
    if text == "dynamic":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("threshold must be a number or 'dynamic'") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="JSON experiment config file")
    g.add_argument("--seed", type=int, help="top-level seed")
    g.add_argument("--out-dir", help="output directory")
    g.add_argument("--jobs", type=int, help="worker count (default: available CPUs)")
    g.add_argument("--preset", choices=sorted(PRESETS))

    d = common.add_argument_group("data")
    d.add_argument("--train", help="train split JSONL")
    d.add_argument("--test", help="test split JSONL")
    d.add_argument("--manifest", help="feature manifest JSON")
    d.add_argument("--generator", help="generator config JSON (instead of dataset files)")
    d.add_argument("--n-train", type=int, help="generator: train hours")
    d.add_argument("--n-test", type=int, help="generator: test hours")
    d.add_argument("--separation", type=float, help="generator: class separation in sd units")
    d.add_argument("--stress-minute-frac", type=float, help="generator: stressed share of a stress hour")
    d.add_argument("--prevalence", type=float, help="generator: share of stress hours")
    d.add_argument("--informative-frac", type=float, help="generator: informative share per group")

    m = common.add_argument_group("model")
    m.add_argument("--groups", type=_csv_list, help="comma-separated feature groups")
    m.add_argument("--granularity", choices=GRANULARITIES)
    m.add_argument("--classifier", action="append", help="classifier kind (repeatable)")
    m.add_argument("--imputation", choices=IMPUTATION_METHODS)
    m.add_argument("--comparators", type=_csv_list, help="comparator groups for euclidean imputation")
    m.add_argument("--fallback", choices=("mean", "drop"))
    m.add_argument("--voting", choices=VOTING_MECHANISMS)
    m.add_argument("--threshold", type=_threshold, help="mean-vote threshold or 'dynamic'")
    m.add_argument("--evaluation", choices=("holdout", "test"))
    m.add_argument("--train-frac", type=float)
    m.add_argument("--input", help="roc: ROC CSV to render")

    parser = argparse.ArgumentParser(prog="stresskit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"stresskit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write a synthetic dataset, manifest and truth table",
        "sweep": "evaluate every feature subset x classifier x granularity",
        "pipeline": "run one end-to-end configuration and report it",
        "importance": "Shapley feature importance on held-out instances",
        "shift": "train/test origin classification (covariate shift)",
        "impute": "impute dataset files and write the results",
        "roc": "render a ROC CSV as SVG",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def overrides_from_args(args: argparse.Namespace, file_layer: dict[str, Any]) -> dict[str, Any]:
    o: dict[str, Any] = {
        "seed": args.seed,
        "out_dir": args.out_dir,
        "jobs": args.jobs,
        "preset": args.preset,
        "train_path": args.train,
        "test_path": args.test,
        "manifest_path": args.manifest,
        "granularity": args.granularity,
        "evaluation": args.evaluation,
    }
    if args.groups:
        o["groups"] = args.groups
    if args.classifier:
        o["classifiers"] = [{"kind": k} for k in args.classifier]
    imp = {k: v for k, v in (
        ("method", args.imputation), ("comparator_groups", args.comparators), ("fallback", args.fallback),
    ) if v is not None}
    if imp:
        o["imputation"] = imp
    vote = {k: v for k, v in (("mechanism", args.voting), ("threshold", args.threshold)) if v is not None}
    if vote:
        o["voting"] = vote
    if args.train_frac is not None:
        o["split"] = {"train_frac": args.train_frac}
    if args.input is not None:
        o["roc"] = {"input": args.input}

    gen_flags = {
        field: getattr(args, flag) for flag, field in _GENERATOR_FLAGS.items() if getattr(args, flag) is not None
    }
    if args.generator or gen_flags or (args.command == "generate" and "generator" not in file_layer):
        gen = dict(file_layer.get("generator") or {})
        if args.generator:
            try:
                gen.update(GenConfig.load(args.generator).to_dict())
            except OSError as exc:
                raise ConfigError(f"cannot read generator config: {exc}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.generator}: malformed JSON: {exc.msg}") from None
        gen.update(gen_flags)
        o["generator"] = gen
    return o


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = None
    try:
        file_layer = load_config_file(args.config) if args.config else {}
        cfg = ExperimentConfig.resolve(None, file_layer, overrides_from_args(args, file_layer))
        if args.command == "generate" and cfg.train_path is not None:
            raise ConfigError("generate takes a generator config, not dataset paths")
        result = COMMANDS[args.command](cfg)
    except StressKitError as exc:
        print(f"stresskit {args.command}: error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", EXIT_INTERNAL)
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-failure exit code
        print(f"stresskit {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    _print_summary(args.command, result, cfg)
    return EXIT_OK


def _print_summary(command: str, result, cfg: ExperimentConfig) -> None:
    if command == "pipeline":
        for spec, cell in zip(cfg.classifiers, result):
            r = cell.report
            print(f"{spec.kind}: accuracy={r.accuracy} f1={r.f1} auc={r.auc}")
    elif command == "shift":
        print(f"top origin auc={result.top_auc} verdict={result.verdict}")
    elif command == "sweep":
        print(f"{len(result)} rows written to {cfg.out_dir}")
    elif command == "importance":
        summary, _ = result
        for name, score in summary.ranking[:10]:
            print(f"{name}\t{score:.6g}")
    elif isinstance(result, dict):
        print(json.dumps(result, sort_keys=True))
    else:
        print(result)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
