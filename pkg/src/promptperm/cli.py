"""Command-line interface.

Verbs: search, oneshot, baseline-random, evaluate, sweep.  Exit codes:
0 ok, 2 configuration error, 3 oracle transport failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .errors import ConfigError, DatasetError, TransportError
from .genetic import GaConfig
from .separator import SepTrainConfig


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--task", default="sentiment",
                        choices=("sentiment", "nli", "fact-retrieval"))
    parser.add_argument("--train", dest="train_path", help="train split JSONL")
    parser.add_argument("--val", dest="validation_path", help="validation split JSONL")
    parser.add_argument("--test", dest="test_path", help="test split JSONL")
    parser.add_argument("--template-config", help="JSON template definitions keyed by task")
    parser.add_argument("--oracle", default="toy", choices=("toy", "http"))
    parser.add_argument("--endpoint", help=f"scoring service URL (or ${harness.ENDPOINT_ENV_VAR})")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", dest="out_dir", help="run directory for persisted artifacts")
    # toy oracle knobs
    parser.add_argument("--toy-alpha", type=float, default=4.0)
    parser.add_argument("--toy-dim", type=int, default=8)


def _add_ga(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--population", type=int, default=100)
    parser.add_argument("--pm", type=float, default=0.1, help="mutation probability")
    parser.add_argument("--elite", type=float, default=0.1, help="elite ratio")
    parser.add_argument("--selection", type=int, default=25, help="breeding pool size")
    parser.add_argument("--epochs", type=int, default=None,
                        help="search epochs (default 100; 30 for fact retrieval)")
    parser.add_argument("--prompt-size", type=int, default=10, help="examples per prompt (k)")
    parser.add_argument("--sep-epochs", type=int, default=None,
                        help="max separator-learning epochs per GA epoch "
                             "(default 10; 5 for fact retrieval)")
    parser.add_argument("--sep-lr", type=float, default=1e-4)
    parser.add_argument("--sep-init-token", default=None,
                        help="token whose embedding seeds the learned separator")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptperm")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_search = sub.add_parser("search", help="genetic search over example orderings")
    _add_common(p_search)
    _add_ga(p_search)
    p_search.add_argument("--mode", default="pero",
                          choices=("pero", "pero-no-sep", "inverse"))

    p_oneshot = sub.add_parser("oneshot", help="greedy one-shot prompt growth")
    _add_common(p_oneshot)
    p_oneshot.add_argument("--pair", help="comma-separated train indices, one per label")
    p_oneshot.add_argument("--pair-sweep", action="store_true",
                           help="try every pair from the first N train examples")
    p_oneshot.add_argument("--pair-sweep-first", type=int, default=10)
    p_oneshot.add_argument("--lmax", type=int, default=10)
    p_oneshot.add_argument("--balance", default="balanced",
                           choices=("balanced", "alternating", "none"))
    p_oneshot.add_argument("--label-pattern",
                           help="repeat the pair with this +/- pattern instead of growing")

    p_base = sub.add_parser("baseline-random", help="random-permutation baseline")
    _add_common(p_base)
    p_base.add_argument("--samples", type=int, default=100)
    p_base.add_argument("--prompt-size", type=int, default=10)

    p_eval = sub.add_parser("evaluate", help="evaluate a fixed permutation on a split")
    _add_common(p_eval)
    p_eval.add_argument("--perm", required=True, help="comma-separated train indices")
    p_eval.add_argument("--split", default="test", choices=("train", "validation", "test"))

    p_sweep = sub.add_parser("sweep", help="run a mode over successive training splits")
    _add_common(p_sweep)
    _add_ga(p_sweep)
    p_sweep.add_argument("--mode", default="pero-no-sep",
                         choices=("pero", "pero-no-sep", "inverse"))
    p_sweep.add_argument("--splits", type=int, default=5)
    p_sweep.add_argument("--split-size", type=int, default=10)
    return parser


def _config_from_args(args: argparse.Namespace, mode: str) -> harness.RunConfig:
    fact = args.task == "fact-retrieval"
    epochs = getattr(args, "epochs", None)
    if epochs is None:
        epochs = 30 if fact else 100
    sep_epochs = getattr(args, "sep_epochs", None)
    if sep_epochs is None:
        sep_epochs = 5 if fact else 10
    ga = GaConfig(
        n_population=getattr(args, "population", 100),
        p_mutate=getattr(args, "pm", 0.1),
        elite_ratio=getattr(args, "elite", 0.1),
        selection_size=getattr(args, "selection", 25),
        n_epochs=epochs,
        k=getattr(args, "prompt_size", 10),
        rng_seed=args.seed,
    )
    sep = SepTrainConfig(
        max_epochs=sep_epochs,
        learning_rate=getattr(args, "sep_lr", 1e-4),
    )
    pair = None
    if getattr(args, "pair", None):
        pair = [int(x) for x in args.pair.split(",")]
    return harness.RunConfig(
        mode=mode,
        task=args.task,
        train_path=args.train_path,
        validation_path=args.validation_path,
        test_path=args.test_path,
        template_config=args.template_config,
        oracle=args.oracle,
        endpoint=args.endpoint,
        seed=args.seed,
        out_dir=args.out_dir,
        ga=ga,
        sep=sep,
        toy=harness.ToyOracleConfig(alpha=args.toy_alpha, dim=args.toy_dim),
        sep_init_token=getattr(args, "sep_init_token", None),
        n_baseline_samples=getattr(args, "samples", 100),
        pair=pair,
        l_max=getattr(args, "lmax", 10),
        balance=getattr(args, "balance", "balanced"),
        label_pattern=getattr(args, "label_pattern", None),
    )


def _dispatch(args: argparse.Namespace) -> dict:
    if args.verb == "search":
        config = _config_from_args(args, args.mode)
        return harness.run(config).canonical_dict()
    if args.verb == "oneshot":
        if args.label_pattern:
            config = _config_from_args(args, "label-pattern")
            return harness.run(config).canonical_dict()
        if args.pair_sweep:
            config = _config_from_args(args, "oneshot")
            return harness.oneshot_pair_sweep(config, first_n=args.pair_sweep_first).canonical_dict()
        config = _config_from_args(args, "oneshot")
        return harness.run(config).canonical_dict()
    if args.verb == "baseline-random":
        config = _config_from_args(args, "random-baseline")
        return harness.run(config).canonical_dict()
    if args.verb == "evaluate":
        config = _config_from_args(args, "random-baseline")  # carrier for paths/oracle
        dataset = harness.load_run_dataset(config)
        if config.oracle == "toy":
            import dataclasses

            config = dataclasses.replace(
                config, toy=harness.resolve_toy_config(config.toy, dataset.n_train, config.seed)
            )
        tmpl, _ = harness.template_for(config)
        oracle = harness.build_oracle(config, dataset)
        indices = [int(x) for x in args.perm.split(",")]
        metric = "p_at_1" if args.task == "fact-retrieval" else "accuracy"
        score = harness.evaluate(indices, dataset, args.split, tmpl, oracle, None, metric)
        return {"permutation": indices, "split": args.split, "metric": metric, "score": score}
    if args.verb == "sweep":
        config = _config_from_args(args, args.mode)
        return harness.sweep(config, n_splits=args.splits, split_size=args.split_size).canonical_dict()
    raise ConfigError(f"unknown verb {args.verb!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        payload = _dispatch(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
