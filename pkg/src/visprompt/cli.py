"""Command-line entry point: gen, build-dict, train, eval, combine, gradcheck.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime failure.
Progress and timings go to stderr; files in ``--out`` hold results only, so
two runs with the same seed write identical bytes.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import io
from .dictionary import build_similarity_dictionary
from .embedding import estimate_gaussian_prior, make_rng
from .errors import ValidationError, VispromptError
from .evaluator import combined_inference, evaluate_prompts
from .prompts import VisualPrompt
from .testbed import TestbedSpec, generate, make_paired_tasks
from .trainer import TrainConfig, end_to_end_gradient_check, initialize_prompts, train_visual_prompts

log = logging.getLogger("visprompt")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # The same flags are accepted before and after the subcommand; SUPPRESS on
    # the subcommand copy keeps it from overwriting a value given earlier.
    p = _Parser(add_help=False)
    d = None if defaults else argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=d, help="random seed (overrides the config file)")
    p.add_argument("--config", type=Path, default=d, help="JSON config file with train/testbed sections")
    p.add_argument("--out", type=Path, default=d, help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0 if defaults else argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="visprompt", description="Visual prompt learning on frozen region features.",
                     parents=[_global_flags(True)])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    common = [_global_flags(False)]

    p = sub.add_parser("gen", parents=common, help="generate a synthetic task")
    p.add_argument("--paired", action="store_true", help="write two tasks (a/ and b/) with cross-planted objects")
    p.add_argument("--cross-plant-rate", type=float, default=0.6)

    p = sub.add_parser("build-dict", parents=common, help="build one similarity dictionary per category")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--keep-category-names", action="store_true",
                   help="allow the task's own category names into the dictionaries")

    p = sub.add_parser("train", parents=common, help="train visual prompts")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True, help="vocabulary used for the initialisation prior")
    p.add_argument("--dictionaries", type=Path, help="dictionary file; omit to train without negatives")

    p = sub.add_parser("eval", parents=common, help="evaluate prompts on a dataset")
    p.add_argument("--prompts", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--baseline-vocab", type=Path,
                   help="also score the category-name embeddings as one-vector prompts")
    p.add_argument("--max-per-image", type=int)

    p = sub.add_parser("combine", parents=common, help="evaluate separately trained prompt sets together")
    p.add_argument("--prompts", type=Path, nargs="+", required=True)
    p.add_argument("--datasets", type=Path, nargs="+", required=True)

    p = sub.add_parser("gradcheck", parents=common, help="compare analytic and finite-difference gradients")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--dictionaries", type=Path)
    p.add_argument("--images", type=int, default=2, help="number of leading images to use")
    p.add_argument("--tolerance", type=float, default=1e-5)
    return parser


def _configs(args) -> tuple[TrainConfig, TestbedSpec]:
    if args.config is not None:
        train, testbed = io.load_config(args.config)
    else:
        train, testbed = TrainConfig(), TestbedSpec()
    if args.seed is not None:
        train = replace(train, seed=args.seed).validate()
        testbed = replace(testbed, seed=args.seed).validate()
    return train, testbed


def _out(args) -> Path:
    return args.out if args.out is not None else Path(".")


def _save_task(out: Path, task) -> None:
    io.save_vocabulary(out / "vocabulary.json", task.vocabulary)
    io.save_dataset(out / "train.json", task.dataset)
    io.save_dataset(out / "eval.json", task.eval_dataset)
    io.save_report(out / "planting.json", "planting", task.planting, task.dataset.dim)


def cmd_gen(args) -> None:
    _, spec = _configs(args)
    out = _out(args)
    if args.paired:
        a, b = make_paired_tasks(spec, cross_plant_rate=args.cross_plant_rate)
        _save_task(out / "a", a)
        _save_task(out / "b", b)
    else:
        _save_task(out, generate(spec))
    log.info("wrote task files to %s", out)


def cmd_build_dict(args) -> None:
    config, _ = _configs(args)
    dataset = io.load_dataset(args.dataset)
    vocab = io.load_vocabulary(args.vocab, expected_dim=dataset.dim)
    exclude = () if args.keep_category_names else dataset.categories
    dicts = {
        c: build_similarity_dictionary(dataset, vocab, c, config.top_k, config.nms_threshold,
                                       exclude=exclude, mode=config.similarity_mode)
        for c in dataset.categories
    }
    for c, d in dicts.items():
        log.info("%s: %d entries", c, len(d))
    io.save_dictionaries(_out(args) / "dictionaries.json", dicts, dataset.dim)


def cmd_train(args) -> None:
    config, _ = _configs(args)
    dataset = io.load_dataset(args.dataset)
    vocab = io.load_vocabulary(args.vocab, expected_dim=dataset.dim)
    dicts = io.load_dictionaries(args.dictionaries, expected_dim=dataset.dim) if args.dictionaries else {}
    rng = make_rng(config.seed)
    prompts = None
    if config.init == "text":
        # each category starts from its own name embedding
        prompts = {}
        for c in dataset.categories:
            prompts.update(initialize_prompts([c], config, rng, text_embedding=vocab.embedding(c)))
    report = train_visual_prompts(dataset, dicts, config, rng, prompts=prompts,
                                  prior=estimate_gaussian_prior(vocab.embeddings))
    out = _out(args)
    io.save_prompts(out / "prompts.json", report.prompts)
    io.save_report(out / "train_report.json", "train", {
        "categories": list(dataset.categories),
        "config": config.to_dict(),
        "seed": report.seed,
        "steps": report.steps,
        "loss_curve": report.loss_curve,
        "l1_curve": report.l1_curve,
        "giou_curve": report.giou_curve,
        "dictionary_sizes": {c: len(d) for c, d in dicts.items()},
    }, dataset.dim)
    print(f"trained {len(report.prompts)} prompts in {report.steps} steps, {report.wall_clock:.2f}s",
          file=sys.stderr)


def cmd_eval(args) -> None:
    dataset = io.load_dataset(args.dataset)
    prompts = io.load_prompts(args.prompts, expected_dim=dataset.dim)
    missing = sorted(set(dataset.categories) - set(prompts))
    if missing:
        raise ValidationError(f"no prompt for categories {missing}")
    body = {"metrics": evaluate_prompts(prompts, dataset, args.max_per_image).to_dict()}
    if args.baseline_vocab is not None:
        vocab = io.load_vocabulary(args.baseline_vocab, expected_dim=dataset.dim)
        base = {c: VisualPrompt(c, vocab.embedding(c)[None, :]) for c in dataset.categories}
        body["baseline"] = evaluate_prompts(base, dataset, args.max_per_image).to_dict()
    io.save_report(_out(args) / "eval_report.json", "eval", body, dataset.dim)
    line = f"mAP {body['metrics']['map']:.4f}  mAP50 {body['metrics']['map50']:.4f}"
    if "baseline" in body:
        line += f"  (baseline mAP50 {body['baseline']['map50']:.4f})"
    print(line, file=sys.stderr)


def cmd_combine(args) -> None:
    if len(args.prompts) != len(args.datasets):
        raise ValidationError("--prompts and --datasets need the same number of files")
    datasets = [io.load_dataset(p) for p in args.datasets]
    dim = io.check_dims(**{str(p): d.dim for p, d in zip(args.datasets, datasets)})
    prompt_sets = [io.load_prompts(p, expected_dim=dim) for p in args.prompts]
    report = combined_inference(prompt_sets, datasets)
    io.save_report(_out(args) / "combine_report.json", "combine", report.to_dict(), dim)
    print(f"combined-inference drop {report.drop:.4f} mAP ({report.drop50:.4f} mAP50)", file=sys.stderr)


def cmd_gradcheck(args) -> None:
    config, _ = _configs(args)
    dataset = io.load_dataset(args.dataset)
    vocab = io.load_vocabulary(args.vocab, expected_dim=dataset.dim)
    dicts = io.load_dictionaries(args.dictionaries, expected_dim=dataset.dim) if args.dictionaries else {}
    if args.images < 1:
        raise ValidationError("--images must be >= 1")
    subset = dataset.subset(range(min(args.images, len(dataset))))
    rng = make_rng(config.seed)
    prompts = initialize_prompts(dataset.categories, config, rng, prior=estimate_gaussian_prior(vocab.embeddings))
    error = end_to_end_gradient_check(subset, config, prompts, dicts, rng)
    passed = error < args.tolerance
    io.save_report(_out(args) / "gradcheck_report.json", "gradcheck", {
        "max_relative_error": error,
        "tolerance": args.tolerance,
        "passed": passed,
        "images": len(subset),
    }, dataset.dim)
    print(f"max relative error {error:.3e} (tolerance {args.tolerance:.0e})", file=sys.stderr)
    if not passed:
        raise VispromptError(f"gradient check failed: {error:.3e} >= {args.tolerance:.0e}")


COMMANDS = {
    "gen": cmd_gen,
    "build-dict": cmd_build_dict,
    "train": cmd_train,
    "eval": cmd_eval,
    "combine": cmd_combine,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a command is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    started = time.perf_counter()
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (VispromptError, OSError, ArithmeticError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - started)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
