"""Command-line entry point.

Every pipeline stage is a subcommand driven by the resolved experiment
config (flag > config file > preset).  Exit codes: 0 success, 1 for
validation problems (bad flags, bad config, malformed inputs), 2 for
runtime failures.  Per-epoch losses go to stderr; results go to stdout
or the file named by --out.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import pipeline as pl
from .config import ConfigError, ExperimentConfig, PRESETS, load_experiment
from .data import (
    FractionRangeError,
    generate_synthetic,
    labeled_hash,
    load_dataset,
    make_split,
    read_manifest,
)
from .gradcheck import run_suite
from .metrics import EvalReport
from .rng import RngState

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting with 2."""

    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ssl-distill", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config key (repeatable)",
        )
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="write results here instead of stdout")
        p.add_argument(
            "--workers",
            type=int,
            default=1,
            help="loader parallelism (loading is synchronous here; kept for compatibility)",
        )
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="force single-worker execution",
        )
        return p

    common(sub.add_parser("gen-data", help="render the synthetic dataset"))
    common(sub.add_parser("split", help="print the labeled/unlabeled/test split"))
    common(sub.add_parser("pretrain", help="stage 1: contrastive pretraining"))

    p = common(sub.add_parser("finetune", help="stage 2: fine-tune the teacher"))
    p.add_argument("--checkpoint", help="pretrain checkpoint (default <out_dir>/pretrain.ckpt)")

    p = common(sub.add_parser("pseudo-label", help="stage 3a: label the unlabeled pool"))
    p.add_argument("--checkpoint", help="teacher checkpoint (default <out_dir>/teacher.ckpt)")
    p.add_argument("--threshold", type=float, default=None)

    p = common(sub.add_parser("distill", help="stage 3b: train the student on pseudo-labels"))
    p.add_argument("--checkpoint", help="teacher checkpoint (default <out_dir>/teacher.ckpt)")
    p.add_argument(
        "--pseudo-labels", help="pseudo-label csv (default <out_dir>/pseudo_labels.csv)"
    )

    p = common(sub.add_parser("finetune-student", help="stage 4: final student fine-tune"))
    p.add_argument(
        "--checkpoint", help="distilled checkpoint (default <out_dir>/student_distilled.ckpt)"
    )

    p = common(sub.add_parser("evaluate", help="evaluate a checkpoint on the test split"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--roc-out", default=None, help="also write ROC points as csv")

    common(sub.add_parser("run-all", help="stages 1-4 plus baselines and evaluation"))

    p = sub.add_parser("grad-check", help="finite-difference checks for every primitive")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds per case")
    return parser


def _parse_overrides(pairs: List[str]) -> Dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def _experiment(args) -> ExperimentConfig:
    overrides = _parse_overrides(args.overrides)
    if getattr(args, "threshold", None) is not None:
        overrides["pseudo_label.threshold"] = repr(args.threshold)
    return load_experiment(args.config, args.preset, overrides, args.seed)


def _emit(text: str, out_path: Optional[str]) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_split(exp: ExperimentConfig):
    entries = read_manifest(os.path.join(exp.data_root, "manifest.csv"))
    split = make_split(entries, exp.label_fraction, exp.split_seed)
    dataset = load_dataset(exp.data_root)
    return dataset, split


def _ckpt_path(args, exp: ExperimentConfig, default_name: str) -> str:
    if getattr(args, "checkpoint", None):
        return args.checkpoint
    return os.path.join(exp.out_dir, default_name)


def _stage_rng(exp: ExperimentConfig, stage: str) -> RngState:
    return RngState(exp.seed).substream(stage)


def _row_name(ckpt: pl.Checkpoint) -> str:
    last = ckpt.last_stage()
    return {
        "supervised": "Supervised",
        "finetune_teacher": "SimCLR-Finetuned (Teacher)",
        "distill": "SimCLR-Distilled (Student, pre-finetune)",
        "finetune_student": "SimCLR-Distilled (Student)",
    }.get(last, f"checkpoint[{last}]")


def _cmd_gen_data(args) -> int:
    exp = _experiment(args)
    entries = generate_synthetic(exp.generator, exp.data_root)
    n_train = sum(1 for e in entries if e.split == "train")
    _emit(
        f"generated {n_train} train / {len(entries) - n_train} test images "
        f"at {exp.generator.image_size}x{exp.generator.image_size} under {exp.data_root}",
        args.out,
    )
    return EXIT_OK


def _cmd_split(args) -> int:
    exp = _experiment(args)
    entries = read_manifest(os.path.join(exp.data_root, "manifest.csv"))
    split = make_split(entries, exp.label_fraction, exp.split_seed)
    digest = labeled_hash(split.labeled_ids).hex()
    _emit(
        f"labeled {len(split.labeled_ids)} / unlabeled {len(split.unlabeled_ids)} / "
        f"test {len(split.test_ids)} (fraction {exp.label_fraction}, seed {exp.split_seed})\n"
        f"labeled-set digest {digest}",
        args.out,
    )
    return EXIT_OK


def _cmd_pretrain(args) -> int:
    exp = _experiment(args)
    dataset, split = _load_split(exp)
    ckpt = pl.pretrain(
        dataset, sorted(split.unlabeled_ids), pl._spec_by_name(exp.teacher_spec),
        exp.stages["pretrain"], exp.strong_policy, _stage_rng(exp, "pretrain"), _log,
    )
    os.makedirs(exp.out_dir, exist_ok=True)
    path = os.path.join(exp.out_dir, "pretrain.ckpt")
    pl.save_checkpoint(ckpt, path)
    _emit(f"wrote {path}", args.out)
    return EXIT_OK


def _cmd_finetune(args) -> int:
    exp = _experiment(args)
    dataset, split = _load_split(exp)
    ckpt = pl.load_checkpoint(_ckpt_path(args, exp, "pretrain.ckpt"))
    tuned = pl.finetune(
        ckpt, dataset, sorted(split.labeled_ids), exp.stages["finetune_teacher"],
        exp.weak_policy, _stage_rng(exp, "finetune_teacher"), _log,
        expect_spec=exp.teacher_spec,
    )
    os.makedirs(exp.out_dir, exist_ok=True)
    path = os.path.join(exp.out_dir, "teacher.ckpt")
    pl.save_checkpoint(tuned, path)
    _emit(f"wrote {path}", args.out)
    return EXIT_OK


def _cmd_pseudo_label(args) -> int:
    exp = _experiment(args)
    dataset, split = _load_split(exp)
    ckpt = pl.load_checkpoint(_ckpt_path(args, exp, "teacher.ckpt"))
    pseudo = pl.generate_pseudo_labels(
        ckpt, dataset, sorted(split.unlabeled_ids), exp.pseudo_threshold
    )
    os.makedirs(exp.out_dir, exist_ok=True)
    path = os.path.join(exp.out_dir, "pseudo_labels.csv")
    pl.save_pseudo_labels(pseudo, path)
    positive = sum(r.hard for r in pseudo.records)
    _emit(
        f"wrote {path} ({len(pseudo.records)} records, {positive} positive, "
        f"threshold {exp.pseudo_threshold})",
        args.out,
    )
    return EXIT_OK


def _cmd_distill(args) -> int:
    exp = _experiment(args)
    dataset, _split = _load_split(exp)
    teacher = pl.load_checkpoint(_ckpt_path(args, exp, "teacher.ckpt"))
    pseudo_path = args.pseudo_labels or os.path.join(exp.out_dir, "pseudo_labels.csv")
    pseudo = pl.load_pseudo_labels(pseudo_path, exp.pseudo_threshold)
    student = pl.distill(
        pl._spec_by_name(exp.student_spec), teacher, pseudo, dataset,
        exp.stages["distill"], exp.weak_policy, _stage_rng(exp, "distill"), _log,
    )
    os.makedirs(exp.out_dir, exist_ok=True)
    path = os.path.join(exp.out_dir, "student_distilled.ckpt")
    pl.save_checkpoint(student, path)
    _emit(f"wrote {path}", args.out)
    return EXIT_OK


def _cmd_finetune_student(args) -> int:
    exp = _experiment(args)
    dataset, split = _load_split(exp)
    ckpt = pl.load_checkpoint(_ckpt_path(args, exp, "student_distilled.ckpt"))
    tuned = pl.finetune_student(
        ckpt, dataset, sorted(split.labeled_ids), exp.stages["finetune_student"],
        exp.weak_policy, _stage_rng(exp, "finetune_student"), _log,
        expect_spec=exp.student_spec,
    )
    os.makedirs(exp.out_dir, exist_ok=True)
    path = os.path.join(exp.out_dir, "student.ckpt")
    pl.save_checkpoint(tuned, path)
    _emit(f"wrote {path}", args.out)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    exp = _experiment(args)
    dataset, split = _load_split(exp)
    ckpt = pl.load_checkpoint(args.checkpoint)
    scores, labels = pl.evaluate_checkpoint(ckpt, dataset, sorted(split.test_ids))
    report = EvalReport()
    name = _row_name(ckpt)
    report.add(name, scores, labels)
    _emit(report.table(), args.out)
    if args.roc_out:
        with open(args.roc_out, "w", encoding="utf-8") as fh:
            fh.write(report.roc_csv(name))
    return EXIT_OK


def _cmd_run_all(args) -> int:
    exp = _experiment(args)
    run = pl.run_all(exp, _log)
    os.makedirs(exp.out_dir, exist_ok=True)
    with open(os.path.join(exp.out_dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(run.report.csv())
    with open(os.path.join(exp.out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(run.report.table() + "\n")
    _log(f"[run-all] finished in {run.wall_time:.1f}s")
    _emit(run.report.table(), args.out)
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    reports = run_suite(seeds=range(args.seeds), log=_log)
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} gradient checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "split": _cmd_split,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "pseudo-label": _cmd_pseudo_label,
    "distill": _cmd_distill,
    "finetune-student": _cmd_finetune_student,
    "evaluate": _cmd_evaluate,
    "run-all": _cmd_run_all,
    "grad-check": _cmd_grad_check,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        # covers config, manifest, checkpoint-format and range errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
