"""Command-line entry point: gen-suite, run, resume, eval, fine-tune, report.

Exit codes: 0 success, 2 config/usage error, 3 numerical divergence, 4 IO or
container-format error. TDMCL_THREADS caps worker parallelism.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import runner, tasks
from .config import parse_config, write_effective_config
from .errors import (
    CheckpointError,
    ConfigError,
    CorruptDatasetError,
    DatasetFormatError,
    DivergenceError,
    TdmclError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _build_parser():
    parser = argparse.ArgumentParser(prog="tdmcl", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config=True, out=True):
        if config:
            p.add_argument("-c", "--config", default=None, help="config file (key = value lines)")
            p.add_argument("--set", dest="overrides", action="append", default=[],
                           metavar="KEY=VALUE", help="override a config key")
        if out:
            p.add_argument("-o", "--out", required=True, help="output directory")

    p = sub.add_parser("gen-suite", help="generate the PMI-mini dataset files")
    common(p)
    p.add_argument("--seed", type=int, default=None, help="override suite.seed")

    p = sub.add_parser("run", help="run the continual-learning protocol")
    common(p)

    p = sub.add_parser("resume", help="continue a run from its checkpoint")
    common(p, config=False)

    p = sub.add_parser("eval", help="evaluate one task from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", type=int, required=True)

    p = sub.add_parser("fine-tune", help="fine-tune a pruned task, masks frozen")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("-o", "--out", default=None, help="write the fine-tuned checkpoint here")

    p = sub.add_parser("report", help="emit CSV reports from a finished run")
    common(p, config=False)
    return parser


def _progress_printer(total):
    def progress(record, seconds):
        print(f"[{record['index'] + 1:>2}/{total}] {record['phase']:<6} "
              f"task={record['task']} avg={record['avg_metric']:6.2f} "
              f"active={record['local_active']} "
              f"lr_sparsity={record['long_range_sparsity']:.2f} ({seconds:.1f}s)",
              flush=True)
    return progress


def _load_or_generate_suite(config, out_dir):
    suite_dir = Path(out_dir) / "suite"
    if (suite_dir / "manifest.csv").is_file():
        return tasks.read_suite(suite_dir, config.run_tasks)
    return None  # ContinualRun regenerates from config


def _cmd_gen_suite(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"suite.seed={args.seed}")
    config = parse_config(args.config, overrides)
    suite = tasks.generate_suite(config.suite_seed, config.suite_train_size,
                                 config.suite_test_size, config.suite_overlap,
                                 config.suite_tau_cmd, config.run_tasks)
    out = tasks.write_suite(Path(args.out) / "suite", suite)
    print(f"suite written to {out} ({len(suite)} tasks)")
    return EXIT_OK


def _cmd_run(args):
    config = parse_config(args.config, args.overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_effective_config(config, out)
    suite = _load_or_generate_suite(config, out)
    run = runner.ContinualRun(config, suite=suite)
    run.run_all(out_dir=out, progress=_progress_printer(len(run.plan)))
    runner.write_report(run.ledger, run.choice_matrices, out,
                        hl_scope=config.evolution_hl_scope)
    print(f"done: {len(run.ledger.records)} phases, artifacts in {out}")
    return EXIT_OK


def _cmd_resume(args):
    out = Path(args.out)
    ckpt = out / "checkpoint.bin"
    if not ckpt.is_file():
        raise CheckpointError(f"no checkpoint at {ckpt}")
    run = runner.ContinualRun.load_checkpoint(ckpt)
    run.run_all(out_dir=out, progress=_progress_printer(len(run.plan)))
    runner.write_report(run.ledger, run.choice_matrices, out,
                        hl_scope=run.config.evolution_hl_scope)
    print(f"resumed to completion: {len(run.ledger.records)} phases")
    return EXIT_OK


def _cmd_eval(args):
    run = runner.ContinualRun.load_checkpoint(args.checkpoint)
    if args.task not in run.learned_tasks():
        raise ConfigError(f"task {args.task} has not been trained in this checkpoint")
    metric = run.evaluate_task(args.task)
    print(f"task {args.task} metric: {metric:.4f}")
    return EXIT_OK


def _cmd_fine_tune(args):
    run = runner.ContinualRun.load_checkpoint(args.checkpoint)
    if args.task not in run.learned_tasks():
        raise ConfigError(f"task {args.task} has not been trained in this checkpoint")
    before, after = run.fine_tune(args.task, epochs=args.epochs)
    print(f"task {args.task} metric before={before:.4f} after={after:.4f} "
          f"delta={after - before:+.4f}")
    if args.out:
        path = run.save_checkpoint(Path(args.out) / "finetuned.bin")
        print(f"fine-tuned checkpoint written to {path}")
    return EXIT_OK


def _cmd_report(args):
    out = Path(args.out)
    ckpt = out / "checkpoint.bin"
    if not ckpt.is_file():
        raise CheckpointError(f"no ledger/checkpoint found in {out}")
    run = runner.ContinualRun.load_checkpoint(ckpt)
    runner.write_report(run.ledger, run.choice_matrices, out,
                        hl_scope=run.config.evolution_hl_scope)
    print(f"report CSVs written to {out}")
    return EXIT_OK


_COMMANDS = {
    "gen-suite": _cmd_gen_suite,
    "run": _cmd_run,
    "resume": _cmd_resume,
    "eval": _cmd_eval,
    "fine-tune": _cmd_fine_tune,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    runner.apply_thread_cap()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        where = f" during {err.phase}" if err.phase else ""
        ckpt = f" (checkpoint: {err.checkpoint})" if err.checkpoint else ""
        print(f"numerical divergence{where}: {err}{ckpt}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (CheckpointError, DatasetFormatError, CorruptDatasetError, OSError) as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO
    except TdmclError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
