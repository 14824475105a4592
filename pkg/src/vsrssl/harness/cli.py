"""Command-line entry point.

    vsrssl <subcommand> [--config FILE] [key=value ...]

Exit status: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import experiments
from .config import ConfigError, load_config
from .plots import emit_plot

SUBCOMMANDS = ("gen-corpus", "pretrain", "train-word", "train-sentence", "tap-study", "fraction-sweep",
               "evaluate", "plot")
SECTION = {"pretrain": "pretext", "train-word": "word", "train-sentence": "sentence", "tap-study": "word"}

log = logging.getLogger("vsrssl")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsrssl", description=__doc__.splitlines()[0], exit_on_error=False)
    p.add_argument("command")
    p.add_argument("--config", "-c", help="JSON experiment config")
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument("--csv", help="metrics CSV to plot")
    p.add_argument("--kind", default="fraction-curve", help="fraction-curve or tap-bars")
    p.add_argument("--out", help="output SVG path")
    p.add_argument("--quiet", "-q", action="store_true")
    p.add_argument("overrides", nargs="*", help="dotted key=value overrides")
    return p


def _run(args) -> dict:
    cmd = args.command
    if cmd == "plot":
        if not args.csv:
            raise ConfigError("plot needs --csv")
        csv = Path(args.csv)
        if not csv.exists():
            raise ConfigError(f"csv {csv} not found")
        out = args.out or str(csv.with_suffix(".svg"))
        try:
            return {"plot": str(emit_plot(csv, args.kind, out))}
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cmd == "evaluate":
        if not args.checkpoint:
            raise ConfigError("evaluate needs --checkpoint")
        if not Path(args.checkpoint).exists():
            raise ConfigError(f"checkpoint {args.checkpoint} not found")
        metric, value = experiments.evaluate(args.checkpoint)
        return {metric: value}

    cfg = load_config(args.config, args.overrides, SECTION.get(cmd))
    if cmd == "gen-corpus":
        corpus = experiments.gen_corpus(cfg)
        return {"corpus": str(cfg.corpus_root), **experiments.corpus_lineage(corpus)}
    if cmd == "pretrain":
        return experiments.pretrain(cfg).metrics
    if cmd == "train-word":
        return experiments.train_word(cfg).metrics
    if cmd == "train-sentence":
        return experiments.train_sentence(cfg).metrics
    if cmd == "tap-study":
        if not cfg.word.checkpoint:
            raise ConfigError("tap-study needs a pretext checkpoint: set word.checkpoint")
        rows, baseline = experiments.tap_study(cfg)
        return {"rows": len(rows), "baseline_rows": len(baseline)}
    if cmd == "fraction-sweep":
        plan = getattr(cfg, cfg.sweep_task)
        if any(r != "supervised" for r in cfg.regimes) and not plan.checkpoint:
            raise ConfigError(f"fraction-sweep needs a pretext checkpoint: set {cfg.sweep_task}.checkpoint")
        return {"rows": len(experiments.fraction_sweep(cfg))}
    raise AssertionError(cmd)


def cli_dispatch(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parser().parse_intermixed_args(argv)
    except SystemExit as exc:  # --help, or argparse reporting a bad flag
        return 0 if exc.code == 0 else 1
    except argparse.ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command not in SUBCOMMANDS:
        print(f"error: unknown subcommand {args.command!r}; choose one of {', '.join(SUBCOMMANDS)}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        result = _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure past config parsing is a runtime error
        log.exception("%s failed", args.command)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
