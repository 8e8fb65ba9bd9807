"""Command-line entry point.

Usage::

    bankruptlab <command> [--config FILE] [-v] [--section.key VALUE ...]

Any config value can be overridden with a flag spelled as its dotted name,
e.g. ``--synth.n_companies 500`` or ``--models.families [logistic,gbdt]``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .models import ConfigError
from .pipeline import EXIT_CONFIG, PipelineConfig, run_stages

COMMANDS = ("synth", "ingest", "featurize", "select", "windows", "train", "evaluate", "ablate",
            "run")

HELP = {
    "synth": "generate a synthetic registry",
    "ingest": "load, validate and filter the registry",
    "featurize": "build per-window feature matrices",
    "select": "rank features by information value",
    "windows": "assemble train/test/pandemic splits",
    "train": "fit every model cell",
    "evaluate": "score models and write AUC, drift and ROC reports",
    "ablate": "train and evaluate the feature-set matrix in one go",
    "run": "all stages end to end",
}


def parse_overrides(tokens: Sequence[str]) -> list[tuple[str, str]]:
    out = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag {tok} needs a value")
            value = tokens[i + 1]
            i += 2
        out.append((key, value))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bankruptlab",
                                description="Bankruptcy prediction pipeline.",
                                epilog="Override any config value with --<section>.<key> VALUE.")
    p.add_argument("command", choices=COMMANDS,
                   help="; ".join(f"{c}: {HELP[c]}" for c in COMMANDS))
    p.add_argument("--config", "-c", default=None, help="YAML config file")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    log = logging.getLogger("bankruptlab")
    try:
        cfg = PipelineConfig.load(args.config, parse_overrides(rest))
    except ConfigError as exc:
        log.error("[config] %s", exc)
        return EXIT_CONFIG
    return run_stages(cfg, args.command)


if __name__ == "__main__":
    sys.exit(main())
