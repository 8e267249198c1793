"""``htr-transfer`` command line: pretrain, finetune, sweep, evaluate, synth.

Any RunConfig field can be given as ``--field-name VALUE`` or in a
``--config`` file; command-line flags win. Failures print a single line
``error: <CODE>: <message>`` to stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .checkpoint import CheckpointError
from .ctc import CtcInfeasibleError
from .data import InfeasibleSampleError, ManifestError, UnknownCharacterError
from .freeze import FreezeSpecError
from .harness import (ConfigError, RunConfig, cmd_evaluate, cmd_finetune, cmd_pretrain,
                      cmd_sweep, cmd_synth, parse_value, read_config_file)
from .optim import DivergenceError

COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
}

# (exception type, error code, exit status); first match wins
ERROR_CODES = [
    (ConfigError, "CONFIG", 2),
    (FreezeSpecError, "FREEZE_SPEC", 2),
    (ManifestError, "MANIFEST", 3),
    (UnknownCharacterError, "ALPHABET", 3),
    (InfeasibleSampleError, "INFEASIBLE", 3),
    (CtcInfeasibleError, "INFEASIBLE", 3),
    (CheckpointError, "CHECKPOINT", 4),
    (DivergenceError, "DIVERGED", 5),
    (OSError, "IO", 6),
    (ValueError, "INVALID", 7),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="htr-transfer", description="Handwriting line recognition training and transfer experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", help="key = value config file")
        for f in dataclasses.fields(RunConfig):
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="VALUE")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in dataclasses.fields(RunConfig):
        raw = getattr(args, f.name)
        if raw is not None:
            values[f.name] = parse_value(f.name, raw)
    return RunConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except Exception as err:  # noqa: BLE001 - mapped to an exit code below
        for kind, code, status in ERROR_CODES:
            if isinstance(err, kind):
                break
        else:
            code, status = "INTERNAL", 1
        message = " ".join(str(err).split())
        print(f"error: {code}: {message}", file=sys.stderr)
        return status
    return 0


if __name__ == "__main__":
    sys.exit(main())
