"""
Shared command-line plumbing for the synth, train, sample, eval and
benchmark management commands.

Exit codes:
    0  success
    1  usage error (bad flags, invalid quantiles, unknown config keys)
    2  missing or unusable input (missing file, unreadable CSV, data too
       thin for a fit)
    3  corrupt or unsupported model file
    4  shape mismatch between a model and its data
    5  numerical failure (diverged training, non-finite flow output)
"""

import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from cometflows.exceptions import (
    CometError,
    DataError,
    DomainError,
    MarginalFitError,
    ModelFileError,
    NumericalError,
    ParameterError,
    ShapeError,
    UndefinedCoefficientError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING_INPUT = 2
EXIT_CORRUPT_MODEL = 3
EXIT_SHAPE = 4
EXIT_NUMERICAL = 5

# Most specific first
EXIT_CODES = (
    (ModelFileError, EXIT_CORRUPT_MODEL),
    (ShapeError, EXIT_SHAPE),
    (NumericalError, EXIT_NUMERICAL),
    (MarginalFitError, EXIT_MISSING_INPUT),
    (UndefinedCoefficientError, EXIT_MISSING_INPUT),
    (DataError, EXIT_MISSING_INPUT),
    (FileNotFoundError, EXIT_MISSING_INPUT),
    (ParameterError, EXIT_USAGE),
    (DomainError, EXIT_USAGE),
    (CometError, EXIT_USAGE),
)


def exit_code_for(error):
    for error_type, code in EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return EXIT_USAGE


# ============================================
# SEEDS
# ============================================

def command_rng(seed, stream=0):
    """
    Generator for a command's randomness.

    A single --seed feeds numpy's SeedSequence; commands that need several
    independent streams take different stream indices.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed)).spawn(stream + 1)[stream])


# ============================================
# CONFIG FILE
# ============================================

def _floats(text):
    return tuple(float(part) for part in text.replace(',', ' ').split())


def _ints(text):
    return tuple(int(part) for part in text.replace(',', ' ').split())


CONFIG_PARSERS = {
    'quantiles': _floats,
    'layers': int,
    'n_layers': int,
    'hidden': _ints,
    'lr': float,
    'learning_rate': float,
    'batch_size': int,
    'sigma_max': float,
    'max_epochs': int,
    'patience': int,
    'scale_clamp': float,
    'seed': int,
    'mode': str,
}


def read_config_file(path):
    """
    Parse `key = value` lines; `#` starts a comment.

    Returns a dict of typed values. Unknown keys and malformed lines raise
    ParameterError; a missing file raises FileNotFoundError.
    """
    path = Path(path)
    values = {}
    for number, raw in enumerate(path.read_text(encoding='utf-8').splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ParameterError(f"{path}:{number}: expected key=value, got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split('=', 1))
        key = key.lower()
        parser = CONFIG_PARSERS.get(key)
        if parser is None:
            raise ParameterError(f"{path}:{number}: unknown config key '{key}'")
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ParameterError(f"{path}:{number}: bad value for '{key}': {value}") from exc
    return values


# ============================================
# CLI CONFIG
# ============================================

@dataclass(frozen=True)
class CliConfig:
    """Resolved arguments of one subcommand invocation."""
    subcommand: str
    inputs: dict = field(default_factory=dict)      # role -> Path, must exist
    outputs: dict = field(default_factory=dict)     # role -> Path
    seed: int = 0
    sigma: float = 0.0
    mode: str = 'comet'
    train_config: object = None

    def __post_init__(self):
        object.__setattr__(self, 'inputs', {k: Path(v) for k, v in self.inputs.items()})
        object.__setattr__(self, 'outputs', {k: Path(v) for k, v in self.outputs.items()})

    def check_inputs(self):
        for role, path in self.inputs.items():
            if not path.is_file():
                raise FileNotFoundError(f"{role} file not found: {path}")

    def check_outputs(self):
        for role, path in self.outputs.items():
            parent = path.resolve().parent
            if not parent.is_dir():
                raise FileNotFoundError(f"{role} directory does not exist: {parent}")


# ============================================
# BASE COMMAND
# ============================================

class CometCommand(BaseCommand):
    """
    Base class for the pipeline commands.

    Subclasses implement run(**options). Errors raised by the services are
    mapped onto CommandError with the exit codes above; argument-parser
    errors exit with the usage code.
    """

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        # Parser errors raise CommandError (exit 1) instead of argparse's exit 2
        parser.called_from_command_line = False
        return parser

    def run_from_argv(self, argv):
        try:
            super().run_from_argv(argv)
        except CommandError as exc:
            self.stderr.write(str(exc))
            sys.exit(exc.returncode)

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except CommandError:
            raise
        except (CometError, FileNotFoundError) as exc:
            code = exit_code_for(exc)
            logger.error(f"[{self.command_name.upper()} FAILED] {exc}")
            raise CommandError(str(exc), returncode=code) from exc
        except OSError as exc:
            logger.error(f"[{self.command_name.upper()} FAILED] {exc}")
            raise CommandError(str(exc), returncode=EXIT_MISSING_INPUT) from exc

    @property
    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]

    def run(self, **options):
        raise NotImplementedError('subclasses of CometCommand must provide a run() method')

    def summary(self, title, rows):
        """Human-readable summary on stdout."""
        self.stdout.write(self.style.SUCCESS('=' * 60))
        self.stdout.write(self.style.SUCCESS(title))
        self.stdout.write(self.style.SUCCESS('=' * 60))
        for label, value in rows:
            self.stdout.write(f"{label}: {value}")
