"""Exception hierarchy shared by every o2sr module.

Each class maps to one failure family so callers (notably the CLI) can
translate errors into stable exit codes.
"""


class O2SRError(Exception):
    """Base class for all o2sr errors."""


class ShapeError(O2SRError, ValueError):
    pass


class ParameterError(O2SRError, ValueError):
    pass


class FormatError(O2SRError, ValueError):
    pass


class PairingError(O2SRError):
    def __init__(self, stem, message=None):
        self.stem = stem
        super().__init__(message or f"no counterpart for {stem!r}")


class ContractError(O2SRError, ValueError):
    pass


class KernelOverflowError(ParameterError):
    pass


class ConfigurationError(O2SRError, ValueError):
    pass


class SamplingError(O2SRError, ValueError):
    pass


class DivergenceError(O2SRError, ArithmeticError):
    pass


class CheckpointError(O2SRError):
    pass


class IntegrityError(CheckpointError):
    """Checkpoint file is truncated, corrupted or not a checkpoint at all."""


class IncompatibilityError(CheckpointError):
    """Checkpoint is well-formed but does not match what the caller expects."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message)
