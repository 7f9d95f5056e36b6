"""Exception hierarchy shared by every module."""


class LdnlmError(Exception):
    """Base class for all package errors."""


class ShapeError(LdnlmError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(LdnlmError, ValueError):
    """A scalar parameter or configuration value is out of its domain."""


class ContractError(LdnlmError, ValueError):
    """An API precondition was violated by the caller."""


class NumericError(LdnlmError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class DegenerateError(LdnlmError, ArithmeticError):
    """A statistic is undefined for the given data (e.g. zero variance)."""


class TrainingDiverged(NumericError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step}: loss={loss!r}")
        self.step = step
        self.loss = loss


class FormatError(LdnlmError):
    """A binary file could not be decoded."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class IntegrityError(FormatError):
    """Header and payload disagree (manifest shape vs. blob length)."""
