"""Exception hierarchy.

Every error a caller can provoke with bad input derives from
:class:`UserInputError`; the CLI maps those to exit code 2 and anything else
to exit code 1.
"""


class XRandLabError(Exception):
    """Base class for all errors raised by this package."""


class UserInputError(XRandLabError):
    """Raised for invalid configuration, data or call contracts."""


class ConfigurationError(UserInputError, ValueError):
    pass


class IngestionError(UserInputError):
    pass


class ContractError(UserInputError, ValueError):
    pass


class TrainingError(UserInputError):
    pass


class ExplanationError(UserInputError):
    pass


class ConstraintError(UserInputError):
    """The order constraints contain a cycle."""


class AttackError(UserInputError):
    pass


class SolverError(XRandLabError):
    """The constrained correction did not reach the requested tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
