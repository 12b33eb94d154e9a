"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes (see cli.py): configuration
errors exit 2, numerical aborts exit 3, I/O and parse errors exit 4.
"""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class ConfigurationError(ValueError):
    """Invalid configuration value or unknown config key."""


class ValidationError(ValueError):
    """Data failed a validity check (non-finite values, empty cloud, ...)."""


class CloudParseError(ValueError):
    """A point-cloud file could not be parsed; message names file and line."""


class DegenerateCropError(ValueError):
    """A half-space crop removed every point; caller should re-draw the plane."""


class NumericalError(ArithmeticError):
    """A numerical operation produced a non-finite intermediate."""


class TrainingDiverged(NumericalError):
    """Training loss became non-finite or exceeded the abort threshold."""

    def __init__(self, message, params=None, log=None):
        super().__init__(message)
        self.params = params
        self.log = log
