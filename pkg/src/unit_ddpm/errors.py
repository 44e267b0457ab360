class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract (shapes, ranges)."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or inconsistent."""


class NumericalFailure(RuntimeError):
    """A computation produced non-finite values.

    ``dump`` carries whatever state the raiser collected for diagnosis.
    """

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump
