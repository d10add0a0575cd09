"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An operation was called with arguments that violate its contract."""


class ConfigurationError(ValueError):
    """A config file, flag set, or generator setting is invalid."""
