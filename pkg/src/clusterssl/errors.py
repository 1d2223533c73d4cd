"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid or infeasible configuration. CLI maps this to exit code 2."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite or runaway loss. CLI maps this to exit code 3."""
