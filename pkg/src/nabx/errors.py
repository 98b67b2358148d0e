"""Exception types shared across the package; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (exit code 2)."""


class NumericalError(RuntimeError):
    """Non-finite values or a diverging computation (exit code 3)."""


class QuadratureWarning(UserWarning):
    """A quadrature rule looks too coarse for the integrand."""
