"""Shared exception types.

Validation problems raise :class:`ConfigError` (CLI exit code 2), numerical
failures that survive retries raise :class:`NumericalError` (exit code 3).
"""


class ConfigError(ValueError):
    """Invalid configuration; carries one message line per violated field."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalError(RuntimeError):
    """A solver failed after the configured retries."""
