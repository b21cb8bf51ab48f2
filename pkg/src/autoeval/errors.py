"""Exception types shared across the package.

Each error class maps to one failure family so callers (and the CLI exit-code
table) can dispatch on type rather than on message text.
"""


class ValidationError(ValueError):
    """A data structure violates one of its declared invariants."""


class FormatError(ValueError):
    """A serialized file does not conform to its layout or schema."""


class InputError(ValueError):
    """An operation received incompatible, missing, or out-of-range inputs."""


class ConfigError(ValueError):
    """A configuration value is invalid or internally inconsistent."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite or otherwise invalid result."""


class TrainingError(RuntimeError):
    """Model training failed to reach its required quality bar."""


class WorkspaceError(RuntimeError):
    """A workspace directory is missing required files or records."""
